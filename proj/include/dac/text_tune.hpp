#ifndef DAC_TEXT_TUNE_HPP_INCLUDED
#define DAC_TEXT_TUNE_HPP_INCLUDED

// Second stage: the text cache becomes the only trainable parameter while
// the adapter, the adapted cache keys and the one-hot values stay frozen.
// The loss is the cross-entropy of  W^T z + alpha * intra(g)  with alpha = 1.

#include <cstdint>
#include <string>
#include <vector>

#include "dac/adapter.hpp"
#include "dac/cache.hpp"
#include "dac/inference.hpp"
#include "dac/train.hpp"

namespace dac {

struct TextTuneConfig {
    double lr = 1e-5;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double alpha_train = 1.0;
    std::size_t views_per_shot = 7; ///< 0 uses every view
    bool full_batch = false;

    AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }

    void validate() const
    {
        if (!(lr >= 0.0))
            fail(ErrorKind::usage, "lr must be >= 0");
        if (epochs < 1)
            fail(ErrorKind::usage, "epochs must be >= 1");
        if (alpha_train != 1.0)
            fail(ErrorKind::usage, "text tuning runs with alpha fixed at 1");
    }
};

struct TextTuneResult {
    TextCache text;
    std::vector<double> epoch_loss; ///< mean batch loss of each epoch
};

/// Training examples with their frozen intra-modal logits.
struct FrozenExamples {
    std::vector<Vec> z;
    std::vector<Vec> intra;
    std::vector<std::size_t> label;
};

inline FrozenExamples freeze_examples(const ClassViews& cv, const VisualCache& adapted_cache, const Adapter& adapter)
{
    FrozenExamples ex;
    for (std::size_t c = 0; c < cv.num_classes(); ++c)
        for (const auto& z : cv.per_class[c]) {
            ex.z.push_back(z);
            ex.intra.push_back(dac_intra_logits(adapted_cache, adapter, z));
            ex.label.push_back(c);
        }
    return ex;
}

/// Mean cross-entropy over `batch` (indices into ex) and its gradient with respect to W (d x N).
inline double text_xent(const Mat& w, const FrozenExamples& ex, std::span<const std::size_t> batch, double alpha,
                        Mat* grad)
{
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t b : batch) {
        const Vec logits = ensemble(matvec_t(w, ex.z[b]), ex.intra[b], alpha);
        loss += scale * (log_sum_exp(logits) - logits[ex.label[b]]);
        if (!grad)
            continue;
        Vec dlogit = softmax(logits);
        dlogit[ex.label[b]] -= 1.0;
        add_outer(*grad, scale, ex.z[b], dlogit);
    }
    return loss;
}

inline TextTuneResult tune_text_cache(const TextCache& text, const VisualCache& adapted_cache, const Adapter& adapter,
                                      const EmbeddingBundle& train, const TextTuneConfig& cfg)
{
    cfg.validate();
    if (text.dim() != adapted_cache.dim() || adapter.dim() != text.dim() || train.dim != text.dim())
        fail(ErrorKind::dimension_mismatch, "text cache, visual cache, adapter and train bundle dims differ");
    if (text.num_classes() != adapted_cache.num_classes() || train.num_classes() != text.num_classes())
        fail(ErrorKind::dimension_mismatch, "text cache, visual cache and train bundle class counts differ");

    const ClassViews cv = collect_class_views(train, cfg.views_per_shot);
    const FrozenExamples ex = freeze_examples(cv, adapted_cache, adapter);
    const std::size_t per_class = cv.views_per_class();

    TextTuneResult result;
    result.text = text;
    std::vector<Mat> params{text.w_text};
    AdamState adam;
    for (std::uint64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = detail::balanced_batches(cv, cfg.seed, epoch, cfg.full_batch);
        double loss_sum = 0.0;
        for (const auto& b : batches) {
            // Examples are stored class-major.
            std::vector<std::size_t> idx;
            for (std::size_t k = 0; k < b.label.size(); ++k)
                idx.push_back(b.label[k] * per_class + b.view[k]);
            std::vector<Mat> grads{Mat(params[0].rows(), params[0].cols())};
            loss_sum += text_xent(params[0], ex, idx, cfg.alpha_train, &grads[0]);
            adam_step(params, grads, adam, cfg.adam());
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches.size()));
    }
    result.text.w_text = std::move(params[0]);
    return result;
}

} // namespace dac

#endif // DAC_TEXT_TUNE_HPP_INCLUDED

#ifndef DAC_TRAIN_HPP_INCLUDED
#define DAC_TRAIN_HPP_INCLUDED

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dac/adapter.hpp"
#include "dac/bundle.hpp"
#include "dac/cache.hpp"
#include "dac/contrastive.hpp"
#include "dac/eval.hpp"
#include "dac/random.hpp"

namespace dac {

enum class Objective { contrastive, cross_entropy };

inline Objective parse_objective(const std::string& s)
{
    if (s == "contrastive") return Objective::contrastive;
    if (s == "cross-entropy" || s == "xent") return Objective::cross_entropy;
    fail(ErrorKind::usage, "unknown objective '" + s + "'");
}

struct TrainConfig {
    double lr = 3e-5;
    double tau = 0.008;
    std::size_t epochs = 500;
    std::size_t views_per_shot = 7; ///< M; 0 uses every view in the bundle
    std::uint64_t seed = 0;
    Objective objective = Objective::contrastive;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool full_batch = false;    ///< one step per epoch over every pair
    std::size_t depth = 1;      ///< layers in the adapter (ReLU between)
    double alpha = 1.0;         ///< ensemble weight for the cross-entropy objective
    std::size_t select_every = 1; ///< validation cadence in epochs
    AlphaGrid alpha_grid;

    AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }

    void validate() const
    {
        if (!(lr >= 0.0))
            fail(ErrorKind::usage, "lr must be >= 0");
        if (!(tau > 0.0))
            fail(ErrorKind::non_positive_temperature, "tau must be > 0");
        if (epochs < 1)
            fail(ErrorKind::usage, "epochs must be >= 1");
        if (depth < 1 || depth > 4)
            fail(ErrorKind::usage, "adapter depth must be in 1..4");
        if (select_every < 1)
            fail(ErrorKind::usage, "select_every must be >= 1");
        if (!(alpha >= 0.0))
            fail(ErrorKind::usage, "alpha must be >= 0");
    }
};

struct EpochLog {
    std::uint64_t epoch = 0;
    double mean_loss = 0.0;
    std::size_t steps = 0;
    std::size_t pair_terms_per_class = 0; ///< contrastive terms evaluated per class
    std::optional<double> val_accuracy;
    std::optional<double> val_alpha;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::uint64_t selected_epoch = 0;
    std::optional<double> selected_alpha;
    std::optional<double> selected_val_accuracy;
};

inline nlohmann::json to_json(const TrainLog& log)
{
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : log.epochs) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"mean_loss", e.mean_loss},
                            {"steps", e.steps},
                            {"pair_terms_per_class", e.pair_terms_per_class}};
        if (e.val_accuracy)
            j["val_accuracy"] = *e.val_accuracy;
        if (e.val_alpha)
            j["val_alpha"] = *e.val_alpha;
        epochs.push_back(std::move(j));
    }
    nlohmann::json out = {{"epochs", epochs}, {"selected_epoch", log.selected_epoch}};
    if (log.selected_alpha)
        out["selected_alpha"] = *log.selected_alpha;
    if (log.selected_val_accuracy)
        out["selected_val_accuracy"] = *log.selected_val_accuracy;
    return out;
}

struct TrainResult {
    Adapter adapter;
    TrainLog log;
};

/// Normalized view embeddings of a train bundle, grouped per class in
/// (shot, view) order. Every class holds the same number of views.
struct ClassViews {
    std::vector<std::vector<Vec>> per_class;

    std::size_t num_classes() const noexcept { return per_class.size(); }
    std::size_t views_per_class() const noexcept { return per_class.empty() ? 0 : per_class.front().size(); }
};

/// Takes the first `views_per_shot` views (by view_index) of every training
/// image; 0 takes them all.
inline ClassViews collect_class_views(const EmbeddingBundle& train, std::size_t views_per_shot)
{
    validate(train);
    if (train.split != SplitTag::train)
        fail(ErrorKind::invariant_violation,
             std::string("adapter training needs a 'train' bundle, got '") + split_name(train.split) + "'");
    ClassViews cv;
    cv.per_class.resize(train.num_classes());
    for (const auto& [key, views] : detail::group_views(train, 0)) {
        if (views_per_shot != 0 && views.size() < views_per_shot)
            fail(ErrorKind::insufficient_views, "image (class '" + train.classes[key.first] + "', shot "
                                                    + std::to_string(key.second) + ") has " + std::to_string(views.size())
                                                    + " views, " + std::to_string(views_per_shot) + " requested");
        const std::size_t take = views_per_shot == 0 ? views.size() : views_per_shot;
        for (std::size_t v = 0; v < take; ++v)
            cv.per_class[key.first].push_back(l2_normalize(*views[v]));
    }
    for (std::size_t c = 0; c < cv.per_class.size(); ++c) {
        if (cv.per_class[c].empty())
            fail(ErrorKind::missing_group, "class '" + train.classes[c] + "' has no training views");
        if (cv.per_class[c].size() != cv.per_class.front().size())
            fail(ErrorKind::invariant_violation, "training set is not class balanced: class '" + train.classes[c]
                                                     + "' has " + std::to_string(cv.per_class[c].size())
                                                     + " views, class '" + train.classes[0] + "' has "
                                                     + std::to_string(cv.per_class.front().size()));
    }
    return cv;
}

/// All (i, j) with i < j < n, lexicographic.
inline std::vector<std::pair<std::size_t, std::size_t>> all_pairs(std::size_t n)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < j; ++i)
            out.emplace_back(i, j);
    std::sort(out.begin(), out.end());
    return out;
}

inline PairBatch make_pair_batch(const ClassViews& cv, std::size_t i, std::size_t j)
{
    PairBatch b;
    for (const auto& views : cv.per_class) {
        b.anchors.push_back(views[j]);
        b.positives.push_back(views[i]);
    }
    return b;
}

namespace detail {

/// One contrastive epoch. Returns the mean loss per step and counts the
/// per-class terms evaluated.
inline double contrastive_epoch(Adapter& adapter, const ClassViews& cv, const TrainConfig& cfg, std::uint64_t epoch,
                                std::size_t& steps, std::size_t& terms_per_class)
{
    auto pairs = all_pairs(cv.views_per_class());
    Rng rng(mix_seed(cfg.seed, epoch));
    shuffle(pairs, rng);
    const std::size_t n = cv.num_classes();
    std::size_t terms = 0;
    double loss_sum = 0.0;

    if (cfg.full_batch) {
        std::vector<std::vector<Adapter::Trace>> traces(n);
        for (std::size_t c = 0; c < n; ++c)
            for (const auto& z : cv.per_class[c])
                traces[c].push_back(adapter.forward(z));
        std::vector<std::vector<Vec>> grad_g(n, std::vector<Vec>(cv.views_per_class(), Vec(adapter.dim(), 0.0)));
        std::vector<const Vec*> a(n), p(n);
        std::vector<Vec> da(n), dp(n);
        for (const auto& [i, j] : pairs) {
            for (std::size_t c = 0; c < n; ++c) {
                a[c] = &traces[c][j].g;
                p[c] = &traces[c][i].g;
                da[c].assign(adapter.dim(), 0.0);
                dp[c].assign(adapter.dim(), 0.0);
            }
            loss_sum += contrastive_terms(a, p, cfg.tau, &da, &dp, &terms);
            for (std::size_t c = 0; c < n; ++c) {
                axpy(1.0, da[c], grad_g[c][j]);
                axpy(1.0, dp[c], grad_g[c][i]);
            }
        }
        const double scale = 1.0 / static_cast<double>(pairs.size());
        auto grads = adapter.zero_grads();
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t v = 0; v < traces[c].size(); ++v) {
                for (double& x : grad_g[c][v])
                    x *= scale;
                adapter.backward(traces[c][v], grad_g[c][v], grads);
            }
        adam_step(adapter.layers, grads, adapter.adam, cfg.adam());
        steps = 1;
        terms_per_class = terms / n;
        return loss_sum * scale;
    }

    for (const auto& [i, j] : pairs) {
        std::vector<Adapter::Trace> ta, tp;
        std::vector<const Vec*> a(n), p(n);
        for (std::size_t c = 0; c < n; ++c) {
            ta.push_back(adapter.forward(cv.per_class[c][j]));
            tp.push_back(adapter.forward(cv.per_class[c][i]));
        }
        for (std::size_t c = 0; c < n; ++c) {
            a[c] = &ta[c].g;
            p[c] = &tp[c].g;
        }
        std::vector<Vec> da(n, Vec(adapter.dim(), 0.0)), dp(n, Vec(adapter.dim(), 0.0));
        loss_sum += contrastive_terms(a, p, cfg.tau, &da, &dp, &terms);
        auto grads = adapter.zero_grads();
        for (std::size_t c = 0; c < n; ++c) {
            adapter.backward(ta[c], da[c], grads);
            adapter.backward(tp[c], dp[c], grads);
        }
        adam_step(adapter.layers, grads, adapter.adam, cfg.adam());
    }
    steps = pairs.size();
    terms_per_class = terms / n;
    return loss_sum / static_cast<double>(pairs.size());
}

struct LabeledViews {
    std::vector<std::size_t> label; ///< class of each example
    std::vector<std::size_t> view;  ///< index into that class's views
};

/// Class-balanced minibatches: each class's views are shuffled and step t
/// takes the t-th view of every class. Full batch returns one batch of all views.
inline std::vector<LabeledViews> balanced_batches(const ClassViews& cv, std::uint64_t seed, std::uint64_t epoch,
                                                  bool full_batch)
{
    const std::size_t n = cv.num_classes();
    const std::size_t per_class = cv.views_per_class();
    std::vector<std::vector<std::size_t>> order(n);
    for (std::size_t c = 0; c < n; ++c) {
        order[c].resize(per_class);
        for (std::size_t v = 0; v < per_class; ++v)
            order[c][v] = v;
        Rng rng(mix_seed(mix_seed(seed, epoch), c));
        shuffle(order[c], rng);
    }
    std::vector<LabeledViews> batches(full_batch ? 1 : per_class);
    for (std::size_t t = 0; t < per_class; ++t) {
        auto& b = batches[full_batch ? 0 : t];
        for (std::size_t c = 0; c < n; ++c) {
            b.label.push_back(c);
            b.view.push_back(order[c][t]);
        }
    }
    return batches;
}

} // namespace detail

/// Mean cross-entropy of DAC-V logits over a batch and its gradient with
/// respect to the adapter. The adapter acts on both the queries and the
/// (unadapted, normalized) cache keys.
inline LossAndGrad xent_loss_and_grad(const Adapter& adapter, std::span<const Vec* const> queries,
                                      std::span<const std::size_t> labels, const TextCache& text,
                                      const VisualCache& cache, double alpha, bool with_grad = true)
{
    detail::require_same_classes(text, cache);
    if (queries.size() != labels.size() || queries.empty())
        fail(ErrorKind::length_mismatch, "cross-entropy batch needs one label per query");
    if (adapter.dim() != cache.dim() || text.dim() != cache.dim())
        fail(ErrorKind::dimension_mismatch, "adapter, text cache and visual cache dims differ");

    std::vector<Adapter::Trace> keys;
    for (std::size_t r = 0; r < cache.num_keys(); ++r)
        keys.push_back(adapter.forward(cache.w_image.col(r)));
    std::vector<Vec> grad_keys(cache.num_keys(), Vec(adapter.dim(), 0.0));

    LossAndGrad out;
    if (with_grad)
        out.grads = adapter.zero_grads();
    const double scale = 1.0 / static_cast<double>(queries.size());
    for (std::size_t b = 0; b < queries.size(); ++b) {
        const Vec& z = *queries[b];
        const Adapter::Trace tq = adapter.forward(z);
        Vec aff(cache.num_keys());
        for (std::size_t r = 0; r < cache.num_keys(); ++r)
            aff[r] = std::exp(dot(keys[r].g, tq.g) - 1.0);
        const Vec logits = ensemble(matvec_t(text.w_text, z), aggregate_per_class(cache, aff), alpha);
        out.loss += scale * (log_sum_exp(logits) - logits[labels[b]]);
        if (!with_grad)
            continue;
        Vec dlogit = softmax(logits);
        dlogit[labels[b]] -= 1.0;
        Vec grad_g(adapter.dim(), 0.0);
        for (std::size_t r = 0; r < cache.num_keys(); ++r) {
            const double ds = scale * alpha * dlogit[cache.key_class[r]] * aff[r];
            axpy(ds, keys[r].g, grad_g);
            axpy(ds, tq.g, grad_keys[r]);
        }
        adapter.backward(tq, grad_g, out.grads);
    }
    if (with_grad)
        for (std::size_t r = 0; r < cache.num_keys(); ++r)
            adapter.backward(keys[r], grad_keys[r], out.grads);
    return out;
}

namespace detail {

inline double xent_epoch(Adapter& adapter, const ClassViews& cv, const TrainConfig& cfg, std::uint64_t epoch,
                         const TextCache& text, const VisualCache& cache, std::size_t& steps)
{
    const auto batches = balanced_batches(cv, cfg.seed, epoch, cfg.full_batch);
    double loss_sum = 0.0;
    for (const auto& b : batches) {
        std::vector<const Vec*> z;
        for (std::size_t k = 0; k < b.label.size(); ++k)
            z.push_back(&cv.per_class[b.label[k]][b.view[k]]);
        const LossAndGrad lg = xent_loss_and_grad(adapter, z, b.label, text, cache, cfg.alpha);
        loss_sum += lg.loss;
        adam_step(adapter.layers, lg.grads, adapter.adam, cfg.adam());
    }
    steps = batches.size();
    return loss_sum / static_cast<double>(batches.size());
}

inline void check_shapes(const ClassViews& cv, const VisualCache& cache, const TextCache& text, std::size_t dim)
{
    if (cache.dim() != dim || text.dim() != dim)
        fail(ErrorKind::dimension_mismatch, "train bundle, visual cache and text cache dims differ");
    if (cache.num_classes() != cv.num_classes() || text.num_classes() != cv.num_classes())
        fail(ErrorKind::dimension_mismatch, "train bundle, visual cache and text cache class counts differ");
}

} // namespace detail

/// Trains the visual adapter from identity (or continues `resume`).
/// With a validation bundle, the returned adapter is the epoch with the best
/// DAC-V validation top-1 at its grid-searched alpha, earliest on ties.
inline TrainResult train_visual_adapter(const EmbeddingBundle& train, const TrainConfig& cfg,
                                        const EmbeddingBundle* val, const VisualCache& cache, const TextCache& text,
                                        const Adapter* resume = nullptr)
{
    cfg.validate();
    const ClassViews cv = collect_class_views(train, cfg.views_per_shot);
    detail::check_shapes(cv, cache, text, train.dim);
    if (cfg.objective == Objective::contrastive && cv.views_per_class() < 2)
        fail(ErrorKind::insufficient_views, "contrastive training needs at least 2 views per class, have "
                                                + std::to_string(cv.views_per_class()));
    if (val)
        require_eval_bundle(*val);

    Adapter adapter = resume ? *resume : Adapter::identity(train.dim, cfg.depth);
    if (adapter.dim() != train.dim)
        fail(ErrorKind::dimension_mismatch, "resumed adapter has dim " + std::to_string(adapter.dim()));
    adapter.seed = cfg.seed;

    TrainResult result;
    std::optional<Adapter> best;
    std::size_t best_correct = 0;

    const std::uint64_t first = adapter.epoch + 1;
    const std::uint64_t last = adapter.epoch + cfg.epochs;
    for (std::uint64_t epoch = first; epoch <= last; ++epoch) {
        EpochLog e;
        e.epoch = epoch;
        if (cfg.objective == Objective::contrastive)
            e.mean_loss = detail::contrastive_epoch(adapter, cv, cfg, epoch, e.steps, e.pair_terms_per_class);
        else
            e.mean_loss = detail::xent_epoch(adapter, cv, cfg, epoch, text, cache, e.steps);
        adapter.epoch = epoch;

        if (val && ((epoch - first + 1) % cfg.select_every == 0 || epoch == last)) {
            Artifacts art{text, std::nullopt, adapter, adapt_cache(cache, adapter), std::nullopt};
            const auto samples = bundle_logits(Method::dacv, art, *val);
            const AlphaSearch s = grid_search_alpha(samples, cfg.alpha_grid);
            const std::size_t correct = count_correct(samples, s.alpha);
            e.val_accuracy = s.accuracy;
            e.val_alpha = s.alpha;
            if (!best || correct > best_correct) {
                best = adapter;
                best_correct = correct;
                result.log.selected_alpha = s.alpha;
                result.log.selected_val_accuracy = s.accuracy;
            }
        }
        result.log.epochs.push_back(std::move(e));
    }

    result.adapter = best ? std::move(*best) : std::move(adapter);
    result.log.selected_epoch = result.adapter.epoch;
    return result;
}

/// Cross-entropy ablation: same loop, loss is the DAC-V cross-entropy at cfg.alpha.
inline TrainResult train_visual_adapter_xent(const EmbeddingBundle& train, TrainConfig cfg, const VisualCache& cache,
                                             const TextCache& text)
{
    cfg.objective = Objective::cross_entropy;
    return train_visual_adapter(train, cfg, nullptr, cache, text);
}

} // namespace dac

#endif // DAC_TRAIN_HPP_INCLUDED

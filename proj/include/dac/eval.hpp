#ifndef DAC_EVAL_HPP_INCLUDED
#define DAC_EVAL_HPP_INCLUDED

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dac/bundle.hpp"
#include "dac/cache.hpp"
#include "dac/inference.hpp"

namespace dac {

/// Everything a classifier may need. Methods only read what they use:
/// zero-shot needs `text`; tip adds `cache`; dac-v adds `adapter` and
/// `adapted_cache`; dac-vt adds `tuned_text`.
struct Artifacts {
    TextCache text;
    std::optional<VisualCache> cache;
    std::optional<Adapter> adapter;
    std::optional<VisualCache> adapted_cache;
    std::optional<TextCache> tuned_text;
    double beta = default_tip_beta;

    /// Fills adapted_cache from cache and adapter when it is missing.
    void ensure_adapted()
    {
        if (!adapted_cache && cache && adapter)
            adapted_cache = adapt_cache(*cache, *adapter);
    }
};

/// Inter- and intra-modal logits of one sample; the ensemble is inter + alpha * intra.
struct SampleLogits {
    Vec inter;
    Vec intra;
    std::size_t label = 0;
};

struct AlphaGrid {
    double lo = 0.1;
    double hi = 10.0;
    double step = 0.01;

    std::size_t points() const
    {
        if (!(lo < hi) || !(step > 0.0))
            fail(ErrorKind::usage, "alpha grid needs lo < hi and step > 0");
        return static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    }
    double at(std::size_t k) const { return lo + static_cast<double>(k) * step; }
};

struct EvalReport {
    std::string method;
    double top1 = 0.0;
    double alpha_used = 0.0;
    std::vector<double> per_class_accuracy; ///< NaN for classes without samples
    std::size_t n_samples = 0;
    std::vector<std::string> warnings;
};

struct FlipReport {
    std::size_t n_samples = 0;
    double acc_inter = 0.0;
    double acc_intra = 0.0;
    double acc_ensemble = 0.0;
    double inconsistency = 0.0;   ///< exactly one sub-classifier correct
    double correct_flips = 0.0;   ///< inter wrong, ensemble right
    double incorrect_flips = 0.0; ///< inter right, ensemble wrong
    std::size_t disagreement_samples = 0;
    double correct_flips_within_disagreement = 0.0;
    double incorrect_flips_within_disagreement = 0.0;
};

inline void require_eval_bundle(const EmbeddingBundle& b)
{
    validate(b);
    if (b.records.empty())
        fail(ErrorKind::empty_bundle, "evaluation bundle has no records");
    if (b.split != SplitTag::val && b.split != SplitTag::test)
        fail(ErrorKind::invariant_violation,
             std::string("evaluation needs a 'val' or 'test' bundle, got '") + split_name(b.split) + "'");
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> seen;
    for (const auto& r : b.records)
        if (++seen[{r.class_index, r.shot_index}] > 1)
            fail(ErrorKind::invariant_violation, "image (class " + std::to_string(r.class_index) + ", shot "
                                                     + std::to_string(r.shot_index) + ") has more than one view");
}

namespace detail {

inline const TextCache& inter_text(Method m, const Artifacts& a)
{
    if (m == Method::dacvt) {
        if (!a.tuned_text)
            fail(ErrorKind::usage, "dac-vt needs a tuned text cache");
        return *a.tuned_text;
    }
    return a.text;
}

} // namespace detail

inline SampleLogits sample_logits(Method m, const Artifacts& a, std::span<const double> z, std::size_t label)
{
    SampleLogits s;
    s.label = label;
    s.inter = clip_logits(detail::inter_text(m, a), z).values;
    switch (m) {
    case Method::zero_shot:
        s.intra.assign(s.inter.size(), 0.0);
        break;
    case Method::tip:
        if (!a.cache)
            fail(ErrorKind::usage, "tip needs a visual cache");
        detail::require_same_classes(a.text, *a.cache);
        s.intra = tip_intra_logits(*a.cache, z, a.beta);
        break;
    case Method::dacv:
    case Method::dacvt:
        if (!a.adapter || !a.adapted_cache)
            fail(ErrorKind::usage, std::string(method_name(m)) + " needs an adapter and a visual cache");
        detail::require_same_classes(detail::inter_text(m, a), *a.adapted_cache);
        s.intra = dac_intra_logits(*a.adapted_cache, *a.adapter, z);
        break;
    }
    return s;
}

/// Per-sample logits for a val/test bundle, in record order.
inline std::vector<SampleLogits> bundle_logits(Method m, const Artifacts& a, const EmbeddingBundle& b)
{
    require_eval_bundle(b);
    if (b.dim != a.text.dim())
        fail(ErrorKind::dimension_mismatch, "bundle dim " + std::to_string(b.dim) + " vs text cache dim "
                                                + std::to_string(a.text.dim()));
    if (b.num_classes() != a.text.num_classes())
        fail(ErrorKind::dimension_mismatch, "bundle has " + std::to_string(b.num_classes())
                                                + " classes, text cache " + std::to_string(a.text.num_classes()));
    std::vector<SampleLogits> out;
    out.reserve(b.records.size());
    for (const auto& r : b.records)
        out.push_back(sample_logits(m, a, l2_normalize(r.embedding), r.class_index));
    return out;
}

inline std::size_t count_correct(std::span<const SampleLogits> samples, double alpha)
{
    std::size_t correct = 0;
    Vec logits;
    for (const auto& s : samples) {
        logits = ensemble(s.inter, s.intra, alpha);
        if (argmax(logits) == s.label)
            ++correct;
    }
    return correct;
}

struct AlphaSearch {
    double alpha = 0.0;
    double accuracy = 0.0;
};

/// Exhaustive scan over the grid; ties keep the smallest alpha.
inline AlphaSearch grid_search_alpha(std::span<const SampleLogits> samples, const AlphaGrid& grid = {})
{
    if (samples.empty())
        fail(ErrorKind::empty_bundle, "alpha search over zero samples");
    const std::size_t points = grid.points();
    std::size_t best_correct = 0;
    double best_alpha = grid.at(0);
    for (std::size_t k = 0; k < points; ++k) {
        const std::size_t c = count_correct(samples, grid.at(k));
        if (k == 0 || c > best_correct) {
            best_correct = c;
            best_alpha = grid.at(k);
        }
    }
    return {best_alpha, static_cast<double>(best_correct) / static_cast<double>(samples.size())};
}

inline AlphaSearch grid_search_alpha(Method m, const EmbeddingBundle& val, const Artifacts& a,
                                     const AlphaGrid& grid = {})
{
    const auto samples = bundle_logits(m, a, val);
    return grid_search_alpha(samples, grid);
}

inline EvalReport report_from_logits(std::string method, std::span<const SampleLogits> samples,
                                     std::size_t num_classes, double alpha)
{
    if (samples.empty())
        fail(ErrorKind::empty_bundle, "evaluation over zero samples");
    EvalReport r;
    r.method = std::move(method);
    r.alpha_used = alpha;
    r.n_samples = samples.size();
    std::vector<std::size_t> hits(num_classes, 0), totals(num_classes, 0);
    std::size_t correct = 0;
    for (const auto& s : samples) {
        const bool ok = argmax(ensemble(s.inter, s.intra, alpha)) == s.label;
        ++totals[s.label];
        if (ok) {
            ++hits[s.label];
            ++correct;
        }
    }
    r.top1 = static_cast<double>(correct) / static_cast<double>(samples.size());
    for (std::size_t c = 0; c < num_classes; ++c)
        r.per_class_accuracy.push_back(totals[c] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                      : static_cast<double>(hits[c]) / static_cast<double>(totals[c]));
    return r;
}

/// Top-1 of one classifier at a fixed alpha (ignored by zero-shot).
inline EvalReport evaluate(Method m, const EmbeddingBundle& bundle, const Artifacts& a, double alpha)
{
    const auto samples = bundle_logits(m, a, bundle);
    return report_from_logits(method_name(m), samples, bundle.num_classes(), m == Method::zero_shot ? 0.0 : alpha);
}

/// Alpha is grid-searched on `val` when given, otherwise 1.0 with a warning.
inline EvalReport evaluate_with_selection(Method m, const EmbeddingBundle& test, const EmbeddingBundle* val,
                                          const Artifacts& a, const AlphaGrid& grid = {})
{
    if (m == Method::zero_shot)
        return evaluate(m, test, a, 0.0);
    if (val) {
        const AlphaSearch s = grid_search_alpha(m, *val, a, grid);
        return evaluate(m, test, a, s.alpha);
    }
    EvalReport r = evaluate(m, test, a, 1.0);
    r.warnings.push_back("no validation split; alpha defaulted to 1.0");
    return r;
}

/// Accuracy of the cache term alone. With an adapter the cache is adapted
/// and scored without beta; without one the beta affinity is used.
inline EvalReport intra_modal_accuracy(const VisualCache& cache, const EmbeddingBundle& bundle,
                                       const Adapter* adapter, double beta = default_tip_beta)
{
    require_eval_bundle(bundle);
    if (bundle.dim != cache.dim())
        fail(ErrorKind::dimension_mismatch, "bundle dim " + std::to_string(bundle.dim) + " vs cache dim "
                                                + std::to_string(cache.dim()));
    std::optional<VisualCache> adapted;
    if (adapter)
        adapted = adapt_cache(cache, *adapter);
    std::vector<SampleLogits> samples;
    for (const auto& r : bundle.records) {
        const Vec z = l2_normalize(r.embedding);
        SampleLogits s;
        s.label = r.class_index;
        s.intra = adapter ? dac_intra_logits(*adapted, *adapter, z) : tip_intra_logits(cache, z, beta);
        s.inter.assign(s.intra.size(), 0.0);
        samples.push_back(std::move(s));
    }
    std::string tag = cache.prototype ? "intra-prototype" : "intra";
    tag += adapter ? "-dac" : "-clip";
    return report_from_logits(tag, samples, bundle.num_classes(), 1.0);
}

inline FlipReport flip_analysis(std::span<const Vec> inter, std::span<const Vec> intra, std::span<const Vec> ens,
                                std::span<const std::size_t> labels)
{
    const std::size_t n = labels.size();
    if (inter.size() != n || intra.size() != n || ens.size() != n)
        fail(ErrorKind::length_mismatch, "flip analysis inputs have lengths " + std::to_string(inter.size()) + ", "
                                             + std::to_string(intra.size()) + ", " + std::to_string(ens.size())
                                             + ", " + std::to_string(n));
    if (n == 0)
        fail(ErrorKind::empty_bundle, "flip analysis over zero samples");
    std::size_t c_inter = 0, c_intra = 0, c_ens = 0, disagree = 0, cf = 0, icf = 0, cf_d = 0, icf_d = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool a = argmax(inter[i]) == labels[i];
        const bool b = argmax(intra[i]) == labels[i];
        const bool e = argmax(ens[i]) == labels[i];
        c_inter += a;
        c_intra += b;
        c_ens += e;
        const bool d = a != b;
        disagree += d;
        if (!a && e) {
            ++cf;
            cf_d += d;
        }
        if (a && !e) {
            ++icf;
            icf_d += d;
        }
    }
    const auto frac = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    FlipReport r;
    r.n_samples = n;
    r.acc_inter = frac(c_inter, n);
    r.acc_intra = frac(c_intra, n);
    r.acc_ensemble = frac(c_ens, n);
    r.inconsistency = frac(disagree, n);
    r.correct_flips = frac(cf, n);
    r.incorrect_flips = frac(icf, n);
    r.disagreement_samples = disagree;
    r.correct_flips_within_disagreement = frac(cf_d, disagree);
    r.incorrect_flips_within_disagreement = frac(icf_d, disagree);
    return r;
}

/// Flip analysis of one method's own sub-classifiers at `alpha`.
inline FlipReport flip_analysis(std::span<const SampleLogits> samples, double alpha)
{
    std::vector<Vec> inter, intra, ens;
    std::vector<std::size_t> labels;
    for (const auto& s : samples) {
        inter.push_back(s.inter);
        intra.push_back(s.intra);
        ens.push_back(ensemble(s.inter, s.intra, alpha));
        labels.push_back(s.label);
    }
    return flip_analysis(inter, intra, ens, labels);
}

inline nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json per_class = nlohmann::json::array();
    for (double v : r.per_class_accuracy)
        per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return {{"method", r.method},       {"top1", r.top1},           {"alpha_used", r.alpha_used},
            {"n_samples", r.n_samples}, {"per_class_accuracy", per_class}, {"warnings", r.warnings}};
}

inline nlohmann::json to_json(const FlipReport& r)
{
    return {{"n_samples", r.n_samples},
            {"acc_inter", r.acc_inter},
            {"acc_intra", r.acc_intra},
            {"acc_ensemble", r.acc_ensemble},
            {"inconsistency", r.inconsistency},
            {"correct_flips", r.correct_flips},
            {"incorrect_flips", r.incorrect_flips},
            {"disagreement_samples", r.disagreement_samples},
            {"correct_flips_within_disagreement", r.correct_flips_within_disagreement},
            {"incorrect_flips_within_disagreement", r.incorrect_flips_within_disagreement}};
}

} // namespace dac

#endif // DAC_EVAL_HPP_INCLUDED

#ifndef DAC_INFERENCE_HPP_INCLUDED
#define DAC_INFERENCE_HPP_INCLUDED

// Logits of the four classifiers. All of them take the normalized query
// embedding z; the DAC variants additionally map z through the adapter for
// the intra-modal (cache) term.

#include <cmath>
#include <string>

#include "dac/adapter.hpp"
#include "dac/cache.hpp"
#include "dac/linalg.hpp"

namespace dac {

enum class Method { zero_shot, tip, dacv, dacvt };

inline const char* method_name(Method m) noexcept
{
    switch (m) {
    case Method::zero_shot: return "zero-shot";
    case Method::tip: return "tip";
    case Method::dacv: return "dac-v";
    case Method::dacvt: return "dac-vt";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    if (s == "zero-shot" || s == "clip") return Method::zero_shot;
    if (s == "tip") return Method::tip;
    if (s == "dac-v" || s == "dacv") return Method::dacv;
    if (s == "dac-vt" || s == "dacvt") return Method::dacvt;
    fail(ErrorKind::usage, "unknown method '" + s + "'");
}

inline constexpr double default_tip_beta = 5.5;

struct InferenceParams {
    double alpha = 1.0;
    double beta = default_tip_beta;
};

struct Logits {
    Vec values;
    Method method = Method::zero_shot;
};

inline void require_unit(std::span<const double> z)
{
    const double n = norm(z);
    if (std::abs(n - 1.0) > 1e-9)
        fail(ErrorKind::invariant_violation, "query must be unit norm, has norm " + std::to_string(n));
}

/// W_text^T z
inline Logits clip_logits(const TextCache& text, std::span<const double> z)
{
    if (z.size() != text.dim())
        fail(ErrorKind::dimension_mismatch, "query dim " + std::to_string(z.size()) + " vs text cache dim "
                                                + std::to_string(text.dim()));
    require_unit(z);
    return {matvec_t(text.w_text, z), Method::zero_shot};
}

/// exp(beta (W^T q - 1)) over every cache key.
inline Vec cache_affinity(const VisualCache& cache, std::span<const double> q, double beta)
{
    if (q.size() != cache.dim())
        fail(ErrorKind::dimension_mismatch, "query dim " + std::to_string(q.size()) + " vs cache dim "
                                                + std::to_string(cache.dim()));
    Vec a = matvec_t(cache.w_image, q);
    for (double& x : a)
        x = std::exp(beta * (x - 1.0));
    return a;
}

inline Vec tip_affinity(const VisualCache& cache, std::span<const double> z, double beta)
{
    if (!(beta > 0.0))
        fail(ErrorKind::invariant_violation, "beta must be positive, got " + std::to_string(beta));
    require_unit(z);
    return cache_affinity(cache, z, beta);
}

/// L_onehot^T exp(beta (W_image^T z - 1)), the unadapted cache term.
inline Vec tip_intra_logits(const VisualCache& cache, std::span<const double> z, double beta)
{
    return aggregate_per_class(cache, tip_affinity(cache, z, beta));
}

/// L_onehot^T exp(W_dac^T g - 1) with g = normalize(H z).
inline Vec dac_intra_logits(const VisualCache& adapted_cache, const Adapter& adapter, std::span<const double> z)
{
    require_unit(z);
    if (adapter.dim() != z.size())
        fail(ErrorKind::dimension_mismatch, "adapter dim " + std::to_string(adapter.dim()) + " vs query dim "
                                                + std::to_string(z.size()));
    return aggregate_per_class(adapted_cache, cache_affinity(adapted_cache, adapter.embed(z), 1.0));
}

inline Vec ensemble(std::span<const double> inter, std::span<const double> intra, double alpha)
{
    if (inter.size() != intra.size())
        fail(ErrorKind::dimension_mismatch, "inter/intra logit lengths differ");
    Vec out(inter.begin(), inter.end());
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] += alpha * intra[c];
    return out;
}

namespace detail {
inline void require_same_classes(const TextCache& text, const VisualCache& cache)
{
    if (text.num_classes() != cache.num_classes())
        fail(ErrorKind::dimension_mismatch, "text cache has " + std::to_string(text.num_classes())
                                                + " classes, visual cache " + std::to_string(cache.num_classes()));
}
} // namespace detail

inline Logits tip_logits(const TextCache& text, const VisualCache& cache, std::span<const double> z,
                         const InferenceParams& params)
{
    detail::require_same_classes(text, cache);
    const Logits inter = clip_logits(text, z);
    return {ensemble(inter.values, tip_intra_logits(cache, z, params.beta), params.alpha), Method::tip};
}

inline Logits dacv_logits(const TextCache& text, const VisualCache& adapted_cache, const Adapter& adapter,
                          std::span<const double> z, double alpha)
{
    detail::require_same_classes(text, adapted_cache);
    const Logits inter = clip_logits(text, z);
    return {ensemble(inter.values, dac_intra_logits(adapted_cache, adapter, z), alpha), Method::dacv};
}

/// Same as DAC-V but with the tuned text cache in the inter-modal term,
/// which still sees the unadapted z.
inline Logits dacvt_logits(const TextCache& tuned_text, const VisualCache& adapted_cache, const Adapter& adapter,
                           std::span<const double> z, double alpha)
{
    Logits l = dacv_logits(tuned_text, adapted_cache, adapter, z, alpha);
    l.method = Method::dacvt;
    return l;
}

} // namespace dac

#endif // DAC_INFERENCE_HPP_INCLUDED

#ifndef DAC_SYNTHETIC_HPP_INCLUDED
#define DAC_SYNTHETIC_HPP_INCLUDED

// Gaussian-cluster stand-in for extracted embeddings. Each class has a unit
// center; every image adds isotropic noise plus a large shared nuisance
// component in a few fixed directions that a linear adapter can learn to
// suppress. Text anchors are noisy copies of the centers. All values are
// rounded to float32 so that a write/read cycle is exact.

#include <cstdint>
#include <string>
#include <vector>

#include "dac/bundle.hpp"
#include "dac/linalg.hpp"
#include "dac/random.hpp"

namespace dac {

struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t dim = 16;
    std::size_t shots = 16;
    std::size_t train_views = 2;
    std::size_t cache_views = 10;
    std::size_t val_per_class = 10;
    std::size_t test_per_class = 10;
    std::size_t nuisance_dims = 4;
    double image_noise = 1.0;    ///< expected norm of the isotropic image noise
    double nuisance_scale = 1.0; ///< std of each nuisance coefficient
    double view_noise = 0.05;    ///< expected norm of the augmentation jitter
    double text_noise = 0.8;     ///< expected norm of the text anchor perturbation
    std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
    TextBundle text;
    EmbeddingBundle train;
    EmbeddingBundle cache;
    EmbeddingBundle val;
    EmbeddingBundle test;
};

namespace detail {

inline Vec gaussian(Rng& rng, std::size_t dim, double scale)
{
    Vec v(dim);
    for (double& x : v)
        x = scale * normal01(rng);
    return v;
}

inline Vec to_f32(Vec v)
{
    for (double& x : v)
        x = static_cast<double>(static_cast<float>(x));
    return v;
}

} // namespace detail

inline SyntheticBenchmark make_synthetic(const SyntheticSpec& spec)
{
    if (spec.classes == 0 || spec.dim == 0 || spec.shots == 0 || spec.train_views == 0 || spec.cache_views == 0)
        fail(ErrorKind::usage, "synthetic benchmark sizes must be positive");

    Rng rng(mix_seed(spec.seed, 0));
    std::vector<Vec> centers;
    for (std::size_t c = 0; c < spec.classes; ++c)
        centers.push_back(l2_normalize(detail::gaussian(rng, spec.dim, 1.0)));
    std::vector<Vec> nuisance;
    for (std::size_t k = 0; k < spec.nuisance_dims; ++k)
        nuisance.push_back(l2_normalize(detail::gaussian(rng, spec.dim, 1.0)));

    SyntheticBenchmark out;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < spec.classes; ++c)
        names.push_back("class_" + std::to_string(c));

    out.text.dim = spec.dim;
    out.text.classes = names;
    out.text.backbone = "synthetic";
    for (std::size_t c = 0; c < spec.classes; ++c) {
        Vec t = centers[c];
        axpy(1.0, detail::gaussian(rng, spec.dim, spec.text_noise / std::sqrt(double(spec.dim))), t);
        out.text.embeddings.push_back(detail::to_f32(l2_normalize(t)));
    }

    const auto image = [&](std::size_t c) {
        Vec x = centers[c];
        axpy(1.0, detail::gaussian(rng, spec.dim, spec.image_noise / std::sqrt(double(spec.dim))), x);
        for (const auto& u : nuisance)
            axpy(spec.nuisance_scale * normal01(rng), u, x);
        return x;
    };
    const auto jitter = [&](const Vec& x) {
        Vec v = x;
        axpy(1.0, detail::gaussian(rng, spec.dim, spec.view_noise / std::sqrt(double(spec.dim))), v);
        return detail::to_f32(std::move(v));
    };

    for (auto* b : {&out.train, &out.cache, &out.val, &out.test}) {
        b->dim = spec.dim;
        b->classes = names;
        b->backbone = "synthetic";
    }
    out.train.split = SplitTag::train;
    out.cache.split = SplitTag::cache;
    out.val.split = SplitTag::val;
    out.test.split = SplitTag::test;

    for (std::uint32_t c = 0; c < spec.classes; ++c)
        for (std::uint32_t k = 0; k < spec.shots; ++k) {
            const Vec x = image(c);
            for (std::uint32_t v = 0; v < spec.train_views; ++v)
                out.train.records.push_back({c, k, v, jitter(x)});
            for (std::uint32_t v = 0; v < spec.cache_views; ++v)
                out.cache.records.push_back({c, k, v, jitter(x)});
        }
    for (std::uint32_t c = 0; c < spec.classes; ++c)
        for (std::uint32_t k = 0; k < spec.val_per_class; ++k)
            out.val.records.push_back({c, k, 0, detail::to_f32(image(c))});
    for (std::uint32_t c = 0; c < spec.classes; ++c)
        for (std::uint32_t k = 0; k < spec.test_per_class; ++k)
            out.test.records.push_back({c, k, 0, detail::to_f32(image(c))});
    return out;
}

} // namespace dac

#endif // DAC_SYNTHETIC_HPP_INCLUDED

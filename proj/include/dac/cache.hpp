#ifndef DAC_CACHE_HPP_INCLUDED
#define DAC_CACHE_HPP_INCLUDED

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "dac/adapter.hpp"
#include "dac/bundle.hpp"
#include "dac/linalg.hpp"

namespace dac {

/// d x N matrix whose column j is the normalized text embedding of classes[j].
struct TextCache {
    Mat w_text;
    std::vector<std::string> classes;

    std::size_t dim() const noexcept { return w_text.rows(); }
    std::size_t num_classes() const noexcept { return w_text.cols(); }

    friend bool operator==(const TextCache&, const TextCache&) = default;
};

/// Key/value cache of few-shot image embeddings. Column r of w_image is a
/// normalized key; row r of l_onehot is the one-hot class of that key.
/// Keys are laid out class by class, shots in order within each class, so
/// key r belongs to class r / shots.
struct VisualCache {
    Mat w_image;                   ///< d x (N*K)
    Mat l_onehot;                  ///< (N*K) x N
    std::vector<std::size_t> key_class;
    std::vector<std::string> classes;
    std::size_t shots = 0;         ///< keys per class
    bool prototype = false;

    std::size_t dim() const noexcept { return w_image.rows(); }
    std::size_t num_keys() const noexcept { return w_image.cols(); }
    std::size_t num_classes() const noexcept { return classes.size(); }

    friend bool operator==(const VisualCache&, const VisualCache&) = default;
};

inline constexpr std::size_t default_cache_views_per_image = 10;

inline TextCache build_text_cache(const TextBundle& tb)
{
    validate(tb);
    TextCache tc;
    tc.classes = tb.classes;
    tc.w_text = Mat(tb.dim, tb.classes.size());
    for (std::size_t j = 0; j < tb.classes.size(); ++j) {
        try {
            tc.w_text.set_col(j, l2_normalize(tb.embeddings[j]));
        } catch (const Error& e) {
            fail(e.kind(), "text embedding of class '" + tb.classes[j] + "': " + e.what());
        }
    }
    return tc;
}

namespace detail {

inline VisualCache empty_cache(std::size_t dim, const std::vector<std::string>& classes, std::size_t shots)
{
    VisualCache vc;
    const std::size_t n = classes.size();
    vc.classes = classes;
    vc.shots = shots;
    vc.w_image = Mat(dim, n * shots);
    vc.l_onehot = Mat(n * shots, n);
    vc.key_class.resize(n * shots);
    for (std::size_t r = 0; r < n * shots; ++r) {
        vc.key_class[r] = r / shots;
        vc.l_onehot(r, r / shots) = 1.0;
    }
    return vc;
}

inline Vec normalized_mean(const std::vector<const Vec*>& members, std::size_t dim, const std::string& what)
{
    Vec sum(dim, 0.0);
    for (const Vec* v : members)
        axpy(1.0, *v, sum);
    for (double& x : sum)
        x /= static_cast<double>(members.size());
    try {
        return l2_normalize(sum);
    } catch (const Error& e) {
        fail(e.kind(), what + " has a zero mean embedding");
    }
}

/// Views of every (class, shot) group in view_index order, capped at `views` (0 = all).
inline std::map<std::pair<std::size_t, std::size_t>, std::vector<const Vec*>>
group_views(const EmbeddingBundle& b, std::size_t views)
{
    std::map<std::pair<std::size_t, std::size_t>, std::vector<const Record*>> by_group;
    for (const auto& r : b.records)
        by_group[{r.class_index, r.shot_index}].push_back(&r);
    std::map<std::pair<std::size_t, std::size_t>, std::vector<const Vec*>> out;
    for (auto& [key, recs] : by_group) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const Record* a, const Record* b) { return a->view_index < b->view_index; });
        if (views != 0 && recs.size() > views)
            recs.resize(views);
        auto& dst = out[key];
        for (const Record* r : recs)
            dst.push_back(&r->embedding);
    }
    return out;
}

inline void require_cache_split(const EmbeddingBundle& b)
{
    validate(b);
    if (b.split != SplitTag::cache)
        fail(ErrorKind::invariant_violation,
             std::string("visual cache needs a 'cache' bundle, got '") + split_name(b.split) + "'");
}

} // namespace detail

/// Keys are the normalized mean of each image's first `views_per_image`
/// raw view embeddings (0 uses every view).
inline VisualCache build_visual_cache(const EmbeddingBundle& bundle,
                                      std::size_t views_per_image = default_cache_views_per_image)
{
    detail::require_cache_split(bundle);
    const std::size_t n = bundle.num_classes();
    std::size_t shots = 0;
    for (const auto& r : bundle.records)
        shots = std::max<std::size_t>(shots, r.shot_index + 1);
    if (n == 0)
        fail(ErrorKind::missing_group, "bundle has no classes");

    const auto groups = detail::group_views(bundle, views_per_image);
    VisualCache vc = detail::empty_cache(bundle.dim, bundle.classes, std::max<std::size_t>(shots, 1));
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < vc.shots; ++k) {
            const std::string name = "group (class '" + bundle.classes[c] + "', shot " + std::to_string(k) + ")";
            const auto it = groups.find({c, k});
            if (it == groups.end())
                fail(ErrorKind::missing_group, name + " has no views");
            vc.w_image.set_col(c * vc.shots + k, detail::normalized_mean(it->second, bundle.dim, name));
        }
    }
    return vc;
}

/// One key per class: the normalized mean of all of that class's views.
inline VisualCache build_prototype_cache(const EmbeddingBundle& bundle,
                                         std::size_t views_per_image = default_cache_views_per_image)
{
    detail::require_cache_split(bundle);
    const std::size_t n = bundle.num_classes();
    if (n == 0)
        fail(ErrorKind::missing_group, "bundle has no classes");

    std::vector<std::vector<const Vec*>> members(n);
    for (const auto& [key, views] : detail::group_views(bundle, views_per_image))
        members[key.first].insert(members[key.first].end(), views.begin(), views.end());

    VisualCache vc = detail::empty_cache(bundle.dim, bundle.classes, 1);
    vc.prototype = true;
    for (std::size_t c = 0; c < n; ++c) {
        const std::string name = "class '" + bundle.classes[c] + "'";
        if (members[c].empty())
            fail(ErrorKind::missing_group, name + " has no views");
        vc.w_image.set_col(c, detail::normalized_mean(members[c], bundle.dim, name));
    }
    return vc;
}

/// Replaces every key k by normalize(H k); values are untouched.
inline VisualCache adapt_cache(const VisualCache& cache, const Adapter& adapter)
{
    if (adapter.dim() != cache.dim())
        fail(ErrorKind::dimension_mismatch, "adapter dim " + std::to_string(adapter.dim()) + " vs cache dim "
                                                + std::to_string(cache.dim()));
    VisualCache out = cache;
    for (std::size_t r = 0; r < cache.num_keys(); ++r) {
        try {
            out.w_image.set_col(r, adapter.embed(cache.w_image.col(r)));
        } catch (const Error& e) {
            fail(e.kind(), "adapter annihilates cache key " + std::to_string(r));
        }
    }
    return out;
}

/// L_onehot^T a, summed per class in key order.
inline Vec aggregate_per_class(const VisualCache& cache, std::span<const double> per_key)
{
    if (per_key.size() != cache.num_keys())
        fail(ErrorKind::dimension_mismatch, "affinity length " + std::to_string(per_key.size()) + " vs "
                                                + std::to_string(cache.num_keys()) + " cache keys");
    Vec out(cache.num_classes(), 0.0);
    for (std::size_t r = 0; r < per_key.size(); ++r)
        out[cache.key_class[r]] += per_key[r];
    return out;
}

} // namespace dac

#endif // DAC_CACHE_HPP_INCLUDED

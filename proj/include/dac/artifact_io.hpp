#ifndef DAC_ARTIFACT_IO_HPP_INCLUDED
#define DAC_ARTIFACT_IO_HPP_INCLUDED

// Persistence of engine-produced artifacts. They share the bundle
// container but store 64-bit floats so that a reload is bit-exact.

#include <filesystem>
#include <string>

#include "dac/adapter.hpp"
#include "dac/bundle.hpp"
#include "dac/cache.hpp"
#include "dac/container.hpp"

namespace dac {

inline constexpr const char* adapter_magic = "DACADP1";
inline constexpr const char* text_cache_magic = "DACTXC1";
inline constexpr const char* visual_cache_magic = "DACVCA1";

namespace detail {

inline Blob mat_blob(std::string name, const Mat& m)
{
    return {std::move(name), DType::f64, m.values()};
}

inline Mat blob_mat(const Container& c, const std::string& name, std::size_t rows, std::size_t cols)
{
    const Blob& b = c.blob(name);
    if (b.values.size() != rows * cols)
        fail(ErrorKind::invariant_violation, "blob '" + name + "' has " + std::to_string(b.values.size())
                                                 + " values, expected " + std::to_string(rows * cols));
    return Mat(rows, cols, b.values);
}

template <typename F>
auto with_manifest(F&& f)
{
    try {
        return f();
    } catch (const json::exception& e) {
        fail(ErrorKind::invariant_violation, std::string("malformed manifest: ") + e.what());
    }
}

} // namespace detail

inline Container to_container(const Adapter& a)
{
    Container c;
    c.magic = adapter_magic;
    c.manifest = {{"kind", "adapter"},
                  {"dim", a.dim()},
                  {"depth", a.depth()},
                  {"seed", a.seed},
                  {"epoch", a.epoch},
                  {"adam_step", a.adam.step},
                  {"has_adam_moments", !a.adam.m.empty()}};
    for (std::size_t l = 0; l < a.depth(); ++l)
        c.blobs.push_back(detail::mat_blob("theta." + std::to_string(l), a.layers[l]));
    for (std::size_t l = 0; l < a.adam.m.size(); ++l) {
        c.blobs.push_back(detail::mat_blob("adam_m." + std::to_string(l), a.adam.m[l]));
        c.blobs.push_back(detail::mat_blob("adam_v." + std::to_string(l), a.adam.v[l]));
    }
    return c;
}

inline Adapter adapter_from_container(const Container& c)
{
    return detail::with_manifest([&] {
        Adapter a;
        const auto dim = c.manifest.at("dim").get<std::size_t>();
        const auto depth = c.manifest.at("depth").get<std::size_t>();
        a.seed = c.manifest.at("seed").get<std::uint64_t>();
        a.epoch = c.manifest.at("epoch").get<std::uint64_t>();
        a.adam.step = c.manifest.at("adam_step").get<std::uint64_t>();
        for (std::size_t l = 0; l < depth; ++l)
            a.layers.push_back(detail::blob_mat(c, "theta." + std::to_string(l), dim, dim));
        if (c.manifest.at("has_adam_moments").get<bool>())
            for (std::size_t l = 0; l < depth; ++l) {
                a.adam.m.push_back(detail::blob_mat(c, "adam_m." + std::to_string(l), dim, dim));
                a.adam.v.push_back(detail::blob_mat(c, "adam_v." + std::to_string(l), dim, dim));
            }
        for (const auto& w : a.layers)
            if (!all_finite(w.values()))
                fail(ErrorKind::invariant_violation, "adapter weights are not finite");
        return a;
    });
}

inline void save_adapter(const Adapter& a, const std::filesystem::path& path)
{
    write_container(to_container(a), path);
}

inline Adapter load_adapter(const std::filesystem::path& path)
{
    return adapter_from_container(read_container(path, adapter_magic));
}

inline void save_text_cache(const TextCache& t, const std::filesystem::path& path)
{
    Container c;
    c.magic = text_cache_magic;
    c.manifest = {{"kind", "text_cache"}, {"dim", t.dim()}, {"classes", t.classes}};
    c.blobs.push_back(detail::mat_blob("w_text", t.w_text));
    write_container(c, path);
}

inline TextCache load_text_cache(const std::filesystem::path& path)
{
    const Container c = read_container(path, text_cache_magic);
    return detail::with_manifest([&] {
        TextCache t;
        t.classes = c.manifest.at("classes").get<std::vector<std::string>>();
        t.w_text = detail::blob_mat(c, "w_text", c.manifest.at("dim").get<std::size_t>(), t.classes.size());
        return t;
    });
}

/// Accepts either a raw text bundle (built into a cache) or a saved text cache.
inline TextCache load_text_any(const std::filesystem::path& path)
{
    if (peek_magic(path) == text_bundle_magic)
        return build_text_cache(read_text_bundle(path));
    return load_text_cache(path);
}

inline void save_visual_cache(const VisualCache& v, const std::filesystem::path& path)
{
    Container c;
    c.magic = visual_cache_magic;
    c.manifest = {{"kind", "visual_cache"}, {"dim", v.dim()},         {"classes", v.classes},
                  {"shots", v.shots},       {"prototype", v.prototype}, {"keys", v.num_keys()}};
    c.blobs.push_back(detail::mat_blob("w_image", v.w_image));
    c.blobs.push_back(detail::mat_blob("l_onehot", v.l_onehot));
    write_container(c, path);
}

inline VisualCache load_visual_cache(const std::filesystem::path& path)
{
    const Container c = read_container(path, visual_cache_magic);
    return detail::with_manifest([&] {
        VisualCache v;
        const auto dim = c.manifest.at("dim").get<std::size_t>();
        const auto keys = c.manifest.at("keys").get<std::size_t>();
        v.classes = c.manifest.at("classes").get<std::vector<std::string>>();
        v.shots = c.manifest.at("shots").get<std::size_t>();
        v.prototype = c.manifest.at("prototype").get<bool>();
        if (v.shots * v.classes.size() != keys)
            fail(ErrorKind::invariant_violation, "visual cache key count does not match shots x classes");
        v.w_image = detail::blob_mat(c, "w_image", dim, keys);
        v.l_onehot = detail::blob_mat(c, "l_onehot", keys, v.classes.size());
        v.key_class.resize(keys);
        for (std::size_t r = 0; r < keys; ++r) {
            std::size_t ones = 0;
            for (std::size_t n = 0; n < v.classes.size(); ++n) {
                const double x = v.l_onehot(r, n);
                if (x == 1.0) {
                    ++ones;
                    v.key_class[r] = n;
                } else if (x != 0.0) {
                    ones = 2;
                }
            }
            if (ones != 1)
                fail(ErrorKind::invariant_violation, "row " + std::to_string(r) + " of l_onehot is not one-hot");
        }
        return v;
    });
}

} // namespace dac

#endif // DAC_ARTIFACT_IO_HPP_INCLUDED

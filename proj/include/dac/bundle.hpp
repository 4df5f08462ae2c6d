#ifndef DAC_BUNDLE_HPP_INCLUDED
#define DAC_BUNDLE_HPP_INCLUDED

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dac/container.hpp"
#include "dac/linalg.hpp"
#include "dac/random.hpp"

namespace dac {

inline constexpr const char* bundle_magic = "DACEMB1";
inline constexpr const char* text_bundle_magic = "DACTXT1";

enum class SplitTag { train, cache, val, test };

inline const char* split_name(SplitTag s) noexcept
{
    switch (s) {
    case SplitTag::train: return "train";
    case SplitTag::cache: return "cache";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    }
    return "?";
}

inline SplitTag parse_split(const std::string& s)
{
    if (s == "train") return SplitTag::train;
    if (s == "cache") return SplitTag::cache;
    if (s == "val") return SplitTag::val;
    if (s == "test") return SplitTag::test;
    fail(ErrorKind::invariant_violation, "unknown split_tag '" + s + "'");
}

/// One embedding of one augmented view of one labelled image.
struct Record {
    std::uint32_t class_index = 0;
    std::uint32_t shot_index = 0;
    std::uint32_t view_index = 0;
    Vec embedding; ///< raw, unnormalized

    friend bool operator==(const Record&, const Record&) = default;
};

struct EmbeddingBundle {
    std::size_t dim = 0;
    std::vector<std::string> classes;
    std::vector<Record> records;
    SplitTag split = SplitTag::train;
    std::string backbone;

    std::size_t num_classes() const noexcept { return classes.size(); }

    friend bool operator==(const EmbeddingBundle&, const EmbeddingBundle&) = default;
};

/// One raw class-text embedding per class.
struct TextBundle {
    std::size_t dim = 0;
    std::vector<std::string> classes;
    std::vector<Vec> embeddings;
    std::string backbone;

    friend bool operator==(const TextBundle&, const TextBundle&) = default;
};

namespace detail {

inline void check_unique_classes(const std::vector<std::string>& classes)
{
    std::set<std::string> seen;
    for (const auto& c : classes)
        if (!seen.insert(c).second)
            fail(ErrorKind::invariant_violation, "duplicate class name '" + c + "'");
}

inline std::string record_name(std::size_t i, const Record& r)
{
    return "record " + std::to_string(i) + " (class " + std::to_string(r.class_index) + ", shot "
           + std::to_string(r.shot_index) + ", view " + std::to_string(r.view_index) + ")";
}

} // namespace detail

/// Throws InvariantViolation naming the first offending record.
inline void validate(const EmbeddingBundle& b)
{
    detail::check_unique_classes(b.classes);
    for (std::size_t i = 0; i < b.records.size(); ++i) {
        const auto& r = b.records[i];
        if (r.class_index >= b.classes.size())
            fail(ErrorKind::invariant_violation, detail::record_name(i, r) + ": class_index out of range for "
                                                     + std::to_string(b.classes.size()) + " classes");
        if (r.embedding.size() != b.dim)
            fail(ErrorKind::invariant_violation, detail::record_name(i, r) + ": embedding length "
                                                     + std::to_string(r.embedding.size()) + ", expected "
                                                     + std::to_string(b.dim));
        if (!all_finite(r.embedding))
            fail(ErrorKind::invariant_violation, detail::record_name(i, r) + ": non-finite embedding entry");
    }
    if (b.split == SplitTag::train && !b.records.empty()) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> views;
        for (const auto& r : b.records)
            ++views[{r.class_index, r.shot_index}];
        const std::size_t expected = views.begin()->second;
        for (const auto& [group, count] : views)
            if (count != expected)
                fail(ErrorKind::invariant_violation,
                     "train group (class " + std::to_string(group.first) + ", shot " + std::to_string(group.second)
                         + ") has " + std::to_string(count) + " views, expected " + std::to_string(expected));
    }
}

inline void validate(const TextBundle& t)
{
    detail::check_unique_classes(t.classes);
    if (t.embeddings.size() != t.classes.size())
        fail(ErrorKind::invariant_violation, std::to_string(t.embeddings.size()) + " text embeddings for "
                                                 + std::to_string(t.classes.size()) + " classes");
    for (std::size_t j = 0; j < t.embeddings.size(); ++j) {
        if (t.embeddings[j].size() != t.dim)
            fail(ErrorKind::invariant_violation, "text embedding of class '" + t.classes[j] + "' has length "
                                                     + std::to_string(t.embeddings[j].size()));
        if (!all_finite(t.embeddings[j]))
            fail(ErrorKind::invariant_violation, "text embedding of class '" + t.classes[j] + "' is not finite");
    }
}

inline Container to_container(const EmbeddingBundle& b)
{
    validate(b);
    Container c;
    c.magic = bundle_magic;
    json table = json::array();
    Blob payload{"embeddings", DType::f32, {}};
    payload.values.reserve(b.records.size() * b.dim);
    for (const auto& r : b.records) {
        table.push_back({r.class_index, r.shot_index, r.view_index});
        payload.values.insert(payload.values.end(), r.embedding.begin(), r.embedding.end());
    }
    c.manifest = {{"kind", "embedding_bundle"},
                  {"dim", b.dim},
                  {"classes", b.classes},
                  {"split_tag", split_name(b.split)},
                  {"backbone_tag", b.backbone},
                  {"record_count", b.records.size()},
                  {"record_layout", {"class_index", "shot_index", "view_index"}},
                  {"records", std::move(table)}};
    c.blobs.push_back(std::move(payload));
    return c;
}

inline EmbeddingBundle from_container(const Container& c)
{
    EmbeddingBundle b;
    try {
        const auto& m = c.manifest;
        b.dim = m.at("dim").get<std::size_t>();
        b.classes = m.at("classes").get<std::vector<std::string>>();
        b.split = parse_split(m.at("split_tag").get<std::string>());
        b.backbone = m.at("backbone_tag").get<std::string>();
        const auto& table = m.at("records");
        const auto& payload = c.blob("embeddings");
        if (table.size() != m.at("record_count").get<std::size_t>() || payload.values.size() != table.size() * b.dim)
            fail(ErrorKind::invariant_violation, "record table does not match payload size");
        b.records.reserve(table.size());
        for (std::size_t i = 0; i < table.size(); ++i) {
            Record r;
            r.class_index = table[i].at(0).get<std::uint32_t>();
            r.shot_index = table[i].at(1).get<std::uint32_t>();
            r.view_index = table[i].at(2).get<std::uint32_t>();
            const auto first = payload.values.begin() + static_cast<std::ptrdiff_t>(i * b.dim);
            r.embedding.assign(first, first + static_cast<std::ptrdiff_t>(b.dim));
            b.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::invariant_violation, std::string("malformed bundle manifest: ") + e.what());
    }
    validate(b);
    return b;
}

inline std::vector<std::uint8_t> encode_bundle(const EmbeddingBundle& b)
{
    return encode_container(to_container(b));
}

inline EmbeddingBundle decode_bundle(std::span<const std::uint8_t> bytes)
{
    return from_container(decode_container(bytes, bundle_magic));
}

inline void write_bundle(const EmbeddingBundle& b, const std::filesystem::path& path)
{
    write_container(to_container(b), path);
}

inline EmbeddingBundle read_bundle(const std::filesystem::path& path)
{
    return from_container(read_container(path, bundle_magic));
}

inline void write_text_bundle(const TextBundle& t, const std::filesystem::path& path)
{
    validate(t);
    Container c;
    c.magic = text_bundle_magic;
    c.manifest = {{"kind", "text_bundle"}, {"dim", t.dim}, {"classes", t.classes}, {"backbone_tag", t.backbone}};
    Blob payload{"embeddings", DType::f32, {}};
    for (const auto& e : t.embeddings)
        payload.values.insert(payload.values.end(), e.begin(), e.end());
    c.blobs.push_back(std::move(payload));
    write_container(c, path);
}

inline TextBundle read_text_bundle(const std::filesystem::path& path)
{
    const Container c = read_container(path, text_bundle_magic);
    TextBundle t;
    try {
        t.dim = c.manifest.at("dim").get<std::size_t>();
        t.classes = c.manifest.at("classes").get<std::vector<std::string>>();
        t.backbone = c.manifest.at("backbone_tag").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::invariant_violation, std::string("malformed text bundle manifest: ") + e.what());
    }
    const auto& payload = c.blob("embeddings");
    if (payload.values.size() != t.dim * t.classes.size())
        fail(ErrorKind::invariant_violation, "text payload does not match dim x classes");
    for (std::size_t j = 0; j < t.classes.size(); ++j) {
        const auto first = payload.values.begin() + static_cast<std::ptrdiff_t>(j * t.dim);
        t.embeddings.emplace_back(first, first + static_cast<std::ptrdiff_t>(t.dim));
    }
    validate(t);
    return t;
}

/// Keeps `shots` shot indices per class, chosen by a seeded shuffle, and
/// renumbers the kept shots 0..shots-1 in their original order. The same
/// seed selects the same shots from every split of one extraction.
inline EmbeddingBundle subsample_shots(const EmbeddingBundle& b, std::size_t shots, std::uint64_t seed)
{
    std::vector<std::set<std::uint32_t>> available(b.classes.size());
    for (const auto& r : b.records)
        available[r.class_index].insert(r.shot_index);

    std::vector<std::map<std::uint32_t, std::uint32_t>> renumber(b.classes.size());
    for (std::size_t c = 0; c < b.classes.size(); ++c) {
        std::vector<std::uint32_t> ids(available[c].begin(), available[c].end());
        if (ids.empty())
            continue;
        if (ids.size() < shots)
            fail(ErrorKind::invariant_violation, "class '" + b.classes[c] + "' has " + std::to_string(ids.size())
                                                     + " shots, cannot keep " + std::to_string(shots));
        Rng rng(mix_seed(seed, c));
        shuffle(ids, rng);
        ids.resize(shots);
        std::sort(ids.begin(), ids.end());
        for (std::uint32_t k = 0; k < ids.size(); ++k)
            renumber[c][ids[k]] = k;
    }

    EmbeddingBundle out = b;
    out.records.clear();
    for (const auto& r : b.records) {
        const auto it = renumber[r.class_index].find(r.shot_index);
        if (it == renumber[r.class_index].end())
            continue;
        Record kept = r;
        kept.shot_index = it->second;
        out.records.push_back(std::move(kept));
    }
    return out;
}

} // namespace dac

#endif // DAC_BUNDLE_HPP_INCLUDED

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dac/artifact_io.hpp"
#include "dac/bundle.hpp"
#include "dac/synthetic.hpp"
#include "dac/train.hpp"

using namespace dac;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "dac_test_bundle_io";
    fs::create_directories(dir);
    return dir / name;
}

EmbeddingBundle random_bundle(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> small(1, 4);
    std::normal_distribution<float> nd(0.0f, 2.0f);
    EmbeddingBundle b;
    b.dim = static_cast<std::size_t>(small(rng)) * 2;
    const int classes = small(rng);
    for (int c = 0; c < classes; ++c)
        b.classes.push_back("c" + std::to_string(c) + (c % 2 ? " ünï" : ""));
    b.split = static_cast<SplitTag>(rng() % 4);
    b.backbone = rng() % 2 ? "RN50" : "";
    const int shots = small(rng);
    const int views = small(rng);
    for (int c = 0; c < classes; ++c)
        for (int k = 0; k < shots; ++k)
            for (int v = 0; v < views; ++v) {
                Record r{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(v), {}};
                for (std::size_t i = 0; i < b.dim; ++i)
                    r.embedding.push_back(nd(rng));
                b.records.push_back(std::move(r));
            }
    // shuffle record order; loading must preserve whatever order was written
    std::shuffle(b.records.begin(), b.records.end(), rng);
    return b;
}

EmbeddingBundle tiny_bundle()
{
    EmbeddingBundle b;
    b.dim = 3;
    b.classes = {"cat", "dog"};
    b.split = SplitTag::cache;
    b.backbone = "test";
    b.records = {{0, 0, 0, {1.0, 2.0, 3.0}}, {1, 0, 0, {-1.0, 0.5, 0.25}}};
    return b;
}

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::usage;
}

} // namespace

TEST(BundleIo, RoundTripThroughFile)
{
    const EmbeddingBundle b = tiny_bundle();
    const fs::path p = temp_path("tiny.dacemb");
    write_bundle(b, p);
    EXPECT_EQ(read_bundle(p), b);
}

TEST(BundleIo, EmptyRecordsBundle)
{
    EmbeddingBundle b = tiny_bundle();
    b.records.clear();
    const fs::path p = temp_path("empty.dacemb");
    write_bundle(b, p);
    const EmbeddingBundle back = read_bundle(p);
    EXPECT_TRUE(back.records.empty());
    EXPECT_EQ(back, b);
}

TEST(BundleIo, WritesAreByteDeterministic)
{
    const EmbeddingBundle b = tiny_bundle();
    write_bundle(b, temp_path("a.dacemb"));
    write_bundle(b, temp_path("b.dacemb"));
    EXPECT_EQ(read_file_bytes(temp_path("a.dacemb")), read_file_bytes(temp_path("b.dacemb")));
}

TEST(BundleIo, FileSizeFollowsLayout)
{
    EmbeddingBundle b = tiny_bundle();
    b.dim = 5;
    b.records[0].embedding = {1, 2, 3, 4, 5};
    b.records[1].embedding = {5, 4, 3, 2, 1};
    const auto bytes = encode_bundle(b);
    ASSERT_GE(bytes.size(), 16u);
    EXPECT_EQ(std::string(reinterpret_cast<const char*>(bytes.data()), 8), std::string("DACEMB1\0", 8));
    const std::size_t manifest_len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (std::size_t(bytes[11]) << 24);
    EXPECT_EQ(bytes.size(), 16 + manifest_len + 2 * b.dim * 4);
    const auto manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(manifest_len));
    EXPECT_EQ(manifest.at("dim"), 5);
    EXPECT_EQ(manifest.at("records").size(), 2u);
    // payload is little-endian float32, records in manifest order
    float first;
    std::memcpy(&first, bytes.data() + 16 + manifest_len, 4);
    EXPECT_EQ(first, 1.0f);
}

TEST(BundleIo, TruncationIsChecksumFailure)
{
    const auto bytes = encode_bundle(tiny_bundle());
    for (std::size_t cut : {bytes.size() - 1, bytes.size() - 7, bytes.size() / 2, std::size_t{12}}) {
        const std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_EQ(kind_of([&] { decode_bundle(shorter); }), ErrorKind::checksum_fail) << "cut at " << cut;
    }
}

TEST(BundleIo, ClassIndexOutOfRangeIsInvariantViolation)
{
    Container c = to_container(tiny_bundle());
    c.manifest["records"][1][0] = 2; // N = 2
    const auto bytes = encode_container(c);
    try {
        decode_bundle(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invariant_violation);
        EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
    }
    EXPECT_EQ(kind_of([&] {
                  EmbeddingBundle b = tiny_bundle();
                  b.records[0].class_index = 2;
                  encode_bundle(b);
              }),
              ErrorKind::invariant_violation);
}

TEST(BundleIo, MagicAndVersionChecks)
{
    auto bytes = encode_bundle(tiny_bundle());
    auto wrong = bytes;
    wrong[0] = 'X';
    EXPECT_EQ(kind_of([&] { decode_bundle(wrong); }), ErrorKind::bad_magic);
    auto bumped = bytes;
    bumped[6] = '2';
    EXPECT_EQ(kind_of([&] { decode_bundle(bumped); }), ErrorKind::version_mismatch);
    // reading an adapter file as a bundle is a magic error
    EXPECT_EQ(kind_of([&] { decode_container(encode_container(to_container(Adapter::identity(2))), bundle_magic); }),
              ErrorKind::bad_magic);
}

TEST(BundleIo, TrainSplitNeedsEqualViewCounts)
{
    EmbeddingBundle b = tiny_bundle();
    b.split = SplitTag::train;
    b.records.push_back({0, 0, 1, {0.0, 1.0, 0.0}});
    EXPECT_EQ(kind_of([&] { validate(b); }), ErrorKind::invariant_violation);
    b.records.push_back({1, 0, 1, {0.0, 1.0, 0.0}});
    EXPECT_NO_THROW(validate(b));
}

TEST(BundleIo, DuplicateClassNamesRejected)
{
    EmbeddingBundle b = tiny_bundle();
    b.classes = {"cat", "cat"};
    EXPECT_EQ(kind_of([&] { validate(b); }), ErrorKind::invariant_violation);
}

TEST(BundleIo, WrongEmbeddingLengthNamesRecord)
{
    EmbeddingBundle b = tiny_bundle();
    b.records[1].embedding.pop_back();
    try {
        validate(b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("record 1 (class 1, shot 0, view 0)"), std::string::npos) << e.what();
    }
}

TEST(BundleIo, RandomBundlesRoundTrip)
{
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const EmbeddingBundle b = random_bundle(rng);
        ASSERT_EQ(decode_bundle(encode_bundle(b)), b) << "trial " << trial;
    }
}

TEST(BundleIo, EverySingleByteFlipIsDetected)
{
    const auto bytes = encode_bundle(tiny_bundle());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        auto corrupt = bytes;
        corrupt[i] ^= 0x20;
        try {
            decode_bundle(corrupt);
            ADD_FAILURE() << "flip at byte " << i << " went unnoticed";
        } catch (const Error& e) {
            EXPECT_EQ(e.family(), ErrorFamily::io) << "byte " << i << ": " << e.what();
        }
    }
}

TEST(TextBundleIo, RoundTrip)
{
    TextBundle t;
    t.dim = 2;
    t.classes = {"a", "b", "c"};
    t.embeddings = {{1, 0}, {0.5, 0.25}, {-3, 4}};
    t.backbone = "x";
    const fs::path p = temp_path("text.dactxt");
    write_text_bundle(t, p);
    EXPECT_EQ(read_text_bundle(p), t);
    const TextCache tc = load_text_any(p);
    EXPECT_EQ(tc.w_text.col(2), (Vec{-0.6, 0.8}));
}

TEST(AdapterIo, IdentityRoundTripIsExact)
{
    const Adapter a = Adapter::identity(4);
    const fs::path p = temp_path("id.dacadp");
    save_adapter(a, p);
    const Adapter back = load_adapter(p);
    EXPECT_EQ(back.theta(), Mat::identity(4));
    EXPECT_EQ(back, a);
}

TEST(AdapterIo, VersionBumpIsVersionMismatch)
{
    auto bytes = encode_container(to_container(Adapter::identity(3)));
    bytes[6] = '9';
    EXPECT_EQ(kind_of([&] { adapter_from_container(decode_container(bytes, adapter_magic)); }),
              ErrorKind::version_mismatch);

    Container c = to_container(Adapter::identity(3));
    auto raw = encode_container(c);
    // rewrite the manifest with format_version 2 and a matching checksum
    const std::size_t len = raw[8] | (raw[9] << 8) | (raw[10] << 16) | (std::size_t(raw[11]) << 24);
    auto manifest = json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    manifest["format_version"] = 2;
    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out(raw.begin(), raw.begin() + 8);
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    detail::put_u32(out, crc32_of({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), raw.begin() + 16 + static_cast<std::ptrdiff_t>(len), raw.end());
    EXPECT_EQ(kind_of([&] { decode_container(out, adapter_magic); }), ErrorKind::version_mismatch);
}

TEST(AdapterIo, ResumedTrainingMatchesUninterruptedTraining)
{
    SyntheticSpec spec;
    spec.classes = 3;
    spec.dim = 6;
    spec.shots = 2;
    spec.seed = 5;
    const auto bench = make_synthetic(spec);
    const TextCache text = build_text_cache(bench.text);
    const VisualCache cache = build_visual_cache(bench.cache);
    TrainConfig cfg;
    cfg.views_per_shot = 2;
    cfg.lr = 1e-3;
    cfg.epochs = 2;
    cfg.seed = 9;
    const TrainResult first = train_visual_adapter(bench.train, cfg, nullptr, cache, text);
    ASSERT_EQ(first.adapter.epoch, 2u);

    const fs::path p = temp_path("trained.dacadp");
    save_adapter(first.adapter, p);
    const Adapter reloaded = load_adapter(p);
    EXPECT_EQ(reloaded, first.adapter);

    cfg.epochs = 1;
    const TrainResult a = train_visual_adapter(bench.train, cfg, nullptr, cache, text, &first.adapter);
    const TrainResult b = train_visual_adapter(bench.train, cfg, nullptr, cache, text, &reloaded);
    EXPECT_EQ(a.log.epochs.front().mean_loss, b.log.epochs.front().mean_loss);
    EXPECT_EQ(a.adapter, b.adapter);

    cfg.epochs = 3;
    const TrainResult straight = train_visual_adapter(bench.train, cfg, nullptr, cache, text);
    EXPECT_EQ(straight.adapter, a.adapter);
}

TEST(CacheIo, VisualAndTextCachesRoundTrip)
{
    SyntheticSpec spec;
    spec.classes = 3;
    spec.dim = 5;
    spec.shots = 2;
    const auto bench = make_synthetic(spec);
    const VisualCache vc = build_visual_cache(bench.cache);
    save_visual_cache(vc, temp_path("vc.dacvca"));
    EXPECT_EQ(load_visual_cache(temp_path("vc.dacvca")), vc);
    const TextCache tc = build_text_cache(bench.text);
    save_text_cache(tc, temp_path("tc.dactxc"));
    EXPECT_EQ(load_text_cache(temp_path("tc.dactxc")), tc);
    EXPECT_EQ(load_text_any(temp_path("tc.dactxc")), tc);
}

TEST(SubsampleShots, DeterministicAndRenumbered)
{
    SyntheticSpec spec;
    spec.classes = 3;
    spec.dim = 4;
    spec.shots = 16;
    const auto bench = make_synthetic(spec);
    const auto a = subsample_shots(bench.cache, 4, 77);
    const auto b = subsample_shots(bench.cache, 4, 77);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.records.size(), 3u * 4u * spec.cache_views);
    for (const auto& r : a.records)
        EXPECT_LT(r.shot_index, 4u);
    // the same seed picks the same images from the train split
    const auto t = subsample_shots(bench.train, 4, 77);
    for (std::size_t i = 0; i < t.records.size(); ++i) {
        const auto& r = t.records[i];
        const auto it = std::find_if(a.records.begin(), a.records.end(), [&](const Record& x) {
            return x.class_index == r.class_index && x.shot_index == r.shot_index;
        });
        ASSERT_NE(it, a.records.end());
    }
    EXPECT_NE(subsample_shots(bench.cache, 4, 78), a);
    EXPECT_THROW(subsample_shots(bench.cache, 17, 1), Error);
}

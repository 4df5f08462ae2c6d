#include <gtest/gtest.h>

#include <random>

#include "dac/eval.hpp"
#include "dac/inference.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dac;

namespace {

// Random N-class, K-shot, one-view-per-shot problem with the raw vectors kept
// so the oracles can rebuild everything on their own.
struct Problem {
    std::size_t n, k, d;
    std::vector<Vec> text_raw;
    std::vector<Vec> key_raw; ///< class-major
    std::vector<std::size_t> key_class;
    TextCache text;
    VisualCache cache;

    Problem(std::size_t n_, std::size_t k_, std::size_t d_, std::mt19937_64& rng) : n(n_), k(k_), d(d_)
    {
        TextBundle tb{d, {}, {}, "rand"};
        EmbeddingBundle cb{d, {}, {}, SplitTag::cache, "rand"};
        for (std::size_t c = 0; c < n; ++c) {
            tb.classes.push_back("c" + std::to_string(c));
            text_raw.push_back(oracle::random_vec(rng, d));
            tb.embeddings.push_back(text_raw.back());
            for (std::size_t s = 0; s < k; ++s) {
                key_raw.push_back(oracle::random_vec(rng, d));
                key_class.push_back(c);
                cb.records.push_back({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(s), 0, key_raw.back()});
            }
        }
        cb.classes = tb.classes;
        text = build_text_cache(tb);
        cache = build_visual_cache(cb);
    }

    std::vector<Vec> text_cols() const
    {
        std::vector<Vec> out;
        for (const auto& t : text_raw)
            out.push_back(oracle::unit(t));
        return out;
    }

    std::vector<Vec> keys(const Mat* h = nullptr) const
    {
        std::vector<Vec> out;
        for (const auto& raw : key_raw)
            out.push_back(h ? oracle::unit(oracle::naive_matvec(grid(*h), oracle::unit(raw))) : oracle::unit(raw));
        return out;
    }

    static oracle::Grid grid(const Mat& m)
    {
        oracle::Grid g(m.rows(), Vec(m.cols()));
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c)
                g[r][c] = m(r, c);
        return g;
    }
};

Mat random_adapter(std::mt19937_64& rng, std::size_t d, double noise)
{
    Mat h = Mat::identity(d);
    for (double& x : h.values())
        x += oracle::random_vec(rng, 1, noise)[0];
    return h;
}

} // namespace

TEST(ClipLogits, OneHotAndOrthogonalQueries)
{
    TextCache text{Mat::identity(3), {"a", "b", "c"}};
    EXPECT_EQ(clip_logits(text, Vec{0, 1, 0}).values, (Vec{0, 1, 0}));
    TextCache plane{Mat(3, 2, Vec{1, 0, 0, 1, 0, 0}), {"a", "b"}};
    EXPECT_EQ(clip_logits(plane, Vec{0, 0, 1}).values, (Vec{0, 0}));
    EXPECT_EQ(clip_logits(text, Vec{0, 1, 0}).method, Method::zero_shot);
}

TEST(ClipLogits, QueryChecks)
{
    TextCache text{Mat::identity(3), {"a", "b", "c"}};
    EXPECT_TRUE(throws_kind([&] { clip_logits(text, Vec{0, 2, 0}); }, ErrorKind::invariant_violation));
    EXPECT_TRUE(throws_kind([&] { clip_logits(text, Vec{1, 0}); }, ErrorKind::dimension_mismatch));
}

TEST(TipAffinity, EqualsOneOnAKeyAndDecaysWithBeta)
{
    std::mt19937_64 rng(1);
    const Problem p(3, 2, 6, rng);
    const auto key = p.cache.w_image.col(4);
    const Vec z(key.begin(), key.end());
    for (double beta : {0.5, 1.0, 5.5, 20.0}) {
        const Vec a = tip_affinity(p.cache, z, beta);
        EXPECT_NEAR(a[4], 1.0, 1e-14);
        for (double x : a)
            EXPECT_LE(x, 1.0 + 1e-14);
    }
    const Vec q = oracle::random_unit(rng, 6);
    const Vec lo = tip_affinity(p.cache, q, 1.0);
    const Vec hi = tip_affinity(p.cache, q, 5.5);
    for (std::size_t r = 0; r < lo.size(); ++r)
        EXPECT_LT(hi[r], lo[r]);
    EXPECT_TRUE(throws_kind([&] { tip_affinity(p.cache, q, 0.0); }, ErrorKind::invariant_violation));
}

TEST(TipAffinity, MatchesHighPrecisionAtDefaultBeta)
{
    std::mt19937_64 rng(2);
    const Problem p(4, 3, 8, rng);
    const Vec q = oracle::random_unit(rng, 8);
    const Vec a = tip_affinity(p.cache, q, default_tip_beta);
    const auto keys = p.keys();
    const auto hq = oracle::hp_unit(q);
    for (std::size_t r = 0; r < keys.size(); ++r) {
        const oracle::hp want = exp(oracle::hp(5.5) * (oracle::hp_dot(oracle::hp_unit(keys[r]), hq) - 1));
        EXPECT_NEAR(a[r], static_cast<double>(want), 1e-13 * static_cast<double>(want));
    }
}

TEST(Ensemble, ZeroAlphaIsZeroShot)
{
    std::mt19937_64 rng(3);
    const Problem p(4, 2, 8, rng);
    const Adapter h = Adapter::linear(random_adapter(rng, 8, 0.3));
    const VisualCache adapted = adapt_cache(p.cache, h);
    for (int i = 0; i < 20; ++i) {
        const Vec z = oracle::random_unit(rng, 8);
        const Vec clip = clip_logits(p.text, z).values;
        EXPECT_EQ(tip_logits(p.text, p.cache, z, {0.0, 5.5}).values, clip);
        EXPECT_EQ(dacv_logits(p.text, adapted, h, z, 0.0).values, clip);
    }
}

TEST(Classifiers, AgreeWithNaiveOracles)
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Problem p(5, 4, 16, rng);
        const Mat hm = random_adapter(rng, 16, 0.3);
        const Adapter h = Adapter::linear(hm);
        const VisualCache adapted = adapt_cache(p.cache, h);
        const auto text_cols = p.text_cols();
        const auto keys = p.keys();
        const auto adapted_keys = p.keys(&hm);
        for (int q = 0; q < 20; ++q) {
            const Vec z = oracle::random_unit(rng, 16);
            const double alpha = 0.1 + 0.5 * q;
            const Vec inter = oracle::naive_inter(text_cols, z);
            const Vec tip_want = oracle::naive_ensemble(inter, oracle::naive_intra(keys, p.key_class, 5, z, 5.5), alpha);
            const Vec g = oracle::unit(oracle::naive_matvec(Problem::grid(hm), z));
            const Vec dac_want
                = oracle::naive_ensemble(inter, oracle::naive_intra(adapted_keys, p.key_class, 5, g, 1.0), alpha);
            EXPECT_LE(oracle::max_rel_err(tip_logits(p.text, p.cache, z, {alpha, 5.5}).values, tip_want), 1e-12);
            EXPECT_LE(oracle::max_rel_err(dacv_logits(p.text, adapted, h, z, alpha).values, dac_want), 1e-12);
            EXPECT_LE(oracle::max_rel_err(clip_logits(p.text, z).values, inter), 1e-12);
        }
    }
}

TEST(Classifiers, IdentityAdapterBridgesToTipAtUnitBeta)
{
    std::mt19937_64 rng(5);
    const Problem p(5, 4, 16, rng);
    const Adapter id = Adapter::identity(16);
    const VisualCache adapted = adapt_cache(p.cache, id);
    for (int q = 0; q < 100; ++q) {
        const Vec z = oracle::random_unit(rng, 16);
        const Vec a = dacv_logits(p.text, adapted, id, z, 1.3).values;
        const Vec b = tip_logits(p.text, p.cache, z, {1.3, 1.0}).values;
        EXPECT_LE(oracle::max_abs_diff(a, b), 1e-12);
    }
}

TEST(Classifiers, PredictionsInvariantToAdapterScale)
{
    std::mt19937_64 rng(6);
    const Problem p(5, 4, 16, rng);
    const Mat hm = random_adapter(rng, 16, 0.3);
    const Adapter h = Adapter::linear(hm);
    const VisualCache adapted = adapt_cache(p.cache, h);
    for (double c : {0.5, 3.0, 100.0}) {
        Mat scaled = hm;
        for (double& x : scaled.values())
            x *= c;
        const Adapter hc = Adapter::linear(scaled);
        const VisualCache adapted_c = adapt_cache(p.cache, hc);
        for (int q = 0; q < 50; ++q) {
            const Vec z = oracle::random_unit(rng, 16);
            const Vec a = dacv_logits(p.text, adapted, h, z, 2.0).values;
            const Vec b = dacv_logits(p.text, adapted_c, hc, z, 2.0).values;
            EXPECT_EQ(argmax(a), argmax(b));
            EXPECT_LE(oracle::max_abs_diff(a, b), 1e-12);
        }
    }
}

TEST(Classifiers, DacVtUsesTunedTextAsIs)
{
    std::mt19937_64 rng(7);
    const Problem p(3, 2, 6, rng);
    const Adapter id = Adapter::identity(6);
    const VisualCache adapted = adapt_cache(p.cache, id);
    TextCache tuned = p.text;
    for (double& x : tuned.w_text.values())
        x *= 2.0; // tuned columns are not renormalized
    const Vec z = oracle::random_unit(rng, 6);
    const Vec vt = dacvt_logits(tuned, adapted, id, z, 1.0).values;
    const Vec v = dacv_logits(p.text, adapted, id, z, 1.0).values;
    const Vec inter = clip_logits(p.text, z).values;
    for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(vt[c] - v[c], inter[c], 1e-12);
    EXPECT_EQ(dacvt_logits(tuned, adapted, id, z, 1.0).method, Method::dacvt);
}

TEST(Classifiers, ClassCountMismatch)
{
    std::mt19937_64 rng(8);
    const Problem a(3, 2, 6, rng);
    const Problem b(4, 2, 6, rng);
    const Vec z = oracle::random_unit(rng, 6);
    EXPECT_TRUE(throws_kind([&] { tip_logits(a.text, b.cache, z, {}); }, ErrorKind::dimension_mismatch));
}

TEST(Classifiers, BatchEqualsPerSample)
{
    std::mt19937_64 rng(9);
    const Problem p(4, 3, 8, rng);
    Artifacts art{p.text, p.cache, Adapter::linear(random_adapter(rng, 8, 0.2)), std::nullopt, std::nullopt};
    art.ensure_adapted();
    art.tuned_text = p.text;
    EmbeddingBundle test{8, p.text.classes, {}, SplitTag::test, "rand"};
    for (std::uint32_t i = 0; i < 12; ++i)
        test.records.push_back({i % 4, i / 4, 0, oracle::random_vec(rng, 8)});
    for (Method m : {Method::zero_shot, Method::tip, Method::dacv, Method::dacvt}) {
        const auto batch = bundle_logits(m, art, test);
        ASSERT_EQ(batch.size(), 12u);
        for (std::size_t i = 0; i < 12; ++i) {
            const Vec z = l2_normalize(test.records[i].embedding);
            const SampleLogits one = sample_logits(m, art, z, test.records[i].class_index);
            EXPECT_EQ(batch[i].inter, one.inter);
            EXPECT_EQ(batch[i].intra, one.intra);
            EXPECT_EQ(batch[i].label, test.records[i].class_index);
        }
    }
}

TEST(Methods, NamesRoundTrip)
{
    for (Method m : {Method::zero_shot, Method::tip, Method::dacv, Method::dacvt})
        EXPECT_EQ(parse_method(method_name(m)), m);
    EXPECT_TRUE(throws_kind([] { parse_method("linear-probe"); }, ErrorKind::usage));
}

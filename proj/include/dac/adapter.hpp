#ifndef DAC_ADAPTER_HPP_INCLUDED
#define DAC_ADAPTER_HPP_INCLUDED

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dac/error.hpp"
#include "dac/linalg.hpp"

namespace dac {

struct AdamConfig {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments for a list of parameter matrices.
struct AdamState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    std::uint64_t step = 0;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update; moments are created lazily.
inline void adam_step(std::vector<Mat>& params, const std::vector<Mat>& grads, AdamState& state,
                      const AdamConfig& cfg)
{
    if (grads.size() != params.size())
        fail(ErrorKind::dimension_mismatch, "adam: gradient count does not match parameter count");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.rows(), p.cols());
            state.v.emplace_back(p.rows(), p.cols());
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].values();
        const auto& g = grads[k].values();
        auto& m = state.m[k].values();
        auto& v = state.v[k].values();
        if (g.size() != p.size() || m.size() != p.size())
            fail(ErrorKind::dimension_mismatch, "adam: gradient shape does not match parameter");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

/// Linear visual adapter H: d -> d. Depth > 1 stacks square layers with
/// ReLU between them; every layer starts as the identity.
struct Adapter {
    std::vector<Mat> layers;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0; ///< completed training epochs
    AdamState adam;

    static Adapter identity(std::size_t dim, std::size_t depth = 1)
    {
        if (dim == 0 || depth == 0)
            fail(ErrorKind::invariant_violation, "adapter needs dim >= 1 and depth >= 1");
        Adapter a;
        a.layers.assign(depth, Mat::identity(dim));
        return a;
    }

    /// Wraps a single d x d matrix as a depth-1 adapter.
    static Adapter linear(Mat theta)
    {
        if (theta.rows() != theta.cols() || theta.rows() == 0)
            fail(ErrorKind::dimension_mismatch, "adapter matrix must be square, got "
                                                    + std::to_string(theta.rows()) + "x"
                                                    + std::to_string(theta.cols()));
        Adapter a;
        a.layers.push_back(std::move(theta));
        return a;
    }

    std::size_t dim() const noexcept { return layers.empty() ? 0 : layers.front().rows(); }
    std::size_t depth() const noexcept { return layers.size(); }
    const Mat& theta() const { return layers.front(); }

    /// Intermediate values kept for the backward pass.
    struct Trace {
        std::vector<Vec> inputs;      ///< input to each layer
        std::vector<Vec> activations; ///< pre-ReLU output of every layer but the last
        Vec g;                        ///< normalized output
        double out_norm = 0.0;
    };

    Vec apply(std::span<const double> z) const
    {
        Vec h(z.begin(), z.end());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            h = matvec(layers[l], h);
            if (l + 1 < layers.size())
                for (double& x : h)
                    x = std::max(x, 0.0);
        }
        return h;
    }

    /// g = normalize(H z). Throws ZeroNorm if H annihilates z.
    Vec embed(std::span<const double> z) const { return l2_normalize(apply(z)); }

    Trace forward(std::span<const double> z) const
    {
        Trace t;
        Vec h(z.begin(), z.end());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            t.inputs.push_back(h);
            h = matvec(layers[l], h);
            if (l + 1 < layers.size()) {
                t.activations.push_back(h);
                for (double& x : h)
                    x = std::max(x, 0.0);
            }
        }
        t.out_norm = norm(h);
        t.g = l2_normalize(h);
        return t;
    }

    /// Accumulates dL/dW for every layer given dL/dg for one traced input.
    void backward(const Trace& t, std::span<const double> grad_g, std::vector<Mat>& grads) const
    {
        Vec delta = normalize_backward(t.g, t.out_norm, grad_g);
        for (std::size_t l = layers.size(); l-- > 0;) {
            add_outer(grads[l], 1.0, delta, t.inputs[l]);
            if (l == 0)
                break;
            Vec back = matvec_t(layers[l], delta);
            const Vec& pre = t.activations[l - 1];
            for (std::size_t i = 0; i < back.size(); ++i)
                if (!(pre[i] > 0.0))
                    back[i] = 0.0;
            delta = std::move(back);
        }
    }

    std::vector<Mat> zero_grads() const
    {
        std::vector<Mat> g;
        for (const auto& w : layers)
            g.emplace_back(w.rows(), w.cols());
        return g;
    }

    friend bool operator==(const Adapter&, const Adapter&) = default;
};

} // namespace dac

#endif // DAC_ADAPTER_HPP_INCLUDED

#ifndef DAC_CONTRASTIVE_HPP_INCLUDED
#define DAC_CONTRASTIVE_HPP_INCLUDED

// Supervised contrastive objective for the visual adapter.
//
// A pair batch holds, for one pair index (i, j) with i < j, the embeddings
// z_j (anchor) and z_i (positive) of every class q. With g = normalize(H z)
// the batch loss is
//
//   L = sum_n [ -a_n.p_n / tau + log sum_q exp(a_n.p_q / tau) ]
//
// i.e. the other classes' positives at the same pair index act as negatives.

#include <string>
#include <vector>

#include "dac/adapter.hpp"
#include "dac/linalg.hpp"

namespace dac {

struct PairBatch {
    std::vector<Vec> anchors;   ///< z_j of each class
    std::vector<Vec> positives; ///< z_i of each class
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<Mat> grads; ///< one per adapter layer
};

namespace detail {

inline void require_temperature(double tau)
{
    if (!(tau > 0.0))
        fail(ErrorKind::non_positive_temperature, "tau = " + std::to_string(tau));
}

/// Loss of one batch over already-normalized outputs. When grad_a/grad_p are
/// non-null, dL/da and dL/dp are added into them. `terms` counts one per class.
inline double contrastive_terms(const std::vector<const Vec*>& a, const std::vector<const Vec*>& p, double tau,
                                std::vector<Vec>* grad_a, std::vector<Vec>* grad_p, std::size_t* terms = nullptr)
{
    const std::size_t n = a.size();
    if (p.size() != n)
        fail(ErrorKind::dimension_mismatch, "anchor and positive counts differ");
    double loss = 0.0;
    Vec logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < n; ++q)
            logits[q] = dot(*a[i], *p[q]) / tau;
        loss += log_sum_exp(logits) - logits[i];
        if (terms)
            ++*terms;
        if (!grad_a)
            continue;
        const Vec prob = softmax(logits);
        for (std::size_t q = 0; q < n; ++q) {
            const double coeff = (prob[q] - (q == i ? 1.0 : 0.0)) / tau;
            axpy(coeff, *p[q], (*grad_a)[i]);
            axpy(coeff, *a[i], (*grad_p)[q]);
        }
    }
    return loss;
}

inline void check_batch(const Adapter& adapter, const PairBatch& b)
{
    if (b.anchors.size() != b.positives.size() || b.anchors.empty())
        fail(ErrorKind::dimension_mismatch, "pair batch needs one anchor and one positive per class");
    for (const auto* side : {&b.anchors, &b.positives})
        for (const auto& z : *side)
            if (z.size() != adapter.dim())
                fail(ErrorKind::dimension_mismatch, "batch embedding of length " + std::to_string(z.size())
                                                        + " for adapter dim " + std::to_string(adapter.dim()));
}

} // namespace detail

/// Sum of batch losses (the full objective when every pair index is supplied).
inline LossAndGrad contrastive_loss_and_grad(const Adapter& adapter, std::span<const PairBatch> batches, double tau,
                                             bool with_grad = true)
{
    detail::require_temperature(tau);
    LossAndGrad out;
    if (with_grad)
        out.grads = adapter.zero_grads();
    for (const auto& b : batches) {
        detail::check_batch(adapter, b);
        const std::size_t n = b.anchors.size();
        std::vector<Adapter::Trace> ta, tp;
        for (std::size_t q = 0; q < n; ++q) {
            ta.push_back(adapter.forward(b.anchors[q]));
            tp.push_back(adapter.forward(b.positives[q]));
        }
        std::vector<const Vec*> ga, gp;
        for (std::size_t q = 0; q < n; ++q) {
            ga.push_back(&ta[q].g);
            gp.push_back(&tp[q].g);
        }
        std::vector<Vec> da(n, Vec(adapter.dim(), 0.0)), dp(n, Vec(adapter.dim(), 0.0));
        out.loss += detail::contrastive_terms(ga, gp, tau, with_grad ? &da : nullptr, with_grad ? &dp : nullptr);
        if (!with_grad)
            continue;
        for (std::size_t q = 0; q < n; ++q) {
            adapter.backward(ta[q], da[q], out.grads);
            adapter.backward(tp[q], dp[q], out.grads);
        }
    }
    return out;
}

inline double contrastive_loss(const Adapter& adapter, std::span<const PairBatch> batches, double tau)
{
    return contrastive_loss_and_grad(adapter, batches, tau, false).loss;
}

inline double contrastive_loss(const Mat& theta, const PairBatch& batch, double tau)
{
    return contrastive_loss(Adapter::linear(theta), std::span(&batch, 1), tau);
}

/// dL/dtheta, including the Jacobian of the output normalization.
inline Mat contrastive_grad(const Mat& theta, const PairBatch& batch, double tau)
{
    return contrastive_loss_and_grad(Adapter::linear(theta), std::span(&batch, 1), tau).grads.front();
}

} // namespace dac

#endif // DAC_CONTRASTIVE_HPP_INCLUDED

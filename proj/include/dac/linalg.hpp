#ifndef DAC_LINALG_HPP_INCLUDED
#define DAC_LINALG_HPP_INCLUDED

// Small dense linear algebra over 64-bit floats. Every reduction runs
// left-to-right so results are reproducible bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dac/error.hpp"

namespace dac {

using Vec = std::vector<double>;

/// Norms below this are treated as degenerate embeddings.
inline constexpr double zero_norm_threshold = 1e-30;

/// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill)
    {
    }
    Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values))
    {
        if (values_.size() != rows_ * cols_)
            fail(ErrorKind::dimension_mismatch,
                 "matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " given "
                     + std::to_string(values_.size()) + " values");
    }

    static Mat identity(std::size_t n)
    {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept
    {
        return {values_.data() + r * cols_, cols_};
    }

    Vec col(std::size_t c) const
    {
        Vec out(rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            out[r] = (*this)(r, c);
        return out;
    }
    void set_col(std::size_t c, std::span<const double> v)
    {
        for (std::size_t r = 0; r < rows_; ++r)
            (*this)(r, c) = v[r];
    }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    Mat transposed() const
    {
        Mat t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c)
                t(c, r) = (*this)(r, c);
        return t;
    }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

inline bool all_finite(std::span<const double> v) noexcept
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        fail(ErrorKind::dimension_mismatch,
             "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> v)
{
    return std::sqrt(dot(v, v));
}

inline Vec l2_normalize(std::span<const double> v)
{
    const double n = norm(v);
    if (!(n >= zero_norm_threshold) || !std::isfinite(n))
        fail(ErrorKind::zero_norm, "vector norm " + std::to_string(n) + " cannot be normalized");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = v[i] / n;
    return out;
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b)
{
    const Vec na = l2_normalize(a);
    const Vec nb = l2_normalize(b);
    return std::clamp(dot(na, nb), -1.0, 1.0);
}

/// W * v.
inline Vec matvec(const Mat& w, std::span<const double> v)
{
    if (w.cols() != v.size())
        fail(ErrorKind::dimension_mismatch,
             "matvec with " + std::to_string(w.cols()) + " columns and vector of length "
                 + std::to_string(v.size()));
    Vec out(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r)
        out[r] = dot(w.row(r), v);
    return out;
}

/// W^T * v; each output entry is summed over rows in increasing order.
inline Vec matvec_t(const Mat& w, std::span<const double> v)
{
    if (w.rows() != v.size())
        fail(ErrorKind::dimension_mismatch,
             "transposed matvec with " + std::to_string(w.rows()) + " rows and vector of length "
                 + std::to_string(v.size()));
    Vec out(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto row = w.row(r);
        for (std::size_t c = 0; c < w.cols(); ++c)
            out[c] += row[c] * v[r];
    }
    return out;
}

/// out += scale * a b^T
inline void add_outer(Mat& out, double scale, std::span<const double> a, std::span<const double> b)
{
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double s = scale * a[r];
        auto row = out.row(r);
        for (std::size_t c = 0; c < out.cols(); ++c)
            row[c] += s * b[c];
    }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y)
{
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += a * x[i];
}

/// log(sum(exp(x))) with max subtraction.
inline double log_sum_exp(std::span<const double> x)
{
    double m = -INFINITY;
    for (double v : x)
        m = std::max(m, v);
    double s = 0.0;
    for (double v : x)
        s += std::exp(v - m);
    return m + std::log(s);
}

inline Vec softmax(std::span<const double> logits, double temperature = 1.0)
{
    if (!(temperature > 0.0))
        fail(ErrorKind::non_positive_temperature,
             "softmax temperature " + std::to_string(temperature));
    Vec out(logits.size());
    if (logits.empty())
        return out;
    double m = -INFINITY;
    for (double v : logits)
        m = std::max(m, v / temperature);
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] / temperature - m);
        s += out[i];
    }
    for (double& v : out)
        v /= s;
    return out;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) noexcept
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best])
            best = i;
    return best;
}

/// Jacobian-vector product of u -> u/||u|| given the normalized output g = u/||u||:
/// (I - g g^T) upstream / ||u||.
inline Vec normalize_backward(std::span<const double> g, double u_norm, std::span<const double> upstream)
{
    const double proj = dot(g, upstream);
    Vec out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        out[i] = (upstream[i] - proj * g[i]) / u_norm;
    return out;
}

} // namespace dac

#endif // DAC_LINALG_HPP_INCLUDED

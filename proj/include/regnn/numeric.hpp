#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "regnn/autodiff.hpp"
#include "regnn/errors.hpp"

namespace regnn {

/// Dense row-major matrix over a scalar type (double, or ad::Var while
/// recording gradients).
template <class T = double>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0.0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DomainError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                              std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1.0);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const std::vector<T>& values() const noexcept { return data_; }
    std::vector<T>& values() noexcept { return data_; }

    /// Element-wise conversion, preserving shape and order.
    template <class F>
    auto map(F&& f) const -> Matrix<std::decay_t<std::invoke_result_t<F&, const T&>>> {
        using U = std::decay_t<std::invoke_result_t<F&, const T&>>;
        std::vector<U> out;
        out.reserve(data_.size());
        for (const T& x : data_) out.push_back(f(x));
        return Matrix<U>(rows_, cols_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](const T& x) { return std::isfinite(value_of(x)); });
    }

    bool operator==(const Matrix& o) const
        requires std::is_same_v<T, double>
    {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) throw DomainError("matmul: inner dimensions differ");
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc(0.0);
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

/// a * bᵀ
template <class T>
Matrix<T> matmul_transposed(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.cols()) throw DomainError("matmul_transposed: column counts differ");
    Matrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            T acc(0.0);
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            out(i, j) = acc;
        }
    }
    return out;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline double max_abs_diff(const Matrix<double>& a, const Matrix<double>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DomainError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    return m;
}

/// Seeded random stream. The engine is std::mt19937_64, whose output sequence
/// is fixed by the C++ standard; the uniform and normal transforms below are
/// spelled out here because the std distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one draw per call, no cached spare).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Unbiased integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw DomainError("Rng::index: empty range");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    /// Independent child stream derived from the seed (not the current state).
    Rng derive(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ULL))); }

    std::string state() const {
        std::ostringstream os;
        os << seed_ << ' ' << engine_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        std::uint64_t seed = 0;
        std::mt19937_64 engine;
        if (!(is >> seed >> engine)) throw DomainError("Rng::set_state: malformed state string");
        seed_ = seed;
        engine_ = engine;
    }

    bool operator==(const Rng& o) const { return seed_ == o.seed_ && engine_ == o.engine_; }

    /// splitmix64 finalizer.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// Numerically stable softmax. The max shift is taken from values only; it
/// cancels analytically so gradients are unaffected.
template <class T>
std::vector<T> softmax(std::span<const T> v) {
    if (v.empty()) throw DomainError("softmax: empty vector");
    double shift = -std::numeric_limits<double>::infinity();
    for (const T& x : v) {
        if (!std::isfinite(value_of(x))) throw DomainError("softmax: non-finite input");
        shift = std::max(shift, value_of(x));
    }
    using std::exp;
    std::vector<T> out;
    out.reserve(v.size());
    T total(0.0);
    for (const T& x : v) {
        out.push_back(exp(x - T(shift)));
        total += out.back();
    }
    for (T& x : out) x = x / total;
    return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& v) {
    return softmax(std::span<const T>(v));
}

struct PowerIterationResult {
    double estimate = 0.0;
    std::size_t iterations = 0;
    std::vector<double> history;
};

/// Largest singular value by power iteration on mᵀm with a fixed, seed-derived
/// start vector. Stops when successive estimates differ by less than
/// tol * estimate.
inline PowerIterationResult power_iteration(const Matrix<double>& m, double tol = 1e-6,
                                            std::size_t max_iter = 1000) {
    if (!(tol > 0.0)) throw DomainError("power_iteration: tol must be positive");
    if (!m.all_finite()) throw NumericError("power_iteration: non-finite matrix entry");
    const std::size_t n = m.cols();
    PowerIterationResult res;
    if (n == 0 || m.rows() == 0) return res;

    const Matrix<double> gram = matmul(transpose(m), m);
    Rng rng(0x5EEDULL ^ (static_cast<std::uint64_t>(m.rows()) << 32) ^ n);
    std::vector<double> x(n), y(n);
    for (double& xi : x) xi = rng.uniform(0.5, 1.5);

    double prev = -1.0, prev_change = 0.0;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        double xx = 0.0, xy = 0.0, yy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gram(i, j) * x[j];
            y[i] = acc;
        }
        for (std::size_t i = 0; i < n; ++i) {
            xx += x[i] * x[i];
            xy += x[i] * y[i];
            yy += y[i] * y[i];
        }
        const double sigma = std::sqrt(std::max(0.0, xy / xx));
        if (!std::isfinite(sigma)) throw NumericError("power_iteration: non-finite estimate");
        res.estimate = sigma;
        res.iterations = it;
        res.history.push_back(sigma);
        if (yy == 0.0) return res;  // x lies in the null space: m == 0 on span
        if (prev >= 0.0) {
            // Remaining error ~ change * r / (1 - r), r the observed contraction of successive changes.
            const double change = std::fabs(sigma - prev);
            double remaining = change;
            if (prev_change > 0.0 && change < prev_change) {
                const double r = change / prev_change;
                remaining = std::max(change, change * r / (1.0 - r));
            }
            if (remaining <= tol * sigma) return res;
            prev_change = change;
        }
        prev = sigma;
        const double norm = std::sqrt(yy);
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / norm;
    }
    throw ConvergenceError("power_iteration: no convergence after " + std::to_string(max_iter) +
                               " iterations",
                           res.estimate, max_iter);
}

inline double spectral_norm(const Matrix<double>& m, double tol = 1e-6, std::size_t max_iter = 1000) {
    return power_iteration(m, tol, max_iter).estimate;
}

/// Top singular triplet (sigma, u, v) from a full SVD. Used where the norm
/// has to be smooth and exact to rounding (the differentiable contraction
/// denominator).
struct SingularTriplet {
    double sigma = 0.0;
    std::vector<double> u;
    std::vector<double> v;
};

inline SingularTriplet top_singular_triplet(const Matrix<double>& m) {
    if (!m.all_finite()) throw NumericError("top_singular_triplet: non-finite matrix entry");
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SingularTriplet t;
    t.u.assign(m.rows(), 0.0);
    t.v.assign(m.cols(), 0.0);
    if (svd.singularValues().size() == 0) return t;
    t.sigma = svd.singularValues()(0);
    if (t.sigma == 0.0) return t;
    for (std::size_t i = 0; i < m.rows(); ++i) t.u[i] = svd.matrixU()(i, 0);
    for (std::size_t j = 0; j < m.cols(); ++j) t.v[j] = svd.matrixV()(j, 0);
    return t;
}

/// Spectral norm that carries gradients: sigma = uᵀ m v with the singular
/// vectors held constant, which is exactly d(sigma) = uᵀ dm v.
template <class T>
T differentiable_spectral_norm(const Matrix<T>& m) {
    const SingularTriplet t = top_singular_triplet(m.map([](const T& x) { return value_of(x); }));
    T acc(0.0);
    if (t.sigma == 0.0) return acc;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) acc += T(t.u[i] * t.v[j]) * m(i, j);
    return acc;
}

/// Central finite-difference gradient of f at p.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> p, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
    std::vector<double> x(p.begin(), p.end());
    std::vector<double> grad(p.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(std::span<const double>(x));
        x[i] = orig - h;
        const double fm = f(std::span<const double>(x));
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace regnn

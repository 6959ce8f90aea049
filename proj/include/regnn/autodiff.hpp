#pragma once

// Minimal tape-based reverse-mode differentiation over scalars.
//
// Every arithmetic op on a tape-backed Var appends one node holding at most
// two parent indices and the local partial derivatives. Constants (Vars built
// from a plain double) never touch the tape. The numeric kernels are written
// as templates over the scalar type so the same code runs on double for
// inference and on Var for training.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "regnn/errors.hpp"

namespace regnn::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(double value) : value_(value) {}  // NOLINT: implicit lift of constants

    double value() const noexcept { return value_; }
    bool is_constant() const noexcept { return tape_ == nullptr; }
    std::uint32_t index() const noexcept { return index_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(double value, Tape* tape, std::uint32_t index) : value_(value), tape_(tape), index_(index) {}

    double value_ = 0.0;
    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// New independent variable (a leaf).
    Var variable(double value) {
        nodes_.push_back({kNone, kNone, 0.0, 0.0});
        return Var(value, this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    Var unary(double value, const Var& a, double da) {
        if (a.is_constant()) return Var(value);
        nodes_.push_back({a.index(), kNone, da, 0.0});
        return Var(value, this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    Var binary(double value, const Var& a, double da, const Var& b, double db) {
        if (a.is_constant()) return unary(value, b, db);
        if (b.is_constant()) return unary(value, a, da);
        nodes_.push_back({a.index(), b.index(), da, db});
        return Var(value, this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    /// d(out)/d(node) for every node recorded so far.
    std::vector<double> adjoints(const Var& out) const {
        std::vector<double> adj(nodes_.size(), 0.0);
        if (out.is_constant()) return adj;
        if (out.tape() != this) throw DomainError("adjoints: output recorded on another tape");
        adj[out.index()] = 1.0;
        for (std::size_t i = out.index() + 1; i-- > 0;) {
            const double g = adj[i];
            if (g == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.a != kNone) adj[n.a] += g * n.da;
            if (n.b != kNone) adj[n.b] += g * n.db;
        }
        return adj;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }
    void clear() noexcept { nodes_.clear(); }

private:
    static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    struct Node {
        std::uint32_t a, b;
        double da, db;
    };
    std::vector<Node> nodes_;
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape() ? a.tape() : b.tape(); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
    Tape* t = detail::tape_of(a, b);
    if (!t) return Var(a.value() + b.value());
    return t->binary(a.value() + b.value(), a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
    Tape* t = detail::tape_of(a, b);
    if (!t) return Var(a.value() - b.value());
    return t->binary(a.value() - b.value(), a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
    Tape* t = detail::tape_of(a, b);
    if (!t) return Var(a.value() * b.value());
    return t->binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var& a, const Var& b) {
    Tape* t = detail::tape_of(a, b);
    const double q = a.value() / b.value();
    if (!t) return Var(q);
    return t->binary(q, a, 1.0 / b.value(), b, -q / b.value());
}
inline Var operator-(const Var& a) {
    if (a.is_constant()) return Var(-a.value());
    return a.tape()->unary(-a.value(), a, -1.0);
}
inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

// Comparisons look at values only; they never create tape nodes.
inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

inline Var exp(const Var& a) {
    const double e = std::exp(a.value());
    if (a.is_constant()) return Var(e);
    return a.tape()->unary(e, a, e);
}
inline Var log(const Var& a) {
    const double l = std::log(a.value());
    if (a.is_constant()) return Var(l);
    return a.tape()->unary(l, a, 1.0 / a.value());
}
inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.value());
    if (a.is_constant()) return Var(s);
    return a.tape()->unary(s, a, 0.5 / s);
}
inline Var tanh(const Var& a) {
    const double t = std::tanh(a.value());
    if (a.is_constant()) return Var(t);
    return a.tape()->unary(t, a, 1.0 - t * t);
}
// Subgradient 0 at the kink.
inline Var abs(const Var& a) {
    const double v = a.value();
    if (a.is_constant()) return Var(std::fabs(v));
    return a.tape()->unary(std::fabs(v), a, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}

}  // namespace regnn::ad

namespace regnn {

inline double value_of(double x) noexcept { return x; }
inline double value_of(const ad::Var& x) noexcept { return x.value(); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline ad::Var sigmoid(const ad::Var& x) {
    const double s = sigmoid(x.value());
    if (x.is_constant()) return ad::Var(s);
    return x.tape()->unary(s, x, s * (1.0 - s));
}

}  // namespace regnn

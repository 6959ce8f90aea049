#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/numeric.hpp"

namespace regnn {

/// I facial attributes sampled over T frames, stored attribute-major.
class ReactionClip {
public:
    ReactionClip() = default;
    ReactionClip(std::string clip_id, std::size_t attributes, std::size_t frames, std::vector<double> values)
        : clip_id_(std::move(clip_id)), attributes_(attributes), frames_(frames), values_(std::move(values)) {
        if (attributes_ < 2 || frames_ < 2) throw DomainError("ReactionClip: need at least 2 attributes and 2 frames");
        if (values_.size() != attributes_ * frames_) throw DomainError("ReactionClip: value count != attributes*frames");
        for (double v : values_)
            if (!std::isfinite(v)) throw DomainError("ReactionClip '" + clip_id_ + "': non-finite value");
    }

    const std::string& clip_id() const noexcept { return clip_id_; }
    std::size_t attributes() const noexcept { return attributes_; }
    std::size_t frames() const noexcept { return frames_; }
    const std::vector<double>& values() const noexcept { return values_; }

    double at(std::size_t attribute, std::size_t frame) const { return values_[attribute * frames_ + frame]; }
    std::span<const double> series(std::size_t attribute) const {
        return {values_.data() + attribute * frames_, frames_};
    }

    bool operator==(const ReactionClip&) const = default;

private:
    std::string clip_id_;
    std::size_t attributes_ = 0;
    std::size_t frames_ = 0;
    std::vector<double> values_;
};

/// D orthonormal rows over T frames mapping a series to D coefficients.
class TemporalBasis {
public:
    TemporalBasis() = default;

    /// Wraps explicit rows; rejects anything that is not row-orthonormal.
    explicit TemporalBasis(Matrix<double> rows) : rows_(std::move(rows)) {
        if (rows_.rows() == 0 || rows_.rows() > rows_.cols())
            throw DomainError("TemporalBasis: need 1 <= D <= T");
        if (orthonormality_error() > 1e-10) throw DomainError("TemporalBasis: rows are not orthonormal");
    }

    /// Orthonormal type-II DCT, first D rows.
    static TemporalBasis dct(std::size_t frames, std::size_t coefficients) {
        if (coefficients == 0 || coefficients > frames) throw DomainError("TemporalBasis::dct: need 1 <= D <= T");
        Matrix<double> b(coefficients, frames);
        const double n = static_cast<double>(frames);
        for (std::size_t d = 0; d < coefficients; ++d) {
            const double scale = d == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            for (std::size_t t = 0; t < frames; ++t)
                b(d, t) = scale * std::cos(M_PI * (static_cast<double>(t) + 0.5) * static_cast<double>(d) / n);
        }
        return TemporalBasis(std::move(b));
    }

    std::size_t frames() const noexcept { return rows_.cols(); }
    std::size_t coefficients() const noexcept { return rows_.rows(); }
    const Matrix<double>& rows() const noexcept { return rows_; }

    std::vector<double> project(std::span<const double> series) const {
        if (series.size() != frames()) throw DomainError("TemporalBasis::project: series length mismatch");
        std::vector<double> c(coefficients(), 0.0);
        for (std::size_t d = 0; d < coefficients(); ++d)
            for (std::size_t t = 0; t < frames(); ++t) c[d] += rows_(d, t) * series[t];
        return c;
    }

    std::vector<double> reconstruct(std::span<const double> coeffs) const {
        if (coeffs.size() != coefficients()) throw DomainError("TemporalBasis::reconstruct: coefficient count mismatch");
        std::vector<double> s(frames(), 0.0);
        for (std::size_t d = 0; d < coefficients(); ++d)
            for (std::size_t t = 0; t < frames(); ++t) s[t] += rows_(d, t) * coeffs[d];
        return s;
    }

    /// max |B Bᵀ - I|
    double orthonormality_error() const {
        const Matrix<double> g = matmul_transposed(rows_, rows_);
        double err = 0.0;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                err = std::max(err, std::fabs(g(i, j) - (i == j ? 1.0 : 0.0)));
        return err;
    }

private:
    Matrix<double> rows_;
};

/// Dense I x I x D tensor of directed edge features, indexed (source, target, dim).
template <class T = double>
class EdgeTensor {
public:
    EdgeTensor() = default;
    EdgeTensor(std::size_t nodes, std::size_t dims) : nodes_(nodes), dims_(dims), data_(nodes * nodes * dims, T(0.0)) {}

    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t dims() const noexcept { return dims_; }
    T& operator()(std::size_t src, std::size_t dst, std::size_t d) { return data_[(src * nodes_ + dst) * dims_ + d]; }
    const T& operator()(std::size_t src, std::size_t dst, std::size_t d) const {
        return data_[(src * nodes_ + dst) * dims_ + d];
    }

private:
    std::size_t nodes_ = 0;
    std::size_t dims_ = 0;
    std::vector<T> data_;
};

template <class T = double>
struct Edge {
    std::size_t source = 0;
    std::size_t target = 0;
    std::vector<T> feature;
};

/// Retained directed edges, sorted by (source, target), with per-target
/// incoming lists. Self-edges are never stored.
template <class T = double>
class EdgeSet {
public:
    EdgeSet() = default;
    EdgeSet(std::size_t nodes, std::size_t dims, std::vector<Edge<T>> edges)
        : nodes_(nodes), dims_(dims), edges_(std::move(edges)) {
        std::sort(edges_.begin(), edges_.end(), [](const Edge<T>& a, const Edge<T>& b) {
            return std::pair(a.source, a.target) < std::pair(b.source, b.target);
        });
        incoming_.assign(nodes_, {});
        out_degree_.assign(nodes_, 0);
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            const Edge<T>& ed = edges_[e];
            if (ed.source >= nodes_ || ed.target >= nodes_) throw DomainError("EdgeSet: node index out of range");
            if (ed.source == ed.target) throw DomainError("EdgeSet: self-edges are not allowed");
            if (ed.feature.size() != dims_) throw DomainError("EdgeSet: edge feature dimension mismatch");
            if (e > 0 && edges_[e - 1].source == ed.source && edges_[e - 1].target == ed.target)
                throw DomainError("EdgeSet: duplicate edge");
            for (const T& x : ed.feature)
                if (!std::isfinite(value_of(x))) throw DomainError("EdgeSet: non-finite edge feature");
            incoming_[ed.target].push_back(e);
            ++out_degree_[ed.source];
        }
    }

    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t dims() const noexcept { return dims_; }
    const std::vector<Edge<T>>& edges() const noexcept { return edges_; }
    std::size_t size() const noexcept { return edges_.size(); }

    /// Indices into edges() of the edges pointing at `target`, ascending by source.
    const std::vector<std::size_t>& incoming(std::size_t target) const { return incoming_.at(target); }
    std::size_t out_degree(std::size_t source) const { return out_degree_.at(source); }
    std::size_t max_out_degree() const {
        return out_degree_.empty() ? 0 : *std::max_element(out_degree_.begin(), out_degree_.end());
    }

    const Edge<T>* find(std::size_t source, std::size_t target) const {
        auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair(source, target),
                                   [](const Edge<T>& e, const std::pair<std::size_t, std::size_t>& k) {
                                       return std::pair(e.source, e.target) < k;
                                   });
        if (it == edges_.end() || it->source != source || it->target != target) return nullptr;
        return &*it;
    }

    std::vector<std::vector<bool>> adjacency() const {
        std::vector<std::vector<bool>> a(nodes_, std::vector<bool>(nodes_, false));
        for (const Edge<T>& e : edges_) a[e.source][e.target] = true;
        return a;
    }

    /// Same structure, features converted element-wise.
    template <class F>
    auto map(F&& f) const -> EdgeSet<std::decay_t<std::invoke_result_t<F&, const T&>>> {
        using U = std::decay_t<std::invoke_result_t<F&, const T&>>;
        std::vector<Edge<U>> out;
        out.reserve(edges_.size());
        for (const Edge<T>& e : edges_) {
            Edge<U> c{e.source, e.target, {}};
            c.feature.reserve(e.feature.size());
            for (const T& x : e.feature) c.feature.push_back(f(x));
            out.push_back(std::move(c));
        }
        return EdgeSet<U>(nodes_, dims_, std::move(out));
    }

private:
    std::size_t nodes_ = 0;
    std::size_t dims_ = 0;
    std::vector<Edge<T>> edges_;
    std::vector<std::vector<std::size_t>> incoming_;
    std::vector<std::size_t> out_degree_;
};

/// I nodes with D-dim features plus the retained directed edges.
template <class T = double>
struct AttributeGraph {
    Matrix<T> nodes;
    EdgeSet<T> edges;

    std::size_t node_count() const noexcept { return nodes.rows(); }
    std::size_t dims() const noexcept { return nodes.cols(); }
};

/// Keep, per source node, the k outgoing non-self edges with the largest
/// Euclidean norm; ties go to the smaller target index.
template <class T>
EdgeSet<T> top_k_prune(const EdgeTensor<T>& full, std::size_t k) {
    const std::size_t n = full.nodes();
    if (k < 1) throw DomainError("top_k_prune: k must be at least 1");
    if (n < 2 || k > n - 1) throw DomainError("top_k_prune: k must not exceed I-1");
    std::vector<Edge<T>> kept;
    kept.reserve(n * k);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t src = 0; src < n; ++src) {
        ranked.clear();
        for (std::size_t dst = 0; dst < n; ++dst) {
            if (dst == src) continue;
            double sq = 0.0;
            for (std::size_t d = 0; d < full.dims(); ++d) {
                const double v = value_of(full(src, dst, d));
                sq += v * v;
            }
            ranked.emplace_back(std::sqrt(sq), dst);
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; r < k; ++r) {
            Edge<T> e{src, ranked[r].second, std::vector<T>(full.dims())};
            for (std::size_t d = 0; d < full.dims(); ++d) e.feature[d] = full(src, e.target, d);
            kept.push_back(std::move(e));
        }
    }
    return EdgeSet<T>(n, full.dims(), std::move(kept));
}

}  // namespace regnn

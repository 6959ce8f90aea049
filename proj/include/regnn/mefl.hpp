#pragma once

#include <cmath>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/graph.hpp"
#include "regnn/numeric.hpp"

namespace regnn {

/// Multi-dimensional edge feature learning: one scaled dot-product attention
/// map per edge dimension. query[d] and key[d] are node_dim x att_dim.
template <class T = double>
struct MeflBlock {
    std::vector<Matrix<T>> query;
    std::vector<Matrix<T>> key;

    std::size_t edge_dims() const noexcept { return query.size(); }
    std::size_t node_dim() const noexcept { return query.empty() ? 0 : query.front().rows(); }
    std::size_t att_dim() const noexcept { return query.empty() ? 0 : query.front().cols(); }

    static MeflBlock random(std::size_t edge_dims, std::size_t node_dim, std::size_t att_dim, Rng& rng) {
        if (edge_dims == 0 || node_dim == 0 || att_dim == 0) throw DomainError("MeflBlock: dimensions must be positive");
        const double scale = 1.0 / std::sqrt(static_cast<double>(node_dim));
        MeflBlock b;
        for (std::size_t d = 0; d < edge_dims; ++d) {
            Matrix<T> q(node_dim, att_dim), k(node_dim, att_dim);
            for (auto& x : q.values()) x = T(rng.normal(0.0, scale));
            for (auto& x : k.values()) x = T(rng.normal(0.0, scale));
            b.query.push_back(std::move(q));
            b.key.push_back(std::move(k));
        }
        return b;
    }

    template <class F>
    auto map(F&& f) const {
        using U = typename decltype(query.front().map(f))::value_type;
        MeflBlock<U> out;
        for (std::size_t d = 0; d < query.size(); ++d) {
            out.query.push_back(query[d].map(f));
            out.key.push_back(key[d].map(f));
        }
        return out;
    }

    void validate() const {
        if (query.empty() || query.size() != key.size()) throw DomainError("MeflBlock: need D >= 1 query/key pairs");
        for (std::size_t d = 0; d < query.size(); ++d) {
            if (query[d].rows() != node_dim() || key[d].rows() != node_dim() || query[d].cols() != att_dim() ||
                key[d].cols() != att_dim())
                throw DomainError("MeflBlock: inconsistent projection shapes");
            if (!query[d].all_finite() || !key[d].all_finite()) throw DomainError("MeflBlock: non-finite weight");
        }
    }
};

/// Full (unpruned) edge tensor: output(i, j, d) = row-softmax(Q_d K_dᵀ / sqrt(a))[i][j].
template <class T>
EdgeTensor<T> mefl_edges(const Matrix<T>& nodes, const MeflBlock<T>& block) {
    const std::size_t n = nodes.rows();
    if (n < 2) throw DomainError("mefl_edges: need at least 2 nodes");
    if (nodes.cols() != block.node_dim()) throw DomainError("mefl_edges: node dim does not match block weights");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(block.att_dim()));
    EdgeTensor<T> out(n, block.edge_dims());
    std::vector<T> scores(n);
    for (std::size_t d = 0; d < block.edge_dims(); ++d) {
        const Matrix<T> q = matmul(nodes, block.query[d]);
        const Matrix<T> k = matmul(nodes, block.key[d]);
        const Matrix<T> s = matmul_transposed(q, k);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) scores[j] = s(i, j) * T(inv_sqrt);
            const std::vector<T> row = softmax(std::span<const T>(scores));
            for (std::size_t j = 0; j < n; ++j) out(i, j, d) = row[j];
        }
    }
    return out;
}

}  // namespace regnn

#pragma once

#include <algorithm>
#include <string>

#include "regnn/graph.hpp"
#include "regnn/mefl.hpp"

namespace regnn {

/// Node i = basis coefficients of attribute i's series.
inline Matrix<double> clip_node_features(const ReactionClip& clip, const TemporalBasis& basis) {
    if (clip.frames() != basis.frames()) throw DomainError("clip_node_features: clip frames != basis frames");
    Matrix<double> nodes(clip.attributes(), basis.coefficients());
    for (std::size_t i = 0; i < clip.attributes(); ++i) {
        const std::vector<double> c = basis.project(clip.series(i));
        std::copy(c.begin(), c.end(), nodes.row(i).begin());
    }
    return nodes;
}

/// Edges of a node set: MEFL attention maps pruned to the top k per source.
template <class T>
EdgeSet<T> build_edges(const Matrix<T>& nodes, const MeflBlock<T>& mefl, std::size_t k) {
    return top_k_prune(mefl_edges(nodes, mefl), k);
}

template <class T = double>
AttributeGraph<T> clip_to_graph(const ReactionClip& clip, const TemporalBasis& basis, const MeflBlock<T>& mefl,
                                std::size_t k) {
    if (k < 1) throw DomainError("clip_to_graph: k must be at least 1");
    Matrix<T> nodes = clip_node_features(clip, basis).map([](double x) { return T(x); });
    EdgeSet<T> edges = build_edges(nodes, mefl, k);
    return {std::move(nodes), std::move(edges)};
}

/// Inverse transform of the node features, clamped to [0, 1].
inline ReactionClip nodes_to_clip(const Matrix<double>& nodes, const TemporalBasis& basis, std::string clip_id) {
    if (nodes.cols() != basis.coefficients()) throw DomainError("graph_to_clip: node dim != basis coefficient count");
    std::vector<double> values;
    values.reserve(nodes.rows() * basis.frames());
    for (std::size_t i = 0; i < nodes.rows(); ++i) {
        for (double v : basis.reconstruct(nodes.row(i))) values.push_back(std::clamp(v, 0.0, 1.0));
    }
    return ReactionClip(std::move(clip_id), nodes.rows(), basis.frames(), std::move(values));
}

inline ReactionClip graph_to_clip(const AttributeGraph<double>& g, const TemporalBasis& basis,
                                  std::string clip_id = "reconstructed") {
    return nodes_to_clip(g.nodes, basis, std::move(clip_id));
}

}  // namespace regnn

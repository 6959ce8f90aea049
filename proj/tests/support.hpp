#pragma once

// Shared fixtures: seeded random matrices, graphs and enforced layers.

#include <cmath>
#include <vector>

#include "regnn/encode.hpp"
#include "regnn/mefl.hpp"
#include "regnn/numeric.hpp"
#include "regnn/regnn.hpp"

namespace regnn::testing {

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
    Matrix<double> m(rows, cols);
    for (double& v : m.values()) v = rng.normal(0.0, sd);
    return m;
}

inline ReactionClip random_clip(std::size_t attributes, std::size_t frames, Rng& rng, std::string id = "c") {
    std::vector<double> v(attributes * frames);
    for (double& x : v) x = rng.uniform();
    return ReactionClip(std::move(id), attributes, frames, std::move(v));
}

/// Random node features with MEFL edges pruned to k.
inline AttributeGraph<double> random_graph(std::size_t nodes, std::size_t dims, std::size_t k, Rng& rng,
                                           const MeflBlock<double>& mefl) {
    Matrix<double> x = random_matrix(nodes, dims, rng, 1.5);
    EdgeSet<double> e = build_edges(x, mefl, k);
    return {std::move(x), std::move(e)};
}

/// Edge set from explicit (source, target, feature) triples.
inline EdgeSet<double> edges_of(std::size_t nodes, std::size_t dims, std::vector<Edge<double>> edges) {
    return EdgeSet<double>(nodes, dims, std::move(edges));
}

inline RegnnLayer random_layer(std::size_t dims, std::size_t k, Rng& rng, double relation_scale = 1.0,
                               double combine_scale = 1.0) {
    return enforce_lipschitz(RegnnLayer(LayerWeights<double>::random(dims, dims, rng, relation_scale, combine_scale),
                                        Normalization::identity(dims), k));
}

inline double sigmoid_ref(long double x) { return static_cast<double>(1.0L / (1.0L + std::exp(-x))); }

}  // namespace regnn::testing

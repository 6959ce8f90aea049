#pragma once

#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/graph.hpp"
#include "regnn/numeric.hpp"

namespace regnn {

enum class ComponentMode {
    per_node,  ///< each node draws its own component
    global,    ///< one component draw shared by all nodes of a sample
};

/// Per-node M-component isotropic Gaussian mixture over D-dim latent node
/// features. means are laid out (node, component, dim).
template <class T = double>
class GaussianMixtureGraphDistribution {
public:
    GaussianMixtureGraphDistribution(std::size_t nodes, std::size_t dims, std::size_t components, std::vector<T> means,
                                     std::vector<double> sigmas, std::vector<double> weights)
        : nodes_(nodes), dims_(dims), components_(components), means_(std::move(means)), sigmas_(std::move(sigmas)),
          weights_(std::move(weights)) {
        if (nodes_ == 0 || dims_ == 0 || components_ == 0) throw DomainError("GMGD: empty shape");
        if (means_.size() != nodes_ * components_ * dims_) throw DomainError("GMGD: means size mismatch");
        if (sigmas_.size() != nodes_ * components_) throw DomainError("GMGD: sigmas size mismatch");
        if (weights_.size() != components_) throw DomainError("GMGD: weights size mismatch");
        for (const T& m : means_)
            if (!std::isfinite(value_of(m))) throw DomainError("GMGD: non-finite mean");
        for (double s : sigmas_)
            if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("GMGD: sigmas must be positive");
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw DomainError("GMGD: negative mixture weight");
            total += w;
        }
        if (std::fabs(total - 1.0) > 1e-12) throw DomainError("GMGD: mixture weights must sum to 1");
    }

    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t dims() const noexcept { return dims_; }
    std::size_t components() const noexcept { return components_; }
    const std::vector<T>& means() const noexcept { return means_; }
    const std::vector<double>& sigmas() const noexcept { return sigmas_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

    const T& mean(std::size_t node, std::size_t comp, std::size_t d) const {
        return means_[(node * components_ + comp) * dims_ + d];
    }
    double sigma(std::size_t node, std::size_t comp) const { return sigmas_[node * components_ + comp]; }

private:
    std::size_t nodes_, dims_, components_;
    std::vector<T> means_;
    std::vector<double> sigmas_;
    std::vector<double> weights_;
};

using Gmgd = GaussianMixtureGraphDistribution<double>;

/// Component m of node i is centred on node i of latent m; uniform weights.
template <class T>
GaussianMixtureGraphDistribution<T> summarize(std::span<const Matrix<T>> latents, double sigma) {
    if (latents.empty()) throw DomainError("summarize: need at least one latent graph");
    if (!(sigma > 0.0)) throw DomainError("summarize: sigma must be positive");
    const std::size_t n = latents.front().rows(), d = latents.front().cols(), m = latents.size();
    for (const auto& l : latents)
        if (l.rows() != n || l.cols() != d) throw DomainError("summarize: latent shapes differ");
    std::vector<T> means(n * m * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < m; ++c)
            for (std::size_t k = 0; k < d; ++k) means[(i * m + c) * d + k] = latents[c](i, k);
    return GaussianMixtureGraphDistribution<T>(n, d, m, std::move(means), std::vector<double>(n * m, sigma),
                                               std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

inline Gmgd summarize(std::span<const AttributeGraph<double>> latents, double sigma) {
    std::vector<Matrix<double>> nodes;
    for (const auto& g : latents) nodes.push_back(g.nodes);
    return summarize(std::span<const Matrix<double>>(nodes), sigma);
}

/// Packs means into the I x (M*D) grid emitted by the cognitive predictor.
template <class T>
Matrix<T> to_flat(const GaussianMixtureGraphDistribution<T>& dist) {
    return Matrix<T>(dist.nodes(), dist.components() * dist.dims(), dist.means());
}

inline Gmgd from_flat(const Matrix<double>& grid, std::size_t components, std::size_t dims, double sigma) {
    if (dims == 0 || grid.cols() % dims != 0) throw DomainError("from_flat: P is not divisible by D");
    if (grid.cols() / dims != components) throw DomainError("from_flat: P != M*D");
    return Gmgd(grid.rows(), dims, components, grid.values(),
                std::vector<double>(grid.rows() * components, sigma),
                std::vector<double>(components, 1.0 / static_cast<double>(components)));
}

namespace detail {
inline std::size_t draw_component(const std::vector<double>& weights, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        acc += weights[c];
        if (u < acc) return c;
    }
    return weights.size() - 1;
}
}  // namespace detail

/// Draw one latent graph (node features only; edges are attached by the caller).
inline AttributeGraph<double> sample(const Gmgd& dist, Rng& rng, ComponentMode mode = ComponentMode::per_node) {
    Matrix<double> nodes(dist.nodes(), dist.dims());
    const std::size_t shared = mode == ComponentMode::global ? detail::draw_component(dist.weights(), rng) : 0;
    for (std::size_t i = 0; i < dist.nodes(); ++i) {
        const std::size_t c = mode == ComponentMode::global ? shared : detail::draw_component(dist.weights(), rng);
        for (std::size_t k = 0; k < dist.dims(); ++k) nodes(i, k) = dist.mean(i, c, k) + dist.sigma(i, c) * rng.normal();
    }
    return {std::move(nodes), EdgeSet<double>(dist.nodes(), dist.dims(), {})};
}

/// Component means averaged with the mixture weights (an I x D node matrix).
inline Matrix<double> mixture_mean(const Gmgd& dist) {
    Matrix<double> out(dist.nodes(), dist.dims());
    for (std::size_t i = 0; i < dist.nodes(); ++i)
        for (std::size_t c = 0; c < dist.components(); ++c)
            for (std::size_t k = 0; k < dist.dims(); ++k) out(i, k) += dist.weights()[c] * dist.mean(i, c, k);
    return out;
}

/// log p(nodes) under independent per-node mixtures.
inline double log_density(const Gmgd& dist, const Matrix<double>& nodes) {
    if (nodes.rows() != dist.nodes() || nodes.cols() != dist.dims()) throw DomainError("log_density: shape mismatch");
    double total = 0.0;
    std::vector<double> terms(dist.components());
    for (std::size_t i = 0; i < dist.nodes(); ++i) {
        double best = -INFINITY;
        for (std::size_t c = 0; c < dist.components(); ++c) {
            const double s = dist.sigma(i, c);
            double sq = 0.0;
            for (std::size_t k = 0; k < dist.dims(); ++k) {
                const double z = (nodes(i, k) - dist.mean(i, c, k)) / s;
                sq += z * z;
            }
            terms[c] = std::log(dist.weights()[c]) - 0.5 * sq -
                       static_cast<double>(dist.dims()) * (std::log(s) + 0.5 * std::log(2.0 * M_PI));
            best = std::max(best, terms[c]);
        }
        double acc = 0.0;
        for (double t : terms) acc += std::exp(t - best);
        total += best + std::log(acc);
    }
    return total;
}

/// Standalone document: {"I", "D", "M", "sigma", "means": [[[...D] x M] x I]}.
inline nlohmann::json to_json(const Gmgd& dist) {
    nlohmann::json means = nlohmann::json::array();
    for (std::size_t i = 0; i < dist.nodes(); ++i) {
        nlohmann::json node = nlohmann::json::array();
        for (std::size_t c = 0; c < dist.components(); ++c) {
            nlohmann::json comp = nlohmann::json::array();
            for (std::size_t k = 0; k < dist.dims(); ++k) comp.push_back(dist.mean(i, c, k));
            node.push_back(std::move(comp));
        }
        means.push_back(std::move(node));
    }
    return {{"I", dist.nodes()}, {"D", dist.dims()}, {"M", dist.components()}, {"sigma", dist.sigma(0, 0)},
            {"means", std::move(means)}};
}

inline Gmgd gmgd_from_json(const nlohmann::json& j) {
    try {
        const auto n = j.at("I").get<std::size_t>(), d = j.at("D").get<std::size_t>(), m = j.at("M").get<std::size_t>();
        const double sigma = j.at("sigma").get<double>();
        const auto& means = j.at("means");
        if (means.size() != n) throw DomainError("distribution JSON: 'means' must have I entries");
        std::vector<double> flat;
        flat.reserve(n * m * d);
        for (const auto& node : means) {
            if (node.size() != m) throw DomainError("distribution JSON: each node needs M components");
            for (const auto& comp : node) {
                if (comp.size() != d) throw DomainError("distribution JSON: each component needs D values");
                for (const auto& v : comp) flat.push_back(v.get<double>());
            }
        }
        return Gmgd(n, d, m, std::move(flat), std::vector<double>(n * m, sigma),
                    std::vector<double>(m, 1.0 / static_cast<double>(m)));
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("distribution JSON: ") + e.what());
    }
}

}  // namespace regnn

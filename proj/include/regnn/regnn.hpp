#pragma once

// Reversible multi-dimensional edge GNN layers.
//
// One layer maps node features x (I x D) to x + phi(x), where phi is
//
//   u      = sigmoid((x - shift) / scale)                 pre-activation
//   a_ji   = softmax_{j in N(i)} (u_i W_q)(u_j W_m)ᵀ       relation coefficients
//   e_ji   = a_ji e0_ji / sum_k a_ki e0_ki                  per dimension
//   phi_i  = (w_e / (1 + 2 ||W_q W_mᵀ||_2)) ∘ sum_j e_ji ∘ u_j
//
// and e0 is the initial edge set, shared by every layer. The inverse is the
// fixed point of x = y - phi(x), which exists and is unique when phi is a
// contraction; enforce_lipschitz() guarantees that.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/graph.hpp"
#include "regnn/numeric.hpp"

namespace regnn {

inline constexpr double kDefaultLipschitzTarget = 0.5;

/// Frozen per-dimension standardization applied before the sigmoid.
struct Normalization {
    std::vector<double> shift;
    std::vector<double> scale;

    static Normalization identity(std::size_t dims) { return {std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)}; }
    double min_scale() const { return scale.empty() ? 1.0 : *std::min_element(scale.begin(), scale.end()); }
    bool operator==(const Normalization&) const = default;
};

/// Trainable weights of one layer. query and message are D x R; combine is
/// the 1 x D vector weighting each message dimension.
template <class T = double>
struct LayerWeights {
    Matrix<T> query;
    Matrix<T> message;
    std::vector<T> combine;

    std::size_t dims() const noexcept { return query.rows(); }
    std::size_t relation_dim() const noexcept { return query.cols(); }

    static LayerWeights random(std::size_t dims, std::size_t relation_dim, Rng& rng, double relation_scale = 1.0,
                               double combine_scale = 1.0) {
        const double s = relation_scale / std::sqrt(static_cast<double>(dims));
        LayerWeights w{Matrix<T>(dims, relation_dim), Matrix<T>(dims, relation_dim), std::vector<T>(dims)};
        for (auto& x : w.query.values()) x = T(rng.normal(0.0, s));
        for (auto& x : w.message.values()) x = T(rng.normal(0.0, s));
        for (auto& x : w.combine) x = T(rng.uniform(-combine_scale, combine_scale));
        return w;
    }

    template <class F>
    auto map(F&& f) const {
        using U = typename decltype(query.map(f))::value_type;
        LayerWeights<U> out{query.map(f), message.map(f), {}};
        out.combine.reserve(combine.size());
        for (const T& x : combine) out.combine.push_back(f(x));
        return out;
    }

    void validate() const {
        if (dims() == 0 || relation_dim() == 0) throw DomainError("LayerWeights: empty weights");
        if (message.rows() != dims() || message.cols() != relation_dim() || combine.size() != dims())
            throw DomainError("LayerWeights: inconsistent shapes");
        if (!query.all_finite() || !message.all_finite()) throw NumericError("LayerWeights: non-finite weight");
        for (const T& x : combine)
            if (!std::isfinite(value_of(x))) throw NumericError("LayerWeights: non-finite weight");
    }
};

// ---------------------------------------------------------------------------
// Scalar-generic building blocks (double for inference, ad::Var for training)

template <class T>
Matrix<T> preprocess(const Matrix<T>& x, const Normalization& norm) {
    if (norm.shift.size() != x.cols() || norm.scale.size() != x.cols())
        throw DomainError("preprocess: normalization size != feature dim");
    Matrix<T> u(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t d = 0; d < x.cols(); ++d)
            u(i, d) = sigmoid((x(i, d) - T(norm.shift[d])) * T(1.0 / norm.scale[d]));
    return u;
}

/// ||W_q W_mᵀ||_2, differentiable in the weights.
template <class T>
T relation_norm(const LayerWeights<T>& w) {
    return differentiable_spectral_norm(matmul_transposed(w.query, w.message));
}

template <class T>
T contraction_denominator(const LayerWeights<T>& w) {
    return T(1.0) + T(2.0) * relation_norm(w);
}

/// Relation coefficient per edge (aligned with edges.edges()), computed on
/// preprocessed features u. Sums to one over each target's incoming set.
template <class T>
std::vector<T> relation_coefficients(const Matrix<T>& u, const EdgeSet<T>& edges, const LayerWeights<T>& w) {
    if (u.rows() != edges.nodes() || u.cols() != w.dims()) throw DomainError("relation_coefficients: shape mismatch");
    const Matrix<T> uq = matmul(u, w.query);
    const Matrix<T> um = matmul(u, w.message);
    std::vector<T> coeff(edges.size(), T(0.0));
    std::vector<T> scores;
    for (std::size_t i = 0; i < edges.nodes(); ++i) {
        const auto& in = edges.incoming(i);
        if (in.empty()) continue;
        scores.clear();
        for (std::size_t e : in) {
            const std::size_t j = edges.edges()[e].source;
            T s(0.0);
            for (std::size_t r = 0; r < w.relation_dim(); ++r) s += uq(i, r) * um(j, r);
            scores.push_back(s);
        }
        const std::vector<T> a = softmax(std::span<const T>(scores));
        for (std::size_t n = 0; n < in.size(); ++n) coeff[in[n]] = a[n];
    }
    return coeff;
}

/// Coefficient-reweighted initial edges, renormalized per target and dimension.
template <class T>
EdgeSet<T> updated_edges(const EdgeSet<T>& edges0, const std::vector<T>& coeff) {
    if (coeff.size() != edges0.size()) throw DomainError("updated_edges: coefficient count mismatch");
    std::vector<Edge<T>> out = edges0.edges();
    const std::size_t dims = edges0.dims();
    std::vector<T> denom(dims);
    for (std::size_t i = 0; i < edges0.nodes(); ++i) {
        const auto& in = edges0.incoming(i);
        if (in.empty()) continue;
        std::fill(denom.begin(), denom.end(), T(0.0));
        for (std::size_t e : in)
            for (std::size_t d = 0; d < dims; ++d) denom[d] += coeff[e] * edges0.edges()[e].feature[d];
        for (std::size_t d = 0; d < dims; ++d)
            if (!(value_of(denom[d]) >= 1e-300))
                throw NumericError("edge update: normalizer underflow at node " + std::to_string(i));
        for (std::size_t e : in)
            for (std::size_t d = 0; d < dims; ++d)
                out[e].feature[d] = coeff[e] * edges0.edges()[e].feature[d] / denom[d];
    }
    return EdgeSet<T>(edges0.nodes(), dims, std::move(out));
}

/// The residual branch phi of one layer.
template <class T>
Matrix<T> phi(const Matrix<T>& x, const EdgeSet<T>& edges0, const LayerWeights<T>& w, const Normalization& norm) {
    if (x.cols() != w.dims() || edges0.dims() != w.dims() || x.rows() != edges0.nodes())
        throw DomainError("phi: node/edge/weight dimensions disagree");
    const Matrix<T> u = preprocess(x, norm);
    const EdgeSet<T> en = updated_edges(edges0, relation_coefficients(u, edges0, w));
    const T inv_den = T(1.0) / contraction_denominator(w);
    Matrix<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto& in = en.incoming(i);
        if (in.empty()) continue;
        for (std::size_t d = 0; d < x.cols(); ++d) {
            T acc(0.0);
            for (std::size_t e : in) acc += en.edges()[e].feature[d] * u(en.edges()[e].source, d);
            out(i, d) = w.combine[d] * inv_den * acc;
        }
    }
    return out;
}

template <class T>
Matrix<T> forward_nodes(std::span<const LayerWeights<T>> layers, std::span<const Normalization> norms, Matrix<T> x,
                        const EdgeSet<T>& edges0) {
    if (layers.size() != norms.size()) throw DomainError("forward_nodes: layer/normalization count mismatch");
    for (std::size_t n = 0; n < layers.size(); ++n) {
        const Matrix<T> delta = phi(x, edges0, layers[n], norms[n]);
        for (std::size_t k = 0; k < x.size(); ++k) x.values()[k] += delta.values()[k];
    }
    return x;
}

// ---------------------------------------------------------------------------
// Contraction bound

/// Upper bound on the Lipschitz constant of phi in the 1-, 2- and inf-norms,
/// valid for any edge set whose out-degree is at most max_out_degree.
///
/// With A = W_q W_mᵀ, S = sum|A|, alpha/beta = max abs row/column sum of A,
/// the aggregation's Jacobian w.r.t. u has row sums <= 1 + 2S and column
/// sums <= K + D alpha + K D beta. The sigmoid contributes 1/(4 scale) and
/// the output scaling max|w_e| / (1 + 2||A||_2).
struct ContractionBound {
    double denominator = 1.0;
    double row_bound = 1.0;
    double column_bound = 1.0;
    double lipschitz = 0.0;
};

inline ContractionBound contraction_bound(const LayerWeights<double>& w, const Normalization& norm,
                                          std::size_t max_out_degree) {
    w.validate();
    const Matrix<double> a = matmul_transposed(w.query, w.message);
    const std::size_t dims = a.rows();
    double total = 0.0, alpha = 0.0, beta = 0.0;
    for (std::size_t r = 0; r < dims; ++r) {
        double row = 0.0, col = 0.0;
        for (std::size_t c = 0; c < dims; ++c) {
            row += std::fabs(a(r, c));
            col += std::fabs(a(c, r));
        }
        total += row;
        alpha = std::max(alpha, row);
        beta = std::max(beta, col);
    }
    const double k = static_cast<double>(max_out_degree);
    const double d = static_cast<double>(dims);
    ContractionBound b;
    b.denominator = contraction_denominator(w);
    b.row_bound = 1.0 + 2.0 * total;
    b.column_bound = k + d * alpha + k * d * beta;
    double wmax = 0.0;
    for (double x : w.combine) wmax = std::max(wmax, std::fabs(x));
    b.lipschitz = wmax / b.denominator * 0.25 / norm.min_scale() * std::max(b.row_bound, b.column_bound);
    if (!std::isfinite(b.lipschitz) || !std::isfinite(b.denominator))
        throw NumericError("contraction_bound: non-finite bound");
    return b;
}

struct ContractionRecord {
    double denominator = 1.0;
    double bound = 0.0;
    double target = kDefaultLipschitzTarget;
    bool operator==(const ContractionRecord&) const = default;
};

class RegnnLayer {
public:
    RegnnLayer(LayerWeights<double> weights, Normalization norm, std::size_t max_out_degree)
        : weights_(std::move(weights)), norm_(std::move(norm)), max_out_degree_(max_out_degree) {
        weights_.validate();
        if (norm_.shift.size() != weights_.dims() || norm_.scale.size() != weights_.dims())
            throw DomainError("RegnnLayer: normalization size != node dim");
        for (double s : norm_.scale)
            if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("RegnnLayer: normalization scale must be positive");
        if (max_out_degree_ < 1) throw DomainError("RegnnLayer: max_out_degree must be at least 1");
    }

    const LayerWeights<double>& weights() const noexcept { return weights_; }
    const Normalization& normalization() const noexcept { return norm_; }
    std::size_t max_out_degree() const noexcept { return max_out_degree_; }
    std::size_t dims() const noexcept { return weights_.dims(); }

    /// Any write access invalidates the contraction record.
    LayerWeights<double>& mutable_weights() {
        record_.reset();
        return weights_;
    }
    void set_normalization(Normalization norm) {
        if (norm.shift.size() != dims() || norm.scale.size() != dims())
            throw DomainError("RegnnLayer: normalization size != node dim");
        record_.reset();
        norm_ = std::move(norm);
    }

    bool enforced() const noexcept { return record_.has_value(); }
    const std::optional<ContractionRecord>& record() const noexcept { return record_; }

    /// Reinstate a stored record; accepted only if it still matches the weights.
    bool restore_record(const ContractionRecord& rec) {
        const ContractionBound b = contraction_bound(weights_, norm_, max_out_degree_);
        if (b.denominator != rec.denominator || b.lipschitz != rec.bound || !(rec.bound < 1.0) ||
            rec.bound > rec.target * (1.0 + 1e-12))
            return false;
        record_ = rec;
        return true;
    }

private:
    friend RegnnLayer enforce_lipschitz(const RegnnLayer& layer, double target);

    LayerWeights<double> weights_;
    Normalization norm_;
    std::size_t max_out_degree_;
    std::optional<ContractionRecord> record_;
};

/// Applies the (1 + 2||W_q W_mᵀ||) normalization and, if the certified bound
/// still exceeds `target`, shrinks w_e until it does not. Idempotent.
inline RegnnLayer enforce_lipschitz(const RegnnLayer& layer, double target = kDefaultLipschitzTarget) {
    if (!(target > 0.0 && target < 1.0)) throw DomainError("enforce_lipschitz: target must lie in (0, 1)");
    RegnnLayer out = layer;
    ContractionBound b = contraction_bound(out.weights_, out.norm_, out.max_out_degree_);
    if (b.lipschitz > target * (1.0 + 1e-12)) {
        const double factor = target / b.lipschitz;
        for (double& x : out.weights_.combine) x *= factor;
        b = contraction_bound(out.weights_, out.norm_, out.max_out_degree_);
    }
    out.record_ = ContractionRecord{b.denominator, b.lipschitz, target};
    return out;
}

namespace detail {
inline void require_usable(const RegnnLayer& layer, const Matrix<double>& x, const EdgeSet<double>& edges0) {
    if (!layer.enforced()) throw ContractViolation("REGNN layer used without Lipschitz enforcement");
    if (edges0.max_out_degree() > layer.max_out_degree())
        throw ContractViolation("edge set out-degree exceeds the layer's certified maximum");
    if (x.cols() != layer.dims() || edges0.dims() != layer.dims() || x.rows() != edges0.nodes())
        throw DomainError("REGNN layer: node/edge/weight dimensions disagree");
}
}  // namespace detail

/// Relation coefficients for the layer's current weights, aligned with edges0.edges().
inline std::vector<double> coefficients(const Matrix<double>& nodes_prev, const EdgeSet<double>& edges0,
                                        const RegnnLayer& layer) {
    return relation_coefficients(preprocess(nodes_prev, layer.normalization()), edges0, layer.weights());
}

inline EdgeSet<double> edge_update(const Matrix<double>& nodes_prev, const EdgeSet<double>& edges0,
                                   const RegnnLayer& layer) {
    return updated_edges(edges0, coefficients(nodes_prev, edges0, layer));
}

inline Matrix<double> forward_layer(const Matrix<double>& nodes_prev, const EdgeSet<double>& edges0,
                                    const RegnnLayer& layer) {
    detail::require_usable(layer, nodes_prev, edges0);
    Matrix<double> out = nodes_prev;
    const Matrix<double> delta = phi(nodes_prev, edges0, layer.weights(), layer.normalization());
    for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] += delta.values()[k];
    return out;
}

struct ReverseOptions {
    double tol = 1e-8;
    std::size_t max_iter = 500;
    std::uint64_t seed = 0x2545F4914F6CDD1DULL;
};

struct ReverseResult {
    Matrix<double> nodes;
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Fixed-point inversion x_k = y - phi(x_{k-1}) from a seeded start in
/// (0.1, 1.1); stops once the inf-norm step falls below tol.
inline ReverseResult reverse_layer(const Matrix<double>& nodes_next, const EdgeSet<double>& edges0,
                                   const RegnnLayer& layer, const ReverseOptions& opt = {}) {
    detail::require_usable(layer, nodes_next, edges0);
    if (!(opt.tol > 0.0)) throw DomainError("reverse_layer: tol must be positive");
    Rng rng(opt.seed);
    Matrix<double> x(nodes_next.rows(), nodes_next.cols());
    for (double& v : x.values()) v = rng.uniform(0.1, 1.1);
    double residual = 0.0;
    for (std::size_t it = 1; it <= opt.max_iter; ++it) {
        const Matrix<double> delta = phi(x, edges0, layer.weights(), layer.normalization());
        residual = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double next = nodes_next.values()[k] - delta.values()[k];
            residual = std::max(residual, std::fabs(next - x.values()[k]));
            x.values()[k] = next;
        }
        if (!std::isfinite(residual)) throw NumericError("reverse_layer: non-finite iterate");
        if (residual < opt.tol) return {std::move(x), it, residual};
    }
    throw ConvergenceError("reverse_layer: fixed-point iteration did not converge (contraction violated?)", residual,
                           opt.max_iter);
}

/// Largest observed ||phi(a) - phi(b)||_2 / ||a - b||_2 over seeded random pairs.
inline double empirical_lipschitz(const RegnnLayer& layer, const EdgeSet<double>& edges0, Rng& rng,
                                  std::size_t pairs = 1000) {
    const std::size_t n = edges0.nodes(), dims = layer.dims();
    double worst = 0.0;
    Matrix<double> a(n, dims), b(n, dims);
    for (std::size_t p = 0; p < pairs; ++p) {
        const double spread = rng.uniform(0.5, 6.0);
        const double step = std::pow(10.0, rng.uniform(-4.0, 0.5));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dims; ++d) {
                const double centre = layer.normalization().shift[d];
                const double sc = layer.normalization().scale[d];
                a(i, d) = centre + sc * rng.uniform(-spread, spread);
                b(i, d) = a(i, d) + sc * step * rng.normal();
            }
        }
        const Matrix<double> pa = phi(a, edges0, layer.weights(), layer.normalization());
        const Matrix<double> pb = phi(b, edges0, layer.weights(), layer.normalization());
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            num += (pa.values()[k] - pb.values()[k]) * (pa.values()[k] - pb.values()[k]);
            den += (a.values()[k] - b.values()[k]) * (a.values()[k] - b.values()[k]);
        }
        if (den > 0.0) worst = std::max(worst, std::sqrt(num / den));
    }
    return worst;
}

class RegnnModel {
public:
    explicit RegnnModel(std::vector<RegnnLayer> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw DomainError("RegnnModel: need at least one layer");
        for (const RegnnLayer& l : layers_) {
            if (l.dims() != layers_.front().dims()) throw DomainError("RegnnModel: layers disagree on node dim");
            if (l.max_out_degree() != layers_.front().max_out_degree())
                throw DomainError("RegnnModel: layers disagree on max out-degree");
        }
    }

    /// Random, enforced model.
    static RegnnModel random(std::size_t layers, std::size_t dims, std::size_t relation_dim, std::size_t max_out_degree,
                             Rng& rng, double relation_scale = 1.0, double combine_scale = 1.0,
                             double target = kDefaultLipschitzTarget) {
        if (layers == 0) throw DomainError("RegnnModel: need at least one layer");
        std::vector<RegnnLayer> ls;
        for (std::size_t n = 0; n < layers; ++n) {
            ls.push_back(enforce_lipschitz(
                RegnnLayer(LayerWeights<double>::random(dims, relation_dim, rng, relation_scale, combine_scale),
                           Normalization::identity(dims), max_out_degree),
                target));
        }
        return RegnnModel(std::move(ls));
    }

    std::size_t size() const noexcept { return layers_.size(); }
    std::size_t dims() const noexcept { return layers_.front().dims(); }
    std::size_t max_out_degree() const noexcept { return layers_.front().max_out_degree(); }
    const std::vector<RegnnLayer>& layers() const noexcept { return layers_; }
    const RegnnLayer& layer(std::size_t n) const { return layers_.at(n); }
    RegnnLayer& mutable_layer(std::size_t n) { return layers_.at(n); }

    bool enforced() const {
        return std::all_of(layers_.begin(), layers_.end(), [](const RegnnLayer& l) { return l.enforced(); });
    }
    void enforce(double target = kDefaultLipschitzTarget) {
        for (RegnnLayer& l : layers_) l = enforce_lipschitz(l, target);
    }

    std::vector<LayerWeights<double>> weights() const {
        std::vector<LayerWeights<double>> w;
        for (const RegnnLayer& l : layers_) w.push_back(l.weights());
        return w;
    }
    std::vector<Normalization> normalizations() const {
        std::vector<Normalization> n;
        for (const RegnnLayer& l : layers_) n.push_back(l.normalization());
        return n;
    }

private:
    std::vector<RegnnLayer> layers_;
};

/// Every layer consumes the same initial edge set E0 = g.edges.
inline AttributeGraph<double> forward(const RegnnModel& model, const AttributeGraph<double>& g) {
    Matrix<double> x = g.nodes;
    for (const RegnnLayer& l : model.layers()) x = forward_layer(x, g.edges, l);
    return {std::move(x), g.edges};
}

inline AttributeGraph<double> reverse(const RegnnModel& model, const AttributeGraph<double>& latent,
                                      const ReverseOptions& opt = {}, std::vector<std::size_t>* iterations = nullptr) {
    Matrix<double> x = latent.nodes;
    if (iterations) iterations->clear();
    for (std::size_t n = model.size(); n-- > 0;) {
        ReverseOptions o = opt;
        o.seed = Rng::mix(opt.seed + n);
        ReverseResult r = reverse_layer(x, latent.edges, model.layer(n), o);
        if (iterations) iterations->push_back(r.iterations);
        x = std::move(r.nodes);
    }
    return {std::move(x), latent.edges};
}

/// Sets each layer's normalization to the per-dimension mean/std of its
/// input over `graphs` (std floored at `min_scale`). Leaves the model
/// un-enforced.
inline void calibrate_normalization(RegnnModel& model, std::span<const AttributeGraph<double>> graphs,
                                    double min_scale = 0.25) {
    if (graphs.empty()) return;
    const std::size_t dims = model.dims();
    std::vector<Matrix<double>> xs;
    for (const auto& g : graphs) xs.push_back(g.nodes);
    for (std::size_t n = 0; n < model.size(); ++n) {
        std::vector<double> sum(dims, 0.0), sq(dims, 0.0);
        double count = 0.0;
        for (const auto& x : xs) {
            for (std::size_t i = 0; i < x.rows(); ++i) {
                for (std::size_t d = 0; d < dims; ++d) {
                    sum[d] += x(i, d);
                    sq[d] += x(i, d) * x(i, d);
                }
                count += 1.0;
            }
        }
        Normalization norm = Normalization::identity(dims);
        for (std::size_t d = 0; d < dims; ++d) {
            const double mean = sum[d] / count;
            const double var = std::max(0.0, sq[d] / count - mean * mean);
            norm.shift[d] = mean;
            norm.scale[d] = std::max(min_scale, std::sqrt(var));
        }
        model.mutable_layer(n).set_normalization(norm);
        const RegnnLayer& l = model.layer(n);
        for (std::size_t g = 0; g < xs.size(); ++g) {
            const Matrix<double> delta = phi(xs[g], graphs[g].edges, l.weights(), l.normalization());
            for (std::size_t k = 0; k < xs[g].size(); ++k) xs[g].values()[k] += delta.values()[k];
        }
    }
}

}  // namespace regnn

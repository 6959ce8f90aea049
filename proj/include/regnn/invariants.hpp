#pragma once

// The invariant suite behind `regnn check`. Every check is seeded and pure
// in the state it inspects.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "regnn/afrdl.hpp"
#include "regnn/checkpoint.hpp"
#include "regnn/encode.hpp"
#include "regnn/mefl.hpp"
#include "regnn/regnn.hpp"

namespace regnn {

struct InvariantResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct CheckOptions {
    std::uint64_t seed = 0;
    std::size_t graphs = 50;
    std::size_t pairs = 1000;
    double round_trip_tol = 1e-8;
    double round_trip_error = 1e-5;
    double fixed_point_tol = 1e-6;
    std::size_t fixed_point_iterations = 100;
    double gradient_rel_err = 1e-4;
};

/// Per-group relative error ||a - b|| / max(||a||, ||b||); 0 when both vanish.
struct GradientCheck {
    ParamGroup group;
    std::size_t count = 0;
    double rel_err = 0.0;
    double norm = 0.0;
};

/// AD gradient of the training loss vs central finite differences, per group.
inline std::vector<GradientCheck> gradient_check(const AfrdlState& state, std::span<const TrainingExample> batch,
                                                 double h = 1e-6) {
    const TrainableParams<double> p = state.params();
    const std::vector<Normalization> norms = state.regnn.normalizations();
    const TrainConfig& cfg = state.config;
    const GradientResult ad = loss_and_gradient(p, norms, batch, state.shape.top_k, cfg.sigma, cfg.l1_weight,
                                                cfg.mse_weight);
    const std::vector<double> theta = flatten(p);
    TrainableParams<double> scratch = p;
    const auto loss = [&](std::span<const double> x) {
        assign(scratch, x);
        return batch_loss(scratch, std::span<const Normalization>(norms), batch, state.shape.top_k, cfg.sigma,
                          cfg.l1_weight, cfg.mse_weight)
            .total;
    };
    const std::vector<double> fd = finite_diff_grad(loss, std::span<const double>(theta), h);
    const std::vector<ParamGroup> groups = param_groups(p);
    std::vector<GradientCheck> out;
    for (std::size_t g = 0; g < kParamGroups; ++g) {
        double diff = 0.0, na = 0.0, nb = 0.0;
        std::size_t count = 0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            if (static_cast<std::size_t>(groups[k]) != g) continue;
            diff += (ad.gradient[k] - fd[k]) * (ad.gradient[k] - fd[k]);
            na += ad.gradient[k] * ad.gradient[k];
            nb += fd[k] * fd[k];
            ++count;
        }
        const double denom = std::sqrt(std::max(na, nb));
        out.push_back({static_cast<ParamGroup>(g), count, denom == 0.0 ? 0.0 : std::sqrt(diff) / denom, std::sqrt(na)});
    }
    return out;
}

/// Toy training problem: seeded random listener/speaker node features.
inline std::vector<TrainingExample> random_examples(const ModelShape& shape, std::size_t count, Rng& rng) {
    std::vector<TrainingExample> ex;
    for (std::size_t b = 0; b < count; ++b) {
        TrainingExample e;
        e.behavior_id = "toy" + std::to_string(b);
        for (std::size_t k = 0; k < shape.speaker_attributes * shape.dims; ++k) e.speaker_features.push_back(rng.normal());
        for (std::size_t m = 0; m < shape.components; ++m) {
            Matrix<double> x(shape.nodes, shape.dims);
            for (double& v : x.values()) v = rng.normal();
            e.listener_nodes.push_back(std::move(x));
        }
        ex.push_back(std::move(e));
    }
    return ex;
}

/// Fresh state on a small shape with calibrated normalization.
inline AfrdlState toy_state(const ModelShape& shape, std::uint64_t seed, std::vector<TrainingExample>& examples) {
    TrainConfig cfg;
    cfg.seed = seed;
    AfrdlState s = make_state(shape, cfg);
    Rng rng(Rng::mix(seed + 17));
    examples = random_examples(shape, 2, rng);
    calibrate(s, examples);
    return s;
}

inline ModelShape toy_shape() {
    ModelShape s;
    s.nodes = 2;
    s.frames = 4;
    s.dims = 2;
    s.top_k = 1;
    s.layers = 1;
    s.components = 2;
    s.att_dim = 2;
    s.relation_dim = 2;
    s.hidden = 3;
    s.speaker_attributes = 2;
    return s;
}

namespace detail {

inline AttributeGraph<double> random_graph(const AfrdlState& state, Rng& rng) {
    Matrix<double> x(state.shape.nodes, state.shape.dims);
    for (double& v : x.values()) v = rng.normal(0.0, 1.5);
    EdgeSet<double> e = build_edges(x, state.mefl, state.shape.top_k);
    return {std::move(x), std::move(e)};
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::vector<InvariantResult> run_invariants(const AfrdlState& state, const CheckOptions& opt = {}) {
    std::vector<InvariantResult> out;
    const Rng root(opt.seed);

    {
        InvariantResult r{"enforcement", true, "every layer carries a valid contraction record"};
        for (std::size_t n = 0; n < state.regnn.size(); ++n) {
            if (!state.regnn.layer(n).enforced()) {
                r.passed = false;
                r.detail = "layer " + std::to_string(n) + " is not enforced since its last weight change";
                break;
            }
        }
        out.push_back(r);
    }
    if (!out.back().passed) return out;

    {
        InvariantResult r{"contraction", true, {}};
        Rng rng = root.derive(1);
        double worst_cert = 0.0, worst_emp = 0.0;
        for (std::size_t n = 0; n < state.regnn.size(); ++n) {
            const RegnnLayer& l = state.regnn.layer(n);
            const ContractionBound b = contraction_bound(l.weights(), l.normalization(), l.max_out_degree());
            const AttributeGraph<double> g = detail::random_graph(state, rng);
            const double emp = empirical_lipschitz(l, g.edges, rng, opt.pairs);
            worst_cert = std::max(worst_cert, b.lipschitz);
            worst_emp = std::max(worst_emp, emp);
        }
        r.passed = worst_cert < 1.0 && worst_emp < 1.0;
        r.detail = "certified " + detail::fmt(worst_cert) + ", empirical " + detail::fmt(worst_emp);
        out.push_back(r);
    }

    {
        InvariantResult r{"round_trip", true, {}};
        Rng rng = root.derive(2);
        double worst = 0.0;
        std::size_t worst_iter = 0;
        double worst_unique = 0.0;
        try {
            for (std::size_t k = 0; k < opt.graphs; ++k) {
                const AttributeGraph<double> g = detail::random_graph(state, rng);
                const AttributeGraph<double> z = forward(state.regnn, g);
                const AttributeGraph<double> back =
                    reverse(state.regnn, z, ReverseOptions{opt.round_trip_tol, 500, rng.next_u64()});
                worst = std::max(worst, max_abs_diff(back.nodes, g.nodes));
                std::vector<std::size_t> it_a, it_b;
                const ReverseOptions fp_a{opt.fixed_point_tol, 500, rng.next_u64()};
                const ReverseOptions fp_b{opt.fixed_point_tol, 500, rng.next_u64()};
                for (std::size_t n = 0; n < state.regnn.size(); ++n) {
                    const RegnnLayer& l = state.regnn.layer(n);
                    const ReverseResult a = reverse_layer(z.nodes, g.edges, l, fp_a);
                    const ReverseResult b = reverse_layer(z.nodes, g.edges, l, fp_b);
                    worst_iter = std::max({worst_iter, a.iterations, b.iterations});
                    worst_unique = std::max(worst_unique, max_abs_diff(a.nodes, b.nodes));
                }
            }
            r.passed = worst < opt.round_trip_error && worst_iter <= opt.fixed_point_iterations &&
                       worst_unique <= 2.0 * opt.fixed_point_tol;
            r.detail = "max error " + detail::fmt(worst) + ", max iterations " + std::to_string(worst_iter) +
                       ", x0 disagreement " + detail::fmt(worst_unique);
        } catch (const NumericError& e) {
            r.passed = false;
            r.detail = e.what();
        }
        out.push_back(r);
    }

    {
        InvariantResult r{"normalization", true, {}};
        Rng rng = root.derive(3);
        double mefl_err = 0.0, coeff_err = 0.0, edge_err = 0.0;
        for (std::size_t k = 0; k < opt.graphs; ++k) {
            const AttributeGraph<double> g = detail::random_graph(state, rng);
            const EdgeTensor<double> full = mefl_edges(g.nodes, state.mefl);
            for (std::size_t i = 0; i < full.nodes(); ++i)
                for (std::size_t d = 0; d < full.dims(); ++d) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < full.nodes(); ++j) s += full(i, j, d);
                    mefl_err = std::max(mefl_err, std::fabs(s - 1.0));
                }
            Matrix<double> x = g.nodes;
            for (const RegnnLayer& l : state.regnn.layers()) {
                const std::vector<double> a = coefficients(x, g.edges, l);
                const EdgeSet<double> en = edge_update(x, g.edges, l);
                for (std::size_t i = 0; i < en.nodes(); ++i) {
                    const auto in = en.incoming(i);
                    if (in.empty()) continue;
                    double cs = 0.0;
                    std::vector<double> es(en.dims(), 0.0);
                    for (std::size_t idx : in) {
                        cs += a[idx];
                        for (std::size_t d = 0; d < en.dims(); ++d) es[d] += en.edges()[idx].feature[d];
                    }
                    coeff_err = std::max(coeff_err, std::fabs(cs - 1.0));
                    for (double s : es) edge_err = std::max(edge_err, std::fabs(s - 1.0));
                }
                x = forward_layer(x, g.edges, l);
            }
        }
        r.passed = mefl_err <= 1e-10 && coeff_err <= 1e-12 && edge_err <= 1e-10;
        r.detail = "mefl rows " + detail::fmt(mefl_err) + ", coefficients " + detail::fmt(coeff_err) +
                   ", updated edges " + detail::fmt(edge_err);
        out.push_back(r);
    }

    {
        InvariantResult r{"power_iteration", true, {}};
        double worst = 0.0;
        for (const RegnnLayer& l : state.regnn.layers()) {
            const Matrix<double> a = matmul_transposed(l.weights().query, l.weights().message);
            const double svd = top_singular_triplet(a).sigma;
            const double pi = spectral_norm(a);
            worst = std::max(worst, std::fabs(pi - svd) / std::max(svd, 1e-300));
        }
        r.passed = worst <= 1e-6;
        r.detail = "relative gap to SVD " + detail::fmt(worst);
        out.push_back(r);
    }

    {
        InvariantResult r{"gradient", true, {}};
        std::string detail;
        for (const ModelShape& shape : {toy_shape(), [] {
                                            ModelShape s = toy_shape();
                                            s.nodes = 4;
                                            s.dims = 3;
                                            s.top_k = 2;
                                            s.layers = 2;
                                            s.components = 3;
                                            return s;
                                        }()}) {
            std::vector<TrainingExample> ex;
            const AfrdlState toy = toy_state(shape, opt.seed, ex);
            for (const GradientCheck& g : gradient_check(toy, ex)) {
                if (!(g.rel_err < opt.gradient_rel_err)) r.passed = false;
                detail += std::string(detail.empty() ? "" : ", ") + "I=" + std::to_string(shape.nodes) + " " +
                          group_name(g.group) + " " + detail::fmt(g.rel_err);
            }
        }
        r.detail = detail;
        out.push_back(r);
    }

    {
        InvariantResult r{"checkpoint", true, {}};
        const std::string a = checkpoint_string(state);
        const std::string b = checkpoint_string(checkpoint_from_json(nlohmann::json::parse(a)));
        r.passed = a == b;
        r.detail = r.passed ? "save/load reproduces the document" : "save/load changed the document";
        out.push_back(r);
    }
    return out;
}

}  // namespace regnn

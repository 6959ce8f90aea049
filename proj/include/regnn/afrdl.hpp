#pragma once

// Distribution learning: REGNN encodes every appropriate listener reaction of
// a speaker behaviour into a latent graph, the latents are summarised into a
// per-node Gaussian mixture, and the cognitive predictor learns to emit that
// mixture from speaker features. Gradients come from the ad::Tape.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regnn/autodiff.hpp"
#include "regnn/encode.hpp"
#include "regnn/errors.hpp"
#include "regnn/gmgd.hpp"
#include "regnn/mefl.hpp"
#include "regnn/numeric.hpp"
#include "regnn/regnn.hpp"

namespace regnn {

/// Shared tanh hidden layer followed by I fully connected heads, one per
/// node, each emitting that node's P = M*D distribution parameters.
template <class T = double>
struct CognitivePredictor {
    Matrix<T> hidden_w;  // H x input
    std::vector<T> hidden_b;
    std::vector<Matrix<T>> head_w;  // I of P x H
    std::vector<std::vector<T>> head_b;

    std::size_t input_dim() const noexcept { return hidden_w.cols(); }
    std::size_t hidden_dim() const noexcept { return hidden_w.rows(); }
    std::size_t nodes() const noexcept { return head_w.size(); }
    std::size_t output_dim() const noexcept { return head_w.empty() ? 0 : head_w.front().rows(); }

    static CognitivePredictor random(std::size_t input, std::size_t hidden, std::size_t nodes, std::size_t out,
                                     Rng& rng) {
        if (input == 0 || hidden == 0 || nodes == 0 || out == 0) throw DomainError("CognitivePredictor: empty shape");
        CognitivePredictor p;
        p.hidden_w = Matrix<T>(hidden, input);
        for (auto& x : p.hidden_w.values()) x = T(rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(input))));
        p.hidden_b.assign(hidden, T(0.0));
        for (std::size_t i = 0; i < nodes; ++i) {
            Matrix<T> w(out, hidden);
            for (auto& x : w.values()) x = T(rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(hidden))));
            p.head_w.push_back(std::move(w));
            p.head_b.emplace_back(out, T(0.0));
        }
        return p;
    }

    Matrix<T> operator()(std::span<const double> features) const {
        if (features.size() != input_dim()) throw DomainError("CognitivePredictor: feature length mismatch");
        using std::tanh;
        std::vector<T> h(hidden_dim());
        for (std::size_t r = 0; r < hidden_dim(); ++r) {
            T acc = hidden_b[r];
            for (std::size_t c = 0; c < input_dim(); ++c) acc += hidden_w(r, c) * T(features[c]);
            h[r] = tanh(acc);
        }
        Matrix<T> out(nodes(), output_dim());
        for (std::size_t i = 0; i < nodes(); ++i) {
            for (std::size_t p = 0; p < output_dim(); ++p) {
                T acc = head_b[i][p];
                for (std::size_t r = 0; r < hidden_dim(); ++r) acc += head_w[i](p, r) * h[r];
                out(i, p) = acc;
            }
        }
        return out;
    }

    template <class F>
    auto map(F&& f) const {
        using U = typename decltype(hidden_w.map(f))::value_type;
        CognitivePredictor<U> out;
        out.hidden_w = hidden_w.map(f);
        for (const T& x : hidden_b) out.hidden_b.push_back(f(x));
        for (std::size_t i = 0; i < head_w.size(); ++i) {
            out.head_w.push_back(head_w[i].map(f));
            std::vector<U> b;
            for (const T& x : head_b[i]) b.push_back(f(x));
            out.head_b.push_back(std::move(b));
        }
        return out;
    }
};

/// Perceptual stand-in: basis coefficients of every speaker attribute, concatenated.
inline std::vector<double> speaker_features(const ReactionClip& speaker, const TemporalBasis& basis) {
    const Matrix<double> n = clip_node_features(speaker, basis);
    return n.values();
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over latent pairs m1 < m2 of the L1 distance between node features.
template <class T>
T pairwise_l1_loss(std::span<const Matrix<T>> latents) {
    if (latents.size() < 2) throw DomainError("pairwise_l1_loss: need at least 2 latent graphs");
    for (const auto& l : latents)
        if (l.rows() != latents.front().rows() || l.cols() != latents.front().cols())
            throw DomainError("pairwise_l1_loss: latent shapes differ");
    using std::abs;
    T total(0.0);
    for (std::size_t a = 0; a + 1 < latents.size(); ++a)
        for (std::size_t b = a + 1; b < latents.size(); ++b)
            for (std::size_t k = 0; k < latents[a].size(); ++k) total += abs(latents[b].values()[k] - latents[a].values()[k]);
    return total;
}

inline double pairwise_l1_loss(std::span<const AttributeGraph<double>> latents) {
    std::vector<Matrix<double>> nodes;
    for (const auto& g : latents) nodes.push_back(g.nodes);
    return pairwise_l1_loss(std::span<const Matrix<double>>(nodes));
}

template <class T>
T distribution_mse_loss(const Matrix<T>& predicted, const Matrix<T>& target) {
    if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
        throw DomainError("distribution_mse_loss: grid shapes differ");
    if (predicted.size() == 0) throw DomainError("distribution_mse_loss: empty grid");
    T total(0.0);
    for (std::size_t k = 0; k < predicted.size(); ++k) {
        const T diff = predicted.values()[k] - target.values()[k];
        total += diff * diff;
    }
    return total / T(static_cast<double>(predicted.size()));
}

// ---------------------------------------------------------------------------
// Configuration and state

enum class Schedule { joint, alternating };

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 5e-4;
    std::size_t epochs = 100;
    std::vector<std::size_t> decay_epochs{20, 50};
    double decay_factor = 0.1;
    double sigma = 0.6;
    std::uint64_t seed = 0;
    double l1_weight = 1.0;
    double mse_weight = 1.0;
    std::size_t batch_size = 4;
    Schedule schedule = Schedule::joint;
    double lipschitz_target = kDefaultLipschitzTarget;

    void validate() const {
        if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw DomainError("TrainConfig: rates must be non-negative");
        if (epochs == 0) throw DomainError("TrainConfig: epochs must be positive");
        for (std::size_t e : decay_epochs)
            if (e >= epochs) throw DomainError("TrainConfig: decay epochs must be < epochs");
        if (!(decay_factor > 0.0)) throw DomainError("TrainConfig: decay_factor must be positive");
        if (!(sigma > 0.0)) throw DomainError("TrainConfig: sigma must be positive");
        if (!(l1_weight >= 0.0) || !(mse_weight >= 0.0)) throw DomainError("TrainConfig: loss weights must be >= 0");
        if (batch_size == 0) throw DomainError("TrainConfig: batch_size must be positive");
        if (!(lipschitz_target > 0.0 && lipschitz_target < 1.0))
            throw DomainError("TrainConfig: lipschitz_target must lie in (0, 1)");
    }

    double learning_rate_at(std::size_t epoch) const {
        double lr = learning_rate;
        for (std::size_t e : decay_epochs)
            if (epoch >= e) lr *= decay_factor;
        return lr;
    }
};

struct ModelShape {
    std::size_t nodes = 8;               ///< I
    std::size_t frames = 64;             ///< T
    std::size_t dims = 8;                ///< D
    std::size_t top_k = 3;               ///< K
    std::size_t layers = 4;              ///< N
    std::size_t components = 4;          ///< M
    std::size_t att_dim = 4;             ///< MEFL attention width
    std::size_t relation_dim = 4;        ///< columns of W_q / W_m
    std::size_t hidden = 32;             ///< predictor hidden width
    std::size_t speaker_attributes = 8;  ///< speaker clip attributes
    std::size_t mefl_instances = 1;      ///< 2: separate block for predicted graphs
    ComponentMode component_mode = ComponentMode::per_node;

    void validate() const {
        if (nodes < 2 || frames < 2) throw DomainError("ModelShape: need I >= 2 and T >= 2");
        if (dims == 0 || dims > frames) throw DomainError("ModelShape: need 1 <= D <= T");
        if (top_k < 1 || top_k > nodes - 1) throw DomainError("ModelShape: need 1 <= K <= I-1");
        if (layers == 0) throw DomainError("ModelShape: need N >= 1");
        if (components == 0) throw DomainError("ModelShape: need M >= 1");
        if (att_dim == 0 || relation_dim == 0 || hidden == 0) throw DomainError("ModelShape: widths must be positive");
        if (speaker_attributes < 2) throw DomainError("ModelShape: need >= 2 speaker attributes");
        if (mefl_instances != 1 && mefl_instances != 2) throw DomainError("ModelShape: mefl_instances must be 1 or 2");
    }
    std::size_t flat_width() const noexcept { return components * dims; }
};

enum class ParamGroup { mefl = 0, regnn = 1, predictor = 2 };
inline constexpr std::size_t kParamGroups = 3;
inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::mefl: return "mefl";
        case ParamGroup::regnn: return "regnn";
        case ParamGroup::predictor: return "predictor";
    }
    return "?";
}

/// Every trainable tensor, generic over the scalar type.
template <class T = double>
struct TrainableParams {
    MeflBlock<T> mefl;
    std::vector<LayerWeights<T>> layers;
    CognitivePredictor<T> predictor;

    /// Shape-preserving scalar conversion (f must be free of side effects).
    template <class F>
    auto map(F&& f) const {
        using U = typename decltype(predictor.hidden_w.map(f))::value_type;
        TrainableParams<U> out{mefl.map(f), {}, predictor.map(f)};
        for (const auto& l : layers) out.layers.push_back(l.map(f));
        return out;
    }
};

/// Visits every trainable scalar in canonical order (mefl, regnn layers,
/// predictor) as f(scalar&, group). P may be const.
template <class P, class F>
void for_each_param(P& p, F&& f) {
    for (std::size_t d = 0; d < p.mefl.query.size(); ++d) {
        for (auto& x : p.mefl.query[d].values()) f(x, ParamGroup::mefl);
        for (auto& x : p.mefl.key[d].values()) f(x, ParamGroup::mefl);
    }
    for (auto& l : p.layers) {
        for (auto& x : l.query.values()) f(x, ParamGroup::regnn);
        for (auto& x : l.message.values()) f(x, ParamGroup::regnn);
        for (auto& x : l.combine) f(x, ParamGroup::regnn);
    }
    for (auto& x : p.predictor.hidden_w.values()) f(x, ParamGroup::predictor);
    for (auto& x : p.predictor.hidden_b) f(x, ParamGroup::predictor);
    for (std::size_t i = 0; i < p.predictor.head_w.size(); ++i) {
        for (auto& x : p.predictor.head_w[i].values()) f(x, ParamGroup::predictor);
        for (auto& x : p.predictor.head_b[i]) f(x, ParamGroup::predictor);
    }
}

inline std::vector<double> flatten(const TrainableParams<double>& p) {
    std::vector<double> flat;
    for_each_param(p, [&](const double& x, ParamGroup) { flat.push_back(x); });
    return flat;
}

inline std::vector<ParamGroup> param_groups(const TrainableParams<double>& p) {
    std::vector<ParamGroup> groups;
    for_each_param(p, [&](const double&, ParamGroup g) { groups.push_back(g); });
    return groups;
}

inline void assign(TrainableParams<double>& p, std::span<const double> flat) {
    std::size_t k = 0;
    for_each_param(p, [&](double& x, ParamGroup) {
        if (k >= flat.size()) throw DomainError("assign: parameter vector too short");
        x = flat[k++];
    });
    if (k != flat.size()) throw DomainError("assign: parameter vector too long");
}

/// One training item: fixed speaker features and the node features of each
/// appropriate listener reaction (M of them, in a fixed order).
struct TrainingExample {
    std::string behavior_id;
    std::vector<double> speaker_features;
    std::vector<Matrix<double>> listener_nodes;
};

template <class T>
struct LossTerms {
    T l1;
    T mse;
    T total;
};

/// Averaged losses over a batch. Pure in its inputs.
template <class T>
LossTerms<T> batch_loss(const TrainableParams<T>& p, std::span<const Normalization> norms,
                        std::span<const TrainingExample> batch, std::size_t top_k, double sigma, double l1_weight,
                        double mse_weight) {
    if (batch.empty()) throw DomainError("batch_loss: empty batch");
    T l1(0.0), mse(0.0);
    std::vector<Matrix<T>> latents;
    for (const TrainingExample& ex : batch) {
        latents.clear();
        for (const Matrix<double>& nodes : ex.listener_nodes) {
            Matrix<T> x = nodes.map([](double v) { return T(v); });
            const EdgeSet<T> e0 = build_edges(x, p.mefl, top_k);
            latents.push_back(forward_nodes(std::span<const LayerWeights<T>>(p.layers), norms, std::move(x), e0));
        }
        const std::span<const Matrix<T>> ls(latents);
        l1 += pairwise_l1_loss(ls);
        const Matrix<T> target = to_flat(summarize(ls, sigma));
        mse += distribution_mse_loss(p.predictor(ex.speaker_features), target);
    }
    const T inv(1.0 / static_cast<double>(batch.size()));
    l1 = l1 * inv;
    mse = mse * inv;
    return {l1, mse, T(l1_weight) * l1 + T(mse_weight) * mse};
}

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    bool operator==(const AdamState&) const = default;
};

/// Everything a training run owns. Single owner; not shared across threads.
struct AfrdlState {
    ModelShape shape;
    TrainConfig config;
    TemporalBasis basis;
    MeflBlock<double> mefl;
    std::optional<MeflBlock<double>> prediction_mefl;
    RegnnModel regnn;
    CognitivePredictor<double> predictor;
    AdamState adam;
    std::size_t epoch = 0;
    Rng rng;

    TrainableParams<double> params() const { return {mefl, regnn.weights(), predictor}; }

    /// Writes new weights back; REGNN layers come back un-enforced.
    void set_params(const TrainableParams<double>& p) {
        mefl = p.mefl;
        for (std::size_t n = 0; n < regnn.size(); ++n) regnn.mutable_layer(n).mutable_weights() = p.layers[n];
        predictor = p.predictor;
    }
};

/// Fresh, enforced state with identity pre-activation normalization.
inline AfrdlState make_state(const ModelShape& shape, const TrainConfig& config) {
    shape.validate();
    config.validate();
    Rng init(Rng::mix(config.seed ^ 0xA5A5A5A5ULL));
    MeflBlock<double> mefl = MeflBlock<double>::random(shape.dims, shape.dims, shape.att_dim, init);
    std::optional<MeflBlock<double>> pred_mefl;
    if (shape.mefl_instances == 2) pred_mefl = MeflBlock<double>::random(shape.dims, shape.dims, shape.att_dim, init);
    RegnnModel regnn = RegnnModel::random(shape.layers, shape.dims, shape.relation_dim, shape.top_k, init, 0.5, 1.0,
                                          config.lipschitz_target);
    CognitivePredictor<double> predictor = CognitivePredictor<double>::random(
        shape.speaker_attributes * shape.dims, shape.hidden, shape.nodes, shape.flat_width(), init);
    return AfrdlState{shape,
                      config,
                      TemporalBasis::dct(shape.frames, shape.dims),
                      std::move(mefl),
                      std::move(pred_mefl),
                      std::move(regnn),
                      std::move(predictor),
                      AdamState{},
                      0,
                      Rng(config.seed)};
}

/// Builds training examples (encodes speaker and listener clips).
inline TrainingExample make_example(std::string behavior_id, const ReactionClip& speaker,
                                    std::span<const ReactionClip> listeners, const TemporalBasis& basis) {
    TrainingExample ex{std::move(behavior_id), speaker_features(speaker, basis), {}};
    for (const ReactionClip& c : listeners) ex.listener_nodes.push_back(clip_node_features(c, basis));
    return ex;
}

/// Freezes pre-activation statistics from the training graphs, then re-enforces.
inline void calibrate(AfrdlState& state, std::span<const TrainingExample> examples) {
    std::vector<AttributeGraph<double>> graphs;
    for (const TrainingExample& ex : examples)
        for (const Matrix<double>& nodes : ex.listener_nodes)
            graphs.push_back({nodes, build_edges(nodes, state.mefl, state.shape.top_k)});
    calibrate_normalization(state.regnn, graphs);
    state.regnn.enforce(state.config.lipschitz_target);
}

struct StepRecord {
    double l1 = 0.0;
    double mse = 0.0;
    double total = 0.0;
};

struct GradientResult {
    LossTerms<double> loss;
    std::vector<double> gradient;
};

/// Loss and its gradient w.r.t. flatten(p), recorded on a fresh tape.
inline GradientResult loss_and_gradient(const TrainableParams<double>& p, std::span<const Normalization> norms,
                                        std::span<const TrainingExample> batch, std::size_t top_k, double sigma,
                                        double l1_weight, double mse_weight) {
    ad::Tape tape;
    TrainableParams<ad::Var> lifted = p.map([](double x) { return ad::Var(x); });
    for_each_param(lifted, [&](ad::Var& x, ParamGroup) { x = tape.variable(x.value()); });
    const std::size_t count = tape.size();
    const LossTerms<ad::Var> loss = batch_loss(lifted, norms, batch, top_k, sigma, l1_weight, mse_weight);
    GradientResult r{{loss.l1.value(), loss.mse.value(), loss.total.value()}, {}};
    if (!std::isfinite(r.loss.total)) {
        throw NumericError("non-finite training loss (l1=" + std::to_string(r.loss.l1) +
                           ", mse=" + std::to_string(r.loss.mse) + ")");
    }
    std::vector<double> adj = tape.adjoints(loss.total);
    adj.resize(count);
    r.gradient = std::move(adj);
    return r;
}

/// One optimizer step on `batch`: forward encode, both losses, Adam with
/// L2 weight decay, then Lipschitz re-enforcement of every REGNN layer.
inline StepRecord train_step(AfrdlState& state, std::span<const TrainingExample> batch) {
    if (!state.regnn.enforced()) throw ContractViolation("train_step: REGNN must be enforced before forward passes");
    const TrainConfig& cfg = state.config;
    TrainableParams<double> p = state.params();
    const std::vector<Normalization> norms = state.regnn.normalizations();
    const GradientResult g =
        loss_and_gradient(p, norms, batch, state.shape.top_k, cfg.sigma, cfg.l1_weight, cfg.mse_weight);

    std::vector<double> theta = flatten(p);
    const std::vector<ParamGroup> groups = param_groups(p);
    AdamState& adam = state.adam;
    if (adam.m.empty()) {
        adam.m.assign(theta.size(), 0.0);
        adam.v.assign(theta.size(), 0.0);
    }
    if (adam.m.size() != theta.size()) throw DomainError("train_step: optimizer state does not match parameters");
    adam.step += 1;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double lr = cfg.learning_rate_at(state.epoch);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.step));
    // Alternating schedule: odd steps move the encoder (mefl + regnn), even steps the predictor.
    const bool encoder_turn = (adam.step % 2) == 1;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (cfg.schedule == Schedule::alternating && ((groups[k] == ParamGroup::predictor) == encoder_turn)) continue;
        const double grad = g.gradient[k] + cfg.weight_decay * theta[k];
        adam.m[k] = beta1 * adam.m[k] + (1.0 - beta1) * grad;
        adam.v[k] = beta2 * adam.v[k] + (1.0 - beta2) * grad * grad;
        theta[k] -= lr * (adam.m[k] / bc1) / (std::sqrt(adam.v[k] / bc2) + eps);
    }
    if (lr != 0.0) {
        assign(p, theta);
        state.set_params(p);
    }
    state.regnn.enforce(cfg.lipschitz_target);
    return {g.loss.l1, g.loss.mse, g.loss.total};
}

struct EpochRecord {
    std::size_t epoch = 0;  ///< 1-based index of the finished epoch
    double l1 = 0.0;
    double mse = 0.0;
    double total = 0.0;
};

/// One pass over `examples` in a seeded shuffled order.
inline EpochRecord train_epoch(AfrdlState& state, std::span<const TrainingExample> examples) {
    if (examples.empty()) throw DomainError("train_epoch: no training examples");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.index(i)]);

    EpochRecord rec;
    std::vector<TrainingExample> batch;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += state.config.batch_size) {
        batch.clear();
        for (std::size_t i = start; i < std::min(order.size(), start + state.config.batch_size); ++i)
            batch.push_back(examples[order[i]]);
        const StepRecord s = train_step(state, batch);
        rec.l1 += s.l1;
        rec.mse += s.mse;
        rec.total += s.total;
        ++steps;
    }
    rec.l1 /= static_cast<double>(steps);
    rec.mse /= static_cast<double>(steps);
    rec.total /= static_cast<double>(steps);
    state.epoch += 1;
    rec.epoch = state.epoch;
    return rec;
}

/// Predicted distribution for one speaker behaviour.
inline Gmgd predict_distribution(const AfrdlState& state, std::span<const double> features) {
    return from_flat(state.predictor(features), state.shape.components, state.shape.dims, state.config.sigma);
}

/// Samples n latent graphs from the predicted distribution and decodes each
/// through the reverse REGNN into a clip.
inline std::vector<ReactionClip> predict_reactions(const AfrdlState& state, std::span<const double> features,
                                                   std::size_t n_samples, Rng& rng, const std::string& id_prefix = "gen",
                                                   const ReverseOptions& reverse_opt = {}) {
    if (n_samples == 0) throw DomainError("predict_reactions: n_samples must be positive");
    const Gmgd dist = predict_distribution(state, features);
    const MeflBlock<double>& mefl = state.prediction_mefl ? *state.prediction_mefl : state.mefl;
    std::vector<ReactionClip> clips;
    for (std::size_t s = 0; s < n_samples; ++s) {
        AttributeGraph<double> latent = sample(dist, rng, state.shape.component_mode);
        latent.edges = build_edges(latent.nodes, mefl, state.shape.top_k);
        ReverseOptions opt = reverse_opt;
        opt.seed = rng.next_u64();
        try {
            const AttributeGraph<double> g = reverse(state.regnn, latent, opt);
            clips.push_back(graph_to_clip(g, state.basis, id_prefix + "_" + std::to_string(s)));
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("sample " + std::to_string(s) + ": " + e.what(), e.last_value(), e.iterations());
        }
    }
    return clips;
}

}  // namespace regnn

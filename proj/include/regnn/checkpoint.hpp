#pragma once

// Checkpoint: one JSON document. Every tensor is {"shape": [...], "data":
// base64 of little-endian IEEE-754 float64}, so save/load is bit-exact.

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "regnn/afrdl.hpp"
#include "regnn/errors.hpp"

namespace regnn {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

inline std::string base64_encode(const std::vector<unsigned char>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw DomainError("checkpoint: base64 length is not a multiple of 4");
    std::vector<unsigned char> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw DomainError("checkpoint: invalid base64 payload");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

inline nlohmann::json tensor(const std::vector<double>& values, std::vector<std::size_t> shape) {
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    return {{"shape", std::move(shape)}, {"data", base64_encode(bytes)}};
}

inline nlohmann::json tensor(const Matrix<double>& m) { return tensor(m.values(), {m.rows(), m.cols()}); }

inline std::vector<double> read_values(const nlohmann::json& j, std::vector<std::size_t>* shape_out = nullptr) {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (std::size_t s : shape) count *= s;
    const std::vector<unsigned char> bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != count * 8) throw DomainError("checkpoint: tensor byte count does not match its shape");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
    if (shape_out) *shape_out = shape;
    return values;
}

inline Matrix<double> read_matrix(const nlohmann::json& j) {
    std::vector<std::size_t> shape;
    std::vector<double> v = read_values(j, &shape);
    if (shape.size() != 2) throw DomainError("checkpoint: expected a rank-2 tensor");
    return Matrix<double>(shape[0], shape[1], std::move(v));
}

inline nlohmann::json mefl_json(const MeflBlock<double>& b) {
    nlohmann::json q = nlohmann::json::array(), k = nlohmann::json::array();
    for (std::size_t d = 0; d < b.edge_dims(); ++d) {
        q.push_back(tensor(b.query[d]));
        k.push_back(tensor(b.key[d]));
    }
    return {{"query", std::move(q)}, {"key", std::move(k)}};
}

inline MeflBlock<double> read_mefl(const nlohmann::json& j) {
    MeflBlock<double> b;
    for (const auto& t : j.at("query")) b.query.push_back(read_matrix(t));
    for (const auto& t : j.at("key")) b.key.push_back(read_matrix(t));
    b.validate();
    return b;
}

inline const char* schedule_name(Schedule s) { return s == Schedule::joint ? "joint" : "alternating"; }
inline const char* component_mode_name(ComponentMode m) { return m == ComponentMode::per_node ? "per_node" : "global"; }

}  // namespace detail

inline nlohmann::json to_json(const ModelShape& s) {
    return {{"I", s.nodes},
            {"T", s.frames},
            {"D", s.dims},
            {"K", s.top_k},
            {"N", s.layers},
            {"M", s.components},
            {"att_dim", s.att_dim},
            {"relation_dim", s.relation_dim},
            {"hidden", s.hidden},
            {"speaker_attributes", s.speaker_attributes},
            {"mefl_instances", s.mefl_instances},
            {"component_mode", detail::component_mode_name(s.component_mode)}};
}

inline ModelShape shape_from_json(const nlohmann::json& j) {
    ModelShape s;
    s.nodes = j.at("I").get<std::size_t>();
    s.frames = j.at("T").get<std::size_t>();
    s.dims = j.at("D").get<std::size_t>();
    s.top_k = j.at("K").get<std::size_t>();
    s.layers = j.at("N").get<std::size_t>();
    s.components = j.at("M").get<std::size_t>();
    s.att_dim = j.at("att_dim").get<std::size_t>();
    s.relation_dim = j.at("relation_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.speaker_attributes = j.at("speaker_attributes").get<std::size_t>();
    s.mefl_instances = j.at("mefl_instances").get<std::size_t>();
    const std::string mode = j.at("component_mode").get<std::string>();
    if (mode != "per_node" && mode != "global") throw DomainError("checkpoint: unknown component_mode '" + mode + "'");
    s.component_mode = mode == "global" ? ComponentMode::global : ComponentMode::per_node;
    s.validate();
    return s;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    // Real-valued settings go through tensors so they survive bit-exactly.
    return {{"reals", detail::tensor({c.learning_rate, c.weight_decay, c.decay_factor, c.sigma, c.l1_weight,
                                      c.mse_weight, c.lipschitz_target},
                                     {7})},
            {"epochs", c.epochs},
            {"decay_epochs", c.decay_epochs},
            {"seed", c.seed},
            {"batch_size", c.batch_size},
            {"schedule", detail::schedule_name(c.schedule)}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    const std::vector<double> r = detail::read_values(j.at("reals"));
    if (r.size() != 7) throw DomainError("checkpoint: config 'reals' must hold 7 values");
    c.learning_rate = r[0];
    c.weight_decay = r[1];
    c.decay_factor = r[2];
    c.sigma = r[3];
    c.l1_weight = r[4];
    c.mse_weight = r[5];
    c.lipschitz_target = r[6];
    c.epochs = j.at("epochs").get<std::size_t>();
    c.decay_epochs = j.at("decay_epochs").get<std::vector<std::size_t>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    const std::string sched = j.at("schedule").get<std::string>();
    if (sched != "joint" && sched != "alternating") throw DomainError("checkpoint: unknown schedule '" + sched + "'");
    c.schedule = sched == "joint" ? Schedule::joint : Schedule::alternating;
    c.validate();
    return c;
}

inline nlohmann::json checkpoint_json(const AfrdlState& s) {
    using detail::tensor;
    nlohmann::json layers = nlohmann::json::array();
    for (const RegnnLayer& l : s.regnn.layers()) {
        nlohmann::json lj{{"query", tensor(l.weights().query)},
                          {"message", tensor(l.weights().message)},
                          {"combine", tensor(l.weights().combine, {l.dims()})},
                          {"shift", tensor(l.normalization().shift, {l.dims()})},
                          {"scale", tensor(l.normalization().scale, {l.dims()})},
                          {"max_out_degree", l.max_out_degree()}};
        if (l.record())
            lj["record"] = tensor({l.record()->denominator, l.record()->bound, l.record()->target}, {3});
        else
            lj["record"] = nullptr;
        layers.push_back(std::move(lj));
    }
    nlohmann::json heads = nlohmann::json::array();
    for (std::size_t i = 0; i < s.predictor.nodes(); ++i)
        heads.push_back({{"w", tensor(s.predictor.head_w[i])},
                         {"b", tensor(s.predictor.head_b[i], {s.predictor.head_b[i].size()})}});
    return {{"format_version", kCheckpointFormatVersion},
            {"shape", to_json(s.shape)},
            {"config", to_json(s.config)},
            {"epoch", s.epoch},
            {"rng_state", s.rng.state()},
            {"basis", tensor(s.basis.rows())},
            {"mefl", detail::mefl_json(s.mefl)},
            {"prediction_mefl", s.prediction_mefl ? detail::mefl_json(*s.prediction_mefl) : nlohmann::json(nullptr)},
            {"regnn", std::move(layers)},
            {"predictor",
             {{"hidden_w", tensor(s.predictor.hidden_w)},
              {"hidden_b", tensor(s.predictor.hidden_b, {s.predictor.hidden_b.size()})},
              {"heads", std::move(heads)}}},
            {"adam", {{"step", s.adam.step}, {"m", tensor(s.adam.m, {s.adam.m.size()})}, {"v", tensor(s.adam.v, {s.adam.v.size()})}}}};
}

/// Restores a state. Layer contraction records are reinstated only when they
/// still match the stored weights; otherwise the layer loads un-enforced.
inline AfrdlState checkpoint_from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw DomainError("checkpoint: unsupported format_version " + std::to_string(version));
        const ModelShape shape = shape_from_json(j.at("shape"));
        const TrainConfig config = config_from_json(j.at("config"));
        TemporalBasis basis(detail::read_matrix(j.at("basis")));
        MeflBlock<double> mefl = detail::read_mefl(j.at("mefl"));
        std::optional<MeflBlock<double>> pred_mefl;
        if (!j.at("prediction_mefl").is_null()) pred_mefl = detail::read_mefl(j.at("prediction_mefl"));

        std::vector<RegnnLayer> layers;
        for (const auto& lj : j.at("regnn")) {
            LayerWeights<double> w{detail::read_matrix(lj.at("query")), detail::read_matrix(lj.at("message")),
                                   detail::read_values(lj.at("combine"))};
            Normalization norm{detail::read_values(lj.at("shift")), detail::read_values(lj.at("scale"))};
            RegnnLayer layer(std::move(w), std::move(norm), lj.at("max_out_degree").get<std::size_t>());
            if (!lj.at("record").is_null()) {
                const std::vector<double> r = detail::read_values(lj.at("record"));
                if (r.size() != 3) throw DomainError("checkpoint: layer record must hold 3 values");
                layer.restore_record({r[0], r[1], r[2]});
            }
            layers.push_back(std::move(layer));
        }

        CognitivePredictor<double> predictor;
        const auto& pj = j.at("predictor");
        predictor.hidden_w = detail::read_matrix(pj.at("hidden_w"));
        predictor.hidden_b = detail::read_values(pj.at("hidden_b"));
        for (const auto& h : pj.at("heads")) {
            predictor.head_w.push_back(detail::read_matrix(h.at("w")));
            predictor.head_b.push_back(detail::read_values(h.at("b")));
        }

        AdamState adam{j.at("adam").at("step").get<std::size_t>(), detail::read_values(j.at("adam").at("m")),
                       detail::read_values(j.at("adam").at("v"))};
        Rng rng;
        rng.set_state(j.at("rng_state").get<std::string>());

        AfrdlState s{shape,
                     config,
                     std::move(basis),
                     std::move(mefl),
                     std::move(pred_mefl),
                     RegnnModel(std::move(layers)),
                     std::move(predictor),
                     std::move(adam),
                     j.at("epoch").get<std::size_t>(),
                     std::move(rng)};
        if (s.basis.frames() != shape.frames || s.basis.coefficients() != shape.dims)
            throw DomainError("checkpoint: basis does not match shape");
        if (s.regnn.size() != shape.layers || s.regnn.dims() != shape.dims)
            throw DomainError("checkpoint: REGNN does not match shape");
        if (s.predictor.nodes() != shape.nodes || s.predictor.output_dim() != shape.flat_width() ||
            s.predictor.input_dim() != shape.speaker_attributes * shape.dims)
            throw DomainError("checkpoint: predictor does not match shape");
        const std::size_t n_params = flatten(s.params()).size();
        if (!s.adam.m.empty() && (s.adam.m.size() != n_params || s.adam.v.size() != n_params))
            throw DomainError("checkpoint: optimizer state does not match parameter count");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("checkpoint: ") + e.what());
    }
}

inline std::string checkpoint_string(const AfrdlState& s) { return checkpoint_json(s).dump(1) + "\n"; }

inline void save_checkpoint(const AfrdlState& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write checkpoint '" + path + "'");
    out << checkpoint_string(s);
    if (!out) throw DomainError("failed writing checkpoint '" + path + "'");
}

inline AfrdlState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DomainError("cannot read checkpoint '" + path + "'");
    try {
        return checkpoint_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DomainError("checkpoint '" + path + "': " + e.what());
    } catch (const DomainError& e) {
        throw DomainError("checkpoint '" + path + "': " + e.what());
    }
}

}  // namespace regnn

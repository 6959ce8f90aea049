#pragma once

// Run configuration: a flat key=value text file.
//
//   # comment
//   learning_rate = 0.005
//   decay_epochs = 30,45
//
// Keys are unique; unknown keys, duplicate keys and malformed values are
// rejected with the offending line number. Absent keys keep their defaults.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regnn/afrdl.hpp"
#include "regnn/errors.hpp"
#include "regnn/synth.hpp"

namespace regnn {

struct RunConfig {
    TrainConfig train;
    ModelShape shape;  ///< nodes, frames and speaker_attributes come from the corpus
    SynthSpec synth;
    std::size_t metric_window = 0;  ///< 0: T/10
    std::size_t samples = 10;       ///< generated clips per behaviour
    double reverse_tol = 1e-8;
    std::size_t reverse_max_iter = 500;
    std::string corpus_dir = "corpus";
    std::string out_dir = "run";

    void validate() const {
        train.validate();
        ModelShape s = shape;
        s.nodes = std::max<std::size_t>(s.nodes, s.top_k + 1);
        s.frames = std::max(s.frames, s.dims);
        s.validate();
        synth.validate();
        if (samples == 0) throw DomainError("config: samples must be positive");
        if (!(reverse_tol > 0.0)) throw DomainError("config: reverse_tol must be positive");
        if (reverse_max_iter == 0) throw DomainError("config: reverse_max_iter must be positive");
    }

    bool operator==(const RunConfig& o) const;
};

namespace detail {

inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class U>
U parse_unsigned(const std::string& s) {
    U v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw DomainError("expected a non-negative integer, got '" + s + "'");
    return v;
}

inline double parse_real(const std::string& s) {
    double v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw DomainError("expected a real number, got '" + s + "'");
    if (!std::isfinite(v)) throw DomainError("expected a finite real number, got '" + s + "'");
    return v;
}

struct ConfigField {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline std::vector<ConfigField> config_fields() {
    std::vector<ConfigField> f;
    auto real = [&f](const char* key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return format_real(member(const_cast<RunConfig&>(c))); },
                     [member](RunConfig& c, const std::string& v) { member(c) = parse_real(v); }});
    };
    auto count = [&f](const char* key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                     [member](RunConfig& c, const std::string& v) {
                         member(c) = parse_unsigned<std::remove_reference_t<decltype(member(c))>>(v);
                     }});
    };
    auto text = [&f](const char* key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
                     [member](RunConfig& c, const std::string& v) {
                         if (v.empty()) throw DomainError("expected a non-empty value");
                         member(c) = v;
                     }});
    };

    real("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    count("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    f.push_back({"decay_epochs",
                 [](const RunConfig& c) {
                     std::string s;
                     for (std::size_t i = 0; i < c.train.decay_epochs.size(); ++i)
                         s += (i ? "," : "") + std::to_string(c.train.decay_epochs[i]);
                     return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                     c.train.decay_epochs.clear();
                     if (v.empty()) return;
                     std::stringstream ss(v);
                     std::string item;
                     while (std::getline(ss, item, ','))
                         c.train.decay_epochs.push_back(parse_unsigned<std::size_t>(trim(item)));
                 }});
    real("decay_factor", [](RunConfig& c) -> double& { return c.train.decay_factor; });
    real("sigma", [](RunConfig& c) -> double& { return c.train.sigma; });
    count("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    real("l1_weight", [](RunConfig& c) -> double& { return c.train.l1_weight; });
    real("mse_weight", [](RunConfig& c) -> double& { return c.train.mse_weight; });
    count("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    f.push_back({"schedule",
                 [](const RunConfig& c) { return std::string(c.train.schedule == Schedule::joint ? "joint" : "alternating"); },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "joint") c.train.schedule = Schedule::joint;
                     else if (v == "alternating") c.train.schedule = Schedule::alternating;
                     else throw DomainError("expected 'joint' or 'alternating', got '" + v + "'");
                 }});
    real("lipschitz_target", [](RunConfig& c) -> double& { return c.train.lipschitz_target; });

    count("D", [](RunConfig& c) -> std::size_t& { return c.shape.dims; });
    count("K", [](RunConfig& c) -> std::size_t& { return c.shape.top_k; });
    count("N", [](RunConfig& c) -> std::size_t& { return c.shape.layers; });
    count("M", [](RunConfig& c) -> std::size_t& { return c.shape.components; });
    count("att_dim", [](RunConfig& c) -> std::size_t& { return c.shape.att_dim; });
    count("relation_dim", [](RunConfig& c) -> std::size_t& { return c.shape.relation_dim; });
    count("hidden", [](RunConfig& c) -> std::size_t& { return c.shape.hidden; });
    count("mefl_instances", [](RunConfig& c) -> std::size_t& { return c.shape.mefl_instances; });
    f.push_back({"component_mode",
                 [](const RunConfig& c) {
                     return std::string(c.shape.component_mode == ComponentMode::per_node ? "per_node" : "global");
                 },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "per_node") c.shape.component_mode = ComponentMode::per_node;
                     else if (v == "global") c.shape.component_mode = ComponentMode::global;
                     else throw DomainError("expected 'per_node' or 'global', got '" + v + "'");
                 }});

    count("metric_window", [](RunConfig& c) -> std::size_t& { return c.metric_window; });
    count("samples", [](RunConfig& c) -> std::size_t& { return c.samples; });
    real("reverse_tol", [](RunConfig& c) -> double& { return c.reverse_tol; });
    count("reverse_max_iter", [](RunConfig& c) -> std::size_t& { return c.reverse_max_iter; });

    count("synth_attributes", [](RunConfig& c) -> std::size_t& { return c.synth.attributes; });
    count("synth_frames", [](RunConfig& c) -> std::size_t& { return c.synth.frames; });
    count("synth_behaviors", [](RunConfig& c) -> std::size_t& { return c.synth.behaviors; });
    count("synth_reactions", [](RunConfig& c) -> std::size_t& { return c.synth.reactions; });
    count("synth_modes", [](RunConfig& c) -> std::size_t& { return c.synth.modes; });
    real("synth_noise", [](RunConfig& c) -> double& { return c.synth.noise; });
    count("synth_seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; });

    text("corpus_dir", [](RunConfig& c) -> std::string& { return c.corpus_dir; });
    text("out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; });
    return f;
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    for (const auto& field : detail::config_fields()) out += std::string(field.key) + " = " + field.get(c) + "\n";
    return out;
}

inline bool RunConfig::operator==(const RunConfig& o) const { return serialize_config(*this) == serialize_config(o); }

/// `source` names the input in diagnostics.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
    const auto fields = detail::config_fields();
    RunConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DomainError(where + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
        if (it == fields.end()) throw DomainError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw DomainError(where + ": duplicate key '" + key + "'");
        try {
            it->set(c, value);
        } catch (const DomainError& e) {
            throw DomainError(where + ": field '" + key + "': " + e.what());
        }
    }
    try {
        c.validate();
    } catch (const DomainError& e) {
        throw DomainError(source + ": " + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

}  // namespace regnn

// regnn: synthetic corpus generation, training, prediction, evaluation and
// invariant checks from the command line.
//
// Exit codes: 0 ok, 2 input error, 3 invariant failure, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "regnn/afrdl.hpp"
#include "regnn/checkpoint.hpp"
#include "regnn/config.hpp"
#include "regnn/corpus.hpp"
#include "regnn/invariants.hpp"
#include "regnn/metrics.hpp"
#include "regnn/pipeline.hpp"
#include "regnn/synth.hpp"

namespace fs = std::filesystem;
using namespace regnn;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitInvariant = 3;
constexpr int kExitNumeric = 4;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;

    RunConfig load() const {
        RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (seed) {
            c.train.seed = *seed;
            c.synth.seed = *seed;
        }
        return c;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "key=value run configuration");
    cmd->add_option("--seed", common.seed, "seed overriding the configuration");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw DomainError("failed writing '" + path.string() + "'");
}

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

ReverseOptions reverse_options(const RunConfig& cfg) { return {cfg.reverse_tol, cfg.reverse_max_iter, 0}; }

int cmd_synth(const Common& common, const std::string& out) {
    const RunConfig cfg = common.load();
    const Corpus corpus = synthesize(cfg.synth);
    write_corpus(corpus, out);
    std::cout << "wrote " << corpus.behaviors.size() << " behaviours to " << out << "\n";
    return 0;
}

int cmd_train(const Common& common, const std::string& corpus_dir, const std::string& out, const std::string& resume,
              std::optional<std::size_t> epochs) {
    const RunConfig cfg = common.load();
    const Corpus corpus = read_corpus(corpus_dir);
    AfrdlState state = [&] {
        if (!resume.empty()) return load_checkpoint(resume);
        TrainConfig tc = cfg.train;
        if (epochs) tc.epochs = *epochs;
        return make_state(shape_for_corpus(cfg.shape, corpus), tc);
    }();
    const std::vector<TrainingExample> ex = corpus_examples(corpus, state);
    if (resume.empty()) {
        calibrate(state, ex);
    } else if (epochs) {
        state.config.epochs = *epochs;
        state.config.validate();
    }
    fs::create_directories(out);
    std::string log = "epoch,loss_eq7,loss_eq9,total\n";
    while (state.epoch < state.config.epochs) {
        const EpochRecord r = train_epoch(state, ex);
        log += std::to_string(r.epoch) + "," + real(r.l1) + "," + real(r.mse) + "," + real(r.total) + "\n";
        std::cout << "epoch " << r.epoch << " loss " << real(r.total) << "\n";
    }
    write_text(fs::path(out) / "loss.csv", log);
    save_checkpoint(state, (fs::path(out) / "checkpoint.json").string());
    write_text(fs::path(out) / "config.txt", serialize_config(cfg));
    return 0;
}

int cmd_predict(const Common& common, const std::string& checkpoint, const std::string& corpus_dir,
                const std::string& out, std::optional<std::size_t> samples) {
    const RunConfig cfg = common.load();
    const AfrdlState state = load_checkpoint(checkpoint);
    const Corpus corpus = read_corpus(corpus_dir);
    const std::size_t n = samples.value_or(cfg.samples);
    const std::vector<EvalPair> pairs =
        generate_eval_pairs(state, corpus, n, common.seed.value_or(cfg.train.seed), reverse_options(cfg));
    fs::create_directories(out);
    nlohmann::json manifest = nlohmann::json::object();
    for (const EvalPair& p : pairs) {
        const std::string file = p.behavior_id + "_generated.jsonl";
        write_clips(fs::path(out) / file, p.generated);
        manifest[p.behavior_id] = {{"generated", {file}}};
    }
    write_text(fs::path(out) / "predictions.json", manifest.dump(1) + "\n");
    std::cout << "wrote " << n << " clips per behaviour to " << out << "\n";
    return 0;
}

int cmd_sample(const Common& common, const std::string& checkpoint, const std::string& corpus_dir,
               const std::string& behavior, const std::string& out, std::optional<std::size_t> samples) {
    const RunConfig cfg = common.load();
    const AfrdlState state = load_checkpoint(checkpoint);
    const Corpus corpus = read_corpus(corpus_dir);
    const auto it = std::find_if(corpus.behaviors.begin(), corpus.behaviors.end(),
                                 [&](const BehaviorRecord& b) { return b.id == behavior; });
    if (it == corpus.behaviors.end()) throw DomainError("unknown behaviour '" + behavior + "'");
    const Gmgd dist = predict_distribution(state, speaker_features(it->speaker, state.basis));
    Rng rng(common.seed.value_or(cfg.train.seed));
    nlohmann::json latents = nlohmann::json::array();
    for (std::size_t s = 0; s < samples.value_or(cfg.samples); ++s) {
        const AttributeGraph<double> g = sample(dist, rng, state.shape.component_mode);
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < g.nodes.rows(); ++i) {
            const auto r = g.nodes.row(i);
            rows.push_back(std::vector<double>(r.begin(), r.end()));
        }
        latents.push_back(std::move(rows));
    }
    nlohmann::json doc{{"behavior", behavior}, {"distribution", to_json(dist)}, {"samples", std::move(latents)}};
    write_text(out, doc.dump(1) + "\n");
    return 0;
}

/// Accepts a predictions manifest ("generated") or a corpus manifest ("listeners").
std::map<std::string, std::vector<ReactionClip>> read_generated(const fs::path& where) {
    const fs::path path = fs::is_directory(where) ? where / "predictions.json" : where;
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open predictions '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DomainError(path.string() + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DomainError(path.string() + ": must be a JSON object");
    std::map<std::string, std::vector<ReactionClip>> out;
    for (const auto& [id, entry] : j.items()) {
        const char* key = entry.contains("generated") ? "generated" : "listeners";
        if (!entry.contains(key) || !entry.at(key).is_array())
            throw DomainError(path.string() + ": behaviour '" + id + "' needs a 'generated' list of paths");
        for (const auto& p : entry.at(key)) {
            if (!p.is_string()) throw DomainError(path.string() + ": behaviour '" + id + "' lists a non-string path");
            for (ReactionClip& c : read_clips(path.parent_path() / p.get<std::string>())) out[id].push_back(std::move(c));
        }
    }
    return out;
}

int cmd_eval(const Common& common, const std::string& predictions, const std::string& corpus_dir,
             const std::string& out, std::optional<std::size_t> window) {
    const RunConfig cfg = common.load();
    const Corpus corpus = read_corpus(corpus_dir);
    auto generated = read_generated(predictions);
    std::vector<EvalPair> pairs;
    for (const BehaviorRecord& b : corpus.behaviors) {
        auto it = generated.find(b.id);
        if (it == generated.end() || it->second.empty())
            throw DomainError("no generated clips for behaviour '" + b.id + "'");
        pairs.push_back({b.id, b.speaker, std::move(it->second), b.listeners});
    }
    const MetricReport rep = evaluate(pairs, window.value_or(cfg.metric_window));
    const std::string text = rep.to_json().dump(1) + "\n";
    if (out.empty()) std::cout << text;
    else write_text(out, text);
    return 0;
}

int cmd_check(const Common& common, const std::string& checkpoint) {
    const RunConfig cfg = common.load();
    const AfrdlState state = [&] {
        if (!checkpoint.empty()) return load_checkpoint(checkpoint);
        ModelShape shape = cfg.shape;
        shape.nodes = cfg.synth.attributes;
        shape.speaker_attributes = cfg.synth.attributes;
        shape.frames = cfg.synth.frames;
        return make_state(shape, cfg.train);
    }();
    CheckOptions opt;
    opt.seed = common.seed.value_or(cfg.train.seed);
    bool ok = true;
    for (const InvariantResult& r : run_invariants(state, opt)) {
        std::cout << (r.passed ? "ok   " : "FAIL ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : kExitInvariant;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"REGNN facial reaction toolkit"};
    app.require_subcommand(1);
    Common common;

    std::string out, corpus_dir = "corpus", resume, checkpoint, behavior, predictions;
    std::optional<std::size_t> epochs, samples, window;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dyadic corpus");
    add_common(synth, common);
    synth->add_option("--out", out, "corpus directory")->required();

    auto* train = app.add_subcommand("train", "train on a corpus; writes checkpoint.json and loss.csv");
    add_common(train, common);
    train->add_option("--corpus", corpus_dir, "corpus directory or manifest")->required();
    train->add_option("--out", out, "run directory")->required();
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_option("--epochs", epochs, "total epochs (overrides the configuration)");

    auto* predict = app.add_subcommand("predict", "generate clips per behaviour");
    add_common(predict, common);
    predict->add_option("--checkpoint", checkpoint)->required();
    predict->add_option("--corpus", corpus_dir)->required();
    predict->add_option("--out", out, "predictions directory")->required();
    predict->add_option("--samples", samples, "clips per behaviour");

    auto* sample_cmd = app.add_subcommand("sample", "write one behaviour's predicted distribution and latent samples");
    add_common(sample_cmd, common);
    sample_cmd->add_option("--checkpoint", checkpoint)->required();
    sample_cmd->add_option("--corpus", corpus_dir)->required();
    sample_cmd->add_option("--behavior", behavior)->required();
    sample_cmd->add_option("--out", out, "JSON output path")->required();
    sample_cmd->add_option("--samples", samples, "latent samples");

    auto* eval = app.add_subcommand("eval", "metric report over predictions and corpus");
    add_common(eval, common);
    eval->add_option("--predictions", predictions, "predictions directory or manifest")->required();
    eval->add_option("--corpus", corpus_dir)->required();
    eval->add_option("--out", out, "report path (stdout when omitted)");
    eval->add_option("--window", window, "TLCC lag window");

    auto* check = app.add_subcommand("check", "run the invariant suite");
    add_common(check, common);
    check->add_option("--checkpoint", checkpoint, "checkpoint to inspect (fresh model when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*synth) return cmd_synth(common, out);
        if (*train) return cmd_train(common, corpus_dir, out, resume, epochs);
        if (*predict) return cmd_predict(common, checkpoint, corpus_dir, out, samples);
        if (*sample_cmd) return cmd_sample(common, checkpoint, corpus_dir, behavior, out, samples);
        if (*eval) return cmd_eval(common, predictions, corpus_dir, out, window);
        if (*check) return cmd_check(common, checkpoint);
    } catch (const ContractViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return kExitInvariant;
    } catch (const DomainError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}

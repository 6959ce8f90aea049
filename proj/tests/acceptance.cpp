// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "regnn/checkpoint.hpp"
#include "regnn/config.hpp"
#include "regnn/invariants.hpp"
#include "regnn/pipeline.hpp"
#include "regnn/synth.hpp"

using namespace regnn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_err(const Matrix<double>& a, const Matrix<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::fabs(a.values()[k] - b.values()[k]));
    return m;
}

struct Case {
    RegnnModel model;
    MeflBlock<double> mefl;
    AttributeGraph<double> graph;
};

/// 100 seeded models with I <= 16, D <= 8, N <= 6.
std::vector<Case> random_cases() {
    std::vector<Case> cases;
    const Rng root(20240601);
    for (std::size_t c = 0; c < 100; ++c) {
        Rng rng = root.derive(c);
        const std::size_t nodes = 2 + rng.index(15);
        const std::size_t dims = 1 + rng.index(8);
        const std::size_t layers = 1 + rng.index(6);
        const std::size_t k = 1 + rng.index(std::min<std::size_t>(nodes - 1, 4));
        MeflBlock<double> mefl = MeflBlock<double>::random(dims, dims, 1 + rng.index(4), rng);
        RegnnModel model = RegnnModel::random(layers, dims, 1 + rng.index(4), k, rng, rng.uniform(0.3, 2.0),
                                              rng.uniform(0.3, 3.0));
        Matrix<double> x(nodes, dims);
        for (double& v : x.values()) v = rng.normal(0.0, 1.5);
        EdgeSet<double> e = build_edges(x, mefl, k);
        cases.push_back({std::move(model), std::move(mefl), {std::move(x), std::move(e)}});
    }
    return cases;
}

void criterion_1(const std::vector<Case>& cases) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::uint64_t seed = 1;
    for (const Case& c : cases) {
        const AttributeGraph<double> z = forward(c.model, c.graph);
        const AttributeGraph<double> back = reverse(c.model, z, ReverseOptions{1e-8, 500, seed++});
        worst = std::max(worst, max_err(back.nodes, c.graph.nodes));
    }
    const double secs = seconds_since(t0);
    report(1, "reversibility", worst < 1e-5 && secs < 60.0,
           "max |reverse(forward(g)) - g| = " + num(worst) + " over 100 models (< 1e-5), " + num(secs) + " s (< 60 s)");
}

void criterion_3(const std::vector<Case>& cases) {
    std::uint64_t seed = 1000;
    std::size_t worst_iter = 0;
    double worst_gap = 0.0;
    for (const Case& c : cases) {
        Matrix<double> x = c.graph.nodes;
        for (const RegnnLayer& l : c.model.layers()) {
            const Matrix<double> y = forward_layer(x, c.graph.edges, l);
            const ReverseResult a = reverse_layer(y, c.graph.edges, l, {1e-6, 1000, seed++});
            const ReverseResult b = reverse_layer(y, c.graph.edges, l, {1e-6, 1000, seed++});
            worst_iter = std::max({worst_iter, a.iterations, b.iterations});
            worst_gap = std::max(worst_gap, max_err(a.nodes, b.nodes));
            x = y;
        }
    }
    report(3, "fixed_point", worst_iter <= 100 && worst_gap <= 2e-6,
           "max iterations " + std::to_string(worst_iter) + " (<= 100) at tol 1e-6, x0 disagreement " + num(worst_gap) +
               " (<= 2e-6)");
}

void criterion_2(const std::vector<Case>& cases) {
    double worst = 0.0;
    Rng rng(77);
    for (const Case& c : cases)
        for (const RegnnLayer& l : c.model.layers()) worst = std::max(worst, empirical_lipschitz(l, c.graph.edges, rng, 1000));

    // A trained step keeps the check green; a weight change without
    // re-enforcement must turn it red.
    std::vector<TrainingExample> ex;
    AfrdlState s = toy_state(toy_shape(), 5, ex);
    s.config.learning_rate = 0.05;
    for (int k = 0; k < 5; ++k) train_step(s, ex);
    const auto after_step = run_invariants(s);
    bool stepped_ok = true;
    for (const auto& r : after_step) stepped_ok = stepped_ok && r.passed;
    AfrdlState tampered = s;
    TrainableParams<double> p = tampered.params();
    p.layers[0].combine[0] += 0.5;
    tampered.set_params(p);
    const auto bad = run_invariants(tampered);
    const bool caught = !bad.empty() && !bad.front().passed;
    report(2, "contraction", worst < 1.0 && stepped_ok && caught,
           "worst empirical Lipschitz " + num(worst) + " (< 1) over 1000 pairs per layer; check after optimizer steps " +
               (stepped_ok ? "passes" : "fails") + "; unenforced layer " + (caught ? "rejected" : "NOT rejected"));
}

void criterion_4() {
    double mefl_err = 0.0, coeff_err = 0.0, edge_err = 0.0;
    const Rng root(4);
    for (std::size_t g = 0; g < 50; ++g) {
        Rng rng = root.derive(g);
        const std::size_t nodes = 3 + rng.index(10), dims = 1 + rng.index(6), k = 1 + rng.index(nodes - 1);
        const MeflBlock<double> mefl = MeflBlock<double>::random(dims, dims, 3, rng);
        Matrix<double> x(nodes, dims);
        for (double& v : x.values()) v = rng.normal(0.0, 2.0);
        const EdgeTensor<double> full = mefl_edges(x, mefl);
        for (std::size_t i = 0; i < nodes; ++i)
            for (std::size_t d = 0; d < dims; ++d) {
                double s = 0.0;
                for (std::size_t j = 0; j < nodes; ++j) s += full(i, j, d);
                mefl_err = std::max(mefl_err, std::fabs(s - 1.0));
            }
        const EdgeSet<double> e0 = build_edges(x, mefl, k);
        const RegnnModel model = RegnnModel::random(3, dims, 3, k, rng);
        for (const RegnnLayer& l : model.layers()) {
            const std::vector<double> a = coefficients(x, e0, l);
            const EdgeSet<double> en = edge_update(x, e0, l);
            for (std::size_t i = 0; i < nodes; ++i) {
                const auto in = en.incoming(i);
                if (in.empty()) continue;
                double cs = 0.0;
                std::vector<double> es(dims, 0.0);
                for (std::size_t idx : in) {
                    cs += a[idx];
                    for (std::size_t d = 0; d < dims; ++d) es[d] += en.edges()[idx].feature[d];
                }
                coeff_err = std::max(coeff_err, std::fabs(cs - 1.0));
                for (double s : es) edge_err = std::max(edge_err, std::fabs(s - 1.0));
            }
            x = forward_layer(x, e0, l);
        }
    }
    report(4, "normalization", edge_err <= 1e-10 && coeff_err <= 1e-12 && mefl_err <= 1e-10,
           "incoming edge sums " + num(edge_err) + " (<= 1e-10), coefficient sums " + num(coeff_err) +
               " (<= 1e-12), MEFL rows " + num(mefl_err) + " (<= 1e-10) over 50 graphs");
}

void criterion_5() {
    std::vector<TrainingExample> ex;
    const AfrdlState s = toy_state(toy_shape(), 0, ex);
    const TrainableParams<double> p = s.params();
    const std::vector<Normalization> norms = s.regnn.normalizations();
    const TrainConfig& c = s.config;
    const GradientResult g = loss_and_gradient(p, norms, ex, s.shape.top_k, c.sigma, c.l1_weight, c.mse_weight);
    const std::vector<double> theta = flatten(p);
    const std::vector<ParamGroup> groups = param_groups(p);
    auto loss_at = [&](const std::vector<double>& t) {
        TrainableParams<double> q = p;
        assign(q, t);
        return batch_loss(q, std::span<const Normalization>(norms), ex, s.shape.top_k, c.sigma, c.l1_weight,
                          c.mse_weight)
            .total;
    };
    double diff[kParamGroups] = {}, na[kParamGroups] = {}, nb[kParamGroups] = {};
    const double h = 1e-6;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        std::vector<double> up = theta, dn = theta;
        up[k] += h;
        dn[k] -= h;
        const double fd = (loss_at(up) - loss_at(dn)) / (2.0 * h);
        const auto grp = static_cast<std::size_t>(groups[k]);
        diff[grp] += (fd - g.gradient[k]) * (fd - g.gradient[k]);
        na[grp] += fd * fd;
        nb[grp] += g.gradient[k] * g.gradient[k];
    }
    bool ok = s.shape.nodes == 2 && s.shape.dims == 2 && s.shape.components == 2 && s.shape.layers == 1;
    std::string detail = "I=2 D=2 M=2 N=1;";
    for (std::size_t grp = 0; grp < kParamGroups; ++grp) {
        const double den = std::sqrt(std::max(na[grp], nb[grp]));
        const double rel = den == 0.0 ? 0.0 : std::sqrt(diff[grp]) / den;
        ok = ok && rel < 1e-4;
        detail += std::string(" ") + group_name(static_cast<ParamGroup>(grp)) + " " + num(rel);
    }
    report(5, "gradients", ok, detail + " (each < 1e-4)");
}

void criterion_6() {
    Rng rng(6);
    Matrix<double> a(3, 2);
    for (double& v : a.values()) v = rng.normal();
    Matrix<double> b = a;
    b(2, 1) += 0.25;
    const std::vector<Matrix<double>> same{a, a, a}, differ{a, a, b};
    const double l_same = pairwise_l1_loss(std::span<const Matrix<double>>(same));
    const double l_diff = pairwise_l1_loss(std::span<const Matrix<double>>(differ));
    // Two of the three pairs differ by 0.25 in one entry.
    const bool l1_ok = l_same == 0.0 && std::fabs(l_diff - 0.5) < 1e-15;
    Matrix<double> c = a;
    c(0, 0) += 0.5;
    const double m_same = distribution_mse_loss(a, a), m_diff = distribution_mse_loss(a, c);
    const bool mse_ok = m_same == 0.0 && std::fabs(m_diff - 0.25 / 6.0) < 1e-15;
    report(6, "loss_semantics", l1_ok && mse_ok,
           "distinct-latent loss " + num(l_same) + " / " + num(l_diff) + " (expect 0 / 0.5); distribution loss " +
               num(m_same) + " / " + num(m_diff) + " (expect 0 / 0.0417)");
}

struct TrainedRun {
    std::vector<EpochRecord> log;
    std::string checkpoint;
};

RunConfig e2e_config() {
    RunConfig rc;
    rc.synth.seed = 1;
    rc.train.seed = 1;
    rc.train.epochs = 50;
    rc.train.learning_rate = 5e-3;
    rc.train.decay_epochs = {};
    rc.train.sigma = 0.6;
    rc.samples = 10;
    return rc;
}

void criterion_7() {
    const auto t0 = Clock::now();
    const RunConfig rc = e2e_config();
    const Corpus corpus = synthesize(rc.synth);
    rc.shape.validate();
    ModelShape shape = shape_for_corpus(rc.shape, corpus);
    shape.components = rc.synth.reactions;
    AfrdlState state = make_state(shape, rc.train);
    const std::vector<TrainingExample> ex = corpus_examples(corpus, state);
    calibrate(state, ex);
    const ReverseOptions rev{rc.reverse_tol, rc.reverse_max_iter, 0};
    const std::vector<EvalPair> before = generate_eval_pairs(state, corpus, rc.samples, 99, rev);
    double dist0 = 0.0;
    for (const EvalPair& p : before) dist0 += fr_dist(p);
    dist0 /= static_cast<double>(before.size());
    for (std::size_t e = 0; e < rc.train.epochs; ++e) train_epoch(state, ex);
    const std::vector<EvalPair> after = generate_eval_pairs(state, corpus, rc.samples, 99, rev);
    const MetricReport rep = evaluate(after);
    const double secs = seconds_since(t0);
    const double ratio = rep.fr_dist / dist0;
    report(7, "learning_signal", ratio <= 0.5 && rep.fr_div > 0.0 && secs < 600.0,
           "FRDist " + num(dist0) + " -> " + num(rep.fr_dist) + " (ratio " + num(ratio) + ", <= 0.5), FRDiv " +
               num(rep.fr_div) + " (> 0) with 10 samples at sigma 0.6, " + num(secs) + " s (< 600 s)");
}

ReactionClip clip(std::size_t attributes, std::size_t frames, const std::function<double(std::size_t, std::size_t)>& f,
                  const std::string& id = "c") {
    std::vector<double> v;
    for (std::size_t i = 0; i < attributes; ++i)
        for (std::size_t t = 0; t < frames; ++t) v.push_back(f(i, t));
    return ReactionClip(id, attributes, frames, std::move(v));
}

void criterion_8() {
    Rng rng(8);
    const ReactionClip x = clip(3, 40, [&](std::size_t, std::size_t) { return rng.uniform(); });
    const double d = fr_dist({"b", x, {x}, {x}});
    const double p = pcc({"b", x, {x}, {x}});
    // Listener echoes the speaker 5 frames late: g[t] = s[t - 5].
    std::vector<double> raw(3 * 45);
    for (double& v : raw) v = rng.uniform();
    const ReactionClip speaker = clip(3, 40, [&](std::size_t i, std::size_t t) { return raw[i * 45 + t + 5]; });
    const ReactionClip late = clip(3, 40, [&](std::size_t i, std::size_t t) { return raw[i * 45 + t]; });
    const LagResult lag = lagged_cross_correlation(speaker, late, 8);
    bool lag_ok = !lag.degenerate && std::fabs(lag.score - 5.0) == 0.0;
    for (int l : lag.lags) lag_ok = lag_ok && std::abs(l) == 5;
    const double div = fr_div(std::vector<ReactionClip>{x, x, x});
    report(8, "metric_sanity", d == 0.0 && std::fabs(p - 1.0) < 1e-12 && lag_ok && div == 0.0,
           "FRDist(x,{x}) " + num(d) + ", PCC(x,x) " + num(p) + ", TLCC lag " + num(lag.score) + " (expect 5), FRDiv " +
               num(div));
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a)) files.push_back(e.path().filename());
    std::size_t count_b = 0;
    for (const auto& e : fs::directory_iterator(b)) (void)e, ++count_b;
    if (files.size() != count_b || files.empty()) return false;
    for (const fs::path& f : files)
        if (read_file(a / f) != read_file(b / f)) return false;
    return true;
}

TrainedRun short_run(const Corpus& corpus, std::uint64_t seed) {
    RunConfig rc = e2e_config();
    rc.train.seed = seed;
    ModelShape shape = shape_for_corpus(rc.shape, corpus);
    shape.components = corpus.behaviors.front().listeners.size();
    AfrdlState s = make_state(shape, rc.train);
    const auto ex = corpus_examples(corpus, s);
    calibrate(s, ex);
    TrainedRun r;
    for (int e = 0; e < 3; ++e) r.log.push_back(train_epoch(s, ex));
    r.checkpoint = checkpoint_string(s);
    return r;
}

void criterion_9() {
    const fs::path root = fs::temp_directory_path() / "regnn_acceptance";
    fs::remove_all(root);
    SynthSpec spec;
    spec.seed = 9;
    spec.behaviors = 4;
    const Corpus a = synthesize(spec);
    write_corpus(a, root / "a");
    write_corpus(synthesize(spec), root / "b");
    const bool corpus_ok = same_tree(root / "a", root / "b");

    const Corpus small = read_corpus(root / "a");
    const TrainedRun r1 = short_run(small, 3), r2 = short_run(small, 3);
    bool log_ok = r1.log.size() == r2.log.size();
    for (std::size_t e = 0; log_ok && e < r1.log.size(); ++e)
        log_ok = r1.log[e].l1 == r2.log[e].l1 && r1.log[e].mse == r2.log[e].mse && r1.log[e].total == r2.log[e].total;
    const bool ckpt_ok = r1.checkpoint == r2.checkpoint;

    const AfrdlState loaded = checkpoint_from_json(nlohmann::json::parse(r1.checkpoint));
    save_checkpoint(loaded, (root / "c1.json").string());
    const AfrdlState again = load_checkpoint((root / "c1.json").string());
    save_checkpoint(again, (root / "c2.json").string());
    const bool rt_ok = read_file(root / "c1.json") == r1.checkpoint && read_file(root / "c2.json") == r1.checkpoint &&
                       flatten(again.params()) == flatten(loaded.params()) && again.adam == loaded.adam;
    fs::remove_all(root);
    report(9, "determinism", corpus_ok && log_ok && ckpt_ok && rt_ok,
           std::string("corpus files ") + (corpus_ok ? "identical" : "DIFFER") + ", loss logs " +
               (log_ok ? "identical" : "DIFFER") + ", checkpoints " + (ckpt_ok ? "identical" : "DIFFER") +
               ", save/load " + (rt_ok ? "bit-exact" : "NOT bit-exact"));
}

void guarded(int id, const char* name, const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

}  // namespace

int main() {
    std::vector<Case> cases;
    guarded(1, "reversibility", [&] {
        cases = random_cases();
        criterion_1(cases);
    });
    guarded(2, "contraction", [&] { criterion_2(cases); });
    guarded(3, "fixed_point", [&] { criterion_3(cases); });
    guarded(4, "normalization", criterion_4);
    guarded(5, "gradients", criterion_5);
    guarded(6, "loss_semantics", criterion_6);
    guarded(7, "learning_signal", criterion_7);
    guarded(8, "metric_sanity", criterion_8);
    guarded(9, "determinism", criterion_9);
    std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
    return failures == 0 ? 0 : 1;
}

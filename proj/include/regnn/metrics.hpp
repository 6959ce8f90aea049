#pragma once

// Appropriateness, diversity and synchrony metrics over reaction clips.
//
//   FRDist  mean over generated clips of the smallest summed per-attribute
//           DTW distance to any appropriate real clip
//   FRCorr  same matching, largest mean concordance correlation (CCC)
//   PCC     same matching, largest mean Pearson correlation
//   FRVar   mean per-attribute temporal variance of generated clips
//   FRDiv   mean pairwise squared difference among clips for one behaviour
//   FRDvs   mean pairwise squared difference between behaviours (same sample index)
//   TLCC    mean absolute best lag of speaker/generated cross-correlation

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/graph.hpp"

namespace regnn {

/// Metric notes (degenerate correlations, singleton sets) collected during evaluation.
using MetricFlags = std::vector<std::string>;

namespace detail {
inline void flag(MetricFlags* flags, const std::string& msg) {
    if (flags && std::find(flags->begin(), flags->end(), msg) == flags->end()) flags->push_back(msg);
}
inline void require_same_shape(const ReactionClip& a, const ReactionClip& b, const char* what) {
    if (a.attributes() != b.attributes() || a.frames() != b.frames())
        throw DomainError(std::string(what) + ": clips '" + a.clip_id() + "' and '" + b.clip_id() + "' differ in shape");
}
}  // namespace detail

/// Classic DTW (steps (1,0), (0,1), (1,1), unit weights) with |x - y| cost.
inline double dtw_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DomainError("dtw_distance: empty series");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(b.size() + 1, inf), cur(b.size() + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const double cost = std::fabs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double clip_dtw(const ReactionClip& a, const ReactionClip& b) {
    detail::require_same_shape(a, b, "clip_dtw");
    double total = 0.0;
    for (std::size_t i = 0; i < a.attributes(); ++i) total += dtw_distance(a.series(i), b.series(i));
    return total;
}

struct Correlation {
    double value = 0.0;
    bool degenerate = false;
};

namespace detail {

/// Means are taken around the first sample so a constant series has
/// exactly zero deviations (and is flagged degenerate, not near-degenerate).
inline double centred_mean(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v - x.front();
    return x.front() + acc / static_cast<double>(x.size());
}

struct Moments {
    double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
};

inline Moments moments(std::span<const double> x, std::span<const double> y) {
    Moments m{centred_mean(x), centred_mean(y)};
    for (std::size_t t = 0; t < x.size(); ++t) {
        m.sxy += (x[t] - m.mx) * (y[t] - m.my);
        m.sxx += (x[t] - m.mx) * (x[t] - m.mx);
        m.syy += (y[t] - m.my) * (y[t] - m.my);
    }
    return m;
}

}  // namespace detail

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("pearson: need equal lengths >= 2");
    const detail::Moments m = detail::moments(x, y);
    if (m.sxx <= 0.0 || m.syy <= 0.0) return {0.0, true};
    return {std::clamp(m.sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0), false};
}

/// Lin's concordance correlation coefficient.
inline Correlation concordance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("concordance: need equal lengths >= 2");
    const double n = static_cast<double>(x.size());
    const detail::Moments m = detail::moments(x, y);
    if (m.sxx <= 0.0 || m.syy <= 0.0) return {0.0, true};
    const double gap = m.mx - m.my;
    return {2.0 * (m.sxy / n) / (m.sxx / n + m.syy / n + gap * gap), false};
}

/// Generated reactions, the appropriate real reactions and the speaker
/// behaviour they respond to.
struct EvalPair {
    std::string behavior_id;
    ReactionClip speaker;
    std::vector<ReactionClip> generated;
    std::vector<ReactionClip> appropriate_real;
};

namespace detail {
inline void require_nonempty(const EvalPair& p, const char* what) {
    if (p.generated.empty() || p.appropriate_real.empty())
        throw DomainError(std::string(what) + ": empty clip set for behaviour '" + p.behavior_id + "'");
}

template <class Corr>
double best_correlation(const EvalPair& pair, Corr corr, const char* name, MetricFlags* flags) {
    require_nonempty(pair, name);
    double total = 0.0;
    for (const ReactionClip& g : pair.generated) {
        double best = -std::numeric_limits<double>::infinity();
        for (const ReactionClip& r : pair.appropriate_real) {
            require_same_shape(g, r, name);
            double mean = 0.0;
            for (std::size_t i = 0; i < g.attributes(); ++i) {
                const Correlation c = corr(g.series(i), r.series(i));
                if (c.degenerate) flag(flags, std::string(name) + ": zero-variance series treated as correlation 0");
                mean += c.value;
            }
            best = std::max(best, mean / static_cast<double>(g.attributes()));
        }
        total += best;
    }
    return total / static_cast<double>(pair.generated.size());
}

inline double mean_squared_difference(const ReactionClip& a, const ReactionClip& b) {
    require_same_shape(a, b, "squared difference");
    double s = 0.0;
    for (std::size_t k = 0; k < a.values().size(); ++k) {
        const double d = a.values()[k] - b.values()[k];
        s += d * d;
    }
    return s / static_cast<double>(a.values().size());
}
}  // namespace detail

inline double fr_dist(const EvalPair& pair) {
    detail::require_nonempty(pair, "fr_dist");
    double total = 0.0;
    for (const ReactionClip& g : pair.generated) {
        double best = std::numeric_limits<double>::infinity();
        for (const ReactionClip& r : pair.appropriate_real) best = std::min(best, clip_dtw(g, r));
        total += best;
    }
    return total / static_cast<double>(pair.generated.size());
}

inline double fr_corr(const EvalPair& pair, MetricFlags* flags = nullptr) {
    return detail::best_correlation(
        pair, [](auto x, auto y) { return concordance(x, y); }, "FRCorr", flags);
}

inline double pcc(const EvalPair& pair, MetricFlags* flags = nullptr) {
    return detail::best_correlation(
        pair, [](auto x, auto y) { return pearson(x, y); }, "PCC", flags);
}

/// Mean over clips and attributes of the (population) variance across frames.
inline double fr_var(std::span<const ReactionClip> clips) {
    if (clips.empty()) throw DomainError("fr_var: empty clip set");
    double total = 0.0;
    std::size_t count = 0;
    for (const ReactionClip& c : clips) {
        for (std::size_t i = 0; i < c.attributes(); ++i) {
            const auto s = c.series(i);
            const double mean = detail::centred_mean(s);
            double var = 0.0;
            for (double v : s) var += (v - mean) * (v - mean);
            total += var / static_cast<double>(s.size());
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

/// Mean pairwise squared difference among clips generated for one behaviour.
inline double fr_div(std::span<const ReactionClip> clips, MetricFlags* flags = nullptr) {
    if (clips.empty()) throw DomainError("fr_div: empty clip set");
    if (clips.size() == 1) {
        detail::flag(flags, "FRDiv: singleton generation set, reported as 0");
        return 0.0;
    }
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a + 1 < clips.size(); ++a)
        for (std::size_t b = a + 1; b < clips.size(); ++b) {
            total += detail::mean_squared_difference(clips[a], clips[b]);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

/// Mean pairwise squared difference between generations for different
/// behaviours, comparing clips with the same sample index.
inline double fr_dvs(std::span<const EvalPair> corpus, MetricFlags* flags = nullptr) {
    if (corpus.empty()) throw DomainError("fr_dvs: empty corpus");
    if (corpus.size() == 1) {
        detail::flag(flags, "FRDvs: single behaviour, reported as 0");
        return 0.0;
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a + 1 < corpus.size(); ++a)
        for (std::size_t b = a + 1; b < corpus.size(); ++b) {
            const std::size_t n = std::min(corpus[a].generated.size(), corpus[b].generated.size());
            for (std::size_t s = 0; s < n; ++s) {
                total += detail::mean_squared_difference(corpus[a].generated[s], corpus[b].generated[s]);
                ++count;
            }
        }
    if (count == 0) throw DomainError("fr_dvs: behaviours have no generated clips");
    return total / static_cast<double>(count);
}

struct LagResult {
    std::vector<int> lags;  ///< best lag per attribute (0 when degenerate)
    double score = 0.0;     ///< mean |lag| over attributes
    bool degenerate = false;
};

/// Per attribute, the lag L in [-window, window] maximizing the Pearson
/// correlation of speaker[t] with generated[t + L]; ties favour the smaller
/// |L|, then the negative lag.
inline LagResult lagged_cross_correlation(const ReactionClip& speaker, const ReactionClip& generated,
                                          std::size_t window) {
    detail::require_same_shape(speaker, generated, "tlcc");
    const std::size_t t_len = speaker.frames();
    if (window >= t_len) throw DomainError("tlcc: lag window must be smaller than the clip length");
    LagResult res;
    const int w = static_cast<int>(window);
    for (std::size_t i = 0; i < speaker.attributes(); ++i) {
        const auto s = speaker.series(i);
        const auto g = generated.series(i);
        double best = -std::numeric_limits<double>::infinity();
        int best_lag = 0;
        bool any = false;
        for (int mag = 0; mag <= w; ++mag) {
            for (int sign : {-1, 1}) {
                if (mag == 0 && sign == 1) continue;
                const int lag = sign * mag;
                const std::size_t lo = lag < 0 ? static_cast<std::size_t>(-lag) : 0;
                const std::size_t hi = lag > 0 ? t_len - static_cast<std::size_t>(lag) : t_len;
                if (hi - lo < 2) continue;
                const auto g_start = static_cast<std::size_t>(static_cast<long>(lo) + lag);
                const Correlation c = pearson(s.subspan(lo, hi - lo), g.subspan(g_start, hi - lo));
                if (c.degenerate) continue;
                any = true;
                if (c.value > best) {
                    best = c.value;
                    best_lag = lag;
                }
            }
        }
        if (!any) {
            res.degenerate = true;
            best_lag = 0;
        }
        res.lags.push_back(best_lag);
        res.score += std::abs(best_lag);
    }
    res.score /= static_cast<double>(speaker.attributes());
    return res;
}

inline std::size_t default_lag_window(std::size_t frames) { return std::max<std::size_t>(1, frames / 10); }

inline double synchrony_tlcc(const ReactionClip& speaker, const ReactionClip& generated, std::size_t window,
                             MetricFlags* flags = nullptr) {
    const LagResult r = lagged_cross_correlation(speaker, generated, window);
    if (r.degenerate) detail::flag(flags, "TLCC: zero-variance series, lag taken as 0");
    return r.score;
}

struct MetricReport {
    double fr_dist = 0.0;
    double fr_corr = 0.0;
    double pcc = 0.0;
    double fr_var = 0.0;
    double fr_div = 0.0;
    double fr_dvs = 0.0;
    double tlcc = 0.0;
    MetricFlags flags;

    nlohmann::json to_json() const {
        return {{"FRDist", fr_dist}, {"FRCorr", fr_corr}, {"PCC", pcc},   {"FRVar", fr_var},
                {"FRDiv", fr_div},   {"FRDvs", fr_dvs},   {"TLCC", tlcc}, {"FRRea", "not computed"},
                {"flags", flags}};
    }
};

/// Corpus means in behaviour order. window == 0 selects T/10.
inline MetricReport evaluate(std::span<const EvalPair> corpus, std::size_t window = 0) {
    if (corpus.empty()) throw DomainError("evaluate: empty corpus");
    MetricReport rep;
    std::vector<ReactionClip> all_generated;
    double sync = 0.0;
    std::size_t sync_count = 0;
    for (const EvalPair& p : corpus) {
        rep.fr_dist += fr_dist(p);
        rep.fr_corr += fr_corr(p, &rep.flags);
        rep.pcc += pcc(p, &rep.flags);
        rep.fr_div += fr_div(p.generated, &rep.flags);
        const std::size_t w = window == 0 ? default_lag_window(p.speaker.frames()) : window;
        for (const ReactionClip& g : p.generated) {
            sync += synchrony_tlcc(p.speaker, g, w, &rep.flags);
            ++sync_count;
            all_generated.push_back(g);
        }
    }
    const double n = static_cast<double>(corpus.size());
    rep.fr_dist /= n;
    rep.fr_corr /= n;
    rep.pcc /= n;
    rep.fr_div /= n;
    rep.fr_var = fr_var(all_generated);
    rep.fr_dvs = fr_dvs(corpus, &rep.flags);
    rep.tlcc = sync / static_cast<double>(sync_count);
    return rep;
}

}  // namespace regnn

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "regnn/corpus.hpp"
#include "regnn/errors.hpp"
#include "regnn/numeric.hpp"

namespace regnn {

/// Synthetic dyadic corpus: per behaviour one speaker clip and M listener
/// clips, each listener following one of `modes` behaviour-specific smooth
/// trajectories plus white noise.
struct SynthSpec {
    std::size_t attributes = 8;
    std::size_t frames = 64;
    std::size_t behaviors = 16;
    std::size_t reactions = 4;  ///< M listener clips per behaviour
    std::size_t modes = 2;
    double noise = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (attributes < 2 || frames < 2) throw DomainError("SynthSpec: need at least 2 attributes and 2 frames");
        if (behaviors == 0) throw DomainError("SynthSpec: need at least one behaviour");
        if (reactions < 2) throw DomainError("SynthSpec: need M >= 2 reactions per behaviour");
        if (modes == 0 || modes > reactions) throw DomainError("SynthSpec: need 1 <= modes <= M");
        if (!(noise >= 0.0)) throw DomainError("SynthSpec: noise must be >= 0");
    }
};

namespace detail {

/// level + two low-frequency sinusoids per attribute.
struct Trajectory {
    std::vector<double> level, amp1, freq1, phase1, amp2, freq2, phase2;

    static Trajectory random(std::size_t attributes, Rng& rng, double lo, double hi, double amp_hi) {
        Trajectory t;
        for (std::size_t i = 0; i < attributes; ++i) {
            t.level.push_back(rng.uniform(lo, hi));
            t.amp1.push_back(rng.uniform(0.05, amp_hi));
            t.freq1.push_back(rng.uniform(0.5, 1.5));
            t.phase1.push_back(rng.uniform(0.0, 2.0 * M_PI));
            t.amp2.push_back(rng.uniform(0.0, 0.5 * amp_hi));
            t.freq2.push_back(rng.uniform(1.0, 2.0));
            t.phase2.push_back(rng.uniform(0.0, 2.0 * M_PI));
        }
        return t;
    }

    double at(std::size_t i, std::size_t t, std::size_t frames) const {
        const double x = static_cast<double>(t) / static_cast<double>(frames);
        return level[i] + amp1[i] * std::sin(2.0 * M_PI * freq1[i] * x + phase1[i]) +
               amp2[i] * std::sin(2.0 * M_PI * freq2[i] * x + phase2[i]);
    }
};

inline ReactionClip render(const Trajectory& tr, std::string id, std::size_t attributes, std::size_t frames,
                           double noise, Rng& rng) {
    std::vector<double> v;
    v.reserve(attributes * frames);
    for (std::size_t i = 0; i < attributes; ++i)
        for (std::size_t t = 0; t < frames; ++t) {
            double x = tr.at(i, t, frames);
            if (noise > 0.0) x += noise * rng.normal();
            v.push_back(std::clamp(x, 0.0, 1.0));
        }
    return ReactionClip(std::move(id), attributes, frames, std::move(v));
}

inline std::string behavior_name(std::size_t b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "b%04zu", b);
    return buf;
}

}  // namespace detail

inline Corpus synthesize(const SynthSpec& spec) {
    spec.validate();
    const Rng root(spec.seed);
    Corpus corpus;
    for (std::size_t b = 0; b < spec.behaviors; ++b) {
        Rng rng = root.derive(b);
        const std::string id = detail::behavior_name(b);
        BehaviorRecord rec;
        rec.id = id;
        const auto speaker = detail::Trajectory::random(spec.attributes, rng, 0.3, 0.7, 0.2);
        std::vector<detail::Trajectory> modes;
        for (std::size_t r = 0; r < spec.modes; ++r)
            modes.push_back(detail::Trajectory::random(spec.attributes, rng, 0.25, 0.75, 0.25));
        rec.speaker = detail::render(speaker, id + "_speaker", spec.attributes, spec.frames, spec.noise, rng);
        for (std::size_t m = 0; m < spec.reactions; ++m) {
            const std::size_t mode = m % spec.modes;
            rec.modes.push_back(mode);
            rec.listeners.push_back(detail::render(modes[mode], id + "_listener" + std::to_string(m), spec.attributes,
                                                   spec.frames, spec.noise, rng));
        }
        corpus.behaviors.push_back(std::move(rec));
    }
    return corpus;
}

}  // namespace regnn

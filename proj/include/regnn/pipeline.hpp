#pragma once

// Corpus-level glue shared by the command line and the end-to-end tests.

#include <string>
#include <vector>

#include "regnn/afrdl.hpp"
#include "regnn/corpus.hpp"
#include "regnn/metrics.hpp"

namespace regnn {

/// Model shape with I, T and the speaker width taken from the corpus.
inline ModelShape shape_for_corpus(ModelShape shape, const Corpus& corpus) {
    corpus.validate();
    shape.nodes = corpus.behaviors.front().listeners.front().attributes();
    shape.frames = corpus.frames();
    shape.speaker_attributes = corpus.attributes();
    return shape;
}

inline std::vector<TrainingExample> corpus_examples(const Corpus& corpus, const AfrdlState& state) {
    std::vector<TrainingExample> ex;
    for (const BehaviorRecord& b : corpus.behaviors) {
        if (b.listeners.size() != state.shape.components)
            throw DomainError("behaviour '" + b.id + "' has " + std::to_string(b.listeners.size()) +
                              " listener clips; the model expects M = " + std::to_string(state.shape.components));
        ex.push_back(make_example(b.id, b.speaker, b.listeners, state.basis));
    }
    return ex;
}

/// n generated clips per behaviour; behaviour b samples from root.derive(b).
inline std::vector<EvalPair> generate_eval_pairs(const AfrdlState& state, const Corpus& corpus, std::size_t n,
                                                 std::uint64_t seed, const ReverseOptions& reverse_opt = {}) {
    const Rng root(seed);
    std::vector<EvalPair> pairs;
    for (std::size_t b = 0; b < corpus.behaviors.size(); ++b) {
        const BehaviorRecord& rec = corpus.behaviors[b];
        Rng rng = root.derive(b);
        const std::vector<double> features = speaker_features(rec.speaker, state.basis);
        pairs.push_back({rec.id, rec.speaker,
                         predict_reactions(state, features, n, rng, rec.id + "_gen", reverse_opt), rec.listeners});
    }
    return pairs;
}

}  // namespace regnn

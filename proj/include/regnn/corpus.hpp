#pragma once

// Corpus files.
//
// Clips: JSON Lines, one object per line:
//   {"clip_id": "...", "attributes": I, "frames": T, "values": [[T reals] x I]}
// Manifest (manifest.json): behaviour id -> {"speaker": path, "listeners": [paths]}
// with paths relative to the manifest. Every clip in every listed listener
// file belongs to that behaviour. An optional "modes" array records the
// latent mode of each listener clip for synthetic corpora.

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "regnn/errors.hpp"
#include "regnn/graph.hpp"

namespace regnn {

inline nlohmann::json clip_to_json(const ReactionClip& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < c.attributes(); ++i) {
        const auto s = c.series(i);
        rows.push_back(std::vector<double>(s.begin(), s.end()));
    }
    return {{"clip_id", c.clip_id()}, {"attributes", c.attributes()}, {"frames", c.frames()}, {"values", std::move(rows)}};
}

inline ReactionClip clip_from_json(const nlohmann::json& j, const std::string& where) {
    auto field = [&](const char* name) -> const nlohmann::json& {
        if (!j.is_object() || !j.contains(name)) throw DomainError(where + ": missing field '" + name + "'");
        return j.at(name);
    };
    try {
        const std::string id = field("clip_id").get<std::string>();
        const auto attributes = field("attributes").get<std::size_t>();
        const auto frames = field("frames").get<std::size_t>();
        const auto& rows = field("values");
        if (!rows.is_array() || rows.size() != attributes)
            throw DomainError(where + ": field 'values' must hold 'attributes' rows");
        std::vector<double> values;
        values.reserve(attributes * frames);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].is_array() || rows[i].size() != frames)
                throw DomainError(where + ": field 'values' row " + std::to_string(i) + " must hold 'frames' reals");
            for (const auto& v : rows[i]) {
                if (!v.is_number()) throw DomainError(where + ": field 'values' row " + std::to_string(i) + " holds a non-number");
                values.push_back(v.get<double>());
            }
        }
        try {
            return ReactionClip(id, attributes, frames, std::move(values));
        } catch (const DomainError& e) {
            throw DomainError(where + ": " + e.what());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(where + ": " + e.what());
    }
}

inline std::vector<ReactionClip> read_clips(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open clip file '" + path.string() + "'");
    std::vector<ReactionClip> clips;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DomainError(where + ": malformed JSON (" + e.what() + ")");
        }
        clips.push_back(clip_from_json(j, where));
    }
    return clips;
}

inline void write_clips(const std::filesystem::path& path, const std::vector<ReactionClip>& clips) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write clip file '" + path.string() + "'");
    for (const ReactionClip& c : clips) out << clip_to_json(c).dump() << '\n';
    if (!out) throw DomainError("failed writing clip file '" + path.string() + "'");
}

struct BehaviorRecord {
    std::string id;
    ReactionClip speaker;
    std::vector<ReactionClip> listeners;
    std::vector<std::size_t> modes;  ///< empty unless known
};

struct Corpus {
    std::vector<BehaviorRecord> behaviors;  ///< sorted by id

    std::size_t attributes() const { return behaviors.empty() ? 0 : behaviors.front().speaker.attributes(); }
    std::size_t frames() const { return behaviors.empty() ? 0 : behaviors.front().speaker.frames(); }

    /// Shape consistency across the whole corpus.
    void validate() const {
        if (behaviors.empty()) throw DomainError("corpus: no behaviours");
        const std::size_t i0 = attributes(), t0 = frames();
        const std::size_t li = behaviors.front().listeners.empty() ? 0 : behaviors.front().listeners.front().attributes();
        for (const BehaviorRecord& b : behaviors) {
            if (b.speaker.attributes() != i0 || b.speaker.frames() != t0)
                throw DomainError("corpus: speaker clip of '" + b.id + "' differs in shape");
            if (b.listeners.empty()) throw DomainError("corpus: behaviour '" + b.id + "' has no listener clips");
            for (const ReactionClip& c : b.listeners)
                if (c.attributes() != li || c.frames() != t0)
                    throw DomainError("corpus: listener clip '" + c.clip_id() + "' of '" + b.id + "' differs in shape");
        }
    }
};

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::object();
    for (const BehaviorRecord& b : corpus.behaviors) {
        const std::string speaker_file = b.id + "_speaker.jsonl";
        const std::string listener_file = b.id + "_listeners.jsonl";
        write_clips(dir / speaker_file, {b.speaker});
        write_clips(dir / listener_file, b.listeners);
        nlohmann::json entry{{"speaker", speaker_file}, {"listeners", {listener_file}}};
        if (!b.modes.empty()) entry["modes"] = b.modes;
        manifest[b.id] = std::move(entry);
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DomainError("cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(1) << '\n';
}

/// Accepts a corpus directory or a manifest path.
inline Corpus read_corpus(const std::filesystem::path& where) {
    const std::filesystem::path manifest_path =
        std::filesystem::is_directory(where) ? where / "manifest.json" : where;
    const std::filesystem::path base = manifest_path.parent_path();
    std::ifstream in(manifest_path);
    if (!in) throw DomainError("cannot open manifest '" + manifest_path.string() + "'");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DomainError(manifest_path.string() + ": malformed JSON (" + e.what() + ")");
    }
    if (!manifest.is_object()) throw DomainError(manifest_path.string() + ": manifest must be a JSON object");
    Corpus corpus;
    for (const auto& [id, entry] : manifest.items()) {
        const std::string where_id = manifest_path.string() + ": behaviour '" + id + "'";
        if (!entry.is_object() || !entry.contains("speaker") || !entry.contains("listeners"))
            throw DomainError(where_id + ": needs fields 'speaker' and 'listeners'");
        if (!entry.at("speaker").is_string() || !entry.at("listeners").is_array())
            throw DomainError(where_id + ": 'speaker' must be a path and 'listeners' a list of paths");
        BehaviorRecord b;
        b.id = id;
        const std::vector<ReactionClip> sp = read_clips(base / entry.at("speaker").get<std::string>());
        if (sp.size() != 1) throw DomainError(where_id + ": speaker file must hold exactly one clip");
        b.speaker = sp.front();
        for (const auto& p : entry.at("listeners")) {
            if (!p.is_string()) throw DomainError(where_id + ": field 'listeners' holds a non-string entry");
            for (ReactionClip& c : read_clips(base / p.get<std::string>())) b.listeners.push_back(std::move(c));
        }
        if (entry.contains("modes")) {
            try {
                b.modes = entry.at("modes").get<std::vector<std::size_t>>();
            } catch (const nlohmann::json::exception&) {
                throw DomainError(where_id + ": field 'modes' must be a list of non-negative integers");
            }
        }
        corpus.behaviors.push_back(std::move(b));
    }
    corpus.validate();
    return corpus;
}

}  // namespace regnn

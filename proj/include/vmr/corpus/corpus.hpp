#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vmr/core/rng.hpp"
#include "vmr/corpus/format.hpp"
#include "vmr/corpus/types.hpp"

namespace vmr {

// Mean-pools raw clip rows into N equal index partitions. Partition k covers
// input rows [floor(k*raw/N), floor((k+1)*raw/N)); an empty partition borrows
// the nearest preceding row so the operation stays total for raw < N.
inline Mat standardize_clips(const Mat& features, int n) {
    if (features.rows() < 1) throw ValidationError("standardize_clips: empty input");
    if (n < 1) throw ValidationError("standardize_clips: target count must be >= 1");
    int64_t raw = features.rows();
    Mat out(n, features.cols());
    for (int64_t k = 0; k < n; ++k) {
        int64_t lo = k * raw / n;
        int64_t hi = (k + 1) * raw / n;
        if (hi > lo) {
            out.row(k) = features.middleRows(lo, hi - lo).colwise().mean();
        } else {
            out.row(k) = features.row(std::max<int64_t>(lo == 0 ? 0 : lo - 1, 0));
        }
    }
    return out;
}

// Maps a second-span onto clip indices so the selected clips fully cover it:
// i = floor(t_s / L), j = ceil(t_e / L) - 1 with L = duration / N, clamped.
inline ClipSpan span_to_clip_indices(std::pair<double, double> span_s, double duration_s, int n) {
    auto [ts, te] = span_s;
    if (!(0.0 <= ts && ts < te && te <= duration_s))
        throw ValidationError("span_to_clip_indices: need 0 <= t_s < t_e <= duration_s, got [" +
                              std::to_string(ts) + ", " + std::to_string(te) + "] with duration " +
                              std::to_string(duration_s));
    if (n < 1) throw ValidationError("span_to_clip_indices: N must be >= 1");
    double clip_len = duration_s / static_cast<double>(n);
    int i = static_cast<int>(std::floor(ts / clip_len));
    int j = static_cast<int>(std::ceil(te / clip_len)) - 1;
    i = std::clamp(i, 0, n - 1);
    j = std::clamp(j, 0, n - 1);
    j = std::max(j, i);
    return ClipSpan{i, j};
}

// Inverse of the clip index mapping for aligned spans: [i*L, (j+1)*L].
inline std::pair<double, double> clip_span_to_seconds(ClipSpan cs, double duration_s, int n) {
    double clip_len = duration_s / static_cast<double>(n);
    return {cs.start * clip_len, (cs.end + 1) * clip_len};
}

// Pads token sequences, applies BERT-style masking (80% MASK, 10% random
// non-reserved id, 10% kept), and stacks visuals. Per-item randomness is
// keyed by query_id, so permuting the items permutes the batch rows and
// nothing else.
inline Batch collate(const std::vector<std::pair<const VideoFeatures*, const Query*>>& items,
                     double mlm_prob, int vocab_size, Rng& rng) {
    if (items.empty()) throw ValidationError("collate: empty batch");
    if (mlm_prob > 0.0 && vocab_size <= kNumReservedIds + 1)
        throw ValidationError("collate: vocab too small for random-token masking");
    Batch b;
    int n_clips = static_cast<int>(items[0].first->features.rows());
    size_t m_max = 0;
    for (auto& [vf, q] : items) {
        if (static_cast<int>(vf->features.rows()) != n_clips)
            throw ValidationError("collate: mixed clip counts across items (" +
                                  std::to_string(vf->features.rows()) + " vs " +
                                  std::to_string(n_clips) + ")");
        m_max = std::max(m_max, q->tokens.size());
    }
    uint64_t session_key = rng.next_u64();
    for (auto& [vf, q] : items) {
        b.visual.push_back(vf->features);
        std::vector<int> ids(m_max, kPadId);
        BoolVec mask(m_max, 0);
        std::vector<int> targets(m_max, -1);
        Rng item_rng(mix64(session_key ^ mix64(hash_str(q->query_id))));
        for (size_t t = 0; t < q->tokens.size(); ++t) {
            int original = q->tokens[t];
            ids[t] = original;
            mask[t] = 1;
            if (mlm_prob > 0.0 && item_rng.uniform() < mlm_prob) {
                targets[t] = original;
                double u = item_rng.uniform();
                if (u < 0.8) {
                    ids[t] = kMaskId;
                } else if (u < 0.9) {
                    ids[t] = static_cast<int>(
                        item_rng.uniform_int(kNumReservedIds, vocab_size - 1));
                }  // else keep the original token
            }
        }
        b.token_ids.push_back(std::move(ids));
        b.token_mask.push_back(std::move(mask));
        b.mlm_targets.push_back(std::move(targets));
        b.spans_s.push_back(q->span_s);
        b.clip_spans.push_back(q->clip_span);
        b.duration_s.push_back(vf->duration_s);
        b.query_ids.push_back(q->query_id);
    }
    return b;
}

// ---- corpus on disk ----
//
// A corpus directory holds manifest.json (video_id -> relative VMRF path),
// embeddings.vmre, and one JSONL annotation file per split.

struct Corpus {
    std::map<std::string, VideoFeatures> videos;  // standardized to n_clips
    std::vector<Query> train;
    std::vector<Query> test;
    EmbeddingTable embeddings;
    int n_clips = 0;

    const std::vector<Query>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "test") return test;
        throw ValidationError("unknown split: " + name);
    }

    const VideoFeatures& video(const std::string& id) const {
        auto it = videos.find(id);
        if (it == videos.end()) throw ValidationError("unknown video_id: " + id);
        return it->second;
    }
};

inline std::vector<Query> load_annotations(const std::string& path,
                                           const std::map<std::string, VideoFeatures>& videos,
                                           int vocab_size, int n_clips) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open annotations: " + path);
    std::vector<Query> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        Query q;
        q.query_id = j.at("query_id").get<std::string>();
        q.video_id = j.at("video_id").get<std::string>();
        q.tokens = j.at("tokens").get<std::vector<int>>();
        auto span = j.at("span_s").get<std::vector<double>>();
        if (span.size() != 2)
            throw FormatError(path + ":" + std::to_string(lineno) + ": span_s must have 2 entries");
        q.span_s = {span[0], span[1]};
        double duration = j.at("duration_s").get<double>();
        if (q.tokens.empty())
            throw ValidationError(q.query_id + ": empty token sequence");
        for (int id : q.tokens) {
            if (id < 0 || id >= vocab_size)
                throw ValidationError(q.query_id + ": token id " + std::to_string(id) +
                                      " outside vocab of size " + std::to_string(vocab_size));
            if (id < kNumReservedIds)
                throw ValidationError(q.query_id + ": reserved token id " + std::to_string(id) +
                                      " in stored annotation");
        }
        auto vit = videos.find(q.video_id);
        if (vit == videos.end())
            throw ValidationError(q.query_id + ": references unknown video " + q.video_id);
        if (std::abs(vit->second.duration_s - duration) > 1e-9)
            throw ValidationError(q.query_id + ": duration mismatch with feature file");
        q.clip_span = span_to_clip_indices(q.span_s, duration, n_clips);
        out.push_back(std::move(q));
    }
    return out;
}

inline Corpus load_corpus(const std::string& dir, int n_clips) {
    namespace fs = std::filesystem;
    Corpus c;
    c.n_clips = n_clips;
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot open manifest: " + dir + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    for (auto& [video_id, rel] : manifest.items()) {
        VideoFeatures vf = load_features((fs::path(dir) / rel.get<std::string>()).string());
        vf.video_id = video_id;
        vf.validate();
        vf.features = standardize_clips(vf.features, n_clips);
        c.videos.emplace(video_id, std::move(vf));
    }
    c.embeddings = load_embeddings(dir + "/embeddings.vmre");
    int vocab = c.embeddings.vocab_size();
    c.train = load_annotations(dir + "/train.jsonl", c.videos, vocab, n_clips);
    c.test = load_annotations(dir + "/test.jsonl", c.videos, vocab, n_clips);
    return c;
}

}  // namespace vmr

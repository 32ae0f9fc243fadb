#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vmr/core/rng.hpp"
#include "vmr/corpus/corpus.hpp"
#include "vmr/corpus/format.hpp"
#include "vmr/corpus/types.hpp"

namespace vmr {

// Clip lengths are drawn from this set so that i*L / L round-trips exactly
// through doubles and planted spans map back to their clip indices bit-for-bit.
inline const std::vector<double>& synth_clip_lengths() {
    static const std::vector<double> lens{1.0, 1.5, 2.0};
    return lens;
}

// Fixed per-token pattern rows; the planted signal for a query is the sum of
// the rows of its tokens, added into feature dims [0, pattern_dim).
inline Mat synth_pattern_table(const SynthSpec& spec) {
    Rng rng = stream_rng(spec.seed, "pattern_table");
    return gaussian_mat(spec.vocab_size, spec.pattern_dim, rng, 0.5);
}

inline Vec synth_pattern_vector(const Mat& pattern_table, const std::vector<int>& tokens) {
    Vec p = Vec::Zero(pattern_table.cols());
    for (int id : tokens) p += pattern_table.row(id).transpose();
    return p;
}

struct SynthExample {
    VideoFeatures video;
    Query query;
};

// Builds one example deterministically from (seed, split, index).
inline SynthExample synth_example(const SynthSpec& spec, const Mat& pattern_table,
                                  const std::string& split, int index) {
    Rng rng = stream_rng(spec.seed, "example_" + split, static_cast<uint64_t>(index));
    SynthExample ex;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), index);
    ex.video.video_id = buf;
    ex.query.video_id = buf;
    ex.query.query_id = std::string("q_") + buf;

    const auto& lens = synth_clip_lengths();
    double clip_len = lens[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(lens.size()) - 1))];
    ex.video.duration_s = clip_len * spec.n_clips;

    int qlen = static_cast<int>(rng.uniform_int(spec.query_len_min, spec.query_len_max));
    ex.query.tokens.resize(static_cast<size_t>(qlen));
    for (int& id : ex.query.tokens)
        id = static_cast<int>(rng.uniform_int(kNumReservedIds, spec.vocab_size - 1));

    int max_width = std::max(2, spec.n_clips / 2);
    int width = static_cast<int>(rng.uniform_int(2, max_width));
    int start = static_cast<int>(rng.uniform_int(0, spec.n_clips - width));
    ex.query.clip_span = ClipSpan{start, start + width - 1};
    ex.query.span_s = clip_span_to_seconds(ex.query.clip_span, ex.video.duration_s, spec.n_clips);

    ex.video.features = gaussian_mat(spec.n_clips, spec.feature_dim, rng, spec.noise_std);
    Vec pattern = synth_pattern_vector(pattern_table, ex.query.tokens);
    for (int c = ex.query.clip_span.start; c <= ex.query.clip_span.end; ++c)
        ex.video.features.row(c).head(spec.pattern_dim) += pattern.transpose();
    return ex;
}

// Writes the corpus: features/<video_id>.vmrf per example, train/test JSONL
// annotations, embeddings.vmre, and manifest.json. Byte-identical per spec.
inline void generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    spec.validate();
    fs::create_directories(fs::path(out_dir) / "features");

    Mat pattern_table = synth_pattern_table(spec);
    nlohmann::json manifest = nlohmann::json::object();

    auto emit_split = [&](const std::string& split, int count) {
        std::ofstream ann(fs::path(out_dir) / (split + ".jsonl"), std::ios::trunc);
        if (!ann) throw IoError("cannot open annotations for writing in " + out_dir);
        for (int i = 0; i < count; ++i) {
            SynthExample ex = synth_example(spec, pattern_table, split, i);
            std::string rel = "features/" + ex.video.video_id + ".vmrf";
            write_features(ex.video, (fs::path(out_dir) / rel).string());
            manifest[ex.video.video_id] = rel;
            nlohmann::json j;
            j["query_id"] = ex.query.query_id;
            j["video_id"] = ex.query.video_id;
            j["duration_s"] = ex.video.duration_s;
            j["tokens"] = ex.query.tokens;
            j["span_s"] = {ex.query.span_s.first, ex.query.span_s.second};
            ann << j.dump() << "\n";
        }
        if (!ann) throw IoError("short write on annotations in " + out_dir);
    };
    emit_split("train", spec.num_train);
    emit_split("test", spec.num_test);

    Rng emb_rng = stream_rng(spec.seed, "embedding_table");
    EmbeddingTable table;
    table.rows = gaussian_mat(spec.vocab_size, spec.embed_dim, emb_rng, 1.0);
    write_embeddings(table, (fs::path(out_dir) / "embeddings.vmre").string());

    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot open manifest for writing in " + out_dir);
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("short write on manifest in " + out_dir);
}

}  // namespace vmr

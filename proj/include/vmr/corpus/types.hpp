#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmr/core/error.hpp"
#include "vmr/core/matrix.hpp"

namespace vmr {

// Reserved vocabulary ids. Stored annotations never contain them.
constexpr int kPadId = 0;
constexpr int kMaskId = 1;
constexpr int kUnkId = 2;
constexpr int kNumReservedIds = 3;

struct ClipSpan {
    int start = 0;  // first clip index
    int end = 0;    // last clip index, inclusive

    bool operator==(const ClipSpan&) const = default;
    int width() const { return end - start + 1; }
};

// Per-video clip feature matrix (raw_clip_count x feature_dim) as stored.
struct VideoFeatures {
    std::string video_id;
    double duration_s = 0.0;
    Mat features;

    void validate() const {
        if (features.rows() < 1 || features.cols() < 1)
            throw ValidationError("VideoFeatures " + video_id + ": empty feature matrix");
        if (!(duration_s > 0.0))
            throw ValidationError("VideoFeatures " + video_id + ": duration_s must be positive");
        if (!all_finite(features))
            throw ValidationError("VideoFeatures " + video_id + ": non-finite feature values");
    }
};

struct Query {
    std::string query_id;
    std::string video_id;
    std::vector<int> tokens;
    std::pair<double, double> span_s{0.0, 0.0};
    ClipSpan clip_span;  // derived via span_to_clip_indices
};

// Frozen word-embedding table (the GloVe stand-in).
struct EmbeddingTable {
    Mat rows;  // vocab_size x embed_dim

    int vocab_size() const { return static_cast<int>(rows.rows()); }
    int embed_dim() const { return static_cast<int>(rows.cols()); }

    void validate() const {
        if (rows.rows() < kNumReservedIds)
            throw ValidationError("EmbeddingTable: vocab must include the reserved ids");
        if (!all_finite(rows)) throw ValidationError("EmbeddingTable: non-finite rows");
    }
};

// One padded training batch. token_mask marks real tokens; mlm_targets hold
// the original id where a token was selected for masked prediction, -1
// elsewhere.
struct Batch {
    std::vector<Mat> visual;                         // B of N_clips x D_in
    std::vector<std::vector<int>> token_ids;         // B x M_max
    std::vector<BoolVec> token_mask;                 // B x M_max
    std::vector<std::vector<int>> mlm_targets;       // B x M_max
    std::vector<std::pair<double, double>> spans_s;  // B
    std::vector<ClipSpan> clip_spans;                // B
    std::vector<double> duration_s;                  // B
    std::vector<std::string> query_ids;              // B

    int size() const { return static_cast<int>(visual.size()); }
    int max_tokens() const { return visual.empty() ? 0 : static_cast<int>(token_ids[0].size()); }
    int n_clips() const { return visual.empty() ? 0 : static_cast<int>(visual[0].rows()); }
};

// Recipe for the synthetic corpus generator.
struct SynthSpec {
    uint64_t seed = 0;
    int num_train = 1;
    int num_test = 1;
    int n_clips = 32;
    int vocab_size = 120;
    int feature_dim = 64;
    int embed_dim = 32;
    int query_len_min = 4;
    int query_len_max = 10;
    double noise_std = 0.1;
    int pattern_dim = 16;

    void validate() const {
        if (num_train < 1 || num_test < 1) throw ValidationError("SynthSpec: counts must be >= 1");
        if (pattern_dim > feature_dim)
            throw ValidationError("SynthSpec: pattern_dim exceeds feature_dim");
        if (pattern_dim < 1 || feature_dim < 1 || n_clips < 1)
            throw ValidationError("SynthSpec: dimensions must be >= 1");
        if (vocab_size <= kNumReservedIds)
            throw ValidationError("SynthSpec: vocab_size must exceed the reserved ids");
        if (query_len_min < 1 || query_len_max < query_len_min)
            throw ValidationError("SynthSpec: bad query length range");
        if (noise_std < 0.0) throw ValidationError("SynthSpec: noise_std must be >= 0");
        if (n_clips < 4)
            throw ValidationError("SynthSpec: n_clips must be >= 4 so plantable spans exist");
    }
};

}  // namespace vmr

#pragma once

#include <string>
#include <vector>

#include "vmr/core/param.hpp"
#include "vmr/core/tape.hpp"
#include "vmr/corpus/types.hpp"

namespace vmr {

// Input projections shared by both streams: clip features and token
// embeddings are mapped into a common d_model space, then tagged with
// learned positional and modality rows.
struct EmbedParams {
    Param* w_v = nullptr;   // (d x d_in)
    Param* b_v = nullptr;   // (1 x d)
    Param* w_t = nullptr;   // (d x d_e)
    Param* b_t = nullptr;   // (1 x d)
    Param* pos_v = nullptr;  // (max_video_len x d)
    Param* pos_t = nullptr;  // (max_text_len x d)
    Param* mod_v = nullptr;  // (1 x d)
    Param* mod_t = nullptr;  // (1 x d)
};

inline EmbedParams make_embed(ParamSet& ps, int d, int d_in, int d_e, int max_video_len,
                              int max_text_len, Rng& rng) {
    EmbedParams e;
    e.w_v = ps.add_gaussian("embed.w_v", d, d_in, rng);
    e.b_v = ps.add("embed.b_v", 1, d);
    e.w_t = ps.add_gaussian("embed.w_t", d, d_e, rng);
    e.b_t = ps.add("embed.b_t", 1, d);
    e.pos_v = ps.add_gaussian("embed.pos_v", max_video_len, d, rng);
    e.pos_t = ps.add_gaussian("embed.pos_t", max_text_len, d, rng);
    e.mod_v = ps.add_gaussian("embed.mod_v", 1, d, rng);
    e.mod_t = ps.add_gaussian("embed.mod_t", 1, d, rng);
    return e;
}

// clip_features: (n x d_in) standardized clip rows for one video.
inline Node* embed_visual(Tape& t, const EmbedParams& e, const Mat& clip_features) {
    const Eigen::Index n = clip_features.rows();
    if (n > e.pos_v->value.rows())
        throw ValidationError("embed: video length exceeds max_video_len");
    Node* x = t.linear(t.input(clip_features), t.use(*e.w_v), t.use(*e.b_v));
    x = t.add(x, t.slice_rows(t.use(*e.pos_v), 0, n));
    return t.add_rowvec(x, t.use(*e.mod_v));
}

// token_ids index into a fixed (non-trainable) embedding table from the
// corpus; only the projection on top of it is learned.
inline Node* embed_text(Tape& t, const EmbedParams& e, const EmbeddingTable& table,
                        const std::vector<int>& token_ids) {
    const Eigen::Index m = static_cast<Eigen::Index>(token_ids.size());
    if (m == 0) throw ValidationError("embed: empty token sequence");
    if (m > e.pos_t->value.rows())
        throw ValidationError("embed: text length exceeds max_text_len");
    Mat gathered(m, table.embed_dim());
    for (Eigen::Index i = 0; i < m; ++i) {
        int id = token_ids[i];
        if (id < 0 || id >= table.vocab_size())
            throw ValidationError("embed: token id out of range");
        gathered.row(i) = table.rows.row(id);
    }
    Node* x = t.linear(t.input(std::move(gathered)), t.use(*e.w_t), t.use(*e.b_t));
    x = t.add(x, t.slice_rows(t.use(*e.pos_t), 0, m));
    return t.add_rowvec(x, t.use(*e.mod_t));
}

inline int64_t embed_param_count(int d, int d_in, int d_e, int max_video_len, int max_text_len) {
    return static_cast<int64_t>(d) * (d_in + d_e + 2) +
           static_cast<int64_t>(max_video_len + max_text_len + 2) * d;
}

}  // namespace vmr

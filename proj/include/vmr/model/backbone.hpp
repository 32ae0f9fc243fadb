#pragma once

#include <string>
#include <vector>

#include "vmr/model/attention.hpp"

namespace vmr {

struct LayerNormParams {
    Param* gamma = nullptr;  // (1 x d)
    Param* beta = nullptr;   // (1 x d)
};

inline LayerNormParams make_ln(ParamSet& ps, const std::string& prefix, int d) {
    LayerNormParams ln;
    ln.gamma = ps.add_constant(prefix + ".gamma", 1, d, 1.0);
    ln.beta = ps.add(prefix + ".beta", 1, d);
    return ln;
}

struct FfnParams {
    Param* w1 = nullptr;  // (h x d)
    Param* b1 = nullptr;  // (1 x h)
    Param* w2 = nullptr;  // (d x h)
    Param* b2 = nullptr;  // (1 x d)
};

inline FfnParams make_ffn(ParamSet& ps, const std::string& prefix, int d, int h, Rng& rng) {
    FfnParams f;
    f.w1 = ps.add_gaussian(prefix + ".w1", h, d, rng);
    f.b1 = ps.add(prefix + ".b1", 1, h);
    f.w2 = ps.add_gaussian(prefix + ".w2", d, h, rng);
    f.b2 = ps.add(prefix + ".b2", 1, d);
    return f;
}

// Asymmetric co-attention: the text stream self-attends, then reads from
// the visual stream, then passes its feed-forward. The visual stream is
// returned untouched (the same graph node that came in).
struct AcbParams {
    LayerNormParams ln_self;
    MhaParams self_attn;
    LayerNormParams ln_cross;
    MhaParams cross_attn;
    LayerNormParams ln_ffn;
    FfnParams ffn;
};

inline AcbParams make_acb(ParamSet& ps, const std::string& prefix, int d, int h, Rng& rng) {
    AcbParams a;
    a.ln_self = make_ln(ps, prefix + ".ln_self", d);
    a.self_attn = make_mha(ps, prefix + ".self_attn", d, rng);
    a.ln_cross = make_ln(ps, prefix + ".ln_cross", d);
    a.cross_attn = make_mha(ps, prefix + ".cross_attn", d, rng);
    a.ln_ffn = make_ln(ps, prefix + ".ln_ffn", d);
    a.ffn = make_ffn(ps, prefix + ".ffn", d, h, rng);
    return a;
}

// Co-attention block: visual and text rows are stacked into one joint
// sequence, self-attend together, then split back apart.
struct CabParams {
    LayerNormParams ln_attn;
    MhaParams attn;
    LayerNormParams ln_ffn;
    FfnParams ffn;
};

inline CabParams make_cab(ParamSet& ps, const std::string& prefix, int d, int h, Rng& rng) {
    CabParams c;
    c.ln_attn = make_ln(ps, prefix + ".ln_attn", d);
    c.attn = make_mha(ps, prefix + ".attn", d, rng);
    c.ln_ffn = make_ln(ps, prefix + ".ln_ffn", d);
    c.ffn = make_ffn(ps, prefix + ".ffn", d, h, rng);
    return c;
}

struct StreamPair {
    Node* visual = nullptr;
    Node* text = nullptr;
};

inline Node* ffn_forward(Tape& t, const FfnParams& f, Node* x) {
    Node* h = t.gelu(t.linear(x, t.use(*f.w1), t.use(*f.b1)));
    return t.linear(h, t.use(*f.w2), t.use(*f.b2));
}

inline Node* pre_ln(Tape& t, const LayerNormParams& ln, Node* x) {
    return t.layer_norm(x, t.use(*ln.gamma), t.use(*ln.beta));
}

inline StreamPair acb_forward(Tape& t, const AcbParams& p, StreamPair in,
                              const BoolVec& visual_valid, const BoolVec& text_valid,
                              int n_heads, double dropout_p, Rng* drop_rng) {
    Node* text = in.text;
    Node* normed = pre_ln(t, p.ln_self, text);
    Node* sa = attention_forward(t, p.self_attn, normed, normed, text_valid, n_heads);
    text = t.add(text, t.dropout(sa, dropout_p, drop_rng));
    Node* ca = attention_forward(t, p.cross_attn, pre_ln(t, p.ln_cross, text), in.visual,
                                 visual_valid, n_heads);
    text = t.add(text, t.dropout(ca, dropout_p, drop_rng));
    Node* ff = ffn_forward(t, p.ffn, pre_ln(t, p.ln_ffn, text));
    text = t.add(text, t.dropout(ff, dropout_p, drop_rng));
    return {in.visual, text};
}

inline StreamPair cab_forward(Tape& t, const CabParams& p, StreamPair in,
                              const BoolVec& visual_valid, const BoolVec& text_valid,
                              int n_heads, double dropout_p, Rng* drop_rng) {
    const Eigen::Index nv = in.visual->val.rows();
    const Eigen::Index nt = in.text->val.rows();
    Node* joint = t.vstack({in.visual, in.text});
    BoolVec joint_valid(visual_valid.begin(), visual_valid.end());
    joint_valid.insert(joint_valid.end(), text_valid.begin(), text_valid.end());
    Node* normed = pre_ln(t, p.ln_attn, joint);
    Node* sa = attention_forward(t, p.attn, normed, normed, joint_valid, n_heads);
    joint = t.add(joint, t.dropout(sa, dropout_p, drop_rng));
    Node* ff = ffn_forward(t, p.ffn, pre_ln(t, p.ln_ffn, joint));
    joint = t.add(joint, t.dropout(ff, dropout_p, drop_rng));
    return {t.slice_rows(joint, 0, nv), t.slice_rows(joint, nv, nt)};
}

// Full two-stream stack: each block applies `stride` asymmetric
// co-attention layers (skipped entirely when use_acb is false) followed
// by one joint block, then both streams get a final normalization.
struct BackboneParams {
    std::vector<AcbParams> acbs;  // n_blocks * stride when enabled, else empty
    std::vector<CabParams> cabs;  // n_blocks
    LayerNormParams ln_v_final;
    LayerNormParams ln_t_final;
};

inline BackboneParams make_backbone(ParamSet& ps, int n_blocks, int stride, bool use_acb, int d,
                                    int h, Rng& rng) {
    BackboneParams b;
    for (int blk = 0; blk < n_blocks; ++blk) {
        if (use_acb) {
            for (int s = 0; s < stride; ++s) {
                b.acbs.push_back(make_acb(
                    ps, "backbone.block" + std::to_string(blk) + ".acb" + std::to_string(s), d, h,
                    rng));
            }
        }
        b.cabs.push_back(make_cab(ps, "backbone.block" + std::to_string(blk) + ".cab", d, h, rng));
    }
    b.ln_v_final = make_ln(ps, "backbone.ln_v_final", d);
    b.ln_t_final = make_ln(ps, "backbone.ln_t_final", d);
    return b;
}

inline StreamPair backbone_forward(Tape& t, const BackboneParams& p, StreamPair in,
                                   const BoolVec& visual_valid, const BoolVec& text_valid,
                                   int n_heads, double dropout_p, Rng* drop_rng) {
    const bool use_acb = !p.acbs.empty();
    const int n_blocks = static_cast<int>(p.cabs.size());
    const int stride = use_acb ? static_cast<int>(p.acbs.size()) / n_blocks : 0;
    StreamPair cur = in;
    for (int blk = 0; blk < n_blocks; ++blk) {
        for (int s = 0; s < stride; ++s)
            cur = acb_forward(t, p.acbs[blk * stride + s], cur, visual_valid, text_valid, n_heads,
                              dropout_p, drop_rng);
        cur = cab_forward(t, p.cabs[blk], cur, visual_valid, text_valid, n_heads, dropout_p,
                          drop_rng);
    }
    cur.visual = pre_ln(t, p.ln_v_final, cur.visual);
    cur.text = pre_ln(t, p.ln_t_final, cur.text);
    return cur;
}

inline int64_t acb_param_count(int d, int h) {
    return 8LL * d * d + 2LL * d * h + 15LL * d + h;
}

inline int64_t cab_param_count(int d, int h) {
    return 4LL * d * d + 2LL * d * h + 9LL * d + h;
}

inline int64_t backbone_param_count(int n_blocks, int stride, bool use_acb, int d, int h) {
    int64_t per_block = cab_param_count(d, h);
    if (use_acb) per_block += static_cast<int64_t>(stride) * acb_param_count(d, h);
    return n_blocks * per_block + 4LL * d;
}

// Masked-token prediction head over the final text stream.
struct MlmHead {
    Param* w = nullptr;  // (vocab x d)
    Param* b = nullptr;  // (1 x vocab)
};

inline MlmHead make_mlm_head(ParamSet& ps, int vocab, int d, Rng& rng) {
    MlmHead m;
    m.w = ps.add_gaussian("mlm_head.w", vocab, d, rng);
    m.b = ps.add("mlm_head.b", 1, vocab);
    return m;
}

// text_latents: final text rows for one item; mlm_targets aligned with
// those rows, -1 where the position was not masked. Returns the pair
// (sum of per-position cross-entropies, number of masked positions); the
// node is null when nothing is masked.
struct MlmItemLoss {
    Node* sum = nullptr;
    int count = 0;
};

inline MlmItemLoss mlm_item_loss(Tape& t, const MlmHead& head, Node* text_latents,
                                 const std::vector<int>& mlm_targets) {
    const int vocab = static_cast<int>(head.w->value.rows());
    std::vector<int> positions;
    std::vector<int> targets;
    for (size_t i = 0; i < mlm_targets.size(); ++i) {
        int tgt = mlm_targets[i];
        if (tgt < 0) continue;
        if (tgt >= vocab) throw ValidationError("mlm: target id out of vocab range");
        positions.push_back(static_cast<int>(i));
        targets.push_back(tgt);
    }
    MlmItemLoss out;
    out.count = static_cast<int>(positions.size());
    if (out.count == 0) return out;
    Node* rows = t.gather_rows(text_latents, positions);
    Node* logits = t.linear(rows, t.use(*head.w), t.use(*head.b));
    Node* mean = t.cross_entropy_index(logits, targets);
    out.sum = t.scale(mean, static_cast<double>(out.count));
    return out;
}

}  // namespace vmr

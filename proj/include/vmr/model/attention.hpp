#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vmr/core/param.hpp"
#include "vmr/core/tape.hpp"

namespace vmr {

// Multi-head attention parameters. Weight matrices are (out x in) as
// consumed by Tape::linear; biases are (1 x out).
struct MhaParams {
    Param* wq = nullptr;
    Param* bq = nullptr;
    Param* wk = nullptr;
    Param* bk = nullptr;
    Param* wv = nullptr;
    Param* bv = nullptr;
    Param* wo = nullptr;
    Param* bo = nullptr;
};

inline MhaParams make_mha(ParamSet& ps, const std::string& prefix, int d, Rng& rng) {
    MhaParams m;
    m.wq = ps.add_gaussian(prefix + ".wq", d, d, rng);
    m.bq = ps.add(prefix + ".bq", 1, d);
    m.wk = ps.add_gaussian(prefix + ".wk", d, d, rng);
    m.bk = ps.add(prefix + ".bk", 1, d);
    m.wv = ps.add_gaussian(prefix + ".wv", d, d, rng);
    m.bv = ps.add(prefix + ".bv", 1, d);
    m.wo = ps.add_gaussian(prefix + ".wo", d, d, rng);
    m.bo = ps.add(prefix + ".bo", 1, d);
    return m;
}

// Scaled dot-product attention over already-embedded rows.
// q_in: (Tq x d), kv_in: (Tk x d), key_valid: size Tk; invalid keys get
// zero attention weight in every query row.
inline Node* attention_forward(Tape& t, const MhaParams& p, Node* q_in, Node* kv_in,
                               const BoolVec& key_valid, int n_heads) {
    const Eigen::Index d = q_in->val.cols();
    if (kv_in->val.cols() != d) throw ValidationError("attention: dim mismatch");
    if (static_cast<Eigen::Index>(key_valid.size()) != kv_in->val.rows())
        throw ValidationError("attention: key_valid size mismatch");
    if (d % n_heads != 0) throw ValidationError("attention: d not divisible by n_heads");
    const Eigen::Index dh = d / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Node* q = t.linear(q_in, t.use(*p.wq), t.use(*p.bq));
    Node* k = t.linear(kv_in, t.use(*p.wk), t.use(*p.bk));
    Node* v = t.linear(kv_in, t.use(*p.wv), t.use(*p.bv));

    std::vector<Node*> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Node* qh = t.slice_cols(q, h * dh, dh);
        Node* kh = t.slice_cols(k, h * dh, dh);
        Node* vh = t.slice_cols(v, h * dh, dh);
        Node* scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
        Node* probs = t.softmax_rows_masked(scores, key_valid);
        heads.push_back(t.matmul(probs, vh));
    }
    Node* cat = n_heads == 1 ? heads[0] : t.hstack(heads);
    return t.linear(cat, t.use(*p.wo), t.use(*p.bo));
}

}  // namespace vmr

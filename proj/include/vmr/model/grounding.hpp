#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vmr/core/param.hpp"
#include "vmr/core/tape.hpp"
#include "vmr/corpus/corpus.hpp"

namespace vmr {

// Inclusive clip-index span candidate [i, j].
struct Candidate {
    int i = 0;
    int j = 0;
};

// All upper-triangular spans in row-major order: (0,0), (0,1), ...,
// (0,n-1), (1,1), ..., (n-1,n-1). Count is n(n+1)/2.
inline std::vector<Candidate> enumerate_candidates(int n) {
    if (n < 1) throw ValidationError("enumerate_candidates: n must be >= 1");
    std::vector<Candidate> out;
    out.reserve(static_cast<size_t>(n) * (n + 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) out.push_back({i, j});
    return out;
}

// Overlap between two inclusive clip-index spans.
inline double candidate_iou(int i1, int j1, int i2, int j2) {
    int inter = std::min(j1, j2) - std::max(i1, i2) + 1;
    if (inter < 0) inter = 0;
    int uni = (j1 - i1 + 1) + (j2 - i2 + 1) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Scaled overlap targets: linear ramp from t_min to t_max, clamped to
// [0, 1]. Overlap at or below t_min contributes a zero target.
inline Vec iou_targets(const std::vector<Candidate>& cands, const ClipSpan& gt, double t_min,
                       double t_max) {
    if (!(t_min < t_max)) throw ValidationError("iou_targets: t_min must be < t_max");
    Vec out(static_cast<Eigen::Index>(cands.size()));
    for (size_t c = 0; c < cands.size(); ++c) {
        double iou = candidate_iou(cands[c].i, cands[c].j, gt.start, gt.end);
        double t = (iou - t_min) / (t_max - t_min);
        out(static_cast<Eigen::Index>(c)) = std::clamp(t, 0.0, 1.0);
    }
    return out;
}

// Probability-space matching loss: mean binary cross-entropy between
// predicted scores in [0, 1] and soft targets. A prediction equal to a
// hard target costs (numerically) nothing.
inline double matching_loss_value(const Vec& scores, const Vec& targets) {
    if (scores.size() != targets.size()) throw ValidationError("matching_loss: size mismatch");
    if (scores.size() == 0) throw ValidationError("matching_loss: empty");
    double total = 0.0;
    for (Eigen::Index k = 0; k < scores.size(); ++k) {
        double p = scores(k);
        double y = targets(k);
        if (p < 0.0 || p > 1.0) throw ValidationError("matching_loss: score outside [0, 1]");
        total -= y * std::log(p + 1e-12) + (1.0 - y) * std::log(1.0 - p + 1e-12);
    }
    return total / static_cast<double>(scores.size());
}

inline double smooth_l1(double r) {
    double a = std::abs(r);
    return a < 1.0 ? 0.5 * r * r : a - 0.5;
}

// Raw (unscaled) overlap of every candidate with the ground-truth span.
inline Vec raw_iou_map(const std::vector<Candidate>& cands, const ClipSpan& gt) {
    Vec out(static_cast<Eigen::Index>(cands.size()));
    for (size_t c = 0; c < cands.size(); ++c)
        out(static_cast<Eigen::Index>(c)) = candidate_iou(cands[c].i, cands[c].j, gt.start, gt.end);
    return out;
}

// Boundary regression loss. offsets (C x 2) hold per-candidate start and
// end corrections in seconds. For every candidate whose raw overlap is
// at least pos_threshold, the corrected boundaries are compared against
// the ground-truth seconds, each residual normalized by duration and put
// through smooth-L1; the per-candidate cost is the sum of the start and
// end terms, averaged over positives. No positives means zero cost.
inline double boundary_loss_value(const Mat& offsets, const std::vector<Candidate>& cands,
                                  double gt_ts, double gt_te, const Vec& raw_iou,
                                  double pos_threshold, double duration_s, int n_clips) {
    if (offsets.rows() != static_cast<Eigen::Index>(cands.size()) || offsets.cols() != 2 ||
        raw_iou.size() != offsets.rows())
        throw ValidationError("boundary_loss: shape mismatch");
    if (!(duration_s > 0.0)) throw ValidationError("boundary_loss: duration must be positive");
    double total = 0.0;
    int positives = 0;
    for (size_t c = 0; c < cands.size(); ++c) {
        if (raw_iou(static_cast<Eigen::Index>(c)) < pos_threshold) continue;
        auto [cs, ce] = clip_span_to_seconds({cands[c].i, cands[c].j}, duration_s, n_clips);
        double rs = (cs + offsets(static_cast<Eigen::Index>(c), 0) - gt_ts) / duration_s;
        double re = (ce + offsets(static_cast<Eigen::Index>(c), 1) - gt_te) / duration_s;
        total += smooth_l1(rs) + smooth_l1(re);
        ++positives;
    }
    return positives == 0 ? 0.0 : total / static_cast<double>(positives);
}

// Stage-specific transforms: three small MLPs produce begin, middle and
// end views of the clip latents; a candidate's feature is the begin row
// at i, the mean middle row over [i, j], and the end row at j.
struct StageMlp {
    Param* w1 = nullptr;  // (d x d)
    Param* b1 = nullptr;
    Param* w2 = nullptr;  // (d x d)
    Param* b2 = nullptr;
};

inline StageMlp make_stage_mlp(ParamSet& ps, const std::string& prefix, int d, Rng& rng) {
    StageMlp s;
    s.w1 = ps.add_gaussian(prefix + ".w1", d, d, rng);
    s.b1 = ps.add(prefix + ".b1", 1, d);
    s.w2 = ps.add_gaussian(prefix + ".w2", d, d, rng);
    s.b2 = ps.add(prefix + ".b2", 1, d);
    return s;
}

struct MsaParams {
    StageMlp begin;
    StageMlp middle;
    StageMlp end;
};

inline MsaParams make_msa(ParamSet& ps, int d, Rng& rng) {
    MsaParams m;
    m.begin = make_stage_mlp(ps, "msa.begin", d, rng);
    m.middle = make_stage_mlp(ps, "msa.middle", d, rng);
    m.end = make_stage_mlp(ps, "msa.end", d, rng);
    return m;
}

inline int64_t msa_param_count(int d) { return 3LL * (2LL * d * d + 2LL * d); }

struct StageViews {
    Node* begin = nullptr;   // (n x d)
    Node* middle = nullptr;  // (n x d)
    Node* end = nullptr;     // (n x d)
};

inline Node* stage_mlp_forward(Tape& t, const StageMlp& s, Node* x) {
    Node* h = t.gelu(t.linear(x, t.use(*s.w1), t.use(*s.b1)));
    return t.linear(h, t.use(*s.w2), t.use(*s.b2));
}

inline StageViews msa_forward(Tape& t, const MsaParams& p, Node* visual_latents) {
    StageViews v;
    v.begin = stage_mlp_forward(t, p.begin, visual_latents);
    v.middle = stage_mlp_forward(t, p.middle, visual_latents);
    v.end = stage_mlp_forward(t, p.end, visual_latents);
    return v;
}

// (C x 3d) candidate features from the three stage views.
inline Node* proposal_features(Tape& t, const StageViews& views,
                               const std::vector<Candidate>& cands) {
    std::vector<int> is, js;
    std::vector<std::pair<int, int>> ranges;
    is.reserve(cands.size());
    js.reserve(cands.size());
    ranges.reserve(cands.size());
    for (const auto& c : cands) {
        is.push_back(c.i);
        js.push_back(c.j);
        ranges.emplace_back(c.i, c.j);
    }
    Node* b = t.gather_rows(views.begin, is);
    Node* m = t.row_range_means(views.middle, ranges);
    Node* e = t.gather_rows(views.end, js);
    return t.hstack({b, m, e});
}

// Scoring head: (3d -> d -> 3) where the three outputs per candidate are
// a match logit and a (start, end) offset pair in seconds.
struct ProposalHead {
    Param* w1 = nullptr;  // (d x 3d)
    Param* b1 = nullptr;  // (1 x d)
    Param* w2 = nullptr;  // (3 x d)
    Param* b2 = nullptr;  // (1 x 3)
};

inline ProposalHead make_proposal_head(ParamSet& ps, int d, Rng& rng) {
    ProposalHead h;
    h.w1 = ps.add_gaussian("proposal_head.w1", d, 3 * d, rng);
    h.b1 = ps.add("proposal_head.b1", 1, d);
    h.w2 = ps.add_gaussian("proposal_head.w2", 3, d, rng);
    h.b2 = ps.add("proposal_head.b2", 1, 3);
    return h;
}

inline int64_t proposal_head_param_count(int d) { return 3LL * d * d + 4LL * d + 3; }

struct ProposalOutputs {
    Node* logits = nullptr;   // (C x 1)
    Node* offsets = nullptr;  // (C x 2)
};

inline ProposalOutputs proposal_head_forward(Tape& t, const ProposalHead& head, Node* feats) {
    Node* h = t.gelu(t.linear(feats, t.use(*head.w1), t.use(*head.b1)));
    Node* out = t.linear(h, t.use(*head.w2), t.use(*head.b2));
    ProposalOutputs o;
    o.logits = t.slice_cols(out, 0, 1);
    o.offsets = t.slice_cols(out, 1, 2);
    return o;
}

// Dense n x n view of per-candidate values; only the upper triangle is
// meaningful.
struct TemporalMap2D {
    int n = 0;
    Mat scores;
    Mat off_s;
    Mat off_e;
    std::vector<uint8_t> valid;  // row-major n*n

    bool is_valid(int i, int j) const { return valid[static_cast<size_t>(i) * n + j] != 0; }
};

inline TemporalMap2D build_temporal_map(int n, const std::vector<Candidate>& cands,
                                        const Vec& scores, const Mat& offsets) {
    if (static_cast<Eigen::Index>(cands.size()) != scores.size() ||
        scores.size() != offsets.rows() || offsets.cols() != 2)
        throw ValidationError("temporal_map: candidate count mismatch");
    TemporalMap2D m;
    m.n = n;
    m.scores = Mat::Zero(n, n);
    m.off_s = Mat::Zero(n, n);
    m.off_e = Mat::Zero(n, n);
    m.valid.assign(static_cast<size_t>(n) * n, 0);
    for (size_t c = 0; c < cands.size(); ++c) {
        int i = cands[c].i;
        int j = cands[c].j;
        if (i < 0 || j < i || j >= n) throw ValidationError("temporal_map: candidate out of range");
        m.scores(i, j) = scores(static_cast<Eigen::Index>(c));
        m.off_s(i, j) = offsets(static_cast<Eigen::Index>(c), 0);
        m.off_e(i, j) = offsets(static_cast<Eigen::Index>(c), 1);
        m.valid[static_cast<size_t>(i) * n + j] = 1;
    }
    return m;
}

struct Proposal {
    double ts = 0.0;
    double te = 0.0;
    double score = 0.0;
    int i = 0;
    int j = 0;
};

// Ranked decoding: candidates sorted by score descending (ties prefer
// smaller i, then smaller j), boundary offsets applied in seconds and
// clamped to [0, duration], degenerate regressed spans fall back to the
// raw span, then greedy suppression drops any span overlapping an
// already-kept one above nms_threshold. At most top_k survivors return.
inline std::vector<Proposal> decode_proposals(const std::vector<Candidate>& cands,
                                              const Vec& scores, const Mat& offsets,
                                              double duration_s, int n_clips,
                                              double nms_threshold, int top_k) {
    if (static_cast<Eigen::Index>(cands.size()) != scores.size() ||
        scores.size() != offsets.rows() || offsets.cols() != 2)
        throw ValidationError("decode: candidate count mismatch");
    if (top_k < 1) throw ValidationError("decode: top_k must be >= 1");

    std::vector<size_t> order(cands.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        double sa = scores(static_cast<Eigen::Index>(a));
        double sb = scores(static_cast<Eigen::Index>(b));
        if (sa != sb) return sa > sb;
        if (cands[a].i != cands[b].i) return cands[a].i < cands[b].i;
        return cands[a].j < cands[b].j;
    });

    auto span_iou = [](double s1, double e1, double s2, double e2) {
        double inter = std::min(e1, e2) - std::max(s1, s2);
        if (inter < 0.0) inter = 0.0;
        double uni = (e1 - s1) + (e2 - s2) - inter;
        return inter / uni;
    };

    std::vector<Proposal> kept;
    for (size_t k : order) {
        if (static_cast<int>(kept.size()) >= top_k) break;
        const Candidate& c = cands[k];
        auto [bs, be] = clip_span_to_seconds({c.i, c.j}, duration_s, n_clips);
        double ts = bs + offsets(static_cast<Eigen::Index>(k), 0);
        double te = be + offsets(static_cast<Eigen::Index>(k), 1);
        ts = std::clamp(ts, 0.0, duration_s);
        te = std::clamp(te, 0.0, duration_s);
        if (!(ts < te)) {
            ts = std::clamp(bs, 0.0, duration_s);
            te = std::clamp(be, 0.0, duration_s);
        }
        bool suppressed = false;
        for (const auto& p : kept) {
            if (span_iou(ts, te, p.ts, p.te) > nms_threshold) {
                suppressed = true;
                break;
            }
        }
        if (suppressed) continue;
        kept.push_back({ts, te, scores(static_cast<Eigen::Index>(k)), c.i, c.j});
    }
    return kept;
}

}  // namespace vmr

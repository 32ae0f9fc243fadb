#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "vmr/core/matrix.hpp"
#include "vmr/core/param.hpp"
#include "vmr/core/tape.hpp"

namespace vmr {

// Contrastive alignment heads: two linear projections into a shared
// d_c-dimensional space plus a learned temperature. The temperature is a
// real parameter but is projected back into [0.01, 1] after every
// optimizer step rather than constrained inside the graph.
struct VtcParams {
    Param* gv_w = nullptr;  // (d_c x d)
    Param* gv_b = nullptr;  // (1 x d_c)
    Param* gw_w = nullptr;  // (d_c x d)
    Param* gw_b = nullptr;  // (1 x d_c)
    Param* tau = nullptr;   // (1 x 1)
};

inline VtcParams make_vtc(ParamSet& ps, int d, int d_c, double tau_init, Rng& rng) {
    VtcParams v;
    v.gv_w = ps.add_gaussian("vtc.g_v.w", d_c, d, rng);
    v.gv_b = ps.add("vtc.g_v.b", 1, d_c);
    v.gw_w = ps.add_gaussian("vtc.g_w.w", d_c, d, rng);
    v.gw_b = ps.add("vtc.g_w.b", 1, d_c);
    v.tau = ps.add_constant("vtc.tau", 1, 1, tau_init);
    return v;
}

inline int64_t vtc_param_count(int d, int d_c) { return 2LL * (d_c * d + d_c) + 1; }

inline void clamp_tau(Param& tau) {
    double v = tau.value(0, 0);
    if (v < 0.01) tau.value(0, 0) = 0.01;
    if (v > 1.0) tau.value(0, 0) = 1.0;
}

// Fixed-capacity FIFO of unit-norm feature rows backed by a ring buffer.
// contents() presents the rows oldest-first.
class FeatureQueue {
   public:
    FeatureQueue(int capacity, int dim) : buffer_(capacity, dim) {
        if (capacity < 1 || dim < 1) throw ValidationError("queue: capacity and dim must be >= 1");
        buffer_.setZero();
    }

    void push(const Mat& rows) {
        if (rows.cols() != buffer_.cols()) throw ValidationError("queue: feature dim mismatch");
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            double norm = rows.row(r).norm();
            if (std::abs(norm - 1.0) > 1e-4)
                throw ValidationError("queue: row " + std::to_string(r) +
                                      " is not unit-norm (|x| = " + std::to_string(norm) + ")");
            buffer_.row(cursor_) = rows.row(r);
            cursor_ = (cursor_ + 1) % static_cast<int>(buffer_.rows());
            if (size_ < buffer_.rows()) ++size_;
        }
        ++push_count_;
    }

    Mat contents() const {
        Mat out(size_, buffer_.cols());
        if (size_ < buffer_.rows()) {
            out = buffer_.topRows(size_);
        } else {
            const Eigen::Index cap = buffer_.rows();
            out.topRows(cap - cursor_) = buffer_.bottomRows(cap - cursor_);
            out.bottomRows(cursor_) = buffer_.topRows(cursor_);
        }
        return out;
    }
    int size() const { return static_cast<int>(size_); }
    int capacity() const { return static_cast<int>(buffer_.rows()); }
    int dim() const { return static_cast<int>(buffer_.cols()); }
    int64_t push_count() const { return push_count_; }

    int cursor() const { return cursor_; }

    // Rebuilds the ring from an oldest-first snapshot (what contents()
    // returned when the state was saved).
    void restore(const Mat& oldest_first, int cursor, int64_t pushes) {
        const Eigen::Index cap = buffer_.rows();
        const Eigen::Index size = oldest_first.rows();
        if (oldest_first.cols() != buffer_.cols() || size > cap)
            throw ValidationError("queue: restore shape mismatch");
        if (cursor < 0 || cursor >= cap || (size < cap && cursor != size))
            throw ValidationError("queue: restore cursor inconsistent");
        buffer_.setZero();
        if (size < cap) {
            buffer_.topRows(size) = oldest_first;
        } else {
            buffer_.bottomRows(cap - cursor) = oldest_first.topRows(cap - cursor);
            buffer_.topRows(cursor) = oldest_first.bottomRows(cursor);
        }
        size_ = size;
        cursor_ = cursor;
        push_count_ = pushes;
    }

   private:
    Mat buffer_;
    Eigen::Index size_ = 0;
    int cursor_ = 0;
    int64_t push_count_ = 0;
};

// Exponential-moving-average copies of a subset of the parameters. The
// shadows start as exact copies and trail the live values after every
// update; they are read with plain matrix math, never through a tape.
class MomentumShadow {
   public:
    void track(Param* p) {
        if (index_.count(p->name)) throw ValidationError("shadow: duplicate param " + p->name);
        index_[p->name] = srcs_.size();
        srcs_.push_back(p);
        vals_.push_back(p->value);
    }

    void update(double m) {
        for (size_t i = 0; i < srcs_.size(); ++i)
            vals_[i] = m * vals_[i] + (1.0 - m) * srcs_[i]->value;
    }

    const Mat& val(const Param* p) const { return val(p->name); }

    const Mat& val(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("shadow: unknown param " + name);
        return vals_[it->second];
    }

    void restore(const std::string& name, Mat v) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("shadow: unknown param " + name);
        if (v.rows() != vals_[it->second].rows() || v.cols() != vals_[it->second].cols())
            throw ValidationError("shadow: restore shape mismatch for " + name);
        vals_[it->second] = std::move(v);
    }

    const std::vector<Param*>& tracked() const { return srcs_; }
    size_t size() const { return srcs_.size(); }

   private:
    std::vector<Param*> srcs_;
    std::vector<Mat> vals_;
    std::unordered_map<std::string, size_t> index_;
};

// Row-wise softmax over scaled similarities: feats (B x d_c) against
// candidates (C x d_c), both unit-norm, temperature tau.
inline Mat similarity_distribution(const Mat& feats, const Mat& cands, double tau) {
    if (feats.cols() != cands.cols()) throw ValidationError("similarity: dim mismatch");
    if (tau <= 0.0) throw ValidationError("similarity: tau must be positive");
    Mat sims = (feats * cands.transpose()) / tau;
    return softmax_rows(sims);
}

// Soft targets: alpha * momentum distribution + (1 - alpha) * one-hot,
// where row i's positive sits at candidate column i (the batch block
// occupies the first B columns).
inline Mat soft_targets(const Mat& p_prime, double alpha) {
    Mat y = alpha * p_prime;
    const Eigen::Index b = p_prime.rows();
    if (p_prime.cols() < b) throw ValidationError("soft_targets: fewer candidates than batch rows");
    for (Eigen::Index i = 0; i < b; ++i) y(i, i) += 1.0 - alpha;
    return y;
}

// Probability-space form of the bidirectional alignment loss: soft
// targets are alpha-blended from the momentum distributions and the
// one-hot positives (row b's positive at column b), then the mean
// cross-entropy of each direction is averaged. Inputs row-stochastic.
inline double vtc_loss_value(const Mat& p_v2t, const Mat& p_t2v, const Mat& momentum_p_v2t,
                             const Mat& momentum_p_t2v, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("vtc_loss: alpha outside [0, 1]");
    auto dir = [&](const Mat& p, const Mat& mp) {
        if (p.rows() != mp.rows() || p.cols() != mp.cols())
            throw ValidationError("vtc_loss: shape mismatch");
        Mat y = soft_targets(mp, alpha);
        double total = 0.0;
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c)
                if (y(r, c) != 0.0) total -= y(r, c) * std::log(p(r, c) + 1e-12);
        return total / static_cast<double>(p.rows());
    };
    return 0.5 * (dir(p_v2t, momentum_p_v2t) + dir(p_t2v, momentum_p_t2v));
}

// Differentiable path: logits = z . cand^T / tau with tau as a live 1x1
// node, soft-target cross-entropy per direction. Candidate features and
// targets are constants (momentum side carries no gradient).
inline Node* vtc_tape_loss(Tape& t, Node* z_v, Node* z_t, const Mat& cand_t, const Mat& cand_v,
                           Node* tau_node, const Mat& y_v2t, const Mat& y_t2v) {
    Node* l_v2t =
        t.cross_entropy_soft(t.div_by_scalar(t.matmul_nt_const(z_v, cand_t), tau_node), y_v2t);
    Node* l_t2v =
        t.cross_entropy_soft(t.div_by_scalar(t.matmul_nt_const(z_t, cand_v), tau_node), y_t2v);
    return t.scale(t.add(l_v2t, l_t2v), 0.5);
}

// Plain (no-tape) projection used on the momentum side: x (n x d) through
// a (d_c x d) weight and (1 x d_c) bias, then unit-normalized rows.
inline Mat project_normalize_plain(const Mat& x, const Mat& w, const Mat& b) {
    Mat z = x * w.transpose();
    z.rowwise() += b.row(0);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        double n = z.row(r).norm();
        z.row(r) /= (n > 1e-12 ? n : 1e-12);
    }
    return z;
}

}  // namespace vmr

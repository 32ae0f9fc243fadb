#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vmr/core/optim.hpp"
#include "vmr/model/backbone.hpp"
#include "vmr/model/config.hpp"
#include "vmr/model/embed.hpp"
#include "vmr/model/grounding.hpp"
#include "vmr/model/vtc.hpp"

namespace vmr {

// Constants fed into the contrastive branch of one training step. They
// are computed from the momentum side before the step and stay fixed
// through loss and gradients; momentum_v / momentum_t are the rows to
// enqueue after the optimizer step.
struct VtcConstants {
    Mat cand_t;      // (B + queue) x d_c, text candidates for v2t
    Mat cand_v;      // (B + queue) x d_c, visual candidates for t2v
    Mat y_v2t;       // (B x K) soft targets
    Mat y_t2v;       // (B x K) soft targets
    Mat momentum_v;  // (B x d_c)
    Mat momentum_t;  // (B x d_c)
};

struct LossNodes {
    Node* total = nullptr;
    Node* match = nullptr;
    Node* reg = nullptr;
    Node* mlm = nullptr;  // null when nothing is masked
    Node* vtc = nullptr;  // null when the branch is off

    double v_match = 0.0;
    double v_reg = 0.0;
    double v_mlm = 0.0;
    double v_vtc = 0.0;
    double v_total = 0.0;
};

// The assembled model: shared input projections, two-stream backbone,
// masked-token head, stage heads and proposal scoring, plus (optionally)
// the contrastive projection heads. Parameter registration order is the
// checkpoint layout contract.
class Network {
   public:
    Network(const RunConfig& cfg, int d_in, int d_e, int table_vocab)
        : cfg_(cfg), d_in_(d_in), d_e_(d_e) {
        vocab_ = cfg.vocab_size > 0 ? cfg.vocab_size : table_vocab;
        if (vocab_ < 1) throw ConfigError("network: vocab size unresolved");
        Rng rng = stream_rng(cfg.seed, "init");
        embed_ = make_embed(params_, cfg.d_model, d_in, d_e, cfg.max_video_len, cfg.max_text_len,
                            rng);
        backbone_ = make_backbone(params_, cfg.n_blocks, cfg.stride, cfg.use_acb, cfg.d_model,
                                  cfg.ffn_hidden(), rng);
        mlm_ = make_mlm_head(params_, vocab_, cfg.d_model, rng);
        msa_ = make_msa(params_, cfg.d_model, rng);
        prop_head_ = make_proposal_head(params_, cfg.d_model, rng);
        if (cfg.use_vtc) vtc_ = make_vtc(params_, cfg.d_model, cfg.d_c, cfg.tau_init, rng);
        cands_ = enumerate_candidates(cfg.n_clips);
    }

    const RunConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const std::vector<Candidate>& candidates() const { return cands_; }
    const VtcParams& vtc() const { return vtc_; }
    const EmbedParams& embed() const { return embed_; }
    int vocab() const { return vocab_; }
    int d_in() const { return d_in_; }
    int d_e() const { return d_e_; }

    double tau_value() const { return cfg_.use_vtc ? vtc_.tau->value(0, 0) : 0.0; }

    // Shadows cover the shared input projections and the contrastive
    // heads; the backbone has no momentum copy.
    MomentumShadow make_shadow() const {
        MomentumShadow s;
        for (Param* p : params_.all())
            if (p->name.rfind("embed.", 0) == 0 || p->name.rfind("vtc.g_", 0) == 0) s.track(p);
        return s;
    }

    // Positions eligible for contrastive text pooling: valid and not
    // replaced by the masking pass. Falls back to all valid positions if
    // the whole query happened to be masked.
    static BoolVec vtc_text_mask(const BoolVec& valid, const std::vector<int>& mlm_targets) {
        BoolVec m(valid.size(), 0);
        bool any = false;
        for (size_t i = 0; i < valid.size(); ++i) {
            m[i] = valid[i] && mlm_targets[i] < 0;
            any = any || m[i];
        }
        if (!any) return valid;
        return m;
    }

    // Plain-math mirror of embed_visual under the shadow parameters.
    Mat momentum_embed_visual(const MomentumShadow& sh, const Mat& feats) const {
        Mat x = feats * sh.val("embed.w_v").transpose();
        x.rowwise() += sh.val("embed.b_v").row(0);
        x += sh.val("embed.pos_v").topRows(feats.rows());
        x.rowwise() += sh.val("embed.mod_v").row(0);
        return x;
    }

    Mat momentum_embed_text(const MomentumShadow& sh, const EmbeddingTable& table,
                            const std::vector<int>& ids) const {
        Mat g(static_cast<Eigen::Index>(ids.size()), table.embed_dim());
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= table.vocab_size())
                throw ValidationError("momentum embed: token id out of range");
            g.row(static_cast<Eigen::Index>(i)) = table.rows.row(ids[i]);
        }
        Mat x = g * sh.val("embed.w_t").transpose();
        x.rowwise() += sh.val("embed.b_t").row(0);
        x += sh.val("embed.pos_t").topRows(g.rows());
        x.rowwise() += sh.val("embed.mod_t").row(0);
        return x;
    }

    VtcConstants compute_vtc_constants(const Batch& batch, const EmbeddingTable& table,
                                       const MomentumShadow& sh, const FeatureQueue& queue_v,
                                       const FeatureQueue& queue_t) const {
        if (!cfg_.use_vtc) throw ValidationError("vtc constants requested with use_vtc=false");
        const int b = batch.size();
        Mat pooled_v(b, cfg_.d_model), pooled_t(b, cfg_.d_model);
        for (int k = 0; k < b; ++k) {
            Mat v = momentum_embed_visual(sh, batch.visual[k]);
            const ClipSpan& gt = batch.clip_spans[k];
            pooled_v.row(k) =
                v.middleRows(gt.start, gt.end - gt.start + 1).colwise().mean();
            Mat t = momentum_embed_text(sh, table, batch.token_ids[k]);
            BoolVec m = vtc_text_mask(batch.token_mask[k], batch.mlm_targets[k]);
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(cfg_.d_model);
            int cnt = 0;
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                if (m[static_cast<size_t>(r)]) {
                    acc += t.row(r);
                    ++cnt;
                }
            pooled_t.row(k) = acc / static_cast<double>(cnt);
        }
        VtcConstants c;
        c.momentum_v = project_normalize_plain(pooled_v, sh.val("vtc.g_v.w"), sh.val("vtc.g_v.b"));
        c.momentum_t = project_normalize_plain(pooled_t, sh.val("vtc.g_w.w"), sh.val("vtc.g_w.b"));
        Mat qt = queue_t.contents();
        Mat qv = queue_v.contents();
        c.cand_t = Mat(b + qt.rows(), cfg_.d_c);
        c.cand_t.topRows(b) = c.momentum_t;
        if (qt.rows() > 0) c.cand_t.bottomRows(qt.rows()) = qt;
        c.cand_v = Mat(b + qv.rows(), cfg_.d_c);
        c.cand_v.topRows(b) = c.momentum_v;
        if (qv.rows() > 0) c.cand_v.bottomRows(qv.rows()) = qv;
        double tau = tau_value();
        c.y_v2t = soft_targets(similarity_distribution(c.momentum_v, c.cand_t, tau), cfg_.alpha);
        c.y_t2v = soft_targets(similarity_distribution(c.momentum_t, c.cand_v, tau), cfg_.alpha);
        return c;
    }

    // Full training-step losses for one batch. vtc_in may be null only
    // when the contrastive branch is disabled; drop_rng null disables
    // dropout (evaluation and gradient-check mode).
    LossNodes forward_losses(Tape& t, const Batch& batch, const EmbeddingTable& table,
                             const VtcConstants* vtc_in, Rng* drop_rng) const {
        if (cfg_.use_vtc && vtc_in == nullptr)
            throw ValidationError("forward_losses: missing vtc constants");
        const int b = batch.size();
        if (b == 0) throw ValidationError("forward_losses: empty batch");
        const double inv_b = 1.0 / static_cast<double>(b);

        std::vector<std::pair<Node*, double>> match_terms, reg_terms;
        std::vector<Node*> pooled_v_nodes, pooled_t_nodes;
        std::vector<std::pair<Node*, double>> mlm_sums;
        int mlm_total = 0;

        for (int k = 0; k < b; ++k) {
            Node* v_emb = embed_visual(t, embed_, batch.visual[k]);
            Node* t_emb = embed_text(t, embed_, table, batch.token_ids[k]);
            const ClipSpan& gt = batch.clip_spans[k];

            if (cfg_.use_vtc) {
                pooled_v_nodes.push_back(t.row_range_means(v_emb, {{gt.start, gt.end}}));
                BoolVec m = vtc_text_mask(batch.token_mask[k], batch.mlm_targets[k]);
                pooled_t_nodes.push_back(t.row_mean_masked(t_emb, m));
            }

            BoolVec visual_valid(static_cast<size_t>(batch.visual[k].rows()), 1);
            StreamPair pair = backbone_forward(t, backbone_, {v_emb, t_emb}, visual_valid,
                                               batch.token_mask[k], cfg_.n_heads, cfg_.dropout_p,
                                               drop_rng);

            MlmItemLoss ml = mlm_item_loss(t, mlm_, pair.text, batch.mlm_targets[k]);
            if (ml.count > 0) {
                mlm_sums.emplace_back(ml.sum, 1.0);
                mlm_total += ml.count;
            }

            StageViews views = msa_forward(t, msa_, pair.visual);
            Node* feats = proposal_features(t, views, cands_);
            ProposalOutputs outs = proposal_head_forward(t, prop_head_, feats);

            Vec targets = iou_targets(cands_, gt, cfg_.t_min, cfg_.t_max);
            match_terms.emplace_back(t.bce_with_logits(outs.logits, Mat(targets)), inv_b);

            Vec riou = raw_iou_map(cands_, gt);
            std::vector<int> pos_idx;
            for (Eigen::Index c = 0; c < riou.size(); ++c)
                if (riou(c) >= cfg_.pos_threshold) pos_idx.push_back(static_cast<int>(c));
            if (!pos_idx.empty()) {
                const double dur = batch.duration_s[k];
                Mat delta(static_cast<Eigen::Index>(pos_idx.size()), 2);
                for (size_t p = 0; p < pos_idx.size(); ++p) {
                    const Candidate& c = cands_[static_cast<size_t>(pos_idx[p])];
                    auto [cs, ce] = clip_span_to_seconds({c.i, c.j}, dur, cfg_.n_clips);
                    delta(static_cast<Eigen::Index>(p), 0) = cs - batch.spans_s[k].first;
                    delta(static_cast<Eigen::Index>(p), 1) = ce - batch.spans_s[k].second;
                }
                Node* off_pos = t.gather_rows(outs.offsets, pos_idx);
                Node* resid = t.scale(t.add_const(off_pos, delta), 1.0 / dur);
                Node* sl1 = t.smooth_l1_elem(resid);
                reg_terms.emplace_back(t.scale(t.mean_all(sl1), 2.0), inv_b);
            }
        }

        LossNodes out;
        out.match = t.weighted_sum(match_terms);
        out.v_match = out.match->val(0, 0);
        if (!reg_terms.empty()) {
            out.reg = t.weighted_sum(reg_terms);
            out.v_reg = out.reg->val(0, 0);
        } else {
            out.reg = t.constant(Mat::Zero(1, 1));
        }
        if (mlm_total > 0) {
            for (auto& term : mlm_sums) term.second = 1.0 / static_cast<double>(mlm_total);
            out.mlm = t.weighted_sum(mlm_sums);
            out.v_mlm = out.mlm->val(0, 0);
        }
        if (cfg_.use_vtc) {
            Node* zv = t.l2_normalize_rows(
                t.linear(t.vstack(pooled_v_nodes), t.use(*vtc_.gv_w), t.use(*vtc_.gv_b)));
            Node* zt = t.l2_normalize_rows(
                t.linear(t.vstack(pooled_t_nodes), t.use(*vtc_.gw_w), t.use(*vtc_.gw_b)));
            out.vtc = vtc_tape_loss(t, zv, zt, vtc_in->cand_t, vtc_in->cand_v, t.use(*vtc_.tau),
                                    vtc_in->y_v2t, vtc_in->y_t2v);
            out.v_vtc = out.vtc->val(0, 0);
        }

        std::vector<std::pair<Node*, double>> total_terms;
        if (cfg_.lambda_match > 0.0) total_terms.emplace_back(out.match, cfg_.lambda_match);
        if (cfg_.lambda_reg > 0.0 && !reg_terms.empty())
            total_terms.emplace_back(out.reg, cfg_.lambda_reg);
        if (cfg_.lambda_mlm > 0.0 && out.mlm) total_terms.emplace_back(out.mlm, cfg_.lambda_mlm);
        if (cfg_.lambda_vtc > 0.0 && out.vtc) total_terms.emplace_back(out.vtc, cfg_.lambda_vtc);
        out.total = t.weighted_sum(total_terms);
        out.v_total = out.total->val(0, 0);
        return out;
    }

    // Inference scoring for one query: proposal probabilities and
    // boundary offsets decoded into ranked spans.
    std::vector<Proposal> score_query(const Mat& clip_features, const std::vector<int>& tokens,
                                      const EmbeddingTable& table, double duration_s) const {
        Tape t(false);
        Node* v_emb = embed_visual(t, embed_, clip_features);
        Node* t_emb = embed_text(t, embed_, table, tokens);
        BoolVec visual_valid(static_cast<size_t>(clip_features.rows()), 1);
        BoolVec text_valid(tokens.size(), 1);
        StreamPair pair = backbone_forward(t, backbone_, {v_emb, t_emb}, visual_valid, text_valid,
                                           cfg_.n_heads, 0.0, nullptr);
        StageViews views = msa_forward(t, msa_, pair.visual);
        Node* feats = proposal_features(t, views, cands_);
        ProposalOutputs outs = proposal_head_forward(t, prop_head_, feats);
        Vec scores(outs.logits->val.rows());
        for (Eigen::Index c = 0; c < scores.size(); ++c)
            scores(c) = 1.0 / (1.0 + std::exp(-outs.logits->val(c, 0)));
        return decode_proposals(cands_, scores, outs.offsets->val, duration_s, cfg_.n_clips,
                                cfg_.nms_threshold, cfg_.top_k);
    }

    int64_t analytic_param_count() const {
        int64_t n = embed_param_count(cfg_.d_model, d_in_, d_e_, cfg_.max_video_len,
                                      cfg_.max_text_len);
        n += backbone_param_count(cfg_.n_blocks, cfg_.stride, cfg_.use_acb, cfg_.d_model,
                                  cfg_.ffn_hidden());
        n += static_cast<int64_t>(vocab_) * cfg_.d_model + vocab_;
        n += msa_param_count(cfg_.d_model);
        n += proposal_head_param_count(cfg_.d_model);
        if (cfg_.use_vtc) n += vtc_param_count(cfg_.d_model, cfg_.d_c);
        return n;
    }

   private:
    RunConfig cfg_;
    int d_in_;
    int d_e_;
    int vocab_ = 0;
    ParamSet params_;
    EmbedParams embed_;
    BackboneParams backbone_;
    MlmHead mlm_;
    MsaParams msa_;
    ProposalHead prop_head_;
    VtcParams vtc_;
    std::vector<Candidate> cands_;
};

}  // namespace vmr

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vmr/driver/checkpoint.hpp"

namespace vmr {

// Loss became non-finite; the message names the component. The trainer's
// state is still the last finite one when this is thrown.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct StepStats {
    double total = 0.0;
    double match = 0.0;
    double reg = 0.0;
    double mlm = 0.0;
    double vtc = 0.0;
    int64_t global_step = 0;
    int64_t epoch = 0;
};

// Single-process training loop. All randomness is drawn from streams
// derived from (seed, purpose, counters), so a reloaded checkpoint
// continues bit-exactly: the epoch's shuffle order is a function of the
// epoch index, masking of the batch index, dropout of the global step.
class Trainer {
   public:
    Trainer(const RunConfig& cfg, const Corpus& corpus)
        : cfg_(cfg),
          corpus_(&corpus),
          net_(cfg, corpus_d_in(corpus), corpus.embeddings.embed_dim(),
               corpus.embeddings.vocab_size()),
          opt_(net_.params().all(), cfg.lr, cfg.weight_decay) {
        if (corpus.train.empty()) throw ValidationError("trainer: train split is empty");
        if (cfg.n_clips != corpus.n_clips)
            throw ConfigError("trainer: config n_clips does not match corpus");
        if (cfg.use_vtc) {
            shadow_ = net_.make_shadow();
            queue_v_.emplace(cfg.queue_capacity, cfg.d_c);
            queue_t_.emplace(cfg.queue_capacity, cfg.d_c);
        }
    }

    Network& network() { return net_; }
    const Network& network() const { return net_; }
    AdamW& optimizer() { return opt_; }
    const TrainCounters& counters() const { return counters_; }
    const FeatureQueue* queue_v() const { return queue_v_ ? &*queue_v_ : nullptr; }
    const FeatureQueue* queue_t() const { return queue_t_ ? &*queue_t_ : nullptr; }
    const MomentumShadow* shadow() const { return shadow_ ? &*shadow_ : nullptr; }

    StepStats step() {
        const auto& train = corpus_->train;
        if (order_epoch_ != counters_.epoch) {
            order_.resize(train.size());
            std::iota(order_.begin(), order_.end(), 0);
            Rng shuffle_rng = stream_rng(cfg_.seed, "shuffle",
                                         static_cast<uint64_t>(counters_.epoch));
            shuffle_rng.shuffle(order_);
            order_epoch_ = counters_.epoch;
        }

        const int64_t remaining = static_cast<int64_t>(train.size()) - counters_.cursor;
        const int take = static_cast<int>(std::min<int64_t>(cfg_.batch_size, remaining));
        std::vector<std::pair<const VideoFeatures*, const Query*>> items;
        items.reserve(static_cast<size_t>(take));
        for (int k = 0; k < take; ++k) {
            const Query& q = train[order_[static_cast<size_t>(counters_.cursor + k)]];
            items.emplace_back(&corpus_->video(q.video_id), &q);
        }
        const uint64_t batch_index =
            static_cast<uint64_t>(counters_.cursor / cfg_.batch_size);
        Rng mlm_rng = stream_rng(cfg_.seed, "mlm", static_cast<uint64_t>(counters_.epoch),
                                 batch_index);
        Batch batch = collate(items, cfg_.mlm_prob, corpus_->embeddings.vocab_size(), mlm_rng);

        std::optional<VtcConstants> vc;
        if (cfg_.use_vtc)
            vc = net_.compute_vtc_constants(batch, corpus_->embeddings, *shadow_, *queue_v_,
                                            *queue_t_);

        Rng drop_rng = stream_rng(cfg_.seed, "dropout",
                                  static_cast<uint64_t>(counters_.global_step));
        Rng* dr = cfg_.dropout_p > 0.0 ? &drop_rng : nullptr;

        Tape tape(true);
        LossNodes losses =
            net_.forward_losses(tape, batch, corpus_->embeddings, vc ? &*vc : nullptr, dr);
        check_finite(losses);

        opt_.zero_grad();
        tape.backward(losses.total);
        if (cfg_.warmup_steps > 0) {
            double f = std::min(1.0, static_cast<double>(counters_.global_step + 1) /
                                         static_cast<double>(cfg_.warmup_steps));
            opt_.set_lr(cfg_.lr * f);
        }
        opt_.step();

        if (cfg_.use_vtc) {
            clamp_tau(*net_.vtc().tau);
            shadow_->update(cfg_.momentum);
            queue_v_->push(vc->momentum_v);
            queue_t_->push(vc->momentum_t);
        }

        StepStats s{losses.v_total, losses.v_match, losses.v_reg,    losses.v_mlm,
                    losses.v_vtc,   counters_.global_step, counters_.epoch};
        ++counters_.global_step;
        counters_.cursor += take;
        if (counters_.cursor >= static_cast<int64_t>(train.size())) {
            counters_.cursor = 0;
            ++counters_.epoch;
        }
        return s;
    }

    // Runs the remaining epochs, appending one JSONL record per epoch to
    // <out_dir>/train_log.jsonl and writing per-epoch checkpoints. On
    // divergence the last finite state is saved before rethrowing.
    void train(const std::string& out_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
        if (!log) throw IoError("cannot open train log in " + out_dir);

        while (counters_.epoch < cfg_.epochs) {
            const int64_t e = counters_.epoch;
            double sum_total = 0, sum_match = 0, sum_reg = 0, sum_mlm = 0, sum_vtc = 0;
            int64_t n = 0;
            try {
                while (counters_.epoch == e) {
                    StepStats s = step();
                    sum_total += s.total;
                    sum_match += s.match;
                    sum_reg += s.reg;
                    sum_mlm += s.mlm;
                    sum_vtc += s.vtc;
                    ++n;
                }
            } catch (const DivergenceError&) {
                save(out_dir + "/ckpt_abort.vmrc");
                throw;
            }
            nlohmann::json rec;
            rec["epoch"] = e;
            rec["loss_total"] = sum_total / static_cast<double>(n);
            rec["loss_match"] = sum_match / static_cast<double>(n);
            rec["loss_reg"] = sum_reg / static_cast<double>(n);
            rec["loss_mlm"] = sum_mlm / static_cast<double>(n);
            rec["loss_vtc"] = sum_vtc / static_cast<double>(n);
            log << rec.dump() << "\n";
            log.flush();
            save(out_dir + "/ckpt_epoch" + std::to_string(e) + ".vmrc");
            save(out_dir + "/ckpt_final.vmrc");
        }
    }

    void save(const std::string& path) const {
        save_checkpoint(path, net_, opt_, shadow_ ? &*shadow_ : nullptr,
                        queue_v_ ? &*queue_v_ : nullptr, queue_t_ ? &*queue_t_ : nullptr,
                        counters_);
    }

    void load(const std::string& path) {
        LoadedCheckpoint lc =
            load_checkpoint(path, net_, opt_, shadow_ ? &*shadow_ : nullptr,
                            queue_v_ ? &*queue_v_ : nullptr, queue_t_ ? &*queue_t_ : nullptr);
        counters_ = lc.counters;
        order_epoch_ = -1;  // force re-derivation of the epoch's order
    }

    static int corpus_d_in(const Corpus& corpus) {
        if (corpus.videos.empty()) throw ValidationError("trainer: corpus has no videos");
        return static_cast<int>(corpus.videos.begin()->second.features.cols());
    }

   private:
    void check_finite(const LossNodes& l) const {
        auto bad = [](double v) { return !std::isfinite(v); };
        const char* which = nullptr;
        if (bad(l.v_match)) which = "loss_match";
        else if (bad(l.v_reg)) which = "loss_reg";
        else if (bad(l.v_mlm)) which = "loss_mlm";
        else if (bad(l.v_vtc)) which = "loss_vtc";
        else if (bad(l.v_total)) which = "loss_total";
        if (which)
            throw DivergenceError(std::string(which) + " became non-finite at step " +
                                  std::to_string(counters_.global_step));
    }

    RunConfig cfg_;
    const Corpus* corpus_;
    Network net_;
    AdamW opt_;
    std::optional<MomentumShadow> shadow_;
    std::optional<FeatureQueue> queue_v_;
    std::optional<FeatureQueue> queue_t_;
    TrainCounters counters_;
    std::vector<size_t> order_;
    int64_t order_epoch_ = -1;
};

}  // namespace vmr

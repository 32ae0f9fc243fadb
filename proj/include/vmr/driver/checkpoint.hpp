#pragma once

#include <string>
#include <vector>

#include "vmr/core/io.hpp"
#include "vmr/core/optim.hpp"
#include "vmr/model/network.hpp"

namespace vmr {

// Training-state container persisted between sessions. Everything needed
// to continue bit-exactly on the same platform: the config echo, all
// parameter tensors, optimizer moments, momentum shadows, queue
// snapshots, and the loop counters the rng streams are derived from.
struct TrainCounters {
    int64_t epoch = 0;        // epoch currently in progress
    int64_t cursor = 0;       // index into this epoch's shuffled order
    int64_t global_step = 0;  // optimizer steps taken
};

namespace detail {

inline void write_mat(BinWriter& w, const Mat& m) {
    w.u64(static_cast<uint64_t>(m.rows()));
    w.u64(static_cast<uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

inline Mat read_mat(BinReader& r, const char* what) {
    uint64_t rows = r.u64(what);
    uint64_t cols = r.u64(what);
    if (rows > (1u << 24) || cols > (1u << 24))
        throw FormatError(std::string(what) + ": implausible tensor shape");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64(what);
    return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Network& net, const AdamW& opt,
                            const MomentumShadow* shadow, const FeatureQueue* queue_v,
                            const FeatureQueue* queue_t, const TrainCounters& counters) {
    const RunConfig& cfg = net.config();
    BinWriter w;
    w.magic("VMRC");
    w.u32(1);
    w.str(run_config_to_json(cfg).dump());
    w.u32(static_cast<uint32_t>(net.d_in()));
    w.u32(static_cast<uint32_t>(net.d_e()));
    w.u32(static_cast<uint32_t>(net.vocab()));

    const auto all = net.params().all();
    w.u64(all.size());
    for (const Param* p : all) {
        w.str(p->name);
        detail::write_mat(w, p->value);
    }

    w.i64(opt.step_count());
    const auto& m1 = opt.moment1();
    const auto& m2 = opt.moment2();
    for (size_t i = 0; i < all.size(); ++i) {
        detail::write_mat(w, m1[i]);
        detail::write_mat(w, m2[i]);
    }

    w.i64(counters.epoch);
    w.i64(counters.cursor);
    w.i64(counters.global_step);

    const bool has_vtc = cfg.use_vtc;
    w.u32(has_vtc ? 1 : 0);
    if (has_vtc) {
        if (shadow == nullptr || queue_v == nullptr || queue_t == nullptr)
            throw ValidationError("checkpoint: contrastive state missing");
        w.u64(shadow->tracked().size());
        for (const Param* p : shadow->tracked()) {
            w.str(p->name);
            detail::write_mat(w, shadow->val(p));
        }
        for (const FeatureQueue* q : {queue_v, queue_t}) {
            w.u32(static_cast<uint32_t>(q->capacity()));
            w.u32(static_cast<uint32_t>(q->cursor()));
            w.i64(q->push_count());
            detail::write_mat(w, q->contents());
        }
    }
    w.save(path);
}

struct LoadedCheckpoint {
    RunConfig config;
    int d_in = 0;
    int d_e = 0;
    int vocab = 0;
    TrainCounters counters;
};

// Restores parameters, optimizer and contrastive state in place. The
// network must have been built under a structurally identical config;
// any mismatch is a hard error naming the offending keys.
inline LoadedCheckpoint load_checkpoint(const std::string& path, Network& net, AdamW& opt,
                                        MomentumShadow* shadow, FeatureQueue* queue_v,
                                        FeatureQueue* queue_t) {
    BinReader r = BinReader::from_file(path);
    r.expect_magic("VMRC");
    uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint out;
    out.config = parse_run_config(nlohmann::json::parse(r.str("config echo")));
    out.d_in = static_cast<int>(r.u32("d_in"));
    out.d_e = static_cast<int>(r.u32("d_e"));
    out.vocab = static_cast<int>(r.u32("vocab"));

    auto bad = structural_mismatches(out.config, net.config());
    if (out.d_in != net.d_in()) bad.push_back("feature_dim");
    if (out.d_e != net.d_e()) bad.push_back("embed_dim");
    if (out.vocab != net.vocab()) bad.push_back("vocab");
    if (!bad.empty()) {
        std::string msg = path + ": checkpoint incompatible with config, mismatched:";
        for (const auto& k : bad) msg += " " + k;
        throw ValidationError(msg);
    }

    const auto all = net.params().all();
    uint64_t n_params = r.u64("param count");
    if (n_params != all.size())
        throw FormatError(path + ": parameter count mismatch (" + std::to_string(n_params) +
                          " stored, " + std::to_string(all.size()) + " expected)");
    for (Param* p : all) {
        std::string name = r.str("param name");
        if (name != p->name)
            throw FormatError(path + ": parameter order mismatch at " + p->name + " (found " +
                              name + ")");
        Mat v = detail::read_mat(r, p->name.c_str());
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
            throw FormatError(path + ": shape mismatch for " + p->name);
        p->value = std::move(v);
    }

    opt.set_step_count(r.i64("optimizer step count"));
    for (size_t i = 0; i < all.size(); ++i) {
        opt.moment1()[i] = detail::read_mat(r, "optimizer m1");
        opt.moment2()[i] = detail::read_mat(r, "optimizer m2");
    }

    out.counters.epoch = r.i64("epoch counter");
    out.counters.cursor = r.i64("cursor counter");
    out.counters.global_step = r.i64("global step counter");

    uint32_t has_vtc = r.u32("vtc flag");
    if ((has_vtc != 0) != net.config().use_vtc)
        throw ValidationError(path + ": checkpoint contrastive state does not match use_vtc");
    if (has_vtc) {
        if (shadow == nullptr || queue_v == nullptr || queue_t == nullptr)
            throw ValidationError("checkpoint: contrastive state expected by file");
        uint64_t n_shadow = r.u64("shadow count");
        if (n_shadow != shadow->tracked().size())
            throw FormatError(path + ": shadow count mismatch");
        for (size_t i = 0; i < n_shadow; ++i) {
            std::string name = r.str("shadow name");
            shadow->restore(name, detail::read_mat(r, name.c_str()));
        }
        for (FeatureQueue* q : {queue_v, queue_t}) {
            uint32_t cap = r.u32("queue capacity");
            if (static_cast<int>(cap) != q->capacity())
                throw FormatError(path + ": queue capacity mismatch");
            uint32_t cursor = r.u32("queue cursor");
            int64_t pushes = r.i64("queue push count");
            Mat contents = detail::read_mat(r, "queue contents");
            q->restore(contents, static_cast<int>(cursor), pushes);
        }
    }
    if (r.remaining() != 0) throw FormatError(path + ": trailing bytes after checkpoint payload");
    return out;
}

}  // namespace vmr

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "vmr/driver/trainer.hpp"
#include "vmr/metrics/metrics.hpp"

namespace vmr {

// Builds the network for a config/corpus pair and restores weights from
// a checkpoint, without any training machinery beyond what the loader
// needs to consume the file.
inline Network load_network_for_eval(const RunConfig& cfg, const Corpus& corpus,
                                     const std::string& ckpt_path) {
    Network net(cfg, Trainer::corpus_d_in(corpus), corpus.embeddings.embed_dim(),
                corpus.embeddings.vocab_size());
    AdamW opt(net.params().all(), cfg.lr, cfg.weight_decay);
    std::optional<MomentumShadow> shadow;
    std::optional<FeatureQueue> qv, qt;
    if (cfg.use_vtc) {
        shadow = net.make_shadow();
        qv.emplace(cfg.queue_capacity, cfg.d_c);
        qt.emplace(cfg.queue_capacity, cfg.d_c);
    }
    load_checkpoint(ckpt_path, net, opt, shadow ? &*shadow : nullptr, qv ? &*qv : nullptr,
                    qt ? &*qt : nullptr);
    return net;
}

// Scores every query of one split, dumps ranked predictions as JSONL,
// computes the recall table against the split's annotations, and writes
// it next to the predictions. Returns the table as JSON.
inline nlohmann::json run_eval(const RunConfig& cfg, const Corpus& corpus, const Network& net,
                               const std::string& split, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string pred_path = out_dir + "/predictions_" + split + ".jsonl";
    std::ofstream pf(pred_path);
    if (!pf) throw IoError("cannot write predictions: " + pred_path);

    for (const Query& q : corpus.split(split)) {
        const VideoFeatures& vf = corpus.video(q.video_id);
        auto proposals =
            net.score_query(vf.features, q.tokens, corpus.embeddings, vf.duration_s);
        nlohmann::json rec;
        rec["query_id"] = q.query_id;
        auto arr = nlohmann::json::array();
        for (const auto& p : proposals) arr.push_back({p.ts, p.te, p.score});
        rec["proposals"] = arr;
        pf << rec.dump() << "\n";
    }
    pf.close();

    const std::string ann_path = cfg.corpus_dir + "/" + split + ".jsonl";
    RecallTable table = evaluate(pred_path, ann_path, cfg.eval_n_set, cfg.eval_m_set);
    nlohmann::json j = recall_table_to_json(table);
    std::ofstream tf(out_dir + "/recall_" + split + ".json");
    if (!tf) throw IoError("cannot write recall table in " + out_dir);
    tf << j.dump(2) << "\n";
    return j;
}

}  // namespace vmr

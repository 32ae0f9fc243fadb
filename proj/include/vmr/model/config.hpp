#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vmr/core/error.hpp"

namespace vmr {

// Flat run configuration. JSON configs must use exactly these keys;
// unknown keys are a hard error. Missing keys keep their defaults.
struct RunConfig {
    // corpus
    std::string corpus_dir;
    int n_clips = 32;

    // backbone
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 3;   // transformer blocks
    int stride = 2;     // co-attention layers per block
    int ffn_ratio = 4;
    double dropout_p = 0.1;
    int max_video_len = 64;
    int max_text_len = 32;
    int vocab_size = 0;  // 0 = take from the embedding table

    // contrastive head
    int d_c = 64;
    double tau_init = 0.1;
    double alpha = 0.3;
    double momentum = 0.995;
    int queue_capacity = 50000;
    bool vtc_use_nongt_negative = false;

    // grounding
    double t_min = 0.5;
    double t_max = 1.0;
    double pos_threshold = 0.5;
    double nms_threshold = 0.5;
    int top_k = 10;

    // loss weights
    double lambda_match = 1.0;
    double lambda_reg = 1.0;
    double lambda_mlm = 1.0;
    double lambda_vtc = 1.0;

    // optimizer
    std::string optimizer = "adamw";
    double lr = 5e-5;
    double weight_decay = 0.01;
    int warmup_steps = 0;  // linear warmup; 0 disables

    // run
    int epochs = 10;
    int batch_size = 16;
    uint64_t seed = 0;
    double mlm_prob = 0.15;

    // ablation toggles
    bool use_vtc = true;
    bool use_acb = true;

    // evaluation
    std::vector<int> eval_n_set{1, 5};
    std::vector<double> eval_m_set{0.5, 0.7};

    int ffn_hidden() const { return ffn_ratio * d_model; }
    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
            throw ConfigError("d_model must be a positive multiple of n_heads");
        if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
        if (stride < 1) throw ConfigError("stride must be >= 1");
        if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
        if (n_clips < 1) throw ConfigError("n_clips must be >= 1");
        if (max_video_len < n_clips) throw ConfigError("max_video_len must cover n_clips");
        if (d_c < 1) throw ConfigError("d_c must be >= 1");
        if (tau_init < 0.01 || tau_init > 1.0) throw ConfigError("tau_init must lie in [0.01, 1]");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
        if (momentum < 0.0 || momentum > 1.0) throw ConfigError("momentum must lie in [0, 1]");
        if (queue_capacity < batch_size)
            throw ConfigError("queue_capacity must be >= batch_size");
        if (!(t_min < t_max)) throw ConfigError("t_min must be < t_max");
        if (lambda_match < 0 || lambda_reg < 0 || lambda_mlm < 0 || lambda_vtc < 0)
            throw ConfigError("loss weights must be >= 0");
        if (optimizer != "adamw") throw ConfigError("unsupported optimizer: " + optimizer);
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
        if (mlm_prob < 0.0 || mlm_prob > 1.0) throw ConfigError("mlm_prob must lie in [0, 1]");
        if (top_k < 1) throw ConfigError("top_k must be >= 1");
        if (nms_threshold < 0.0 || nms_threshold > 1.0)
            throw ConfigError("nms_threshold must lie in [0, 1]");
        if (eval_n_set.empty() || eval_m_set.empty())
            throw ConfigError("eval_n_set and eval_m_set must be non-empty");
    }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const std::string& key, T& out) {
    try {
        out = j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key \"" + key + "\" has the wrong type");
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig c;
    std::vector<std::string> unknown;
    for (auto& [key, value] : j.items()) {
        if (key == "corpus_dir") detail::read_key(value, key, c.corpus_dir);
        else if (key == "n_clips") detail::read_key(value, key, c.n_clips);
        else if (key == "d_model") detail::read_key(value, key, c.d_model);
        else if (key == "n_heads") detail::read_key(value, key, c.n_heads);
        else if (key == "n_blocks") detail::read_key(value, key, c.n_blocks);
        else if (key == "stride") detail::read_key(value, key, c.stride);
        else if (key == "ffn_ratio") detail::read_key(value, key, c.ffn_ratio);
        else if (key == "dropout_p") detail::read_key(value, key, c.dropout_p);
        else if (key == "max_video_len") detail::read_key(value, key, c.max_video_len);
        else if (key == "max_text_len") detail::read_key(value, key, c.max_text_len);
        else if (key == "vocab_size") detail::read_key(value, key, c.vocab_size);
        else if (key == "d_c") detail::read_key(value, key, c.d_c);
        else if (key == "tau_init") detail::read_key(value, key, c.tau_init);
        else if (key == "alpha") detail::read_key(value, key, c.alpha);
        else if (key == "momentum") detail::read_key(value, key, c.momentum);
        else if (key == "queue_capacity") detail::read_key(value, key, c.queue_capacity);
        else if (key == "vtc_use_nongt_negative") detail::read_key(value, key, c.vtc_use_nongt_negative);
        else if (key == "t_min") detail::read_key(value, key, c.t_min);
        else if (key == "t_max") detail::read_key(value, key, c.t_max);
        else if (key == "pos_threshold") detail::read_key(value, key, c.pos_threshold);
        else if (key == "nms_threshold") detail::read_key(value, key, c.nms_threshold);
        else if (key == "top_k") detail::read_key(value, key, c.top_k);
        else if (key == "lambda_match") detail::read_key(value, key, c.lambda_match);
        else if (key == "lambda_reg") detail::read_key(value, key, c.lambda_reg);
        else if (key == "lambda_mlm") detail::read_key(value, key, c.lambda_mlm);
        else if (key == "lambda_vtc") detail::read_key(value, key, c.lambda_vtc);
        else if (key == "optimizer") detail::read_key(value, key, c.optimizer);
        else if (key == "lr") detail::read_key(value, key, c.lr);
        else if (key == "weight_decay") detail::read_key(value, key, c.weight_decay);
        else if (key == "warmup_steps") detail::read_key(value, key, c.warmup_steps);
        else if (key == "epochs") detail::read_key(value, key, c.epochs);
        else if (key == "batch_size") detail::read_key(value, key, c.batch_size);
        else if (key == "seed") detail::read_key(value, key, c.seed);
        else if (key == "mlm_prob") detail::read_key(value, key, c.mlm_prob);
        else if (key == "use_vtc") detail::read_key(value, key, c.use_vtc);
        else if (key == "use_acb") detail::read_key(value, key, c.use_acb);
        else if (key == "eval_n_set") detail::read_key(value, key, c.eval_n_set);
        else if (key == "eval_m_set") detail::read_key(value, key, c.eval_m_set);
        else unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config key(s):";
        for (auto& k : unknown) msg += " \"" + k + "\"";
        throw ConfigError(msg);
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": bad JSON: " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["corpus_dir"] = c.corpus_dir;
    j["n_clips"] = c.n_clips;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_blocks"] = c.n_blocks;
    j["stride"] = c.stride;
    j["ffn_ratio"] = c.ffn_ratio;
    j["dropout_p"] = c.dropout_p;
    j["max_video_len"] = c.max_video_len;
    j["max_text_len"] = c.max_text_len;
    j["vocab_size"] = c.vocab_size;
    j["d_c"] = c.d_c;
    j["tau_init"] = c.tau_init;
    j["alpha"] = c.alpha;
    j["momentum"] = c.momentum;
    j["queue_capacity"] = c.queue_capacity;
    j["vtc_use_nongt_negative"] = c.vtc_use_nongt_negative;
    j["t_min"] = c.t_min;
    j["t_max"] = c.t_max;
    j["pos_threshold"] = c.pos_threshold;
    j["nms_threshold"] = c.nms_threshold;
    j["top_k"] = c.top_k;
    j["lambda_match"] = c.lambda_match;
    j["lambda_reg"] = c.lambda_reg;
    j["lambda_mlm"] = c.lambda_mlm;
    j["lambda_vtc"] = c.lambda_vtc;
    j["optimizer"] = c.optimizer;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["warmup_steps"] = c.warmup_steps;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["mlm_prob"] = c.mlm_prob;
    j["use_vtc"] = c.use_vtc;
    j["use_acb"] = c.use_acb;
    j["eval_n_set"] = c.eval_n_set;
    j["eval_m_set"] = c.eval_m_set;
    return j;
}

// Structural keys that must agree between a checkpoint and the config it
// is loaded under.
inline std::vector<std::string> structural_mismatches(const RunConfig& a, const RunConfig& b) {
    std::vector<std::string> bad;
    auto chk = [&](bool ok, const char* key) {
        if (!ok) bad.push_back(key);
    };
    chk(a.n_clips == b.n_clips, "n_clips");
    chk(a.d_model == b.d_model, "d_model");
    chk(a.n_heads == b.n_heads, "n_heads");
    chk(a.n_blocks == b.n_blocks, "n_blocks");
    chk(a.stride == b.stride, "stride");
    chk(a.ffn_ratio == b.ffn_ratio, "ffn_ratio");
    chk(a.max_video_len == b.max_video_len, "max_video_len");
    chk(a.max_text_len == b.max_text_len, "max_text_len");
    chk(a.vocab_size == b.vocab_size, "vocab_size");
    chk(a.d_c == b.d_c, "d_c");
    chk(a.queue_capacity == b.queue_capacity, "queue_capacity");
    chk(a.use_vtc == b.use_vtc, "use_vtc");
    chk(a.use_acb == b.use_acb, "use_acb");
    return bad;
}

}  // namespace vmr

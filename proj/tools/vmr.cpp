#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "vmr/corpus/synth.hpp"
#include "vmr/driver/eval.hpp"
#include "vmr/driver/inspect.hpp"
#include "vmr/driver/trainer.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string ckpt_path;
    std::string out_path;
    int64_t seed = -1;  // -1 = keep config value
    bool no_vtc = false;
    bool no_acb = false;
};

vmr::RunConfig resolve_config(const CommonOpts& o) {
    vmr::RunConfig cfg;
    if (!o.config_path.empty()) cfg = vmr::load_run_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    if (o.no_vtc) cfg.use_vtc = false;
    if (o.no_acb) cfg.use_acb = false;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool need_config) {
    auto* c = cmd->add_option("--config", o.config_path, "JSON run configuration");
    if (need_config) c->required();
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--ckpt", o.ckpt_path, "checkpoint path");
    cmd->add_option("--out", o.out_path, "output directory or file");
    cmd->add_flag("--no-vtc", o.no_vtc, "disable the contrastive branch");
    cmd->add_flag("--no-acb", o.no_acb, "use joint attention blocks only");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"video moment retrieval: synthesize, train, evaluate, inspect"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    vmr::SynthSpec spec;
    std::string synth_out = "corpus";
    int64_t synth_seed = 0;
    synth_cmd->add_option("--out", synth_out, "corpus output directory");
    synth_cmd->add_option("--seed", synth_seed, "generator seed");
    synth_cmd->add_option("--train-items", spec.num_train, "train query count");
    synth_cmd->add_option("--test-items", spec.num_test, "test query count");
    synth_cmd->add_option("--n-clips", spec.n_clips, "clips per video");
    synth_cmd->add_option("--vocab-size", spec.vocab_size, "token vocabulary size");
    synth_cmd->add_option("--feature-dim", spec.feature_dim, "clip feature dimension");
    synth_cmd->add_option("--embed-dim", spec.embed_dim, "token embedding dimension");
    synth_cmd->add_option("--query-len-min", spec.query_len_min, "minimum query length");
    synth_cmd->add_option("--query-len-max", spec.query_len_max, "maximum query length");
    synth_cmd->add_option("--noise-std", spec.noise_std, "background feature noise");
    synth_cmd->add_option("--pattern-dim", spec.pattern_dim, "signal dimensions per token");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    CommonOpts train_opts;
    add_common(train_cmd, train_opts, true);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    CommonOpts eval_opts;
    std::string eval_split = "test";
    add_common(eval_cmd, eval_opts, true);
    eval_cmd->add_option("--split", eval_split, "corpus split to score");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "report parameter counts");
    CommonOpts inspect_opts;
    add_common(inspect_cmd, inspect_opts, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            spec.seed = static_cast<uint64_t>(synth_seed);
            spec.validate();
            vmr::generate_synthetic(spec, synth_out);
            std::cout << "wrote corpus to " << synth_out << "\n";
            return 0;
        }

        if (train_cmd->parsed()) {
            vmr::RunConfig cfg = resolve_config(train_opts);
            if (cfg.corpus_dir.empty()) throw vmr::ConfigError("train: corpus_dir not set");
            vmr::Corpus corpus = vmr::load_corpus(cfg.corpus_dir, cfg.n_clips);
            vmr::Trainer trainer(cfg, corpus);
            if (!train_opts.ckpt_path.empty()) trainer.load(train_opts.ckpt_path);
            std::string out = train_opts.out_path.empty() ? "run" : train_opts.out_path;
            trainer.train(out);
            std::cout << "training complete; artifacts in " << out << "\n";
            return 0;
        }

        if (eval_cmd->parsed()) {
            vmr::RunConfig cfg = resolve_config(eval_opts);
            if (cfg.corpus_dir.empty()) throw vmr::ConfigError("eval: corpus_dir not set");
            if (eval_opts.ckpt_path.empty()) throw vmr::ConfigError("eval: --ckpt is required");
            vmr::Corpus corpus = vmr::load_corpus(cfg.corpus_dir, cfg.n_clips);
            vmr::Network net = vmr::load_network_for_eval(cfg, corpus, eval_opts.ckpt_path);
            std::string out = eval_opts.out_path.empty() ? "run" : eval_opts.out_path;
            nlohmann::json table = vmr::run_eval(cfg, corpus, net, eval_split, out);
            std::cout << table.dump(2) << "\n";
            return 0;
        }

        if (inspect_cmd->parsed()) {
            vmr::RunConfig cfg = resolve_config(inspect_opts);
            if (cfg.corpus_dir.empty()) throw vmr::ConfigError("inspect: corpus_dir not set");
            vmr::Corpus corpus = vmr::load_corpus(cfg.corpus_dir, cfg.n_clips);
            vmr::Network net(cfg, vmr::Trainer::corpus_d_in(corpus),
                             corpus.embeddings.embed_dim(), corpus.embeddings.vocab_size());
            nlohmann::json report = vmr::inspect_report(net);
            std::cout << report.dump(2) << "\n";
            if (!inspect_opts.out_path.empty()) {
                std::ofstream f(inspect_opts.out_path);
                if (!f) throw vmr::IoError("cannot write " + inspect_opts.out_path);
                f << report.dump(2) << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

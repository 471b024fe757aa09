// Command-line entry point wiring all pipeline stages. Exit codes: 0 on
// success, 1 on runtime failure, 2 on usage or configuration errors.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "wlfm/pipeline.hpp"

namespace {

int exit_code_for(const wlfm::error& e) {
    switch (e.code()) {
        case wlfm::errc::config_error:
        case wlfm::errc::missing_baseline:
        case wlfm::errc::bad_ratios:
        case wlfm::errc::invalid_transition_matrix:
            return 2;
        default:
            return 1;
    }
}

/// Effective configuration for a command: an explicit --config wins, else the
/// checkpoint's embedded one, else library defaults; --seed overrides either.
wlfm::train_config resolve_config(const std::string& config_path, const wlfm::model_state* st,
                                  bool seed_given, std::uint64_t seed) {
    wlfm::train_config cfg;
    if (!config_path.empty())
        cfg = wlfm::load_train_config(config_path);
    else if (st)
        cfg = st->config;
    if (seed_given) cfg.seed = seed;
    cfg.validate();
    return cfg;
}

struct common_flags {
    std::string config;
    std::string manifest;
    std::string checkpoint;
    std::string out_dir;
    std::uint64_t seed = 0;

    CLI::Option* seed_opt = nullptr;

    void add_config(CLI::App& sub) {
        sub.add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    }
    void add_manifest(CLI::App& sub) {
        sub.add_option("--manifest", manifest, "corpus manifest CSV")
            ->required()
            ->check(CLI::ExistingFile);
    }
    void add_checkpoint(CLI::App& sub) {
        sub.add_option("--checkpoint", checkpoint, "input checkpoint")
            ->required()
            ->check(CLI::ExistingFile);
    }
    void add_out_dir(CLI::App& sub) {
        sub.add_option("--out-dir", out_dir, "output directory")->required();
    }
    void add_seed(CLI::App& sub) {
        seed_opt = sub.add_option("--seed", seed, "override the run seed");
    }
    bool seed_given() const { return seed_opt && seed_opt->count() > 0; }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"well-log tokenization, pretraining, adaptation, and evaluation pipeline"};
    app.require_subcommand(1);

    common_flags gen, tokz, pre, fine, eval_f, bench, expo;

    CLI::App* c_gen = app.add_subcommand("generate", "synthesize a well corpus and manifest");
    gen.add_config(*c_gen);
    gen.add_out_dir(*c_gen);
    gen.add_seed(*c_gen);

    CLI::App* c_tok = app.add_subcommand("train-tokenizer", "train the vector-quantizing tokenizer");
    tokz.add_config(*c_tok);
    tokz.add_manifest(*c_tok);
    tokz.add_out_dir(*c_tok);
    tokz.add_seed(*c_tok);

    CLI::App* c_pre = app.add_subcommand("pretrain", "pretrain the backbone on token sequences");
    pre.add_config(*c_pre);
    pre.add_manifest(*c_pre);
    pre.add_checkpoint(*c_pre);
    pre.add_out_dir(*c_pre);
    pre.add_seed(*c_pre);

    CLI::App* c_fine = app.add_subcommand("finetune", "adapt a pretrained backbone with task heads");
    fine.add_config(*c_fine);
    fine.add_manifest(*c_fine);
    fine.add_checkpoint(*c_fine);
    fine.add_out_dir(*c_fine);
    fine.add_seed(*c_fine);

    std::vector<std::uint64_t> eval_seeds;
    std::string baseline;
    bool want_ttest = false;
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint over seeds");
    eval_f.add_config(*c_eval);
    eval_f.add_manifest(*c_eval);
    eval_f.add_checkpoint(*c_eval);
    eval_f.add_out_dir(*c_eval);
    c_eval->add_option("--seeds", eval_seeds, "evaluation seeds (comma-separated)")
        ->delimiter(',');
    c_eval->add_option("--baseline", baseline, "metrics CSV of a baseline run")
        ->check(CLI::ExistingFile);
    c_eval->add_flag("--t-test", want_ttest, "paired t-test against the baseline");

    double latency_ms = 2.0;
    std::size_t bench_workers = 0, bench_qcap = 0;
    double bench_threshold = 0.0;
    CLI::App* c_bench = app.add_subcommand("bench-loader", "benchmark the asynchronous loader");
    bench.add_config(*c_bench);
    bench.add_manifest(*c_bench);
    bench.add_out_dir(*c_bench);
    bench.add_seed(*c_bench);
    CLI::Option* o_workers = c_bench->add_option("--workers", bench_workers, "producer threads");
    CLI::Option* o_qcap = c_bench->add_option("--queue-capacity", bench_qcap, "queue capacity");
    CLI::Option* o_thresh =
        c_bench->add_option("--score-threshold", bench_threshold, "admission threshold");
    c_bench->add_option("--consumer-latency-ms", latency_ms, "simulated per-item consumer cost");

    std::string level_name = "token";
    CLI::App* c_exp = app.add_subcommand("export-embeddings", "write window embeddings as CSV");
    expo.add_manifest(*c_exp);
    expo.add_checkpoint(*c_exp);
    expo.add_out_dir(*c_exp);
    c_exp->add_option("--level", level_name, "embedding level: token or patch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (c_gen->parsed()) {
            const auto cfg = resolve_config(gen.config, nullptr, gen.seed_given(), gen.seed);
            const auto manifest = wlfm::run_generate(cfg, gen.out_dir);
            std::cout << "generated " << cfg.synth.n_wells << " wells; manifest: "
                      << manifest.string() << '\n';
        } else if (c_tok->parsed()) {
            const auto cfg = resolve_config(tokz.config, nullptr, tokz.seed_given(), tokz.seed);
            const auto ckpt = wlfm::run_train_tokenizer(cfg, tokz.manifest, tokz.out_dir);
            std::cout << "tokenizer checkpoint: " << ckpt.string() << '\n';
        } else if (c_pre->parsed()) {
            wlfm::model_state st = wlfm::load_model_state(pre.checkpoint);
            const auto cfg = resolve_config(pre.config, &st, pre.seed_given(), pre.seed);
            const auto ckpt = wlfm::run_pretrain(cfg, pre.manifest, pre.checkpoint, pre.out_dir);
            std::cout << "pretrained checkpoint: " << ckpt.string() << '\n';
        } else if (c_fine->parsed()) {
            wlfm::model_state st = wlfm::load_model_state(fine.checkpoint);
            const auto cfg = resolve_config(fine.config, &st, fine.seed_given(), fine.seed);
            const auto ckpt = wlfm::run_finetune(cfg, fine.manifest, fine.checkpoint,
                                                 fine.out_dir);
            std::cout << "finetuned checkpoint: " << ckpt.string() << '\n';
        } else if (c_eval->parsed()) {
            wlfm::model_state st = wlfm::load_model_state(eval_f.checkpoint);
            const auto cfg = resolve_config(eval_f.config, &st, false, 0);
            const auto seeds = eval_seeds.empty() ? cfg.eval_seeds : eval_seeds;
            const auto entries = wlfm::read_manifest(eval_f.manifest);
            wlfm::eval_outputs out =
                wlfm::run_eval(st, entries, seeds, eval_f.out_dir, baseline, want_ttest);
            out.report.print(std::cout);
            std::cout << "metrics: " << out.metrics_csv.string() << '\n';
            if (!out.t_test_csv.empty()) std::cout << "t-tests: " << out.t_test_csv.string() << '\n';
        } else if (c_bench->parsed()) {
            auto cfg = resolve_config(bench.config, nullptr, bench.seed_given(), bench.seed);
            if (o_workers->count()) cfg.workers = bench_workers;
            if (o_qcap->count()) cfg.queue_capacity = bench_qcap;
            if (o_thresh->count()) cfg.score_threshold = bench_threshold;
            cfg.validate();
            const auto rows = wlfm::run_bench(cfg, bench.manifest, bench.out_dir, latency_ms);
            for (const auto& r : rows)
                std::cout << "workers=" << r.workers << " sync=" << r.sync_throughput
                          << "/s async=" << r.async_throughput << "/s speedup=" << r.speedup
                          << '\n';
        } else if (c_exp->parsed()) {
            wlfm::model_state st = wlfm::load_model_state(expo.checkpoint);
            const auto entries = wlfm::read_manifest(expo.manifest);
            const auto level = wlfm::embedding_level_from_name(level_name);
            const auto path = wlfm::run_export(st, entries, level, expo.out_dir);
            std::cout << "embeddings: " << path.string() << '\n';
        }
        return 0;
    } catch (const wlfm::error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

#pragma once

// Stage drivers: the functions behind each CLI command. Every driver is
// deterministic for a fixed configuration and seed — RNG streams are derived
// from the run seed per stage and epoch, wells are visited in manifest order,
// and all floating-point output goes through the shortest-round-trip
// formatter — so two runs of the same pipeline produce bit-identical metric
// CSVs.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wlfm/config.hpp"
#include "wlfm/corpus.hpp"
#include "wlfm/eval.hpp"
#include "wlfm/finetune.hpp"
#include "wlfm/loader.hpp"
#include "wlfm/model_state.hpp"
#include "wlfm/pretrain.hpp"
#include "wlfm/stats.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

// ---------------------------------------------------------------------------
// Corpus access
// ---------------------------------------------------------------------------

/// Loads and normalizes the manifest's wells, in manifest order. `split`
/// filters by the manifest's split column; empty loads everything.
inline std::vector<well_log> load_split_wells(const std::vector<manifest_entry>& entries,
                                              const std::string& split = "") {
    std::vector<well_log> wells;
    for (const auto& e : entries) {
        if (!split.empty() && e.split != split) continue;
        wells.push_back(normalize_well(load_well(e.path, e.well_id)));
    }
    return wells;
}

/// Wells for training: the manifest's train split, or every well when the
/// manifest carries no split tags.
inline std::vector<well_log> load_training_wells(const std::vector<manifest_entry>& entries) {
    bool any_tag = false;
    for (const auto& e : entries)
        if (!e.split.empty()) any_tag = true;
    return load_split_wells(entries, any_tag ? "train" : "");
}

/// Wells for evaluation: the test split, or every well without split tags.
inline std::vector<well_log> load_eval_wells(const std::vector<manifest_entry>& entries) {
    bool any_test = false;
    for (const auto& e : entries)
        if (e.split == "test") any_test = true;
    return load_split_wells(entries, any_test ? "test" : "");
}

/// Number of wells that appear more than once or under more than one split
/// tag — the well-level leakage check. Zero means the split is sound.
inline std::size_t split_leakage_violations(const std::vector<manifest_entry>& entries) {
    std::map<std::string, std::set<std::string>> splits_of;
    std::map<std::string, std::size_t> count_of;
    for (const auto& e : entries) {
        splits_of[e.well_id].insert(e.split);
        ++count_of[e.well_id];
    }
    std::size_t bad = 0;
    for (const auto& [id, n] : count_of)
        if (n > 1 || splits_of[id].size() > 1) ++bad;
    return bad;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Synthesizes the corpus, splits it at well level, and writes wells plus a
/// manifest under `out_dir`. Returns the manifest path.
inline std::filesystem::path run_generate(const train_config& cfg,
                                          const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::vector<well_log> wells = generate_corpus(cfg.synth);
    std::vector<std::string> ids;
    ids.reserve(wells.size());
    for (const auto& w : wells) ids.push_back(w.well_id);
    well_split split = split_wells(std::move(ids), cfg.split_ratios(), cfg.seed);
    const auto manifest = write_corpus(wells, out_dir, &split);
    write_resolved_config(cfg, out_dir / "resolved_config.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// train-tokenizer
// ---------------------------------------------------------------------------

namespace detail {

/// step/epoch bookkeeping shared by the three training drivers.
struct step_clock {
    std::size_t step = 0;
    std::size_t cap = 0;  // 0 = unlimited
    bool done() const { return cap > 0 && step >= cap; }
};

}  // namespace detail

/// Trains the vector-quantizing tokenizer on the manifest's training wells
/// and writes `tokenizer.ckpt` plus a per-step metrics CSV to `out_dir`.
inline std::filesystem::path run_train_tokenizer(const train_config& cfg,
                                                 const std::filesystem::path& manifest,
                                                 const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto entries = read_manifest(manifest);
    std::vector<well_log> wells = load_training_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no training wells in manifest");

    tokenizer_model tok = init_tokenizer(cfg.tokenizer(), cfg.seed);
    std::vector<patch> pool;
    for (const auto& w : wells)
        for (auto& p : extract_patches(w, cfg.patch_length, cfg.patch_stride))
            pool.push_back(std::move(p));
    require(!pool.empty(), errc::degenerate_input, "training wells yield no windows");

    ad::adam opt(cfg.optimizer());
    rng reinit(rng::derive(cfg.seed, /*stream=*/21, 0));
    csv_writer metrics(out_dir / "tokenizer_metrics.csv");
    metrics.row({"step", "recon", "commit", "codebook", "total", "codes_used"});

    detail::step_clock clock{0, cfg.max_steps};
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !clock.done(); ++epoch) {
        rng shuffle_rng(rng::derive(cfg.seed, /*stream=*/20, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t at = 0; at < order.size() && !clock.done(); at += cfg.batch_size) {
            std::vector<const patch*> batch;
            for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
                batch.push_back(&pool[order[i]]);
            tok_step_metrics m = tokenizer_train_step(tok, opt, batch, cfg.lr, reinit);
            require(std::isfinite(m.total), errc::non_finite_loss, "tokenizer loss diverged");
            ++clock.step;
            metrics.row({std::to_string(clock.step), format_double(m.recon),
                         format_double(m.commit), format_double(m.codebook_term),
                         format_double(m.total), std::to_string(m.codes_used)});
            metrics.stream().flush();
        }
    }

    model_state st;
    st.stage = model_stage::tokenizer;
    st.step = clock.step;
    st.seed = cfg.seed;
    st.config = cfg;
    pack_tokenizer(st, tok);
    const auto ckpt = out_dir / "tokenizer.ckpt";
    save_model_state(st, ckpt);
    write_resolved_config(cfg, out_dir / "resolved_config.json");
    return ckpt;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

namespace detail {

/// Positive pairs re-indexed for one batch: a pair survives when both of its
/// wells are in the batch.
inline std::vector<batch_pair> pairs_in_chunk(const std::vector<positive_pair>& pairs,
                                              const std::vector<std::size_t>& chunk) {
    std::map<std::size_t, std::size_t> pos_of;
    for (std::size_t i = 0; i < chunk.size(); ++i) pos_of[chunk[i]] = i;
    std::vector<batch_pair> out;
    for (const auto& p : pairs) {
        auto a = pos_of.find(p.a_well);
        auto b = pos_of.find(p.b_well);
        if (a == pos_of.end() || b == pos_of.end()) continue;
        out.push_back({a->second, p.a_pos, b->second, p.b_pos});
    }
    return out;
}

}  // namespace detail

/// Pretrains the backbone on top of a tokenizer checkpoint and writes
/// `pretrained.ckpt` plus a per-step metrics CSV. The vq_noscl arm runs with
/// the contrastive weight forced to zero; the raw_cont arm feeds continuous
/// latents and regresses them at masked positions.
inline std::filesystem::path run_pretrain(const train_config& cfg,
                                          const std::filesystem::path& manifest,
                                          const std::filesystem::path& checkpoint,
                                          const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    model_state prev = load_model_state(checkpoint);
    require(prev.stage == model_stage::tokenizer, errc::stage_order_violation,
            "pretraining requires a tokenizer-stage checkpoint, got '" +
                std::string(stage_name(prev.stage)) + "'");
    tokenizer_model tok = tokenizer_from_state(prev);

    const auto entries = read_manifest(manifest);
    std::vector<well_log> wells = load_training_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no training wells in manifest");

    const pretrain_config pcfg = cfg.pretraining();
    rng init_rng(rng::derive(cfg.seed, /*stream=*/28, 0));
    named_params P = init_backbone_params(pcfg.bb, pcfg.vocab, pcfg.latent_dim, init_rng);

    const std::vector<positive_pair> pairs =
        build_positive_pairs(wells, cfg.patch_length, cfg.patch_stride, cfg.pairs());

    ad::adam opt(cfg.optimizer());
    csv_writer metrics(out_dir / "pretrain_metrics.csv");
    metrics.row({"step", "L_MTM", "L_SCL", "total", "mask_acc", "pairs", "masked"});

    detail::step_clock clock{0, cfg.max_steps};
    for (std::size_t epoch = 0; epoch < cfg.epochs && !clock.done(); ++epoch) {
        rng aug_rng(rng::derive(cfg.seed, /*stream=*/22, epoch));
        rng shuffle_rng(rng::derive(cfg.seed, /*stream=*/23, epoch));
        rng step_rng(rng::derive(cfg.seed, /*stream=*/24, epoch));
        std::vector<token_sequence> seqs = make_token_sequences(wells, tok, cfg.dropout_prob,
                                                                aug_rng);
        std::vector<std::size_t> order(seqs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        for (std::size_t at = 0; at < order.size() && !clock.done(); at += cfg.batch_size) {
            std::vector<std::size_t> chunk(
                order.begin() + static_cast<std::ptrdiff_t>(at),
                order.begin() +
                    static_cast<std::ptrdiff_t>(std::min(order.size(), at + cfg.batch_size)));
            std::vector<token_sequence> batch;
            for (std::size_t i : chunk) batch.push_back(seqs[i]);
            const auto bpairs = detail::pairs_in_chunk(pairs, chunk);
            pretrain_metrics m = pretrain_step(P, batch, bpairs, pcfg, opt, cfg.lr, step_rng);
            ++clock.step;
            metrics.row({std::to_string(clock.step), format_double(m.masked_loss),
                         format_double(m.contrastive), format_double(m.total),
                         format_double(m.mask_accuracy), std::to_string(m.pairs_in_batch),
                         std::to_string(m.masked_positions)});
            metrics.stream().flush();
        }
    }

    model_state st;
    st.stage = model_stage::pretrained;
    st.step = clock.step;
    st.seed = cfg.seed;
    st.config = cfg;
    pack_tokenizer(st, tok);
    pack_backbone(st, P);
    const auto ckpt = out_dir / "pretrained.ckpt";
    save_model_state(st, ckpt);
    write_resolved_config(cfg, out_dir / "resolved_config.json");
    return ckpt;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

/// Adapts a pretrained checkpoint with the multi-task heads and writes
/// `finetuned.ckpt` plus a per-step metrics CSV.
inline std::filesystem::path run_finetune(const train_config& cfg,
                                          const std::filesystem::path& manifest,
                                          const std::filesystem::path& checkpoint,
                                          const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    model_state prev = load_model_state(checkpoint);
    require(prev.stage == model_stage::pretrained, errc::stage_order_violation,
            "adaptation requires a pretrained-stage checkpoint, got '" +
                std::string(stage_name(prev.stage)) + "'");
    tokenizer_model tok = tokenizer_from_state(prev);
    named_params P = backbone_from_state(prev);

    const auto entries = read_manifest(manifest);
    std::vector<well_log> wells = load_training_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no training wells in manifest");

    const finetune_config fcfg = cfg.adaptation();
    rng head_rng(rng::derive(cfg.seed, /*stream=*/27, 0));
    init_task_heads(P, fcfg, head_rng);

    ad::adam opt(cfg.optimizer());
    csv_writer metrics(out_dir / "finetune_metrics.csv");
    metrics.row({"step", "recon", "poro", "litho", "consistency", "total", "litho_acc",
                 "masked_entries"});

    detail::step_clock clock{0, cfg.max_steps};
    for (std::size_t epoch = 0; epoch < cfg.epochs && !clock.done(); ++epoch) {
        rng drop_rng(rng::derive(cfg.seed, /*stream=*/25, epoch));
        rng shuffle_rng(rng::derive(cfg.seed, /*stream=*/26, epoch));
        labeled_batch all = make_labeled_batch(wells, tok, fcfg, drop_rng);
        std::vector<std::size_t> order(all.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        for (std::size_t at = 0; at < order.size() && !clock.done(); at += cfg.batch_size) {
            labeled_batch batch;
            for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
                batch.push_back(all[order[i]]);
            finetune_metrics m = finetune_step(P, batch, fcfg, opt, cfg.lr);
            ++clock.step;
            metrics.row({std::to_string(clock.step), format_double(m.recon),
                         format_double(m.poro), format_double(m.litho),
                         format_double(m.consistency), format_double(m.total),
                         format_double(m.litho_accuracy), std::to_string(m.masked_entries)});
            metrics.stream().flush();
        }
    }

    model_state st;
    st.stage = model_stage::finetuned;
    st.step = clock.step;
    st.seed = cfg.seed;
    st.config = cfg;
    pack_tokenizer(st, tok);
    pack_backbone(st, P);
    const auto ckpt = out_dir / "finetuned.ckpt";
    save_model_state(st, ckpt);
    write_resolved_config(cfg, out_dir / "resolved_config.json");
    return ckpt;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace detail {

/// One row per labeled window: the pretrained token-embedding vector of the
/// window's token, plus the window's majority lithology.
struct window_embeddings {
    tensor token_vecs;  // [N × latent_dim] — each window's vocabulary vector
    tensor patch_vecs;  // [N × proj_dim] — each window's contextual projection
    std::vector<int> litho;
};

/// Two embedding views of every labeled window: the codebook vector of its
/// token (what the vocabulary says the window is) and the backbone's
/// contextual projection (what the surrounding sequence says it is).
inline window_embeddings collect_window_embeddings(named_params& P,
                                                   const std::vector<token_sequence>& seqs,
                                                   const codebook& cb,
                                                   const pretrain_config& pcfg) {
    std::size_t n = 0;
    for (const auto& s : seqs)
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s.litho_at[i] >= 0) ++n;
    window_embeddings out;
    out.token_vecs = tensor(n, cb.dim());
    out.patch_vecs = tensor(n, pcfg.bb.proj_dim);
    std::size_t r = 0;
    for (const auto& s : seqs) {
        tensor proj = embed_sequence(P, s, pcfg);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s.litho_at[i] < 0) continue;
            for (std::size_t j = 0; j < cb.dim(); ++j)
                out.token_vecs.at(r, j) = cb.vectors.at(s.tokens[i], j);
            for (std::size_t j = 0; j < proj.cols; ++j) out.patch_vecs.at(r, j) = proj.at(i, j);
            out.litho.push_back(s.litho_at[i]);
            ++r;
        }
    }
    return out;
}

inline std::size_t distinct_labels(const std::vector<int>& labels) {
    std::set<int> s(labels.begin(), labels.end());
    return s.size();
}

}  // namespace detail

/// Reconstructs per-seed metric vectors from a metrics CSV written by
/// metric_report::write_csv.
inline std::map<std::string, std::vector<double>> read_metric_csv(
    const std::filesystem::path& path, std::vector<std::uint64_t>* seeds_out = nullptr) {
    csv_table t = read_csv(path);
    require(t.header.size() >= 5, errc::io_error, path.string() + ": not a metrics CSV");
    if (seeds_out) {
        seeds_out->clear();
        for (std::size_t c = 4; c < t.header.size(); ++c) {
            const std::string& h = t.header[c];
            require(h.rfind("seed_", 0) == 0, errc::io_error,
                    path.string() + ": unexpected column " + h);
            seeds_out->push_back(std::stoull(h.substr(5)));
        }
    }
    std::map<std::string, std::vector<double>> out;
    for (const auto& row : t.rows) {
        std::vector<double> vals;
        for (std::size_t c = 4; c < row.size(); ++c) vals.push_back(parse_double(row[c]));
        out[row[1]] = vals;
    }
    return out;
}

struct eval_outputs {
    metric_report report;
    std::filesystem::path metrics_csv;
    std::filesystem::path t_test_csv;  // empty unless a baseline was compared
};

/// Evaluates a pretrained or finetuned checkpoint on the manifest's
/// evaluation wells over the listed seeds. Clustering and masked-accuracy
/// metrics vary by seed; prediction metrics from the task heads are
/// deterministic and repeat across seed columns. When `baseline_csv` is
/// nonempty, runs the paired t-test per metric against it.
inline eval_outputs run_eval(const model_state& st, const std::vector<manifest_entry>& entries,
                             const std::vector<std::uint64_t>& seeds,
                             const std::filesystem::path& out_dir,
                             const std::filesystem::path& baseline_csv, bool want_ttest) {
    require(stage_rank(st.stage) >= stage_rank(model_stage::pretrained),
            errc::stage_order_violation, "evaluation requires at least a pretrained checkpoint");
    require(!seeds.empty(), errc::config_error, "eval needs at least one seed");
    if (want_ttest) {
        require(!baseline_csv.empty(), errc::missing_baseline,
                "t-test requested without --baseline");
        require(seeds.size() >= 2, errc::config_error,
                "the paired t-test needs at least two seeds; got " +
                    std::to_string(seeds.size()));
    }
    std::filesystem::create_directories(out_dir);

    tokenizer_model tok = tokenizer_from_state(st);
    named_params P = backbone_from_state(st);
    const pretrain_config pcfg = st.config.pretraining();

    std::vector<well_log> wells = load_eval_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no evaluation wells in manifest");

    rng no_aug(0);
    const std::vector<token_sequence> seqs = make_token_sequences(wells, tok, 0.0, no_aug);
    const auto embs = detail::collect_window_embeddings(P, seqs, tok.cb, pcfg);
    const std::size_t k = std::max<std::size_t>(2, detail::distinct_labels(embs.litho));

    bool any_test = false;
    for (const auto& e : entries)
        if (e.split == "test") any_test = true;
    metric_report rep;
    rep.split = any_test ? "test" : "all";
    rep.seeds = seeds;

    std::vector<double> mask_top1, ari_token, purity_token, ari_patch, purity_patch;
    for (std::uint64_t s : seeds) {
        rng mask_rng(rng::derive(s, /*stream=*/30, 0));
        mask_top1.push_back(masked_accuracy_eval(P, seqs, pcfg, mask_rng));
        clustering_result ct = clustering_metrics(embs.token_vecs, embs.litho, k, s);
        ari_token.push_back(ct.ari);
        purity_token.push_back(ct.purity);
        clustering_result cp = clustering_metrics(embs.patch_vecs, embs.litho, k, s);
        ari_patch.push_back(cp.ari);
        purity_patch.push_back(cp.purity);
    }
    rep.add("mask_top1", mask_top1);
    rep.add("clust_ari_token", ari_token);
    rep.add("clust_purity_token", purity_token);
    rep.add("clust_ari_patch", ari_patch);
    rep.add("clust_purity_patch", purity_patch);

    if (st.stage == model_stage::finetuned) {
        const finetune_config fcfg = st.config.adaptation();
        std::vector<int> litho_pred, litho_true;
        std::vector<double> poro_pred, poro_true;
        const auto pred_dir = out_dir / "predictions";
        std::filesystem::create_directories(pred_dir);
        for (const auto& w : wells) {
            well_predictions wp = predict_well(P, w, tok, fcfg);
            write_predictions_csv(pred_dir / (w.well_id + ".csv"), wp);
            for (std::size_t i = 0; i < wp.depths.size(); ++i) {
                litho_pred.push_back(wp.litho_pred[i]);
                litho_true.push_back(w.litho_labels[i]);
                poro_pred.push_back(wp.poro_pred[i]);
                poro_true.push_back(w.porosity[i]);
            }
        }
        classification_result cls = classification_metrics(litho_pred, litho_true);
        regression_result reg = regression_metrics(poro_pred, poro_true);
        rep.add("litho_acc", std::vector<double>(seeds.size(), cls.accuracy_pct));
        rep.add("litho_macro_f1", std::vector<double>(seeds.size(), cls.macro_f1));
        rep.add("poro_mae", std::vector<double>(seeds.size(), reg.mae));
        rep.add("poro_mse", std::vector<double>(seeds.size(), reg.mse));
    }

    const double leak = static_cast<double>(split_leakage_violations(entries));
    rep.add("split_leakage", std::vector<double>(seeds.size(), leak));

    eval_outputs out;
    out.report = rep;
    out.metrics_csv = out_dir / "metrics.csv";
    rep.write_csv(out.metrics_csv);

    if (!baseline_csv.empty()) {
        std::vector<std::uint64_t> base_seeds;
        const auto baseline = read_metric_csv(baseline_csv, &base_seeds);
        require(base_seeds.size() == seeds.size(), errc::length_mismatch,
                "baseline has " + std::to_string(base_seeds.size()) + " seed columns, run has " +
                    std::to_string(seeds.size()));
        csv_writer tt(out_dir / "t_tests.csv");
        tt.row({"metric", "mean_diff", "t", "p", "note"});
        for (const auto& m : rep.metrics) {
            auto it = baseline.find(m.name);
            if (it == baseline.end()) continue;
            try {
                t_test_result r = paired_t_test(m.per_seed, it->second);
                tt.row({m.name, format_double(r.mean_diff), format_double(r.t),
                        format_double(r.p), ""});
            } catch (const error& e) {
                if (e.code() != errc::zero_variance) throw;
                tt.row({m.name, "", "", "", "zero-variance differences; t undefined"});
            }
        }
        out.t_test_csv = out_dir / "t_tests.csv";
    }
    return out;
}

// ---------------------------------------------------------------------------
// bench-loader
// ---------------------------------------------------------------------------

/// Benchmarks the synchronous baseline against the asynchronous loader on the
/// manifest's wells and writes `bench.csv`. The requested worker count is
/// capped by the WLFM_THREADS environment variable.
inline std::vector<bench_row> run_bench(const train_config& cfg,
                                        const std::filesystem::path& manifest,
                                        const std::filesystem::path& out_dir,
                                        double consumer_latency_ms) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto entries = read_manifest(manifest);
    std::vector<well_log> wells = load_split_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no wells in manifest");

    bench_config bc;
    bc.workers = effective_workers(cfg.workers);
    bc.queue_capacity = cfg.queue_capacity;
    bc.score_threshold = cfg.score_threshold;
    std::vector<bench_row> rows =
        loader_bench(wells, {bc}, consumer_latency_ms, cfg.patch_length, cfg.patch_stride);
    write_bench_csv((out_dir / "bench.csv").string(), rows);
    return rows;
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

/// Exports window embeddings for the manifest's evaluation wells to
/// `out_dir/embeddings_<level>.csv`.
inline std::filesystem::path run_export(const model_state& st,
                                        const std::vector<manifest_entry>& entries,
                                        embedding_level level,
                                        const std::filesystem::path& out_dir) {
    require(stage_rank(st.stage) >= stage_rank(model_stage::pretrained),
            errc::stage_order_violation, "embedding export requires at least a pretrained checkpoint");
    std::filesystem::create_directories(out_dir);
    tokenizer_model tok = tokenizer_from_state(st);
    named_params P = backbone_from_state(st);
    std::vector<well_log> wells = load_eval_wells(entries);
    require(!wells.empty(), errc::degenerate_input, "no evaluation wells in manifest");
    const auto path =
        out_dir / ("embeddings_" + std::string(embedding_level_name(level)) + ".csv");
    export_embeddings(P, wells, tok, st.config.pretraining(), level, path);
    return path;
}

}  // namespace wlfm

// Acceptance gate: ten self-contained checks, one [PASS]/[FAIL] line each.
// Every tolerance and threshold is pinned in code next to its check. The
// binary exits with the number of failed checks.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wlfm/pipeline.hpp"

using namespace wlfm;
namespace fs = std::filesystem;

namespace {

struct outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& title, const outcome& o) {
    std::printf("[%s] criterion %d: %s (%s)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Artifacts trained once for the learning-signal check and reused by the
// transfer, ablation, and clustering checks.
struct shared_artifacts {
    fs::path root;
    bool signal_ready = false;
    train_config cfg;
    fs::path manifest, tok_ckpt, pre_ckpt;
};

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

struct fd_stats {
    std::size_t checked = 0;
    double max_rel = 0.0;
    bool ok = true;
};

// Convention shared with the unit tests: h = 1e-5 * max(1, |theta|), relative
// error |analytic - fd| / max(|analytic|, |fd|, 1e-3) must stay below 1e-4.
void fd_check(const std::function<ad::var(ad::param_binder&)>& build, std::size_t target_samples,
              fd_stats& st) {
    constexpr double tol = 1e-4;
    ad::param_binder binder;
    ad::var loss = build(binder);
    ad::backward(loss);

    std::size_t total_entries = 0;
    for (const auto& ref : binder.refs()) total_entries += ref.value->size();
    const std::size_t stride = std::max<std::size_t>(1, total_entries / target_samples);

    auto eval = [&]() {
        ad::param_binder b;
        return build(b)->val.item();
    };

    for (const auto& ref : binder.refs()) {
        tensor* t = ref.value;
        const bool has_grad = ref.node_->grad.size() == t->size();
        for (std::size_t i = 0; i < t->size(); i += stride) {
            const double orig = t->v[i];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            t->v[i] = orig + h;
            const double fp = eval();
            t->v[i] = orig - h;
            const double fm = eval();
            t->v[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = has_grad ? ref.node_->grad.v[i] : 0.0;
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
            st.max_rel = std::max(st.max_rel, rel);
            if (rel >= tol) st.ok = false;
            ++st.checked;
        }
    }
}

outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    fd_stats st;

    train_config tc;
    tc.codebook_size = 16;
    tc.latent_dim = 8;
    tc.patch_length = 16;
    tc.patch_stride = 8;
    tc.enc_hidden = 8;
    tc.conv_layers = 2;
    tc.conv_kernel = 3;
    tc.curve_emb_dim = 3;
    tc.depth_pos_dim = 4;
    tc.layers = 2;
    tc.heads = 2;
    tc.d_model = 16;
    tc.ffn_dim = 32;
    tc.proj_dim = 6;
    tc.synth.n_wells = 3;
    tc.synth.well_length_min = 20.0;
    tc.synth.well_length_max = 24.0;
    tc.synth.seed = 51;
    tc.validate();

    std::vector<well_log> wells;
    for (auto& w : generate_corpus(tc.synth)) wells.push_back(normalize_well(std::move(w)));

    // quantized-autoencoder objective: reconstruction through the
    // straight-through estimator plus the commitment term, jump and anchor
    // frozen at the base point (exactly what the training step differentiates)
    {
        const tok_config cfg = tc.tokenizer();
        tokenizer_model m = init_tokenizer(cfg, 99);
        std::vector<patch> ps = extract_patches(wells[0], cfg.patch_length, cfg.patch_stride);
        ps.resize(3);
        std::vector<tensor> deltas;
        std::vector<tensor> anchors;
        for (const auto& p : ps) {
            tensor z_base = encode_patch(m.params, p, cfg);
            auto [token, z_q] = quantize(z_base, m.cb);
            (void)token;
            tensor delta = z_q;
            for (std::size_t j = 0; j < delta.size(); ++j) delta.v[j] -= z_base.v[j];
            deltas.push_back(std::move(delta));
            anchors.push_back(std::move(z_q));
        }
        fd_check(
            [&](ad::param_binder& b) {
                graph_ctx ctx(m.params, &b);
                ad::var total = ad::constant(tensor(1, 1));
                for (std::size_t i = 0; i < ps.size(); ++i) {
                    ad::var z_e = encode_patch_graph(ctx, ps[i], cfg);
                    ad::var dec = decode_patch_graph(ctx, ad::add(z_e, ad::constant(deltas[i])), cfg);
                    total = ad::add(total, ad::add(recon_loss_graph(dec, ps[i]),
                                                   commitment_loss_graph(z_e, anchors[i], cfg.beta)));
                }
                return ad::scale(total, 1.0 / static_cast<double>(ps.size()));
            },
            80, st);
    }

    // masked-prediction + alignment objective on a toy two-layer backbone
    {
        const pretrain_config pcfg = tc.pretraining();
        rng g(24);
        named_params P = init_backbone_params(pcfg.bb, pcfg.vocab, tc.latent_dim, g);
        const std::vector<std::size_t> tokens = {0, 3, 5, 2, 1, 6, 4};
        const std::vector<double> rels = {0.0, 0.15, 0.3, 0.45, 0.6, 0.8, 1.0};
        const std::vector<std::size_t> mask = {1, 4};
        const std::vector<std::size_t> targets = {tokens[1], tokens[4]};
        fd_check(
            [&](ad::param_binder& b) {
                graph_ctx ctx(P, &b);
                ad::var x = assemble_token_input(ctx, tokens, rels, mask, pcfg.bb);
                ad::var h = backbone_forward(ctx, x, pcfg.bb);
                std::vector<ad::var> rows;
                for (std::size_t pos : mask) rows.push_back(ad::row_select(h, pos));
                ad::var logits = ad::add_row_broadcast(
                    ad::matmul(ad::concat_rows(rows), ctx["bb.mtm_head"]), ctx["bb.mtm_bias"]);
                ad::var mtm = masked_token_loss_graph(logits, targets);
                auto project = [&](std::size_t pos) {
                    return ad::add_row_broadcast(
                        ad::matmul(ad::row_select(h, pos), ctx["bb.proj_head"]),
                        ctx["bb.proj_bias"]);
                };
                ad::var scl = contrastive_loss_graph(project(0), project(2),
                                                     {project(5), project(6)}, pcfg.temperature);
                return ad::add(mtm, ad::scale(scl, pcfg.alpha));
            },
            80, st);
    }

    // multi-task adaptation objective, all four weighted terms
    {
        finetune_config fcfg = tc.adaptation();
        tokenizer_model tok = init_tokenizer(tc.tokenizer(), 7);
        rng g(61);
        labeled_batch batch = make_labeled_batch({wells[1], wells[2]}, tok, fcfg, g);
        named_params P = init_backbone_params(fcfg.pre.bb, fcfg.pre.vocab, tc.latent_dim, g);
        rng hg(62);
        init_task_heads(P, fcfg, hg);
        fd_check(
            [&](ad::param_binder& b) {
                graph_ctx ctx(P, &b);
                return detail::multitask_graph(ctx, batch, fcfg).loss;
            },
            80, st);
    }

    const double dt = seconds_since(t0);
    outcome o;
    o.pass = st.ok && st.checked >= 200 && dt < 120.0;
    o.detail = fmt("%zu params sampled across three objectives, max rel err %.2e, tol 1e-4, %.1fs",
                   st.checked, st.max_rel, dt);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 2: quantizer vs exhaustive nearest-neighbor search
// ---------------------------------------------------------------------------

outcome criterion_quantizer() {
    const auto t0 = std::chrono::steady_clock::now();
    rng g(404);
    std::size_t mismatches = 0, ties = 0;
    const std::size_t instances = 10000;
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t K = 1 + (i % 64);
        const std::size_t d = 1 + (i % 13);
        codebook cb = make_codebook(K, d, g);
        tensor z(1, d);
        for (std::size_t j = 0; j < d; ++j) z.v[j] = g.uniform(-2.0, 2.0);

        if (i % 10 == 3 && K >= 2) {
            // duplicated entry: distances bit-identical, lowest index must win
            const std::size_t a = i % (K - 1);
            for (std::size_t j = 0; j < d; ++j) cb.vectors.at(a + 1, j) = cb.vectors.at(a, j);
            ++ties;
        }
        if (i % 10 == 7 && K >= 2) {
            // two entries mirrored around the query: squared distances are the
            // same sum of squares on both sides, an exact tie
            const std::size_t a = i % (K - 1);
            for (std::size_t j = 0; j < d; ++j) {
                const double u = g.uniform(0.1, 1.0);
                cb.vectors.at(a, j) = z.v[j] + u;
                cb.vectors.at(a + 1, j) = z.v[j] - u;
            }
            ++ties;
        }

        // independent oracle: materialize all distances, then scan
        std::vector<double> d2(K, 0.0);
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = z.v[j] - cb.vectors.at(k, j);
                d2[k] += diff * diff;
            }
        std::size_t expect = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (d2[k] < d2[expect]) expect = k;

        if (quantize(z, cb).first != expect) ++mismatches;
    }
    const double dt = seconds_since(t0);
    outcome o;
    o.pass = mismatches == 0 && dt < 10.0;
    o.detail = fmt("%zu instances (%zu engineered ties), %zu mismatches, %.2fs", instances, ties,
                   mismatches, dt);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 3: loss identities
// ---------------------------------------------------------------------------

outcome criterion_identities() {
    outcome o;
    std::vector<std::string> parts;
    bool ok = true;

    // uniform logits: masked cross-entropy equals ln K
    {
        const std::size_t K = 16;
        tensor logits(5, K);  // zero-initialized
        const std::vector<std::size_t> targets = {0, 7, 15, 3, 9};
        const double ce = masked_token_loss_graph(ad::constant(logits), targets)->val.item();
        const double err = std::abs(ce - std::log(static_cast<double>(K)));
        ok = ok && err <= 1e-9;
        parts.push_back(fmt("uniform-CE err %.1e", err));
    }

    // all-equal embeddings: the contrastive term equals ln(negatives + 1)
    {
        const std::size_t N = 16;
        tensor e(1, 8);
        for (std::size_t j = 0; j < 8; ++j) e.v[j] = 0.3 * static_cast<double>(j + 1);
        ad::var a = ad::constant(e);
        std::vector<ad::var> negs(N, a);
        const double scl = contrastive_loss_graph(a, a, negs, 0.07)->val.item();
        const double err = std::abs(scl - std::log(static_cast<double>(N + 1)));
        ok = ok && err <= 1e-9;
        parts.push_back(fmt("symmetric-InfoNCE err %.1e", err));
    }

    // a distribution is at zero divergence from itself
    {
        const double k1 = kl_divergence({0.2, 0.5, 0.3}, {0.2, 0.5, 0.3});
        const double k2 = kl_divergence({1.0, 0.0, 0.0}, {1.0, 0.0, 0.0});
        const double err = std::max(std::abs(k1), std::abs(k2));
        ok = ok && err <= 1e-9;
        parts.push_back(fmt("self-KL err %.1e", err));
    }

    // the multi-task total is exactly its four weighted components
    {
        train_config tc;
        tc.codebook_size = 16;
        tc.latent_dim = 6;
        tc.enc_hidden = 8;
        tc.conv_layers = 2;
        tc.conv_kernel = 3;
        tc.curve_emb_dim = 3;
        tc.depth_pos_dim = 4;
        tc.layers = 1;
        tc.heads = 2;
        tc.d_model = 8;
        tc.ffn_dim = 12;
        tc.proj_dim = 4;
        tc.gamma = 0.5;
        tc.synth.n_wells = 2;
        tc.synth.well_length_min = 20.0;
        tc.synth.well_length_max = 24.0;
        tc.synth.seed = 77;
        tc.validate();
        finetune_config fcfg = tc.adaptation();
        std::vector<well_log> wells;
        for (auto& w : generate_corpus(tc.synth)) wells.push_back(normalize_well(std::move(w)));
        tokenizer_model tok = init_tokenizer(tc.tokenizer(), 5);
        rng g(81);
        labeled_batch batch = make_labeled_batch(wells, tok, fcfg, g);
        named_params P = init_backbone_params(fcfg.pre.bb, fcfg.pre.vocab, tc.latent_dim, g);
        rng hg(82);
        init_task_heads(P, fcfg, hg);
        ad::adam opt;
        finetune_metrics m = finetune_step(P, batch, fcfg, opt, 1e-3);
        const multitask_weights& w = fcfg.weights;
        const double combined = w.lambda_r * m.recon + w.lambda_p * m.poro +
                                w.lambda_l * m.litho + w.gamma * m.consistency;
        const double err = std::abs(m.total - combined);
        ok = ok && err <= 1e-12;
        parts.push_back(fmt("additivity err %.1e", err));
    }

    o.pass = ok;
    std::string d;
    for (const auto& p : parts) d += (d.empty() ? "" : "; ") + p;
    o.detail = d + "; tolerances 1e-9 / 1e-12";
    return o;
}

// ---------------------------------------------------------------------------
// criterion 4: async loader delivers the synchronous multiset
// ---------------------------------------------------------------------------

std::vector<well_log> bench_corpus() {
    synth_config sc = default_synth_config();
    sc.n_wells = 50;
    sc.seed = 202;
    std::vector<well_log> wells;
    for (auto& w : generate_corpus(sc)) wells.push_back(normalize_well(std::move(w)));
    return wells;
}

outcome criterion_loader_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<well_log> wells = bench_corpus();
    score_params sp;  // threshold stays at -infinity: everything is admitted

    using key = std::tuple<std::string, std::size_t, double>;
    auto collect_sync = [&]() {
        std::vector<key> ks;
        run_loader_sync(wells, sp, [&](const loader_item& it) {
            ks.emplace_back(it.well_id, it.patch_index, it.score);
        });
        std::sort(ks.begin(), ks.end());
        return ks;
    };
    const std::vector<key> reference = collect_sync();

    bool ok = !reference.empty();
    std::string diffs;
    for (std::size_t workers : {std::size_t{1}, std::size_t{2}, std::size_t{8}}) {
        std::vector<key> ks;
        run_loader(wells, workers, sp, 64, [&](const loader_item& it) {
            ks.emplace_back(it.well_id, it.patch_index, it.score);
        });
        std::sort(ks.begin(), ks.end());
        if (ks != reference) {
            ok = false;
            diffs += fmt(" workers=%zu delivered %zu/%zu;", workers, ks.size(), reference.size());
        }
    }
    const double dt = seconds_since(t0);
    outcome o;
    o.pass = ok && dt < 60.0;
    o.detail = fmt("%zu windows from 50 wells, workers {1,2,8} all match%s, %.2fs",
                   reference.size(), diffs.c_str(), dt);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 5: async speedup under consumer latency
// ---------------------------------------------------------------------------

outcome criterion_loader_speedup() {
    const std::vector<well_log> wells = bench_corpus();
    bench_config bc;
    bc.workers = 4;
    bc.queue_capacity = 64;
    const std::vector<bench_row> rows = loader_bench(wells, {bc}, /*consumer_latency_ms=*/2.0);
    const bench_row& r = rows.at(0);
    outcome o;
    o.pass = r.speedup >= 1.5;
    o.detail = fmt("sync %.0f/s (%.3f ms/item), async %.0f/s, speedup %.2fx, required 1.50x; "
                   "producer work is %.4f ms/item against the 2 ms consumer",
                   r.sync_throughput, 1000.0 / r.sync_throughput, r.async_throughput, r.speedup,
                   1000.0 / r.sync_throughput - 2.0);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 6: learning signal after tokenizer + 2000 pretraining steps
// ---------------------------------------------------------------------------

train_config signal_config() {
    train_config c;
    c.codebook_size = 32;
    c.latent_dim = 8;
    c.enc_hidden = 16;
    c.conv_layers = 2;
    c.conv_kernel = 5;
    c.curve_emb_dim = 4;
    c.depth_pos_dim = 6;
    c.layers = 2;
    c.heads = 4;
    c.d_model = 48;
    c.ffn_dim = 96;
    c.proj_dim = 16;
    c.batch_size = 16;
    c.dropout_prob = 0.0;
    c.seed = 101;
    c.synth.n_wells = 100;
    c.synth.seed = 71;
    return c;
}

outcome criterion_learning_signal(shared_artifacts& art) {
    const auto t0 = std::chrono::steady_clock::now();
    art.cfg = signal_config();

    train_config tok_cfg = art.cfg;
    tok_cfg.epochs = 6;
    tok_cfg.max_steps = 0;
    train_config pre_cfg = art.cfg;
    pre_cfg.epochs = 1000;
    pre_cfg.max_steps = 2000;

    art.manifest = run_generate(art.cfg, art.root / "signal" / "corpus");
    art.tok_ckpt = run_train_tokenizer(tok_cfg, art.manifest, art.root / "signal" / "tok");
    art.pre_ckpt = run_pretrain(pre_cfg, art.manifest, art.tok_ckpt, art.root / "signal" / "pre");

    const model_state st = load_model_state(art.pre_ckpt);
    tokenizer_model tok = tokenizer_from_state(st);
    named_params P = backbone_from_state(st);
    const pretrain_config pcfg = st.config.pretraining();
    const auto entries = read_manifest(art.manifest);

    rng no_aug(0);
    std::vector<well_log> train_wells = load_training_wells(entries);
    const auto train_seqs = make_token_sequences(train_wells, tok, 0.0, no_aug);

    std::set<std::size_t> used;
    for (const auto& s : train_seqs)
        for (std::size_t t : s.tokens) used.insert(t);
    const double chance = 1.0 / static_cast<double>(used.size());

    rng mask_rng(rng::derive(art.cfg.seed, 30, 0));
    const double acc_train = masked_accuracy_eval(P, train_seqs, pcfg, mask_rng);

    std::vector<well_log> held;
    for (const auto& e : entries)
        if (e.split == "test" || e.split == "val")
            held.push_back(normalize_well(load_well(e.path, e.well_id)));
    const auto held_seqs = make_token_sequences(held, tok, 0.0, no_aug);
    rng mask_rng2(rng::derive(art.cfg.seed, 30, 1));
    const double acc_held = masked_accuracy_eval(P, held_seqs, pcfg, mask_rng2);

    // alignment: depth-matched cross-well windows vs random cross-well windows
    std::vector<tensor> projs;
    for (const auto& s : held_seqs) projs.push_back(embed_sequence(P, s, pcfg));
    auto cosine = [&](std::size_t wa, std::size_t ia, std::size_t wb, std::size_t ib) {
        double dot = 0.0;  // rows are unit length
        for (std::size_t j = 0; j < projs[wa].cols; ++j)
            dot += projs[wa].at(ia, j) * projs[wb].at(ib, j);
        return dot;
    };
    const auto pairs =
        build_positive_pairs(held, tok.cfg.patch_length, tok.cfg.patch_stride, art.cfg.pairs());
    double pos = 0.0;
    for (const auto& p : pairs) pos += cosine(p.a_well, p.a_pos, p.b_well, p.b_pos);
    pos /= static_cast<double>(std::max<std::size_t>(1, pairs.size()));

    rng g(9001);
    auto pick = [&](std::size_t n) {
        return std::min(n - 1, static_cast<std::size_t>(g.uniform01() * static_cast<double>(n)));
    };
    double rnd = 0.0;
    const std::size_t n_rnd = 2000;
    for (std::size_t t = 0; t < n_rnd; ++t) {
        std::size_t wa = pick(held_seqs.size()), wb = pick(held_seqs.size());
        while (wb == wa) wb = pick(held_seqs.size());
        rnd += cosine(wa, pick(held_seqs[wa].size()), wb, pick(held_seqs[wb].size()));
    }
    rnd /= static_cast<double>(n_rnd);
    const double gap = pos - rnd;

    const double dt = seconds_since(t0);
    outcome o;
    const bool acc_ok = acc_train >= 3.0 * chance;
    const bool gap_ok = gap >= 0.1 && !pairs.empty();
    o.pass = acc_ok && gap_ok && dt < 1200.0;
    o.detail = fmt("train-well masked top-1 %.3f vs 3x-chance %.3f (vocabulary in use %zu, "
                   "held-out top-1 %.3f); matched-pair cosine %.3f vs random %.3f, gap %.3f >= "
                   "0.10 over %zu pairs; %.0fs",
                   acc_train, 3.0 * chance, used.size(), acc_held, pos, rnd, gap, pairs.size(), dt);
    art.signal_ready = o.pass || (acc_train > chance);  // downstream checks need the artifacts
    return o;
}

// ---------------------------------------------------------------------------
// criterion 7: frozen transfer beats from-scratch on porosity
// ---------------------------------------------------------------------------

double pooled_poro_mse(const fs::path& ckpt, const std::vector<well_log>& test_wells) {
    model_state st = load_model_state(ckpt);
    tokenizer_model tok = tokenizer_from_state(st);
    named_params P = backbone_from_state(st);
    const finetune_config fcfg = st.config.adaptation();
    std::vector<double> preds, targets;
    for (const auto& w : test_wells) {
        well_predictions wp = predict_well(P, w, tok, fcfg);
        for (std::size_t i = 0; i < w.depths.size(); ++i) {
            preds.push_back(wp.poro_pred[i]);
            targets.push_back(w.porosity[i]);
        }
    }
    return regression_metrics(preds, targets).mse;
}

outcome criterion_transfer(const shared_artifacts& art) {
    if (!art.signal_ready) return {false, "prerequisite pretraining artifacts unavailable"};
    const auto t0 = std::chrono::steady_clock::now();

    const auto entries = read_manifest(art.manifest);
    std::vector<manifest_entry> labeled, test;
    for (const auto& e : entries) {
        if (e.split == "train" && labeled.size() < 5) labeled.push_back(e);
        if (e.split == "test") test.push_back(e);
    }
    const fs::path dir = art.root / "transfer";
    fs::create_directories(dir);
    const fs::path sub_manifest = dir / "manifest.csv";
    {
        csv_writer w(sub_manifest);
        w.row({"well_id", "path", "split"});
        for (const auto& e : labeled) w.row({e.well_id, e.path.string(), "train"});
        for (const auto& e : test) w.row({e.well_id, e.path.string(), "test"});
    }
    std::vector<well_log> test_wells;
    for (const auto& e : test) test_wells.push_back(normalize_well(load_well(e.path, e.well_id)));

    const model_state pre = load_model_state(art.pre_ckpt);
    tokenizer_model tok = tokenizer_from_state(pre);

    train_config ft = art.cfg;
    ft.batch_size = 5;
    ft.epochs = 200;
    ft.max_steps = 200;

    std::vector<double> frozen_mse, scratch_mse;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        train_config cfg_a = ft;
        cfg_a.seed = seed;
        cfg_a.freeze_encoder = true;
        const fs::path out_a = dir / fmt("frozen_s%llu", (unsigned long long)seed);
        frozen_mse.push_back(
            pooled_poro_mse(run_finetune(cfg_a, sub_manifest, art.pre_ckpt, out_a), test_wells));

        // identically sized randomly initialized starting point, all
        // parameters free to train
        train_config cfg_b = ft;
        cfg_b.seed = seed;
        cfg_b.freeze_encoder = false;
        const pretrain_config pcfg = cfg_b.pretraining();
        rng g(rng::derive(seed, 28, 0));
        named_params fresh = init_backbone_params(pcfg.bb, pcfg.vocab, cfg_b.latent_dim, g);
        model_state scratch;
        scratch.stage = model_stage::pretrained;
        scratch.step = 0;
        scratch.seed = seed;
        scratch.config = cfg_b;
        pack_tokenizer(scratch, tok);
        pack_backbone(scratch, fresh);
        const fs::path scratch_ckpt = dir / fmt("scratch_init_s%llu.ckpt", (unsigned long long)seed);
        save_model_state(scratch, scratch_ckpt);
        const fs::path out_b = dir / fmt("scratch_s%llu", (unsigned long long)seed);
        scratch_mse.push_back(
            pooled_poro_mse(run_finetune(cfg_b, sub_manifest, scratch_ckpt, out_b), test_wells));
    }

    outcome o;
    try {
        const t_test_result r = paired_t_test(scratch_mse, frozen_mse);
        const double dt = seconds_since(t0);
        o.pass = r.mean_diff > 0.0 && r.p < 0.05;
        o.detail = fmt("held-out porosity MSE frozen {%.4f, %.4f, %.4f} vs from-scratch "
                       "{%.4f, %.4f, %.4f}; paired t=%.2f p=%.4f (< 0.05 required), %.0fs",
                       frozen_mse[0], frozen_mse[1], frozen_mse[2], scratch_mse[0], scratch_mse[1],
                       scratch_mse[2], r.t, r.p, dt);
    } catch (const error& e) {
        o.pass = false;
        o.detail = fmt("paired test failed: %s", e.what());
    }
    return o;
}

// ---------------------------------------------------------------------------
// criterion 8: ablation ordering on lithology accuracy
// ---------------------------------------------------------------------------

double pooled_litho_acc(const fs::path& ckpt, const std::vector<well_log>& test_wells) {
    model_state st = load_model_state(ckpt);
    tokenizer_model tok = tokenizer_from_state(st);
    named_params P = backbone_from_state(st);
    const finetune_config fcfg = st.config.adaptation();
    std::vector<int> preds, targets;
    for (const auto& w : test_wells) {
        well_predictions wp = predict_well(P, w, tok, fcfg);
        for (std::size_t i = 0; i < w.depths.size(); ++i) {
            preds.push_back(wp.litho_pred[i]);
            targets.push_back(w.litho_labels[i]);
        }
    }
    return classification_metrics(preds, targets).accuracy_pct;
}

outcome criterion_ablations(const shared_artifacts& art) {
    if (!art.signal_ready) return {false, "prerequisite pretraining artifacts unavailable"};
    const auto t0 = std::chrono::steady_clock::now();

    const auto entries = read_manifest(art.manifest);
    std::vector<well_log> test_wells;
    for (const auto& e : entries)
        if (e.split == "test") test_wells.push_back(normalize_well(load_well(e.path, e.well_id)));

    train_config base = art.cfg;
    base.layers = 2;
    base.heads = 2;
    base.d_model = 32;
    base.ffn_dim = 64;
    base.proj_dim = 16;
    base.batch_size = 8;
    base.dropout_prob = 0.0;

    std::map<std::string, double> mean_acc;
    for (const std::string arm : {"vq_ce", "vq_noscl", "raw_cont"}) {
        double sum = 0.0;
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            train_config pre_cfg = base;
            pre_cfg.ablation = arm;
            pre_cfg.seed = seed;
            pre_cfg.epochs = 1000;
            pre_cfg.max_steps = 800;
            const fs::path stem = art.root / "ablate" / fmt("%s_s%llu", arm.c_str(),
                                                            (unsigned long long)seed);
            const auto pre = run_pretrain(pre_cfg, art.manifest, art.tok_ckpt, stem / "pre");
            train_config fin_cfg = pre_cfg;
            fin_cfg.epochs = 20;
            fin_cfg.max_steps = 200;
            const auto fin = run_finetune(fin_cfg, art.manifest, pre, stem / "fine");
            sum += pooled_litho_acc(fin, test_wells);
        }
        mean_acc[arm] = sum / 3.0;
    }

    const double dt = seconds_since(t0);
    outcome o;
    o.pass = mean_acc["vq_ce"] >= mean_acc["vq_noscl"] && mean_acc["vq_noscl"] >= mean_acc["raw_cont"];
    o.detail = fmt("mean lithology accuracy over 3 seeds: tokens+alignment %.2f%% >= "
                   "tokens-only %.2f%% >= continuous %.2f%% required, %.0fs",
                   mean_acc["vq_ce"], mean_acc["vq_noscl"], mean_acc["raw_cont"], dt);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 9: token embeddings cluster by lithology
// ---------------------------------------------------------------------------

outcome criterion_clustering(const shared_artifacts& art) {
    if (!art.signal_ready) return {false, "prerequisite pretraining artifacts unavailable"};
    const model_state st = load_model_state(art.pre_ckpt);
    const auto entries = read_manifest(art.manifest);
    const eval_outputs out =
        run_eval(st, entries, {1, 2, 3}, art.root / "cluster", {}, false);
    double ari = 0.0, purity = 0.0;
    for (const auto& m : out.report.metrics) {
        if (m.name == "clust_ari_token") ari = m.mean;
        if (m.name == "clust_purity_token") purity = m.mean;
    }
    outcome o;
    o.pass = ari >= 0.5 && purity >= 0.7;
    o.detail = fmt("3-seed mean ARI %.3f (>= 0.5), purity %.3f (>= 0.7) on eval wells", ari,
                   purity);
    return o;
}

// ---------------------------------------------------------------------------
// criterion 10: bit-identical reruns and a leak-free split
// ---------------------------------------------------------------------------

outcome criterion_reproducibility(const shared_artifacts& art) {
    const auto t0 = std::chrono::steady_clock::now();
    train_config c;
    c.codebook_size = 16;
    c.latent_dim = 6;
    c.enc_hidden = 8;
    c.conv_layers = 2;
    c.conv_kernel = 3;
    c.curve_emb_dim = 4;
    c.depth_pos_dim = 4;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.ffn_dim = 12;
    c.proj_dim = 4;
    c.mask_ratio = 0.4;
    c.block_length = 1;
    c.epochs = 3;
    c.batch_size = 4;
    c.max_steps = 12;
    c.seed = 7;
    c.synth.n_wells = 12;
    c.synth.well_length_min = 20.0;
    c.synth.well_length_max = 24.0;
    c.synth.seed = 33;

    auto chain = [&](const fs::path& dir) {
        const auto manifest = run_generate(c, dir / "corpus");
        const auto tok = run_train_tokenizer(c, manifest, dir / "tok");
        const auto pre = run_pretrain(c, manifest, tok, dir / "pre");
        const auto fin = run_finetune(c, manifest, pre, dir / "fine");
        run_eval(load_model_state(fin), read_manifest(manifest), {1, 2}, dir / "eval", {}, false);
        return manifest;
    };
    const fs::path d1 = art.root / "repro" / "run1";
    const fs::path d2 = art.root / "repro" / "run2";
    const auto manifest = chain(d1);
    chain(d2);

    std::size_t identical = 0, compared = 0;
    std::string mismatch;
    for (const char* rel : {"tok/tokenizer_metrics.csv", "pre/pretrain_metrics.csv",
                            "fine/finetune_metrics.csv", "eval/metrics.csv"}) {
        ++compared;
        if (slurp(d1 / rel) == slurp(d2 / rel) && !slurp(d1 / rel).empty())
            ++identical;
        else
            mismatch += fmt(" %s differs;", rel);
    }
    const std::size_t leaks = split_leakage_violations(read_manifest(manifest));
    const double dt = seconds_since(t0);
    outcome o;
    o.pass = identical == compared && leaks == 0;
    o.detail = fmt("%zu/%zu stage metric files bit-identical across two runs%s, "
                   "%zu split-leakage violations, %.1fs",
                   identical, compared, mismatch.c_str(), leaks, dt);
    return o;
}

}  // namespace

int main() {
    std::printf("acceptance gate: 10 criteria\n");
    std::fflush(stdout);

    shared_artifacts art;
    art.root = fs::temp_directory_path() / "wlfm_acceptance";
    fs::remove_all(art.root);
    fs::create_directories(art.root);

    auto guarded = [](auto&& fn) -> outcome {
        try {
            return fn();
        } catch (const std::exception& e) {
            return {false, fmt("uncaught error: %s", e.what())};
        }
    };

    report(1, "analytic gradients match central finite differences",
           guarded([] { return criterion_gradients(); }));
    report(2, "quantizer agrees with exhaustive nearest-neighbor search",
           guarded([] { return criterion_quantizer(); }));
    report(3, "loss identities hold at pinned tolerances",
           guarded([] { return criterion_identities(); }));
    report(4, "async loader delivers the synchronous baseline's multiset",
           guarded([] { return criterion_loader_equivalence(); }));
    report(5, "async loader reaches 1.5x speedup under a 2 ms consumer",
           guarded([] { return criterion_loader_speedup(); }));
    report(6, "pretraining learns masked-token and cross-well alignment signal",
           guarded([&] { return criterion_learning_signal(art); }));
    report(7, "frozen pretrained encoder transfers better than from-scratch",
           guarded([&] { return criterion_transfer(art); }));
    report(8, "ablation arms keep the expected accuracy ordering",
           guarded([&] { return criterion_ablations(art); }));
    report(9, "token embeddings cluster by lithology",
           guarded([&] { return criterion_clustering(art); }));
    report(10, "full pipeline reruns bit-identically with a leak-free split",
           guarded([&] { return criterion_reproducibility(art); }));

    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures;
}

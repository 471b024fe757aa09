#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <vector>

#include "wlfm/corpus.hpp"
#include "wlfm/finetune.hpp"
#include "wlfm/tokenizer.hpp"

#include "grad_check.hpp"

using namespace wlfm;
namespace ad = wlfm::ad;
using wlfm_test::check_gradients;
using wlfm_test::randn;

namespace {

/// Matcher asserting a thrown wlfm::error carries the expected code.
auto error_code(errc c) {
    return Catch::Matchers::Predicate<error>([c](const error& e) { return e.code() == c; },
                                             "carries the expected error code");
}

backbone_config toy_backbone() {
    backbone_config b;
    b.layers = 1;
    b.heads = 2;
    b.d_model = 8;
    b.ffn_dim = 12;
    b.proj_dim = 4;
    b.depth_pos_dim = 8;
    return b;
}

/// Tiny configuration for hand-built sequences: 2 channels, 4-sample windows.
finetune_config toy_finetune() {
    finetune_config cfg;
    cfg.pre.bb = toy_backbone();
    cfg.pre.vocab = 8;
    cfg.pre.latent_dim = 4;
    cfg.n_lithologies = 3;
    cfg.channels = 2;
    cfg.patch_length = 4;
    cfg.priors = {{0.05, 0.02}, {0.15, 0.03}, {0.30, 0.04}};
    cfg.dropout_prob = 0.3;
    return cfg;
}

named_params toy_model(const finetune_config& cfg, std::uint64_t seed) {
    rng g(seed);
    named_params P = init_backbone_params(cfg.pre.bb, cfg.pre.vocab, cfg.pre.latent_dim, g);
    init_task_heads(P, cfg, g);
    return P;
}

/// Hand-built labeled sequence with plausible values; no tokenizer involved.
labeled_sequence make_toy_labeled(const finetune_config& cfg, std::size_t T, rng& g) {
    labeled_sequence ls;
    ls.seq.well_id = "toy";
    ls.seq.latents = tensor(T, cfg.pre.latent_dim);
    for (auto& x : ls.seq.latents.v) x = g.normal();
    ls.y_litho = tensor(T, cfg.n_lithologies);
    for (std::size_t t = 0; t < T; ++t) {
        ls.seq.tokens.push_back(static_cast<std::size_t>(g.below(cfg.pre.vocab)));
        ls.seq.rel_depths.push_back(T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1)
                                          : 0.5);
        const int label = static_cast<int>(g.below(cfg.n_lithologies));
        ls.seq.litho_at.push_back(label);
        ls.y_litho.at(t, static_cast<std::size_t>(label)) = 1.0;
        ls.seq.poro_at.push_back(0.05 + 0.2 * g.uniform01());
        tensor target(cfg.channels, cfg.patch_length);
        for (auto& x : target.v) x = g.normal();
        ls.recon_targets.push_back(std::move(target));
        entry_set m;
        for (std::size_t c = 0; c < cfg.channels; ++c)
            if (g.uniform01() < 0.5)
                for (std::size_t p = 0; p < cfg.patch_length; ++p) m.emplace_back(c, p);
        ls.recon_masks.push_back(std::move(m));
    }
    // ensure some reconstruction signal
    if (ls.masked_entries() == 0)
        for (std::size_t p = 0; p < cfg.patch_length; ++p) ls.recon_masks[0].emplace_back(0, p);
    return ls;
}

/// Full small pipeline pieces: generated corpus + untrained tokenizer.
struct pipeline_fixture {
    std::vector<well_log> wells;
    tokenizer_model tok;
    finetune_config cfg;

    explicit pipeline_fixture(std::size_t n_wells = 2, std::uint64_t seed = 21)
        : tok(make_tok()) {
        synth_config sc = default_synth_config();
        sc.n_wells = n_wells;
        sc.well_length_min = 20.0;  // 160 samples -> 4 windows of 64/32
        sc.well_length_max = 20.0;
        sc.seed = seed;
        for (const auto& w : generate_corpus(sc)) wells.push_back(normalize_well(w));

        cfg.pre.bb = toy_backbone();
        cfg.pre.vocab = tok.cfg.codebook_size;
        cfg.pre.latent_dim = tok.cfg.latent_dim;
        cfg.n_lithologies = sc.lithologies.size();
        cfg.channels = 5;
        cfg.patch_length = tok.cfg.patch_length;
        cfg.priors = priors_from_synth(sc);
        cfg.dropout_prob = 0.3;
    }

    static tokenizer_model make_tok() {
        tok_config tc;
        tc.codebook_size = 16;
        tc.latent_dim = 6;
        tc.patch_length = 64;
        tc.patch_stride = 32;
        tc.enc_hidden = 8;
        tc.conv_layers = 2;
        tc.conv_kernel = 3;
        tc.curve_emb_dim = 4;
        tc.depth_pos_dim = 4;
        return init_tokenizer(tc, 99);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

TEST_CASE("reconstruction error: masked-entry oracles") {
    tensor x(2, 3);
    x.v = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    tensor xh = x;

    SECTION("perfect reconstruction is zero") {
        CHECK(recon_loss(xh, x, {{0, 0}, {1, 2}}) == 0.0);
    }
    SECTION("single masked entry with difference 2 gives 4") {
        xh.at(1, 1) = x.at(1, 1) + 2.0;
        CHECK(recon_loss(xh, x, {{1, 1}}) == 4.0);
    }
    SECTION("mean over several masked entries") {
        xh.at(0, 0) += 1.0;  // sq 1
        xh.at(0, 1) += 3.0;  // sq 9
        CHECK(recon_loss(xh, x, {{0, 0}, {0, 1}}) == Catch::Approx(5.0).margin(1e-15));
    }
    SECTION("unmasked entries never contribute") {
        xh.at(0, 2) += 100.0;
        CHECK(recon_loss(xh, x, {{1, 0}}) == 0.0);
    }
    SECTION("empty mask is rejected") {
        CHECK_THROWS_MATCHES(recon_loss(xh, x, {}), error, error_code(errc::empty_mask));
    }
    SECTION("shape mismatch is rejected") {
        tensor bad(3, 2);
        CHECK_THROWS_MATCHES(recon_loss(bad, x, {{0, 0}}), error,
                             error_code(errc::shape_mismatch));
    }
    SECTION("out-of-range mask entry is rejected") {
        CHECK_THROWS_MATCHES(recon_loss(xh, x, {{2, 0}}), error,
                             error_code(errc::index_out_of_range));
    }
}

TEST_CASE("porosity error: mean absolute deviation oracles") {
    std::vector<double> y = {0.1, 0.2, 0.3, 0.15, 0.25};

    SECTION("exact predictions give zero") { CHECK(poro_loss(y, y) == 0.0); }
    SECTION("constant offset is returned exactly") {
        std::vector<double> yh = y;
        for (auto& v : yh) v += 0.1;
        CHECK(poro_loss(yh, y) == Catch::Approx(0.1).margin(1e-15));
    }
    SECTION("signs do not cancel") {
        CHECK(poro_loss({0.0, 0.4}, {0.2, 0.2}) == Catch::Approx(0.2).margin(1e-15));
    }
    SECTION("length mismatch is rejected") {
        CHECK_THROWS_MATCHES(poro_loss({0.1, 0.2, 0.3, 0.15}, y), error,
                             error_code(errc::length_mismatch));
    }
    SECTION("empty targets are rejected") {
        CHECK_THROWS_MATCHES(poro_loss({}, {}), error, error_code(errc::degenerate_input));
    }
}

TEST_CASE("lithology error: cross-entropy oracles") {
    SECTION("probability one on the correct class gives zero") {
        tensor probs(1, 3), onehot(1, 3);
        probs.v = {0.0, 1.0, 0.0};
        onehot.v = {0.0, 1.0, 0.0};
        CHECK(std::abs(litho_loss(probs, onehot)) < 1e-9);
    }
    SECTION("uniform predictions give ln n") {
        for (std::size_t n : {3ul, 7ul}) {
            tensor probs(1, n), onehot(1, n);
            for (auto& p : probs.v) p = 1.0 / static_cast<double>(n);
            onehot.v[n - 1] = 1.0;
            CHECK(litho_loss(probs, onehot) ==
                  Catch::Approx(std::log(static_cast<double>(n))).margin(1e-9));
        }
    }
    SECTION("mean over positions") {
        tensor probs(2, 3), onehot(2, 3);
        probs.v = {1.0, 0.0, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
        onehot.v = {1.0, 0.0, 0.0, 0.0, 0.0, 1.0};
        CHECK(litho_loss(probs, onehot) == Catch::Approx(std::log(3.0) / 2.0).margin(1e-9));
    }
    SECTION("rows that do not sum to one are rejected") {
        tensor probs(1, 3), onehot(1, 3);
        probs.v = {0.3, 0.3, 0.1};
        onehot.v = {1.0, 0.0, 0.0};
        CHECK_THROWS_MATCHES(litho_loss(probs, onehot), error,
                             error_code(errc::not_a_distribution));
    }
    SECTION("negative probabilities are rejected") {
        tensor probs(1, 2), onehot(1, 2);
        probs.v = {1.2, -0.2};
        onehot.v = {1.0, 0.0};
        CHECK_THROWS_MATCHES(litho_loss(probs, onehot), error,
                             error_code(errc::not_a_distribution));
    }
}

TEST_CASE("divergence: self-distance zero and closed form") {
    SECTION("identical distributions have zero divergence") {
        std::vector<double> p = {0.2, 0.5, 0.3};
        CHECK(std::abs(kl_divergence(p, p)) < 1e-15);
    }
    SECTION("point mass against uniform gives ln 2 up to smoothing") {
        CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) ==
              Catch::Approx(std::log(2.0)).margin(1e-6));
    }
    SECTION("divergence is asymmetric") {
        std::vector<double> p = {0.9, 0.1}, q = {0.5, 0.5};
        CHECK(kl_divergence(p, q) != kl_divergence(q, p));
    }
    SECTION("length mismatch is rejected") {
        CHECK_THROWS_MATCHES(kl_divergence({0.5, 0.5}, {1.0}), error,
                             error_code(errc::length_mismatch));
    }
}

TEST_CASE("implied porosity distribution: prior likelihood oracles") {
    SECTION("midpoint between equal-spread priors splits evenly") {
        tensor d = implied_litho_distribution({0.2}, {{0.1, 0.05}, {0.3, 0.05}});
        CHECK(d.at(0, 0) == Catch::Approx(0.5).margin(1e-12));
        CHECK(d.at(0, 1) == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("prediction at one prior's mean dominates when means are separated") {
        tensor d = implied_litho_distribution({0.05}, {{0.05, 0.01}, {0.30, 0.01}});
        CHECK(d.at(0, 0) > 0.99);
    }
    SECTION("hand-computed two-prior case") {
        // log-lik difference at pred 0 is 0 vs -0.5, so p0 = e^0/(e^0 + e^-0.5)
        tensor d = implied_litho_distribution({0.0}, {{0.0, 1.0}, {1.0, 1.0}});
        const double want = 1.0 / (1.0 + std::exp(-0.5));
        CHECK(d.at(0, 0) == Catch::Approx(want).margin(1e-12));
    }
    SECTION("narrower prior wins at a shared mean") {
        // likelihood heights 1/0.01 vs 1/0.1 -> 100:10 -> 10/11
        tensor d = implied_litho_distribution({0.2}, {{0.2, 0.01}, {0.2, 0.1}});
        CHECK(d.at(0, 0) == Catch::Approx(10.0 / 11.0).margin(1e-12));
    }
    SECTION("rows are distributions") {
        tensor d = implied_litho_distribution({0.0, 0.1, 0.4},
                                              {{0.05, 0.02}, {0.15, 0.03}, {0.30, 0.04}});
        REQUIRE(d.rows == 3);
        for (std::size_t t = 0; t < d.rows; ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < d.cols; ++k) {
                CHECK(d.at(t, k) >= 0.0);
                s += d.at(t, k);
            }
            CHECK(s == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("consistency loss: self-distance and plausibility direction") {
    std::vector<litho_prior> priors = {{0.05, 0.01}, {0.25, 0.01}};

    SECTION("classifier matching the implied distribution costs nothing") {
        std::vector<double> pred = {0.08, 0.2};
        tensor implied = implied_litho_distribution(pred, priors);
        CHECK(std::abs(consistency_loss(pred, implied, priors)) < 1e-12);
    }
    SECTION("physically consistent beats inconsistent") {
        std::vector<double> pred = {0.25};  // clearly the high-porosity lithology
        tensor consistent(1, 2), inconsistent(1, 2);
        consistent.v = {0.02, 0.98};
        inconsistent.v = {0.98, 0.02};
        CHECK(consistency_loss(pred, consistent, priors) <
              consistency_loss(pred, inconsistent, priors));
    }
    SECTION("length and distribution violations are rejected") {
        tensor probs(2, 2);
        probs.v = {0.5, 0.5, 0.5, 0.5};
        CHECK_THROWS_MATCHES(consistency_loss({0.1}, probs, priors), error,
                             error_code(errc::length_mismatch));
        tensor bad(1, 2);
        bad.v = {0.9, 0.9};
        CHECK_THROWS_MATCHES(consistency_loss({0.1}, bad, priors), error,
                             error_code(errc::not_a_distribution));
    }
}

// ---------------------------------------------------------------------------
// Multi-task composition
// ---------------------------------------------------------------------------

TEST_CASE("multitask objective: components match independent evaluation, additivity") {
    finetune_config cfg = toy_finetune();
    rng g(31);
    labeled_batch batch = {make_toy_labeled(cfg, 3, g), make_toy_labeled(cfg, 4, g)};

    // synthetic outputs, no model involved
    std::vector<task_outputs> outputs;
    for (const auto& ls : batch) {
        task_outputs o;
        o.litho_probs = tensor(ls.size(), cfg.n_lithologies);
        for (std::size_t t = 0; t < ls.size(); ++t) {
            tensor win(cfg.channels, cfg.patch_length);
            for (auto& x : win.v) x = g.normal();
            o.recon.push_back(std::move(win));
            o.poro.push_back(0.05 + 0.25 * g.uniform01());
            double z = 0.0;
            for (std::size_t k = 0; k < cfg.n_lithologies; ++k) {
                o.litho_probs.at(t, k) = 0.1 + g.uniform01();
                z += o.litho_probs.at(t, k);
            }
            for (std::size_t k = 0; k < cfg.n_lithologies; ++k) o.litho_probs.at(t, k) /= z;
        }
        outputs.push_back(std::move(o));
    }

    // independent component evaluation on pooled views
    double sq = 0.0;
    std::size_t masked = 0;
    std::vector<double> poro_pred, poro_true;
    std::size_t rows = 0;
    for (const auto& ls : batch) rows += ls.size();
    tensor probs(rows, cfg.n_lithologies), onehot(rows, cfg.n_lithologies);
    std::size_t r = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        for (std::size_t t = 0; t < batch[s].size(); ++t) {
            for (auto [c, p] : batch[s].recon_masks[t]) {
                const double d =
                    outputs[s].recon[t].at(c, p) - batch[s].recon_targets[t].at(c, p);
                sq += d * d;
                ++masked;
            }
            poro_pred.push_back(outputs[s].poro[t]);
            poro_true.push_back(batch[s].seq.poro_at[t]);
            for (std::size_t k = 0; k < cfg.n_lithologies; ++k) {
                probs.at(r, k) = outputs[s].litho_probs.at(t, k);
                onehot.at(r, k) = batch[s].y_litho.at(t, k);
            }
            ++r;
        }
    }
    REQUIRE(masked > 0);
    const double a = sq / static_cast<double>(masked);
    const double b = poro_loss(poro_pred, poro_true);
    const double c = litho_loss(probs, onehot);
    const double d = consistency_loss(poro_pred, probs, cfg.priors);

    SECTION("weights (1,2,3,0) give a + 2b + 3c") {
        multitask_weights w{1.0, 2.0, 3.0, 0.0};
        multitask_components mc = multitask_loss(outputs, batch, w, cfg.priors);
        CHECK(mc.recon == Catch::Approx(a).margin(1e-12));
        CHECK(mc.poro == Catch::Approx(b).margin(1e-12));
        CHECK(mc.litho == Catch::Approx(c).margin(1e-12));
        CHECK(mc.consistency == Catch::Approx(d).margin(1e-12));
        CHECK(mc.total == Catch::Approx(a + 2.0 * b + 3.0 * c).margin(1e-12));
    }
    SECTION("all weights zero give zero total") {
        multitask_components mc = multitask_loss(outputs, batch, {0, 0, 0, 0}, cfg.priors);
        CHECK(mc.total == 0.0);
    }
    SECTION("a single active weight reproduces that component") {
        multitask_components mc = multitask_loss(outputs, batch, {1, 0, 0, 0}, cfg.priors);
        CHECK(mc.total == Catch::Approx(a).margin(1e-12));
        mc = multitask_loss(outputs, batch, {0, 0, 0, 1}, cfg.priors);
        CHECK(mc.total == Catch::Approx(d).margin(1e-12));
    }
}

// ---------------------------------------------------------------------------
// Labeled batch construction
// ---------------------------------------------------------------------------

TEST_CASE("labeled batches: dropped channels become reconstruction targets") {
    pipeline_fixture fx;
    fx.cfg.dropout_prob = 0.7;
    rng g(41);
    labeled_batch batch = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g);
    REQUIRE(batch.size() == fx.wells.size());

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const labeled_sequence& ls = batch[s];
        ls.validate(fx.cfg);
        REQUIRE(ls.size() == 4);

        // targets hold the intact normalized curves
        std::vector<patch> intact =
            extract_patches(fx.wells[s], fx.cfg.patch_length, fx.tok.cfg.patch_stride);
        REQUIRE(intact.size() == ls.size());
        for (std::size_t i = 0; i < ls.size(); ++i) {
            CHECK(ls.recon_targets[i].v == intact[i].values.v);
            CHECK(ls.seq.litho_at[i] == intact[i].majority_litho());
            CHECK(ls.seq.poro_at[i] == intact[i].mean_poro());

            // masks cover whole channels: entries come in runs of patch_length
            const std::size_t L = fx.cfg.patch_length;
            REQUIRE(ls.recon_masks[i].size() % L == 0);
            for (std::size_t e = 0; e < ls.recon_masks[i].size(); ++e) {
                CHECK(ls.recon_masks[i][e].first == ls.recon_masks[i][e / L * L].first);
                CHECK(ls.recon_masks[i][e].second == e % L);
            }
        }
    }

    // determinism: the same seed reproduces tokens and masks bit-for-bit
    rng g2(41);
    labeled_batch again = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g2);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        CHECK(batch[s].seq.tokens == again[s].seq.tokens);
        CHECK(batch[s].seq.latents.v == again[s].seq.latents.v);
        for (std::size_t i = 0; i < batch[s].size(); ++i)
            CHECK(batch[s].recon_masks[i] == again[s].recon_masks[i]);
    }
}

TEST_CASE("labeled batches: zero dropout still yields one reconstruction channel") {
    pipeline_fixture fx;
    fx.cfg.dropout_prob = 0.0;
    rng g(42);
    labeled_sequence ls = make_labeled_sequence(fx.wells[0], fx.tok, fx.cfg, g);
    CHECK(ls.masked_entries() == fx.cfg.patch_length);  // exactly one full channel
    ls.validate(fx.cfg);
}

TEST_CASE("labeled batches: wells without labels are rejected") {
    pipeline_fixture fx;
    well_log bare = fx.wells[0];
    bare.litho_labels.clear();
    rng g(43);
    CHECK_THROWS_MATCHES(make_labeled_sequence(bare, fx.tok, fx.cfg, g), error,
                         error_code(errc::degenerate_input));
}

TEST_CASE("labeled batches: window length must match the tokenizer") {
    pipeline_fixture fx;
    fx.cfg.patch_length = 32;
    rng g(44);
    CHECK_THROWS_MATCHES(make_labeled_sequence(fx.wells[0], fx.tok, fx.cfg, g), error,
                         error_code(errc::config_error));
}

// ---------------------------------------------------------------------------
// Objective over the model: graph vs plain, gradients
// ---------------------------------------------------------------------------

TEST_CASE("adaptation step metrics equal the plain objective") {
    pipeline_fixture fx;
    rng g(51);
    labeled_batch batch = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g);
    named_params P = toy_model(fx.cfg, 52);

    std::vector<task_outputs> outputs;
    for (const auto& ls : batch) outputs.push_back(predict_sequence(P, ls, fx.cfg));
    multitask_components plain =
        multitask_loss(outputs, batch, fx.cfg.weights, fx.cfg.priors);

    ad::adam opt;
    finetune_metrics m = finetune_step(P, batch, fx.cfg, opt, 0.0);  // lr 0: no movement
    CHECK(m.recon == Catch::Approx(plain.recon).margin(1e-9));
    CHECK(m.poro == Catch::Approx(plain.poro).margin(1e-9));
    CHECK(m.litho == Catch::Approx(plain.litho).margin(1e-9));
    CHECK(m.consistency == Catch::Approx(plain.consistency).margin(1e-9));
    CHECK(m.total == Catch::Approx(plain.total).margin(1e-9));
    CHECK(m.masked_entries > 0);
    CHECK(m.litho_accuracy >= 0.0);
    CHECK(m.litho_accuracy <= 1.0);
}

TEST_CASE("multitask gradients match finite differences") {
    finetune_config cfg = toy_finetune();
    cfg.weights = {1.0, 1.0, 1.0, 0.5};
    rng g(61);
    labeled_batch batch = {make_toy_labeled(cfg, 3, g), make_toy_labeled(cfg, 2, g)};
    named_params P = toy_model(cfg, 62);

    std::vector<tensor*> checked = {
        &P.at("head.litho"),      &P.at("head.litho_bias"), &P.at("head.poro"),
        &P.at("head.poro_bias"),  &P.at("head.recon"),      &P.at("head.recon_bias"),
        &P.at("bb.token_emb"),    &P.at("bb.l0.wq"),        &P.at("bb.lnf.gain"),
    };
    check_gradients(checked, [&](ad::param_binder& binder) {
        graph_ctx ctx(P, &binder);
        return detail::multitask_graph(ctx, batch, cfg).loss;
    });
}

TEST_CASE("freezing: encoder parameters bit-identical, heads move") {
    pipeline_fixture fx;
    rng g(71);
    labeled_batch batch = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g);
    named_params P = toy_model(fx.cfg, 72);
    named_params before = P;

    fx.cfg.freeze_encoder = true;
    ad::adam opt;
    for (int i = 0; i < 5; ++i) finetune_step(P, batch, fx.cfg, opt, 1e-2);

    bool head_changed = false;
    for (const auto& [name, t] : P.items()) {
        if (name.rfind("head.", 0) == 0) {
            if (t.v != before.at(name).v) head_changed = true;
        } else {
            INFO("frozen parameter: " << name);
            CHECK(t.v == before.at(name).v);  // bitwise
        }
    }
    CHECK(head_changed);

    SECTION("unfreezing lets the encoder move") {
        fx.cfg.freeze_encoder = false;
        ad::adam opt2;
        named_params Q = before;
        finetune_step(Q, batch, fx.cfg, opt2, 1e-2);
        bool encoder_changed = false;
        for (const auto& [name, t] : Q.items())
            if (name.rfind("bb.", 0) == 0 && t.v != before.at(name).v) encoder_changed = true;
        CHECK(encoder_changed);
    }
}

TEST_CASE("zero consistency weight removes its gradient influence") {
    finetune_config cfg = toy_finetune();
    cfg.weights = {1.0, 1.0, 1.0, 0.0};
    rng g(81);
    labeled_batch batch = {make_toy_labeled(cfg, 4, g)};

    finetune_config wild = cfg;
    wild.priors = {{0.9, 0.5}, {0.01, 0.001}, {0.5, 0.2}};  // absurd priors

    named_params P1 = toy_model(cfg, 82);
    named_params P2 = P1;
    ad::adam o1, o2;
    finetune_metrics m1 = finetune_step(P1, batch, cfg, o1, 1e-2);
    finetune_metrics m2 = finetune_step(P2, batch, wild, o2, 1e-2);

    CHECK(m1.consistency != m2.consistency);  // the component itself differs
    for (const auto& [name, t] : P1.items()) CHECK(t.v == P2.at(name).v);  // updates do not

    SECTION("a positive weight couples it back in") {
        finetune_config on = cfg;
        on.weights.gamma = 0.5;
        named_params P3 = toy_model(cfg, 82);
        ad::adam o3;
        finetune_step(P3, batch, on, o3, 1e-2);
        CHECK(P3.at("head.poro").v != P1.at("head.poro").v);
    }
}

TEST_CASE("overfitting one batch reduces the objective") {
    pipeline_fixture fx(1);
    rng g(91);
    labeled_batch batch = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g);
    named_params P = toy_model(fx.cfg, 92);

    ad::adam opt;
    const double first = finetune_step(P, batch, fx.cfg, opt, 1e-2).total;
    double last = first;
    for (int i = 1; i < 50; ++i) last = finetune_step(P, batch, fx.cfg, opt, 1e-2).total;
    CHECK(last < first);
    CHECK(last < 0.9 * first);
}

TEST_CASE("adaptation step: deterministic across runs") {
    pipeline_fixture fx;
    rng g(93);
    labeled_batch batch = make_labeled_batch(fx.wells, fx.tok, fx.cfg, g);

    auto run = [&]() {
        named_params P = toy_model(fx.cfg, 94);
        ad::adam opt;
        for (int i = 0; i < 3; ++i) finetune_step(P, batch, fx.cfg, opt, 5e-3);
        return P;
    };
    named_params A = run(), B = run();
    for (const auto& [name, t] : A.items()) CHECK(t.v == B.at(name).v);
}

// ---------------------------------------------------------------------------
// Per-depth prediction export
// ---------------------------------------------------------------------------

TEST_CASE("per-depth predictions: nearest-window upsampling") {
    pipeline_fixture fx(1);
    named_params P = toy_model(fx.cfg, 95);
    const well_log& w = fx.wells[0];

    well_predictions wp = predict_well(P, w, fx.tok, fx.cfg);
    REQUIRE(wp.depths.size() == w.n());
    REQUIRE(wp.poro_pred.size() == w.n());
    REQUIRE(wp.litho_probs.rows == w.n());
    REQUIRE(wp.litho_probs.cols == fx.cfg.n_lithologies);
    CHECK(wp.depths == w.depths);

    // windows: starts 0,32,64,96 with length 64 -> centers 31.5, 63.5, 95.5, 127.5
    std::vector<patch> patches = extract_patches(w, fx.cfg.patch_length, fx.tok.cfg.patch_stride);
    REQUIRE(patches.size() == 4);
    for (std::size_t s = 0; s < w.n(); ++s) {
        // independent argmin over window centers
        std::size_t best = 0;
        double bestd = 1e300;
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const double center = static_cast<double>(patches[i].start_index) +
                                  (static_cast<double>(fx.cfg.patch_length) - 1.0) / 2.0;
            const double dist = std::abs(center - static_cast<double>(s));
            if (dist < bestd) {
                bestd = dist;
                best = i;
            }
        }
        CHECK(wp.source_window[s] == best);
        if (s > 0) CHECK(wp.source_window[s] >= wp.source_window[s - 1]);
    }

    // each sample inherits its window's head outputs and argmax class
    for (std::size_t s = 0; s < w.n(); ++s) {
        std::size_t argmax = 0;
        for (std::size_t k = 1; k < fx.cfg.n_lithologies; ++k)
            if (wp.litho_probs.at(s, k) > wp.litho_probs.at(s, argmax)) argmax = k;
        CHECK(static_cast<std::size_t>(wp.litho_pred[s]) == argmax);
        double sum = 0.0;
        for (std::size_t k = 0; k < fx.cfg.n_lithologies; ++k) sum += wp.litho_probs.at(s, k);
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("CSV round trip") {
        const auto path = std::filesystem::temp_directory_path() / "wlfm_test_preds.csv";
        write_predictions_csv(path, wp);
        csv_table t = read_csv(path);
        REQUIRE(t.header.size() == 2 + fx.cfg.n_lithologies + 1);
        CHECK(t.header[0] == "depth");
        CHECK(t.header.back() == "poro_pred");
        REQUIRE(t.rows.size() == w.n());
        CHECK(parse_double(t.rows[0][0]) == Catch::Approx(w.depths[0]).margin(1e-9));
        std::filesystem::remove(path);
    }
}

TEST_CASE("per-depth predictions: short wells are rejected") {
    pipeline_fixture fx(1);
    named_params P = toy_model(fx.cfg, 96);
    well_log tiny = fx.wells[0];
    tiny.depths.resize(10);
    for (auto& c : tiny.curves) c.values.resize(10);
    tiny.litho_labels.resize(10);
    tiny.porosity.resize(10);
    CHECK_THROWS_MATCHES(predict_well(P, tiny, fx.tok, fx.cfg), error,
                         error_code(errc::degenerate_input));
}

// ---------------------------------------------------------------------------
// Configuration validation
// ---------------------------------------------------------------------------

TEST_CASE("adaptation configuration validation") {
    finetune_config good = toy_finetune();
    good.validate();

    SECTION("negative weight") {
        finetune_config c = good;
        c.weights.lambda_p = -0.1;
        CHECK_THROWS_MATCHES(c.validate(), error, error_code(errc::config_error));
    }
    SECTION("all-zero weights rejected for training") {
        finetune_config c = good;
        c.weights = {0, 0, 0, 0};
        CHECK_THROWS_MATCHES(c.validate(), error, error_code(errc::config_error));
    }
    SECTION("prior count must match lithologies") {
        finetune_config c = good;
        c.priors.pop_back();
        CHECK_THROWS_MATCHES(c.validate(), error, error_code(errc::config_error));
    }
    SECTION("nonpositive prior spread") {
        finetune_config c = good;
        c.priors[1].std = 0.0;
        CHECK_THROWS_MATCHES(c.validate(), error, error_code(errc::config_error));
    }
    SECTION("dropout probability bounds") {
        finetune_config c = good;
        c.dropout_prob = 1.0;
        CHECK_THROWS_MATCHES(c.validate(), error, error_code(errc::config_error));
    }
}

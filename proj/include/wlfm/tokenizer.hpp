#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "wlfm/autodiff.hpp"
#include "wlfm/corpus.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/params.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/tensor.hpp"

namespace wlfm {

// ---- configuration ----

struct tok_config {
    std::size_t codebook_size = 256;  // K
    std::size_t latent_dim = 64;      // d
    double beta = 0.25;               // commitment weight
    std::size_t patch_length = 64;    // L
    std::size_t patch_stride = 32;    // s
    double ema_decay = 0.99;
    std::size_t dead_threshold = 200;
    std::size_t curve_emb_dim = 8;    // d_emb
    std::size_t depth_pos_dim = 8;    // d_pos
    std::size_t enc_hidden = 32;
    std::size_t conv_layers = 3;
    std::size_t conv_kernel = 5;
};

// ---- relative-depth features ----

/// Fixed sinusoidal map of a [0,1] relative depth to `dim` features in [-1,1].
inline tensor rel_depth_features(double rel_depth, std::size_t dim) {
    tensor out(1, dim);
    for (std::size_t j = 0; j < dim; ++j) {
        const double freq = 3.141592653589793238462643 * static_cast<double>(j / 2 + 1);
        out.v[j] = (j % 2 == 0) ? std::sin(freq * rel_depth) : std::cos(freq * rel_depth);
    }
    return out;
}

// ---- codebook ----

struct codebook {
    tensor vectors;  // K×d
    std::vector<double> ema_counts;
    tensor ema_sums;  // K×d
    double decay = 0.99;
    std::size_t dead_threshold = 200;
    std::vector<std::int64_t> steps_since_use;

    std::size_t size() const { return vectors.rows; }
    std::size_t dim() const { return vectors.cols; }
};

inline codebook make_codebook(std::size_t K, std::size_t d, rng& g, double decay = 0.99,
                              std::size_t dead_threshold = 200) {
    require(K >= 2, errc::config_error, "codebook needs K >= 2");
    codebook cb;
    cb.vectors = tensor(K, d);
    for (auto& x : cb.vectors.v) x = g.normal();
    // EMA stats start consistent with the vectors (count 1 each) so that the
    // first update is a smooth blend instead of a jump from zero mass.
    cb.ema_counts.assign(K, 1.0);
    cb.ema_sums = cb.vectors;
    cb.decay = decay;
    cb.dead_threshold = dead_threshold;
    cb.steps_since_use.assign(K, 0);
    return cb;
}

/// Nearest code row by Euclidean distance; ties break to the lowest index.
inline std::pair<std::size_t, tensor> quantize(const tensor& z_e, const codebook& cb) {
    require(z_e.rows == 1 && z_e.cols == cb.dim(), errc::shape_mismatch,
            "quantize: latent " + z_e.shape_str());
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cb.size(); ++k) {
        double d2 = 0.0;
        const double* row = cb.vectors.row_ptr(k);
        for (std::size_t j = 0; j < cb.dim(); ++j) {
            const double diff = z_e.v[j] - row[j];
            d2 += diff * diff;
        }
        if (d2 < best_d2) {  // strict: first minimum wins
            best_d2 = d2;
            best = k;
        }
    }
    tensor z_q(1, cb.dim());
    for (std::size_t j = 0; j < cb.dim(); ++j) z_q.v[j] = cb.vectors.at(best, j);
    return {best, std::move(z_q)};
}

/// EMA codebook maintenance over one batch of assignments.
inline void ema_update(codebook& cb, const std::vector<std::size_t>& indices,
                       const tensor& z_es) {
    require(z_es.rows == indices.size() && z_es.cols == cb.dim(), errc::shape_mismatch,
            "ema_update: latents " + z_es.shape_str());
    std::vector<double> n_k(cb.size(), 0.0);
    tensor s_k(cb.size(), cb.dim());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < cb.size(), errc::index_out_of_range,
                "ema_update: token " + std::to_string(indices[i]));
        n_k[indices[i]] += 1.0;
        for (std::size_t j = 0; j < cb.dim(); ++j) s_k.at(indices[i], j) += z_es.at(i, j);
    }
    const double g = cb.decay;
    for (std::size_t k = 0; k < cb.size(); ++k) {
        cb.ema_counts[k] = g * cb.ema_counts[k] + (1.0 - g) * n_k[k];
        for (std::size_t j = 0; j < cb.dim(); ++j)
            cb.ema_sums.at(k, j) = g * cb.ema_sums.at(k, j) + (1.0 - g) * s_k.at(k, j);
        const double denom = std::max(cb.ema_counts[k], 1e-12);
        for (std::size_t j = 0; j < cb.dim(); ++j)
            cb.vectors.at(k, j) = cb.ema_sums.at(k, j) / denom;
        if (n_k[k] > 0.0)
            cb.steps_since_use[k] = 0;
        else
            ++cb.steps_since_use[k];
    }
}

/// Replaces stale codes with latents sampled from the top-decile
/// reconstruction-loss candidates.
inline void reinit_dead_codes(codebook& cb,
                              const std::vector<std::pair<tensor, double>>& candidates,
                              rng& g) {
    std::vector<std::size_t> dead;
    for (std::size_t k = 0; k < cb.size(); ++k)
        if (cb.steps_since_use[k] > static_cast<std::int64_t>(cb.dead_threshold))
            dead.push_back(k);
    if (dead.empty()) return;
    require(!candidates.empty(), errc::no_candidates,
            std::to_string(dead.size()) + " dead codes but no candidates");

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].second != candidates[b].second)
            return candidates[a].second > candidates[b].second;
        return a < b;  // deterministic tie-break
    });
    const std::size_t pool = std::max<std::size_t>(1, (candidates.size() + 9) / 10);

    for (std::size_t k : dead) {
        const tensor& z = candidates[order[g.below(pool)]].first;
        require(z.rows == 1 && z.cols == cb.dim(), errc::shape_mismatch, "reinit candidate");
        for (std::size_t j = 0; j < cb.dim(); ++j) {
            cb.vectors.at(k, j) = z.v[j];
            cb.ema_sums.at(k, j) = z.v[j];
        }
        cb.ema_counts[k] = 1.0;
        cb.steps_since_use[k] = 0;
    }
}

// ---- encoder / decoder parameters ----

inline named_params init_encoder_params(const tok_config& cfg, rng& g) {
    named_params P;
    P.add("enc.curve_emb", init_weight(n_curve_kinds, cfg.curve_emb_dim, g));
    P.add("enc.missing_token", init_weight(1, cfg.curve_emb_dim, g));
    P.add("enc.emb_proj", init_weight(cfg.curve_emb_dim, cfg.enc_hidden, g));
    P.add("enc.lift", init_weight(n_curve_kinds, cfg.enc_hidden, g));
    P.add("enc.pos_proj", init_weight(cfg.depth_pos_dim, cfg.enc_hidden, g));
    for (std::size_t l = 0; l < cfg.conv_layers; ++l) {
        const std::string base = "enc.conv" + std::to_string(l);
        P.add(base + ".depthwise", init_weight(cfg.enc_hidden, cfg.conv_kernel, g));
        P.add(base + ".pointwise", init_weight(cfg.enc_hidden, cfg.enc_hidden, g));
        P.add(base + ".bias", tensor(1, cfg.enc_hidden));
    }
    P.add("enc.out_proj", init_weight(cfg.enc_hidden, cfg.latent_dim, g));
    P.add("enc.out_bias", tensor(1, cfg.latent_dim));
    return P;
}

inline named_params init_decoder_params(const tok_config& cfg, rng& g) {
    named_params P;
    P.add("dec.in_proj", init_weight(cfg.latent_dim, cfg.enc_hidden, g));
    P.add("dec.in_bias", tensor(1, cfg.enc_hidden));
    P.add("dec.pos_table", init_weight(cfg.patch_length, cfg.enc_hidden, g));
    for (std::size_t l = 0; l < cfg.conv_layers; ++l) {
        const std::string base = "dec.conv" + std::to_string(l);
        P.add(base + ".depthwise", init_weight(cfg.enc_hidden, cfg.conv_kernel, g));
        P.add(base + ".pointwise", init_weight(cfg.enc_hidden, cfg.enc_hidden, g));
        P.add(base + ".bias", tensor(1, cfg.enc_hidden));
    }
    P.add("dec.out_proj", init_weight(cfg.enc_hidden, n_curve_kinds, g));
    P.add("dec.out_bias", tensor(1, n_curve_kinds));
    return P;
}

// ---- encoder / decoder forward graphs ----

namespace detail {

inline ad::var conv_stack(graph_ctx& ctx, ad::var x, const std::string& prefix,
                          std::size_t layers) {
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string base = prefix + ".conv" + std::to_string(l);
        ad::var y = ad::depthwise_conv1d(x, ctx[base + ".depthwise"]);
        y = ad::matmul(y, ctx[base + ".pointwise"]);
        y = ad::add_row_broadcast(y, ctx[base + ".bias"]);
        x = ad::add(x, ad::gelu(y));  // residual
    }
    return x;
}

}  // namespace detail

/// Encoder: per-channel value lift + curve-type embedding (missing channels
/// contribute a learned missing token instead of values), relative-depth
/// features, a depthwise-separable conv stack with residuals, mean pooling,
/// and projection to the latent dimension.
inline ad::var encode_patch_graph(graph_ctx& ctx, const patch& p, const tok_config& cfg) {
    require(p.channels() == n_curve_kinds, errc::shape_mismatch,
            "encode: expected " + std::to_string(n_curve_kinds) + " channel rows, got " +
                std::to_string(p.channels()));
    require(p.length() == cfg.patch_length, errc::shape_mismatch,
            "encode: patch length " + std::to_string(p.length()));
    const std::size_t L = cfg.patch_length;

    // Row-constant input contribution: curve-type embeddings (plus missing
    // token where a channel is absent) and the relative-depth features.
    ad::var emb = ctx["enc.curve_emb"];
    std::vector<ad::var> const_rows;
    for (std::size_t c = 0; c < n_curve_kinds; ++c) {
        ad::var row = ad::row_select(emb, c);
        if (p.missing_mask[c]) row = ad::add(row, ctx["enc.missing_token"]);
        const_rows.push_back(row);
    }
    ad::var emb_sum = const_rows[0];
    for (std::size_t c = 1; c < const_rows.size(); ++c) emb_sum = ad::add(emb_sum, const_rows[c]);
    ad::var row_const = ad::matmul(emb_sum, ctx["enc.emb_proj"]);  // [1×h]
    ad::var pos = ad::matmul(ad::constant(rel_depth_features(p.rel_depth, cfg.depth_pos_dim)),
                             ctx["enc.pos_proj"]);
    row_const = ad::add(row_const, pos);

    // Value contribution: outer product of each present channel's samples
    // with that channel's lift vector.
    ad::var x;
    bool have = false;
    for (std::size_t c = 0; c < n_curve_kinds; ++c) {
        if (p.missing_mask[c]) continue;
        tensor col(L, 1);
        for (std::size_t i = 0; i < L; ++i) col.v[i] = p.values.at(c, i);
        ad::var contrib = ad::matmul(ad::constant(std::move(col)),
                                     ad::row_select(ctx["enc.lift"], c));  // [L×h]
        x = have ? ad::add(x, contrib) : contrib;
        have = true;
    }
    if (!have) x = ad::constant(tensor(L, cfg.enc_hidden));  // all channels missing
    x = ad::add_row_broadcast(x, row_const);

    x = detail::conv_stack(ctx, x, "enc", cfg.conv_layers);
    ad::var pooled = ad::mean_over_rows(x);  // [1×h]
    return ad::add(ad::matmul(pooled, ctx["enc.out_proj"]), ctx["enc.out_bias"]);  // [1×d]
}

/// Decoder graph: latent → hidden, broadcast over a learned per-position
/// table, conv stack, and a pointwise map back to the channel space.
/// Returns an L×C matrix (transpose of the patch layout, which callers
/// account for when comparing against targets).
inline ad::var decode_patch_graph(graph_ctx& ctx, const ad::var& z, const tok_config& cfg) {
    require(z->val.rows == 1 && z->val.cols == cfg.latent_dim, errc::shape_mismatch,
            "decode: latent " + z->val.shape_str());
    ad::var h0 = ad::add(ad::matmul(z, ctx["dec.in_proj"]), ctx["dec.in_bias"]);  // [1×h]
    ad::var x = ad::add_row_broadcast(ctx["dec.pos_table"], h0);                  // [L×h]
    x = detail::conv_stack(ctx, x, "dec", cfg.conv_layers);
    return ad::add_row_broadcast(ad::matmul(x, ctx["dec.out_proj"]), ctx["dec.out_bias"]);
}

/// Plain-value encode for inference paths.
inline tensor encode_patch(named_params& P, const patch& p, const tok_config& cfg) {
    graph_ctx ctx(P);
    return encode_patch_graph(ctx, p, cfg)->val;
}

/// Plain-value decode returning the canonical C×L patch layout.
inline tensor decode_patch(named_params& P, const tensor& z_q, const tok_config& cfg) {
    graph_ctx ctx(P);
    ad::var out = decode_patch_graph(ctx, ad::constant(z_q), cfg);
    return transpose(out->val);  // [L×C] -> [C×L]
}

struct tokenizer_output {
    tensor z_e;
    std::size_t token_index = 0;
    tensor z_q;
    tensor recon;  // C×L
};

inline tokenizer_output tokenize_patch(named_params& P, const codebook& cb, const patch& p,
                                       const tok_config& cfg) {
    tokenizer_output out;
    out.z_e = encode_patch(P, p, cfg);
    auto [idx, zq] = quantize(out.z_e, cb);
    out.token_index = idx;
    out.z_q = std::move(zq);
    out.recon = decode_patch(P, out.z_q, cfg);
    return out;
}

// ---- VQ losses ----

/// Mean squared reconstruction error over the present channels only.
/// `decoded` is the decoder's L×C output; `target` the patch it should match.
inline ad::var recon_loss_graph(const ad::var& decoded, const patch& target) {
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < target.channels(); ++c)
        if (!target.missing_mask[c]) present.push_back(c);
    require(!present.empty(), errc::all_channels_missing, "recon target " + target.well_id);
    const std::size_t L = target.length();
    tensor tgt(L, present.size());
    for (std::size_t j = 0; j < present.size(); ++j)
        for (std::size_t i = 0; i < L; ++i) tgt.at(i, j) = target.values.at(present[j], i);
    ad::var diff = ad::sub(ad::cols_gather(decoded, present), ad::constant(std::move(tgt)));
    return ad::mean_all(ad::square(diff));
}

/// Full quantization objective on plain values:
/// ‖x−x̂‖² + ‖sg[z_e]−e_k‖² + β‖z_e−sg[e_k]‖².
inline double vq_loss(const tensor& x, const tensor& x_hat, const tensor& z_e,
                      const tensor& e_k, double beta) {
    check_same_shape(x, x_hat, "vq_loss recon");
    check_same_shape(z_e, e_k, "vq_loss latent");
    double recon = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.v[i] - x_hat.v[i];
        recon += d * d;
    }
    double codebook_term = 0.0;
    for (std::size_t i = 0; i < z_e.size(); ++i) {
        const double d = z_e.v[i] - e_k.v[i];
        codebook_term += d * d;
    }
    return recon + codebook_term + beta * codebook_term;
}

/// Commitment term as a graph: β‖z_e − sg[e_k]‖².
inline ad::var commitment_loss_graph(const ad::var& z_e, const tensor& e_k, double beta) {
    ad::var diff = ad::sub(z_e, ad::constant(e_k));
    return ad::scale(ad::sum_all(ad::square(diff)), beta);
}

// ---- tokenizer training ----

struct tok_step_metrics {
    double recon = 0.0;
    double commit = 0.0;
    double codebook_term = 0.0;  // diagnostic ‖sg[z_e]−e_k‖², not a gradient source
    double total = 0.0;
    std::size_t codes_used = 0;
};

struct tokenizer_model {
    tok_config cfg;
    named_params params;  // encoder + decoder
    codebook cb;
};

inline tokenizer_model init_tokenizer(const tok_config& cfg, std::uint64_t seed) {
    tokenizer_model m;
    m.cfg = cfg;
    rng g(rng::derive(seed, /*stream=*/2, 0));
    m.params = init_encoder_params(cfg, g);
    m.params.merge_from(init_decoder_params(cfg, g));
    m.cb = make_codebook(cfg.codebook_size, cfg.latent_dim, g, cfg.ema_decay,
                         cfg.dead_threshold);
    return m;
}

/// One optimizer step of VQ training on a batch of patches. Gradients follow
/// the straight-through estimator: the decoder consumes z_e + sg(z_q − z_e),
/// the commitment term pulls z_e toward its (frozen) code, and the codebook
/// itself learns through EMA statistics rather than gradients.
inline tok_step_metrics tokenizer_train_step(tokenizer_model& m, ad::adam& opt,
                                             const std::vector<const patch*>& batch,
                                             double lr, rng& reinit_rng) {
    require(!batch.empty(), errc::degenerate_input, "empty tokenizer batch");
    ad::param_binder binder;
    graph_ctx ctx(m.params, &binder);

    tok_step_metrics metrics;
    std::vector<std::size_t> assigned;
    tensor latents(batch.size(), m.cfg.latent_dim);
    std::vector<std::pair<tensor, double>> candidates;
    std::vector<ad::var> per_patch_losses;
    std::vector<char> used(m.cb.size(), 0);

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const patch& p = *batch[b];
        ad::var z_e = encode_patch_graph(ctx, p, m.cfg);
        auto [token, z_q] = quantize(z_e->val, m.cb);
        assigned.push_back(token);
        used[token] = 1;
        for (std::size_t j = 0; j < m.cfg.latent_dim; ++j) latents.at(b, j) = z_e->val.v[j];

        // straight-through: value equals z_q, gradient flows to z_e
        tensor delta = z_q;
        for (std::size_t j = 0; j < delta.size(); ++j) delta.v[j] -= z_e->val.v[j];
        ad::var z_dec = ad::add(z_e, ad::constant(std::move(delta)));

        ad::var decoded = decode_patch_graph(ctx, z_dec, m.cfg);
        ad::var recon = recon_loss_graph(decoded, p);
        ad::var commit = commitment_loss_graph(z_e, z_q, m.cfg.beta);

        double cb_term = 0.0;
        for (std::size_t j = 0; j < m.cfg.latent_dim; ++j) {
            const double d = z_e->val.v[j] - z_q.v[j];
            cb_term += d * d;
        }
        metrics.recon += recon->val.item();
        metrics.commit += commit->val.item();
        metrics.codebook_term += cb_term;
        candidates.emplace_back(z_e->val, recon->val.item());
        per_patch_losses.push_back(ad::add(recon, commit));
    }

    ad::var loss = ad::scale(ad::sum_all(ad::stack_scalars(per_patch_losses)),
                             1.0 / static_cast<double>(batch.size()));
    require(std::isfinite(loss->val.item()), errc::non_finite_loss, "tokenizer step");
    ad::backward(loss);
    opt.step(binder, lr);

    ema_update(m.cb, assigned, latents);
    reinit_dead_codes(m.cb, candidates, reinit_rng);

    const auto bsz = static_cast<double>(batch.size());
    metrics.recon /= bsz;
    metrics.commit /= bsz;
    metrics.codebook_term /= bsz;
    metrics.total = metrics.recon + metrics.commit + metrics.codebook_term;
    for (char u : used) metrics.codes_used += static_cast<std::size_t>(u);
    return metrics;
}

/// Number of codes with meaningful usage mass (for vocabulary-collapse checks
/// and chance-rate computation).
inline std::size_t codes_in_use(const codebook& cb, double min_count = 0.05) {
    std::size_t n = 0;
    for (double c : cb.ema_counts)
        if (c > min_count) ++n;
    return n;
}

}  // namespace wlfm

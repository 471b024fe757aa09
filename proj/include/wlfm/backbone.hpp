#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wlfm/autodiff.hpp"
#include "wlfm/params.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

struct backbone_config {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t d_model = 128;
    std::size_t ffn_dim = 256;
    std::size_t proj_dim = 32;      // contrastive projection head output
    std::size_t depth_pos_dim = 8;  // sinusoidal relative-depth input features
};

/// All backbone parameters, including the discrete-token path (embedding
/// table + MTM head), the continuous-latent path used by the raw-continuous
/// ablation (input/output linear maps), and the contrastive projection head.
/// Both paths always exist so checkpoints have a uniform layout.
inline named_params init_backbone_params(const backbone_config& cfg, std::size_t vocab,
                                         std::size_t latent_dim, rng& g) {
    named_params P;
    P.add("bb.token_emb", init_weight(vocab, cfg.d_model, g));
    P.add("bb.mask_token", init_weight(1, cfg.d_model, g));
    P.add("bb.pos_proj", init_weight(cfg.depth_pos_dim, cfg.d_model, g));
    P.add("bb.latent_in", init_weight(latent_dim, cfg.d_model, g));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string b = "bb.l" + std::to_string(l);
        tensor ones(1, cfg.d_model);
        for (auto& x : ones.v) x = 1.0;
        P.add(b + ".ln1.gain", ones);
        P.add(b + ".ln1.bias", tensor(1, cfg.d_model));
        P.add(b + ".wq", init_weight(cfg.d_model, cfg.d_model, g));
        P.add(b + ".wk", init_weight(cfg.d_model, cfg.d_model, g));
        P.add(b + ".wv", init_weight(cfg.d_model, cfg.d_model, g));
        P.add(b + ".wo", init_weight(cfg.d_model, cfg.d_model, g));
        P.add(b + ".ln2.gain", ones);
        P.add(b + ".ln2.bias", tensor(1, cfg.d_model));
        P.add(b + ".ff1", init_weight(cfg.d_model, cfg.ffn_dim, g));
        P.add(b + ".ff1b", tensor(1, cfg.ffn_dim));
        P.add(b + ".ff2", init_weight(cfg.ffn_dim, cfg.d_model, g));
        P.add(b + ".ff2b", tensor(1, cfg.d_model));
    }
    tensor ones(1, cfg.d_model);
    for (auto& x : ones.v) x = 1.0;
    P.add("bb.lnf.gain", ones);
    P.add("bb.lnf.bias", tensor(1, cfg.d_model));
    P.add("bb.mtm_head", init_weight(cfg.d_model, vocab, g));
    P.add("bb.mtm_bias", tensor(1, vocab));
    P.add("bb.latent_head", init_weight(cfg.d_model, latent_dim, g));
    P.add("bb.latent_head_bias", tensor(1, latent_dim));
    P.add("bb.proj_head", init_weight(cfg.d_model, cfg.proj_dim, g));
    P.add("bb.proj_bias", tensor(1, cfg.proj_dim));
    return P;
}

namespace detail {

inline ad::var transformer_block(graph_ctx& ctx, ad::var x, const std::string& b,
                                 const backbone_config& cfg) {
    const std::size_t dh = cfg.d_model / cfg.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    ad::var h = ad::layer_norm(x, ctx[b + ".ln1.gain"], ctx[b + ".ln1.bias"]);
    ad::var q = ad::matmul(h, ctx[b + ".wq"]);
    ad::var k = ad::matmul(h, ctx[b + ".wk"]);
    ad::var v = ad::matmul(h, ctx[b + ".wv"]);
    std::vector<ad::var> head_outs;
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
        ad::var qh = ad::col_slice(q, hh * dh, dh);
        ad::var kh = ad::col_slice(k, hh * dh, dh);
        ad::var vh = ad::col_slice(v, hh * dh, dh);
        ad::var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh);  // [T×T], bidirectional
        ad::var attn = ad::softmax_rows(scores);
        head_outs.push_back(ad::matmul(attn, vh));
    }
    ad::var attn_out = ad::matmul(ad::concat_cols(head_outs), ctx[b + ".wo"]);
    x = ad::add(x, attn_out);

    ad::var h2 = ad::layer_norm(x, ctx[b + ".ln2.gain"], ctx[b + ".ln2.bias"]);
    ad::var ff = ad::gelu(ad::add_row_broadcast(ad::matmul(h2, ctx[b + ".ff1"]), ctx[b + ".ff1b"]));
    ff = ad::add_row_broadcast(ad::matmul(ff, ctx[b + ".ff2"]), ctx[b + ".ff2b"]);
    return ad::add(x, ff);
}

}  // namespace detail

/// Bidirectional transformer over an already-assembled input sequence
/// [T×d_model]; returns contextual states [T×d_model] after the final norm.
inline ad::var backbone_forward(graph_ctx& ctx, ad::var x, const backbone_config& cfg) {
    for (std::size_t l = 0; l < cfg.layers; ++l)
        x = detail::transformer_block(ctx, x, "bb.l" + std::to_string(l), cfg);
    return ad::layer_norm(x, ctx["bb.lnf.gain"], ctx["bb.lnf.bias"]);
}

/// Token-path input assembly: embedding lookup, masked positions replaced by
/// the learned MASK vector, plus projected relative-depth features.
inline ad::var assemble_token_input(graph_ctx& ctx, const std::vector<std::size_t>& tokens,
                                    const std::vector<double>& rel_depths,
                                    const std::vector<std::size_t>& masked_positions,
                                    const backbone_config& cfg) {
    const std::size_t T = tokens.size();
    require(rel_depths.size() == T, errc::length_mismatch, "token/depth lengths");
    ad::var emb = ad::rows_gather(ctx["bb.token_emb"], tokens);  // [T×d_model]

    if (!masked_positions.empty()) {
        tensor keep(T, 1);
        tensor indicator(T, 1);
        for (auto& x : keep.v) x = 1.0;
        for (std::size_t pos : masked_positions) {
            require(pos < T, errc::index_out_of_range, "mask position");
            keep.v[pos] = 0.0;
            indicator.v[pos] = 1.0;
        }
        // zero out masked rows, then add the MASK vector there
        tensor keep_b(T, cfg.d_model);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < cfg.d_model; ++j) keep_b.at(i, j) = keep.v[i];
        emb = ad::hadamard(emb, ad::constant(std::move(keep_b)));
        emb = ad::add(emb, ad::matmul(ad::constant(std::move(indicator)), ctx["bb.mask_token"]));
    }

    tensor pos_feat(T, cfg.depth_pos_dim);
    for (std::size_t t = 0; t < T; ++t) {
        tensor f = rel_depth_features(rel_depths[t], cfg.depth_pos_dim);
        for (std::size_t j = 0; j < cfg.depth_pos_dim; ++j) pos_feat.at(t, j) = f.v[j];
    }
    return ad::add(emb, ad::matmul(ad::constant(std::move(pos_feat)), ctx["bb.pos_proj"]));
}

/// Continuous-latent input assembly for the raw-continuous ablation: the
/// encoder latents [T×d] are linearly lifted instead of a token lookup.
inline ad::var assemble_latent_input(graph_ctx& ctx, const tensor& latents,
                                     const std::vector<double>& rel_depths,
                                     const std::vector<std::size_t>& masked_positions,
                                     const backbone_config& cfg) {
    const std::size_t T = latents.rows;
    require(rel_depths.size() == T, errc::length_mismatch, "latent/depth lengths");
    tensor masked_latents = latents;
    for (std::size_t pos : masked_positions) {
        require(pos < T, errc::index_out_of_range, "mask position");
        for (std::size_t j = 0; j < latents.cols; ++j) masked_latents.at(pos, j) = 0.0;
    }
    ad::var x = ad::matmul(ad::constant(std::move(masked_latents)), ctx["bb.latent_in"]);
    if (!masked_positions.empty()) {
        tensor indicator(T, 1);
        for (std::size_t pos : masked_positions) indicator.v[pos] = 1.0;
        x = ad::add(x, ad::matmul(ad::constant(std::move(indicator)), ctx["bb.mask_token"]));
    }
    tensor pos_feat(T, cfg.depth_pos_dim);
    for (std::size_t t = 0; t < T; ++t) {
        tensor f = rel_depth_features(rel_depths[t], cfg.depth_pos_dim);
        for (std::size_t j = 0; j < cfg.depth_pos_dim; ++j) pos_feat.at(t, j) = f.v[j];
    }
    return ad::add(x, ad::matmul(ad::constant(std::move(pos_feat)), ctx["bb.pos_proj"]));
}

}  // namespace wlfm

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wlfm/backbone.hpp"
#include "wlfm/corpus.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

// ---------------------------------------------------------------------------
// Token sequences
// ---------------------------------------------------------------------------

/// One well turned into a depth-ordered sequence of discrete codes; the
/// per-window encoder latents are kept for the continuous-input ablation and
/// for embedding export, and per-window labels are kept for probing tasks.
struct token_sequence {
    std::string well_id;
    std::vector<std::size_t> tokens;  // codebook indices, one per window
    std::vector<double> rel_depths;   // window-center relative depth, nondecreasing
    tensor latents;                   // [T×d] encoder outputs
    std::vector<int> litho_at;        // majority label per window
    std::vector<double> poro_at;      // mean porosity per window

    std::size_t size() const { return tokens.size(); }

    void validate(std::size_t vocab) const {
        require(rel_depths.size() == tokens.size() && latents.rows == tokens.size(),
                errc::length_mismatch, "sequence field lengths for " + well_id);
        for (std::size_t t = 0; t < tokens.size(); ++t)
            require(tokens[t] < vocab, errc::index_out_of_range, "token id");
        for (std::size_t t = 1; t < rel_depths.size(); ++t)
            require(rel_depths[t] >= rel_depths[t - 1], errc::non_monotonic_depth,
                    "relative depths must be nondecreasing");
    }
};

/// Randomly hide whole channels of a window (marks them missing and zeroes
/// the values), leaving at least one channel present.
inline patch modality_dropout(const patch& p, double prob, rng& g) {
    patch out = p;
    for (std::size_t c = 0; c < out.channels(); ++c) {
        if (out.missing_mask[c]) continue;
        if (g.uniform01() < prob) {
            out.missing_mask[c] = 1;
            for (std::size_t j = 0; j < out.length(); ++j) out.values.at(c, j) = 0.0;
        }
    }
    if (out.all_missing()) {
        // keep one randomly chosen original channel so the window stays usable
        std::vector<std::size_t> present;
        for (std::size_t c = 0; c < p.channels(); ++c)
            if (!p.missing_mask[c]) present.push_back(c);
        if (!present.empty()) {
            std::size_t keep = present[static_cast<std::size_t>(g.below(present.size()))];
            out.missing_mask[keep] = 0;
            for (std::size_t j = 0; j < out.length(); ++j)
                out.values.at(keep, j) = p.values.at(keep, j);
        }
    }
    return out;
}

/// Encode every window of every well with a frozen tokenizer, producing one
/// token sequence per well. `dropout_prob > 0` hides random channels before
/// encoding (an augmentation; labels always come from the intact window).
inline std::vector<token_sequence> make_token_sequences(const std::vector<well_log>& wells,
                                                        tokenizer_model& tok, double dropout_prob,
                                                        rng& g) {
    std::vector<token_sequence> out;
    out.reserve(wells.size());
    for (const auto& w : wells) {
        std::vector<patch> patches =
            extract_patches(w, tok.cfg.patch_length, tok.cfg.patch_stride);
        token_sequence seq;
        seq.well_id = w.well_id;
        seq.latents = tensor(patches.size(), tok.cfg.latent_dim);
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const patch* src = &patches[i];
            patch dropped;
            if (dropout_prob > 0.0) {
                dropped = modality_dropout(patches[i], dropout_prob, g);
                src = &dropped;
            }
            tensor z_e = encode_patch(tok.params, *src, tok.cfg);
            auto [idx, z_q] = quantize(z_e, tok.cb);
            (void)z_q;
            seq.tokens.push_back(idx);
            seq.rel_depths.push_back(patches[i].rel_depth);
            for (std::size_t j = 0; j < tok.cfg.latent_dim; ++j)
                seq.latents.at(i, j) = z_e.v[j];
            seq.litho_at.push_back(patches[i].majority_litho());
            seq.poro_at.push_back(patches[i].mean_poro());
        }
        out.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Block-wise masking
// ---------------------------------------------------------------------------

/// Positions chosen for masking, sorted ascending and duplicate-free.
/// The realized fraction |M|/T always lands in [ratio − block_length/T, ratio].
inline std::vector<std::size_t> make_block_mask(std::size_t T, double ratio,
                                                std::size_t block_length, rng& g) {
    require(T > 0, errc::degenerate_input, "empty sequence");
    require(block_length > 0, errc::config_error, "block length must be positive");
    require(ratio >= 0.0 && ratio <= 1.0, errc::config_error, "mask ratio outside [0,1]");
    std::vector<char> masked(T, 0);
    if (ratio == 0.0) return {};
    std::size_t count = 0;
    const std::size_t cap = static_cast<std::size_t>(std::floor(
        ratio * static_cast<double>(T) + 1e-12));                 // |M| <= ratio*T
    const double need = ratio * static_cast<double>(T) -
                        static_cast<double>(block_length);        // |M| >= ratio*T - bl
    if (ratio == 1.0) {
        std::vector<std::size_t> all(T);
        for (std::size_t i = 0; i < T; ++i) all[i] = i;
        return all;
    }
    std::size_t stalls = 0;
    while (static_cast<double>(count) < need && count < cap) {
        std::size_t start = static_cast<std::size_t>(g.below(T));
        std::size_t added = 0;
        for (std::size_t j = start; j < std::min(start + block_length, T) && count < cap; ++j) {
            if (!masked[j]) {
                masked[j] = 1;
                ++count;
                ++added;
            }
        }
        if (added == 0) {
            // all sampled positions were already masked; after repeated stalls
            // fill deterministically so termination is guaranteed
            if (++stalls > 8 * T) {
                for (std::size_t j = 0; j < T && static_cast<double>(count) < need; ++j) {
                    if (!masked[j]) {
                        masked[j] = 1;
                        ++count;
                    }
                }
            }
        }
    }
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < T; ++i)
        if (masked[i]) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of code predictions at masked positions.
/// `logits` is [|M|×K], `targets` the true code index per masked position.
inline ad::var masked_token_loss_graph(ad::var logits, const std::vector<std::size_t>& targets) {
    require(!targets.empty(), errc::empty_mask, "no masked positions");
    return ad::ce_mean(logits, targets);
}

inline double masked_token_loss(const tensor& logits, const std::vector<std::size_t>& targets) {
    return masked_token_loss_graph(ad::constant(logits), targets)->val.item();
}

/// InfoNCE over cosine similarities: the anchor should be closer to its
/// positive than to every negative, at temperature tau.
inline ad::var contrastive_loss_graph(ad::var anchor, ad::var positive,
                                      const std::vector<ad::var>& negatives, double tau) {
    require(tau > 0.0, errc::config_error, "temperature must be positive");
    auto cosine = [&](ad::var a, ad::var b) {
        ad::var num = ad::sum_all(ad::hadamard(a, b));
        ad::var na = ad::sum_all(ad::square(a));
        ad::var nb = ad::sum_all(ad::square(b));
        require(na->val.item() > 0.0 && nb->val.item() > 0.0, errc::zero_vector,
                "zero-norm embedding in contrastive loss");
        return ad::div(num, ad::sqrt_(ad::hadamard(na, nb)));
    };
    std::vector<ad::var> sims;
    sims.push_back(cosine(anchor, positive));
    for (const auto& n : negatives) sims.push_back(cosine(anchor, n));
    ad::var logits = ad::scale(ad::stack_scalars(sims), 1.0 / tau);  // [1×(1+N)]
    return ad::ce_mean(logits, {0});
}

inline double contrastive_loss(const std::vector<double>& anchor,
                               const std::vector<double>& positive,
                               const std::vector<std::vector<double>>& negatives, double tau) {
    auto as_row = [](const std::vector<double>& v) {
        tensor t(1, v.size());
        t.v = v;
        return ad::constant(std::move(t));
    };
    std::vector<ad::var> negs;
    negs.reserve(negatives.size());
    for (const auto& n : negatives) negs.push_back(as_row(n));
    return contrastive_loss_graph(as_row(anchor), as_row(positive), negs, tau)->val.item();
}

// ---------------------------------------------------------------------------
// Positive-pair mining
// ---------------------------------------------------------------------------

enum class pair_mode { depth_only, depth_similarity, anchored };

inline const char* pair_mode_name(pair_mode m) {
    switch (m) {
        case pair_mode::depth_only: return "depth_only";
        case pair_mode::depth_similarity: return "depth_similarity";
        case pair_mode::anchored: return "anchored";
    }
    return "?";
}

inline pair_mode pair_mode_from_name(const std::string& s) {
    if (s == "depth_only") return pair_mode::depth_only;
    if (s == "depth_similarity") return pair_mode::depth_similarity;
    if (s == "anchored") return pair_mode::anchored;
    raise(errc::config_error, "unknown pair mode: " + s);
}

/// A cross-well positive pair: window `a_pos` of well `a_well` is treated as
/// an alternate view of window `b_pos` of well `b_well`.
struct positive_pair {
    std::size_t a_well = 0, a_pos = 0;  // indices into the well / window grids
    std::size_t b_well = 0, b_pos = 0;
    double similarity = 0.0;  // Pearson r of smoothed windows (1 when not computed)
};

struct pair_config {
    double depth_tolerance = 0.02;   // max |Δ relative depth| for alignment
    double tau_sim = 0.8;            // min Pearson r in depth_similarity mode
    std::size_t smooth_window = 11;  // moving-average width before correlation
    pair_mode mode = pair_mode::depth_similarity;
};

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
    require(window >= 1, errc::config_error, "smoothing window must be >= 1");
    std::vector<double> out(x.size());
    const std::size_t half = window / 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t lo = i >= half ? i - half : 0;
        std::size_t hi = std::min(x.size(), i + half + 1);
        double s = 0.0;
        for (std::size_t j = lo; j < hi; ++j) s += x[j];
        out[i] = s / static_cast<double>(hi - lo);
    }
    return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size() && !a.empty(), errc::length_mismatch, "correlation inputs");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;  // flat window: treat as uncorrelated
    return sab / std::sqrt(saa * sbb);
}

/// Per-well view used during mining: smoothed channel values plus the window
/// grid (start index and relative depth per window).
struct mining_view {
    std::vector<std::size_t> starts;
    std::vector<double> rel_depths;
    std::vector<std::vector<double>> smooth;  // per canonical channel
    std::vector<char> has_channel;
    std::vector<std::pair<double, int>> tops_rel;  // (relative depth, layer id)
};

inline mining_view build_mining_view(const well_log& w, std::size_t L, std::size_t s,
                                     std::size_t smooth_window) {
    mining_view v;
    std::vector<patch> ps = extract_patches(w, L, s);
    for (const auto& p : ps) {
        v.starts.push_back(p.start_index);
        v.rel_depths.push_back(p.rel_depth);
    }
    v.smooth.resize(n_curve_kinds);
    v.has_channel.assign(n_curve_kinds, 0);
    for (std::size_t c = 0; c < n_curve_kinds; ++c) {
        const curve_series* cs = w.find_curve(all_curve_kinds[c]);
        if (!cs) continue;
        v.has_channel[c] = 1;
        v.smooth[c] = moving_average(cs->values, smooth_window);
    }
    const double top_depth = w.depths.front();
    const double span = w.depths.back() - w.depths.front();
    for (const auto& lt : w.layer_tops) {
        double rel = span > 0.0 ? (lt.depth - top_depth) / span : 0.5;
        v.tops_rel.emplace_back(rel, lt.layer_id);
    }
    return v;
}

inline double window_similarity(const mining_view& a, std::size_t ia, const mining_view& b,
                                std::size_t ib, std::size_t L) {
    double sum = 0.0;
    std::size_t shared = 0;
    for (std::size_t c = 0; c < n_curve_kinds; ++c) {
        if (!a.has_channel[c] || !b.has_channel[c]) continue;
        std::vector<double> wa(a.smooth[c].begin() + static_cast<std::ptrdiff_t>(a.starts[ia]),
                               a.smooth[c].begin() + static_cast<std::ptrdiff_t>(a.starts[ia] + L));
        std::vector<double> wb(b.smooth[c].begin() + static_cast<std::ptrdiff_t>(b.starts[ib]),
                               b.smooth[c].begin() + static_cast<std::ptrdiff_t>(b.starts[ib] + L));
        sum += pearson(wa, wb);
        ++shared;
    }
    return shared > 0 ? sum / static_cast<double>(shared) : 0.0;
}

}  // namespace detail

/// Mine cross-well positive pairs over the window grid.
///
///  - depth_only: windows whose relative depths differ by at most the
///    tolerance count as two views of the same interval.
///  - depth_similarity: additionally requires the Pearson correlation of the
///    smoothed windows (averaged over shared channels) to exceed tau_sim.
///  - anchored: windows near layer boundaries carrying the same layer id in
///    both wells are paired, regardless of depth alignment.
inline std::vector<positive_pair> build_positive_pairs(const std::vector<well_log>& wells,
                                                       std::size_t patch_length,
                                                       std::size_t patch_stride,
                                                       const pair_config& pc) {
    std::vector<detail::mining_view> views;
    views.reserve(wells.size());
    for (const auto& w : wells)
        views.push_back(detail::build_mining_view(w, patch_length, patch_stride, pc.smooth_window));

    std::vector<positive_pair> pairs;
    for (std::size_t wa = 0; wa < wells.size(); ++wa) {
        for (std::size_t wb = wa + 1; wb < wells.size(); ++wb) {
            const auto& va = views[wa];
            const auto& vb = views[wb];
            if (pc.mode == pair_mode::anchored) {
                for (const auto& [ra, ida] : va.tops_rel) {
                    for (const auto& [rb, idb] : vb.tops_rel) {
                        if (ida != idb) continue;
                        for (std::size_t ia = 0; ia < va.rel_depths.size(); ++ia) {
                            if (std::abs(va.rel_depths[ia] - ra) > pc.depth_tolerance) continue;
                            for (std::size_t ib = 0; ib < vb.rel_depths.size(); ++ib) {
                                if (std::abs(vb.rel_depths[ib] - rb) > pc.depth_tolerance) continue;
                                pairs.push_back({wa, ia, wb, ib, 1.0});
                            }
                        }
                    }
                }
                continue;
            }
            for (std::size_t ia = 0; ia < va.rel_depths.size(); ++ia) {
                for (std::size_t ib = 0; ib < vb.rel_depths.size(); ++ib) {
                    if (std::abs(va.rel_depths[ia] - vb.rel_depths[ib]) > pc.depth_tolerance)
                        continue;
                    if (pc.mode == pair_mode::depth_only) {
                        pairs.push_back({wa, ia, wb, ib, 1.0});
                    } else {
                        double r = detail::window_similarity(va, ia, vb, ib, patch_length);
                        if (r > pc.tau_sim) pairs.push_back({wa, ia, wb, ib, r});
                    }
                }
            }
        }
    }
    // drop duplicate (a_well,a_pos,b_well,b_pos) entries (anchored mode can
    // produce them when several shared tops select the same windows)
    std::sort(pairs.begin(), pairs.end(), [](const positive_pair& x, const positive_pair& y) {
        return std::tie(x.a_well, x.a_pos, x.b_well, x.b_pos) <
               std::tie(y.a_well, y.a_pos, y.b_well, y.b_pos);
    });
    pairs.erase(std::unique(pairs.begin(), pairs.end(),
                            [](const positive_pair& x, const positive_pair& y) {
                                return x.a_well == y.a_well && x.a_pos == y.a_pos &&
                                       x.b_well == y.b_well && x.b_pos == y.b_pos;
                            }),
                pairs.end());
    return pairs;
}

// ---------------------------------------------------------------------------
// Pretraining step
// ---------------------------------------------------------------------------

enum class ablation_arm { vq_ce, vq_noscl, raw_cont };

inline const char* ablation_name(ablation_arm a) {
    switch (a) {
        case ablation_arm::vq_ce: return "vq_ce";
        case ablation_arm::vq_noscl: return "vq_noscl";
        case ablation_arm::raw_cont: return "raw_cont";
    }
    return "?";
}

inline ablation_arm ablation_from_name(const std::string& s) {
    if (s == "vq_ce") return ablation_arm::vq_ce;
    if (s == "vq_noscl") return ablation_arm::vq_noscl;
    if (s == "raw_cont") return ablation_arm::raw_cont;
    raise(errc::config_error, "unknown ablation arm: " + s);
}

struct pretrain_config {
    backbone_config bb;
    std::size_t vocab = 256;       // codebook size K
    std::size_t latent_dim = 64;   // encoder latent width d
    double mask_ratio = 0.3;
    std::size_t block_length = 5;
    double temperature = 0.07;     // contrastive tau
    double alpha = 0.1;            // weight of the contrastive term
    std::size_t negatives = 16;    // negatives sampled per pair
    double negative_min_gap = 0.05;  // min |Δ rel depth| for same-well negatives
    ablation_arm arm = ablation_arm::vq_ce;
};

/// A positive pair remapped into batch coordinates: sequence index within the
/// batch plus window position within that (possibly cropped) sequence.
struct batch_pair {
    std::size_t a_seq = 0, a_pos = 0;
    std::size_t b_seq = 0, b_pos = 0;
};

struct pretrain_metrics {
    double masked_loss = 0.0;       // cross-entropy (or latent MSE for raw_cont)
    double contrastive = 0.0;       // mean InfoNCE over pairs (0 when no pairs)
    double total = 0.0;
    double mask_accuracy = 0.0;     // top-1 at masked positions (0 for raw_cont)
    std::size_t pairs_in_batch = 0;
    std::size_t masked_positions = 0;
};

namespace detail {

struct seq_forward {
    ad::var states;  // [T×d_model]
    std::vector<std::size_t> masked;
};

inline seq_forward forward_sequence(graph_ctx& ctx, const token_sequence& seq,
                                    const pretrain_config& cfg, rng& g) {
    seq_forward out;
    out.masked = make_block_mask(seq.size(), cfg.mask_ratio, cfg.block_length, g);
    ad::var x = cfg.arm == ablation_arm::raw_cont
                    ? assemble_latent_input(ctx, seq.latents, seq.rel_depths, out.masked, cfg.bb)
                    : assemble_token_input(ctx, seq.tokens, seq.rel_depths, out.masked, cfg.bb);
    out.states = backbone_forward(ctx, x, cfg.bb);
    return out;
}

}  // namespace detail

/// One optimization step on a batch of token sequences.
///
/// The masked-prediction term is the mean cross-entropy over all masked
/// positions pooled across the batch (mean squared latent error for the
/// raw-continuous arm). Each supplied pair contributes an InfoNCE term whose
/// negatives are drawn from depth-separated windows elsewhere in the batch;
/// with no pairs the contrastive term is exactly zero.
inline pretrain_metrics pretrain_step(named_params& params, const std::vector<token_sequence>& batch,
                                      const std::vector<batch_pair>& pairs,
                                      const pretrain_config& cfg, ad::adam& opt, double lr,
                                      rng& g) {
    require(!batch.empty(), errc::degenerate_input, "empty batch");
    ad::param_binder binder;
    graph_ctx ctx(params, &binder);

    std::vector<detail::seq_forward> fwd;
    fwd.reserve(batch.size());
    for (const auto& seq : batch) {
        require(seq.size() > 0, errc::degenerate_input, "empty sequence in batch");
        fwd.push_back(detail::forward_sequence(ctx, seq, cfg, g));
    }

    pretrain_metrics m;

    // --- masked-prediction term, pooled over the batch ---
    std::vector<ad::var> masked_states;
    std::vector<std::size_t> targets;
    std::vector<std::pair<std::size_t, std::size_t>> masked_refs;  // (seq, pos)
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t pos : fwd[i].masked) {
            masked_states.push_back(ad::row_select(fwd[i].states, pos));
            targets.push_back(batch[i].tokens[pos]);
            masked_refs.emplace_back(i, pos);
        }
    }
    require(!masked_states.empty(), errc::empty_mask,
            "mask ratio produced no masked positions in the whole batch");
    m.masked_positions = masked_states.size();
    ad::var pooled = ad::concat_rows(masked_states);  // [M×d_model]

    ad::var masked_term;
    if (cfg.arm == ablation_arm::raw_cont) {
        ad::var pred = ad::add_row_broadcast(ad::matmul(pooled, ctx["bb.latent_head"]),
                                             ctx["bb.latent_head_bias"]);
        tensor want(masked_refs.size(), cfg.latent_dim);
        for (std::size_t r = 0; r < masked_refs.size(); ++r) {
            auto [si, pos] = masked_refs[r];
            for (std::size_t j = 0; j < cfg.latent_dim; ++j)
                want.at(r, j) = batch[si].latents.at(pos, j);
        }
        masked_term = ad::mean_all(ad::square(ad::sub(pred, ad::constant(std::move(want)))));
        m.mask_accuracy = 0.0;
    } else {
        ad::var logits =
            ad::add_row_broadcast(ad::matmul(pooled, ctx["bb.mtm_head"]), ctx["bb.mtm_bias"]);
        masked_term = masked_token_loss_graph(logits, targets);
        const tensor& lv = logits->val;
        std::size_t hits = 0;
        for (std::size_t r = 0; r < lv.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < lv.cols; ++k)
                if (lv.at(r, k) > lv.at(r, best)) best = k;
            if (best == targets[r]) ++hits;
        }
        m.mask_accuracy = static_cast<double>(hits) / static_cast<double>(lv.rows);
    }
    m.masked_loss = masked_term->val.item();

    // --- contrastive term over supplied pairs ---
    ad::var loss = masked_term;
    if (!pairs.empty() && cfg.arm != ablation_arm::vq_noscl && cfg.alpha != 0.0) {
        auto project = [&](std::size_t si, std::size_t pos) {
            ad::var h = ad::row_select(fwd[si].states, pos);
            return ad::add_row_broadcast(ad::matmul(h, ctx["bb.proj_head"]), ctx["bb.proj_bias"]);
        };
        // flat list of candidate negatives: every window in the batch
        std::vector<std::pair<std::size_t, std::size_t>> all_windows;
        for (std::size_t i = 0; i < batch.size(); ++i)
            for (std::size_t t = 0; t < batch[i].size(); ++t) all_windows.emplace_back(i, t);

        std::vector<ad::var> pair_losses;
        for (const auto& bp : pairs) {
            require(bp.a_seq < batch.size() && bp.b_seq < batch.size(), errc::index_out_of_range,
                    "pair sequence index");
            require(bp.a_pos < batch[bp.a_seq].size() && bp.b_pos < batch[bp.b_seq].size(),
                    errc::index_out_of_range, "pair position");
            auto is_valid_negative = [&](std::size_t si, std::size_t t) {
                if (si == bp.a_seq && t == bp.a_pos) return false;
                if (si == bp.b_seq && t == bp.b_pos) return false;
                double ra = batch[bp.a_seq].rel_depths[bp.a_pos];
                double rt = batch[si].rel_depths[t];
                if (si == bp.a_seq || si == bp.b_seq)
                    return std::abs(rt - ra) > cfg.negative_min_gap;
                return true;  // other wells: any depth qualifies
            };
            std::vector<ad::var> negs;
            std::size_t attempts = 0;
            const std::size_t max_attempts = 50 * (cfg.negatives + 1);
            while (negs.size() < cfg.negatives && attempts < max_attempts &&
                   all_windows.size() > 2) {
                ++attempts;
                auto [si, t] =
                    all_windows[static_cast<std::size_t>(g.below(all_windows.size()))];
                if (!is_valid_negative(si, t)) continue;
                negs.push_back(project(si, t));
            }
            if (negs.empty()) continue;  // nothing depth-separated available
            pair_losses.push_back(
                contrastive_loss_graph(project(bp.a_seq, bp.a_pos), project(bp.b_seq, bp.b_pos),
                                       negs, cfg.temperature));
        }
        if (!pair_losses.empty()) {
            ad::var scl = ad::mean_all(ad::stack_scalars(pair_losses));
            m.contrastive = scl->val.item();
            m.pairs_in_batch = pair_losses.size();
            loss = ad::add(loss, ad::scale(scl, cfg.alpha));
        }
    }

    m.total = loss->val.item();
    require(std::isfinite(m.total), errc::non_finite_loss, "pretraining loss diverged");
    ad::backward(loss);
    opt.step(binder, lr);
    return m;
}

/// Deterministic evaluation pass: masked top-1 accuracy on a batch without
/// touching parameters. Used for held-out monitoring.
inline double masked_accuracy_eval(named_params& params, const std::vector<token_sequence>& batch,
                                   const pretrain_config& cfg, rng& g) {
    graph_ctx ctx(params, nullptr);
    std::size_t hits = 0, total = 0;
    for (const auto& seq : batch) {
        auto masked = make_block_mask(seq.size(), cfg.mask_ratio, cfg.block_length, g);
        if (masked.empty()) continue;
        ad::var x = cfg.arm == ablation_arm::raw_cont
                        ? assemble_latent_input(ctx, seq.latents, seq.rel_depths, masked, cfg.bb)
                        : assemble_token_input(ctx, seq.tokens, seq.rel_depths, masked, cfg.bb);
        ad::var states = backbone_forward(ctx, x, cfg.bb);
        if (cfg.arm == ablation_arm::raw_cont) continue;
        std::vector<ad::var> rows;
        for (std::size_t pos : masked) rows.push_back(ad::row_select(states, pos));
        ad::var logits = ad::add_row_broadcast(
            ad::matmul(ad::concat_rows(rows), ctx["bb.mtm_head"]), ctx["bb.mtm_bias"]);
        const tensor& lv = logits->val;
        for (std::size_t r = 0; r < lv.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < lv.cols; ++k)
                if (lv.at(r, k) > lv.at(r, best)) best = k;
            if (best == seq.tokens[masked[r]]) ++hits;
            ++total;
        }
    }
    return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

/// Contextual embedding of every window of one sequence (no masking), using
/// the contrastive projection head. Rows are L2-normalized.
inline tensor embed_sequence(named_params& params, const token_sequence& seq,
                             const pretrain_config& cfg) {
    graph_ctx ctx(params, nullptr);
    ad::var x = cfg.arm == ablation_arm::raw_cont
                    ? assemble_latent_input(ctx, seq.latents, seq.rel_depths, {}, cfg.bb)
                    : assemble_token_input(ctx, seq.tokens, seq.rel_depths, {}, cfg.bb);
    ad::var states = backbone_forward(ctx, x, cfg.bb);
    ad::var proj = ad::add_row_broadcast(ad::matmul(states, ctx["bb.proj_head"]),
                                         ctx["bb.proj_bias"]);
    tensor out = proj->val;
    for (std::size_t r = 0; r < out.rows; ++r) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) n2 += out.at(r, j) * out.at(r, j);
        double n = std::sqrt(n2);
        if (n > 0.0)
            for (std::size_t j = 0; j < out.cols; ++j) out.at(r, j) /= n;
    }
    return out;
}

/// Raw contextual states [T×d_model] of one sequence (no masking, no
/// projection). Used as the fine-tuning representation and for export.
inline tensor backbone_states(named_params& params, const token_sequence& seq,
                              const pretrain_config& cfg) {
    graph_ctx ctx(params, nullptr);
    ad::var x = cfg.arm == ablation_arm::raw_cont
                    ? assemble_latent_input(ctx, seq.latents, seq.rel_depths, {}, cfg.bb)
                    : assemble_token_input(ctx, seq.tokens, seq.rel_depths, {}, cfg.bb);
    return backbone_forward(ctx, x, cfg.bb)->val;
}

}  // namespace wlfm

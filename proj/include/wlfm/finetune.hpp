#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wlfm/autodiff.hpp"
#include "wlfm/backbone.hpp"
#include "wlfm/corpus.hpp"
#include "wlfm/csv.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/params.hpp"
#include "wlfm/pretrain.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/tensor.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

// ---------------------------------------------------------------------------
// Task heads and adaptation configuration
// ---------------------------------------------------------------------------

/// Per-lithology porosity prior used by the consistency term.
struct litho_prior {
    double mean = 0.1;
    double std = 0.02;
};

inline std::vector<litho_prior> priors_from_synth(const synth_config& cfg) {
    std::vector<litho_prior> out;
    out.reserve(cfg.lithologies.size());
    for (const auto& lp : cfg.lithologies) out.push_back({lp.poro_mean, lp.poro_std});
    return out;
}

struct multitask_weights {
    double lambda_r = 1.0;  // reconstruction
    double lambda_p = 1.0;  // porosity
    double lambda_l = 1.0;  // lithology
    double gamma = 0.1;     // porosity/lithology consistency

    void validate() const {
        require(lambda_r >= 0.0 && lambda_p >= 0.0 && lambda_l >= 0.0 && gamma >= 0.0,
                errc::config_error, "task weights must be nonnegative");
        require(lambda_r + lambda_p + lambda_l + gamma > 0.0, errc::config_error,
                "at least one task weight must be positive");
    }
};

struct finetune_config {
    pretrain_config pre;            // backbone dimensions and input arm
    std::size_t n_lithologies = 3;  // classification head width
    std::size_t channels = 5;       // C of each reconstructed window
    std::size_t patch_length = 64;  // L of each reconstructed window
    multitask_weights weights;
    std::vector<litho_prior> priors;  // size n_lithologies
    double dropout_prob = 0.2;        // channel dropout on adaptation inputs
    bool freeze_encoder = true;

    void validate() const {
        weights.validate();
        require(n_lithologies >= 2, errc::config_error, "need at least two lithologies");
        require(channels >= 1 && patch_length >= 1, errc::config_error,
                "window shape must be nonempty");
        require(priors.size() == n_lithologies, errc::config_error,
                "one porosity prior required per lithology");
        for (const auto& p : priors)
            require(std::isfinite(p.mean) && p.std > 0.0, errc::config_error,
                    "porosity priors need finite means and positive stds");
        require(dropout_prob >= 0.0 && dropout_prob < 1.0, errc::config_error,
                "dropout probability outside [0,1)");
    }
};

/// Adds the lightweight task heads next to the backbone parameters. Head
/// names share the "head." prefix, which is what the freezing logic keys on.
inline void init_task_heads(named_params& P, const finetune_config& cfg, rng& g) {
    const std::size_t d = cfg.pre.bb.d_model;
    P.add("head.litho", init_weight(d, cfg.n_lithologies, g));
    P.add("head.litho_bias", tensor(1, cfg.n_lithologies));
    P.add("head.poro", init_weight(d, 1, g));
    P.add("head.poro_bias", tensor(1, 1));
    P.add("head.recon", init_weight(d, cfg.channels * cfg.patch_length, g));
    P.add("head.recon_bias", tensor(1, cfg.channels * cfg.patch_length));
}

// ---------------------------------------------------------------------------
// Loss primitives (plain, graph-free; the training step mirrors these)
// ---------------------------------------------------------------------------

/// Entry coordinates into a C×L window: (channel, position).
using entry_set = std::vector<std::pair<std::size_t, std::size_t>>;

/// Mean squared error over the masked entries only.
inline double recon_loss(const tensor& x_hat, const tensor& x, const entry_set& m) {
    require(x_hat.rows == x.rows && x_hat.cols == x.cols, errc::shape_mismatch,
            "reconstruction and target shapes differ");
    require(!m.empty(), errc::empty_mask, "reconstruction mask is empty");
    double s = 0.0;
    for (auto [c, t] : m) {
        require(c < x.rows && t < x.cols, errc::index_out_of_range, "mask entry out of range");
        const double d = x_hat.at(c, t) - x.at(c, t);
        s += d * d;
    }
    return s / static_cast<double>(m.size());
}

/// Mean absolute error.
inline double poro_loss(const std::vector<double>& y_hat, const std::vector<double>& y) {
    require(y_hat.size() == y.size(), errc::length_mismatch, "porosity prediction/target lengths");
    require(!y.empty(), errc::degenerate_input, "empty porosity target");
    double s = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) s += std::abs(y_hat[t] - y[t]);
    return s / static_cast<double>(y.size());
}

namespace detail {

/// Log floor: keeps log() finite without visibly moving healthy probabilities.
inline constexpr double log_floor_eps = 1e-12;

inline void require_distribution_rows(const tensor& probs, const char* what) {
    for (std::size_t r = 0; r < probs.rows; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < probs.cols; ++k) {
            require(probs.at(r, k) >= 0.0, errc::not_a_distribution,
                    std::string(what) + ": negative probability");
            s += probs.at(r, k);
        }
        require(std::abs(s - 1.0) <= 1e-6, errc::not_a_distribution,
                std::string(what) + ": row does not sum to 1");
    }
}

/// Row softmax identical (including max subtraction) to the graph op.
inline void softmax_row_inplace(double* r, std::size_t n) {
    double mx = r[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        r[j] = std::exp(r[j] - mx);
        z += r[j];
    }
    for (std::size_t j = 0; j < n; ++j) r[j] /= z;
}

}  // namespace detail

/// Mean per-row cross-entropy between predicted distributions and one-hot
/// targets, with a small additive floor inside the log.
inline double litho_loss(const tensor& probs, const tensor& one_hot) {
    require(probs.rows == one_hot.rows && probs.cols == one_hot.cols, errc::shape_mismatch,
            "probability and target shapes differ");
    require(probs.rows >= 1, errc::degenerate_input, "no classification targets");
    detail::require_distribution_rows(probs, "predictions");
    detail::require_distribution_rows(one_hot, "targets");
    double s = 0.0;
    for (std::size_t r = 0; r < probs.rows; ++r)
        for (std::size_t k = 0; k < probs.cols; ++k)
            s -= one_hot.at(r, k) * std::log(probs.at(r, k) + detail::log_floor_eps);
    return s / static_cast<double>(probs.rows);
}

namespace detail {

/// Smoothing used on both sides of the consistency divergence.
inline constexpr double kl_eps = 1e-8;

}  // namespace detail

/// KL(p ∥ q) between two distributions of equal length after ε-smoothing both
/// sides: each entry gets +ε and the row is renormalized.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                            double eps = detail::kl_eps) {
    require(p.size() == q.size(), errc::length_mismatch, "distribution lengths differ");
    require(!p.empty(), errc::degenerate_input, "empty distribution");
    const double inv = 1.0 / (1.0 + static_cast<double>(p.size()) * eps);
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double pk = (p[k] + eps) * inv;
        const double qk = (q[k] + eps) * inv;
        s += pk * (std::log(pk) - std::log(qk));
    }
    return s;
}

/// Per-position implied porosity distribution: the normalized Gaussian
/// likelihood of the porosity prediction under each lithology's prior,
/// computed in log space and passed through the same row softmax the
/// training graph uses.
inline tensor implied_litho_distribution(const std::vector<double>& poro_pred,
                                         const std::vector<litho_prior>& priors) {
    require(!priors.empty(), errc::config_error, "no porosity priors");
    tensor out(poro_pred.size(), priors.size());
    for (std::size_t t = 0; t < poro_pred.size(); ++t) {
        for (std::size_t k = 0; k < priors.size(); ++k) {
            const double z = poro_pred[t] - priors[k].mean;
            out.at(t, k) =
                -z * z / (2.0 * priors[k].std * priors[k].std) - std::log(priors[k].std);
        }
        detail::softmax_row_inplace(out.row_ptr(t), priors.size());
    }
    return out;
}

/// Mean over positions of KL(implied porosity distribution ∥ predicted
/// lithology distribution), the physical-plausibility coupling between the
/// regression and classification heads.
inline double consistency_loss(const std::vector<double>& poro_pred, const tensor& litho_probs,
                               const std::vector<litho_prior>& priors) {
    require(poro_pred.size() == litho_probs.rows, errc::length_mismatch,
            "porosity predictions and lithology rows differ");
    require(!poro_pred.empty(), errc::degenerate_input, "no positions");
    require(litho_probs.cols == priors.size(), errc::shape_mismatch,
            "lithology width does not match prior count");
    detail::require_distribution_rows(litho_probs, "lithology probabilities");
    tensor implied = implied_litho_distribution(poro_pred, priors);
    double s = 0.0;
    std::vector<double> p(priors.size()), q(priors.size());
    for (std::size_t t = 0; t < poro_pred.size(); ++t) {
        for (std::size_t k = 0; k < priors.size(); ++k) {
            p[k] = implied.at(t, k);
            q[k] = litho_probs.at(t, k);
        }
        s += kl_divergence(p, q);
    }
    return s / static_cast<double>(poro_pred.size());
}

// ---------------------------------------------------------------------------
// Labeled batches
// ---------------------------------------------------------------------------

/// One well prepared for adaptation: model inputs (tokens/latents produced
/// from channel-dropped windows) plus intact supervision targets.
struct labeled_sequence {
    token_sequence seq;                // inputs; litho_at/poro_at hold targets
    std::vector<tensor> recon_targets; // per window, C×L intact values
    std::vector<entry_set> recon_masks; // per window, dropped-channel entries
    tensor y_litho;                    // [T × n_lithologies] one-hot rows

    std::size_t size() const { return seq.size(); }

    std::size_t masked_entries() const {
        std::size_t n = 0;
        for (const auto& m : recon_masks) n += m.size();
        return n;
    }

    void validate(const finetune_config& cfg) const {
        seq.validate(cfg.pre.vocab);
        require(recon_targets.size() == seq.size() && recon_masks.size() == seq.size() &&
                    y_litho.rows == seq.size() && seq.poro_at.size() == seq.size() &&
                    seq.litho_at.size() == seq.size(),
                errc::length_mismatch, "labeled sequence fields disagree on window count");
        require(y_litho.cols == cfg.n_lithologies, errc::shape_mismatch,
                "one-hot width does not match lithology count");
        detail::require_distribution_rows(y_litho, "lithology targets");
        for (double p : seq.poro_at)
            require(p >= 0.0 && p <= 1.0, errc::degenerate_input, "porosity target outside [0,1]");
        for (std::size_t w = 0; w < seq.size(); ++w) {
            require(recon_targets[w].rows == cfg.channels &&
                        recon_targets[w].cols == cfg.patch_length,
                    errc::shape_mismatch, "reconstruction target shape");
            for (auto [c, t] : recon_masks[w])
                require(c < cfg.channels && t < cfg.patch_length, errc::index_out_of_range,
                        "reconstruction mask entry out of range");
        }
    }
};

using labeled_batch = std::vector<labeled_sequence>;

namespace detail {

inline void encode_window(tokenizer_model& tok, const patch& p, token_sequence& seq,
                          std::size_t w) {
    tensor z_e = encode_patch(tok.params, p, tok.cfg);
    auto [idx, z_q] = quantize(z_e, tok.cb);
    (void)z_q;
    seq.tokens[w] = idx;
    for (std::size_t j = 0; j < tok.cfg.latent_dim; ++j) seq.latents.at(w, j) = z_e.v[j];
}

}  // namespace detail

/// Prepares one labeled well: windows the curves, applies channel dropout to
/// the inputs, and records the dropped channels as reconstruction targets.
/// If no window lost a channel, one randomly chosen channel of one window
/// (among windows that stay usable after the loss) is dropped so the batch
/// still carries a reconstruction signal.
inline labeled_sequence make_labeled_sequence(const well_log& w, tokenizer_model& tok,
                                              const finetune_config& cfg, rng& g) {
    require(!w.litho_labels.empty() && !w.porosity.empty(), errc::degenerate_input,
            w.well_id + ": adaptation needs lithology and porosity labels");
    require(cfg.patch_length == tok.cfg.patch_length, errc::config_error,
            "window length does not match the tokenizer's");
    std::vector<patch> patches = extract_patches(w, cfg.patch_length, tok.cfg.patch_stride);
    require(!patches.empty(), errc::degenerate_input, w.well_id + ": shorter than one window");

    labeled_sequence ls;
    ls.seq.well_id = w.well_id;
    ls.seq.tokens.resize(patches.size());
    ls.seq.rel_depths.resize(patches.size());
    ls.seq.latents = tensor(patches.size(), tok.cfg.latent_dim);
    ls.recon_targets.reserve(patches.size());
    ls.recon_masks.resize(patches.size());
    ls.y_litho = tensor(patches.size(), cfg.n_lithologies);

    auto drop_entries = [&](const patch& intact, const patch& dropped, entry_set& m) {
        for (std::size_t c = 0; c < intact.channels(); ++c)
            if (!intact.missing_mask[c] && dropped.missing_mask[c])
                for (std::size_t t = 0; t < intact.length(); ++t) m.emplace_back(c, t);
    };

    for (std::size_t i = 0; i < patches.size(); ++i) {
        const patch& intact = patches[i];
        require(intact.channels() == cfg.channels, errc::shape_mismatch,
                w.well_id + ": channel count does not match configuration");
        patch dropped = modality_dropout(intact, cfg.dropout_prob, g);
        detail::encode_window(tok, dropped, ls.seq, i);
        ls.seq.rel_depths[i] = intact.rel_depth;
        ls.recon_targets.push_back(intact.values);
        drop_entries(intact, dropped, ls.recon_masks[i]);
        const int label = intact.majority_litho();
        require(label >= 0 && static_cast<std::size_t>(label) < cfg.n_lithologies,
                errc::index_out_of_range, w.well_id + ": lithology label outside head width");
        ls.y_litho.at(i, static_cast<std::size_t>(label)) = 1.0;
        ls.seq.litho_at.push_back(label);
        ls.seq.poro_at.push_back(intact.mean_poro());
    }

    if (ls.masked_entries() == 0) {
        // candidate windows are those that stay usable after losing a channel
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < patches.size(); ++i) {
            std::size_t present = 0;
            for (std::size_t c = 0; c < patches[i].channels(); ++c)
                if (!patches[i].missing_mask[c]) ++present;
            if (present > 1) candidates.push_back(i);
        }
        if (!candidates.empty()) {
            const std::size_t i = candidates[static_cast<std::size_t>(g.below(candidates.size()))];
            const patch& intact = patches[i];
            std::vector<std::size_t> present;
            for (std::size_t c = 0; c < intact.channels(); ++c)
                if (!intact.missing_mask[c]) present.push_back(c);
            const std::size_t c = present[static_cast<std::size_t>(g.below(present.size()))];
            patch dropped = intact;
            dropped.missing_mask[c] = 1;
            for (std::size_t t = 0; t < dropped.length(); ++t) dropped.values.at(c, t) = 0.0;
            detail::encode_window(tok, dropped, ls.seq, i);
            drop_entries(intact, dropped, ls.recon_masks[i]);
        }
    }
    return ls;
}

inline labeled_batch make_labeled_batch(const std::vector<well_log>& wells, tokenizer_model& tok,
                                        const finetune_config& cfg, rng& g) {
    labeled_batch out;
    out.reserve(wells.size());
    for (const auto& w : wells) out.push_back(make_labeled_sequence(w, tok, cfg, g));
    return out;
}

// ---------------------------------------------------------------------------
// Multi-task objective
// ---------------------------------------------------------------------------

/// Head outputs for one sequence.
struct task_outputs {
    std::vector<tensor> recon;  // per window, C×L
    std::vector<double> poro;   // per window
    tensor litho_probs;         // [T × n_lithologies]
};

struct multitask_components {
    double recon = 0.0;
    double poro = 0.0;
    double litho = 0.0;
    double consistency = 0.0;
    double total = 0.0;
};

/// Weighted multi-task objective over a batch, pooled across every window of
/// every sequence; also returns the unweighted components for logging. The
/// reconstruction component is 0 when no entries are masked anywhere.
inline multitask_components multitask_loss(const std::vector<task_outputs>& outputs,
                                           const labeled_batch& batch,
                                           const multitask_weights& w,
                                           const std::vector<litho_prior>& priors) {
    require(outputs.size() == batch.size(), errc::length_mismatch,
            "outputs and batch sizes differ");
    require(!batch.empty(), errc::degenerate_input, "empty batch");

    // Pool windows across the batch, then evaluate each primitive once.
    double sq_sum = 0.0;
    std::size_t masked = 0;
    std::vector<double> poro_pred, poro_true;
    std::size_t total_rows = 0;
    for (const auto& ls : batch) total_rows += ls.size();
    tensor probs(total_rows, batch[0].y_litho.cols);
    tensor onehot(total_rows, batch[0].y_litho.cols);
    std::size_t row = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const labeled_sequence& ls = batch[s];
        const task_outputs& o = outputs[s];
        require(o.recon.size() == ls.size() && o.poro.size() == ls.size() &&
                    o.litho_probs.rows == ls.size(),
                errc::length_mismatch, "outputs and sequence window counts differ");
        require(o.litho_probs.cols == probs.cols, errc::shape_mismatch,
                "lithology probability width differs across the batch");
        for (std::size_t i = 0; i < ls.size(); ++i) {
            for (auto [c, t] : ls.recon_masks[i]) {
                const double d = o.recon[i].at(c, t) - ls.recon_targets[i].at(c, t);
                sq_sum += d * d;
                ++masked;
            }
            poro_pred.push_back(o.poro[i]);
            poro_true.push_back(ls.seq.poro_at[i]);
            for (std::size_t k = 0; k < probs.cols; ++k) {
                probs.at(row, k) = o.litho_probs.at(i, k);
                onehot.at(row, k) = ls.y_litho.at(i, k);
            }
            ++row;
        }
    }

    multitask_components c;
    c.recon = masked > 0 ? sq_sum / static_cast<double>(masked) : 0.0;
    c.poro = poro_loss(poro_pred, poro_true);
    c.litho = litho_loss(probs, onehot);
    c.consistency = consistency_loss(poro_pred, probs, priors);
    c.total = w.lambda_r * c.recon + w.lambda_p * c.poro + w.lambda_l * c.litho +
              w.gamma * c.consistency;
    return c;
}

// ---------------------------------------------------------------------------
// Head forward passes
// ---------------------------------------------------------------------------

namespace detail {

struct head_forward {
    ad::var recon;        // [T × C·L]
    ad::var poro;         // [T × 1]
    ad::var litho_probs;  // [T × K]
};

inline head_forward run_heads(graph_ctx& ctx, const ad::var& states) {
    head_forward h;
    h.recon = ad::add_row_broadcast(ad::matmul(states, ctx["head.recon"]), ctx["head.recon_bias"]);
    h.poro = ad::add_row_broadcast(ad::matmul(states, ctx["head.poro"]), ctx["head.poro_bias"]);
    h.litho_probs = ad::softmax_rows(
        ad::add_row_broadcast(ad::matmul(states, ctx["head.litho"]), ctx["head.litho_bias"]));
    return h;
}

inline ad::var sequence_states(graph_ctx& ctx, const token_sequence& seq,
                               const pretrain_config& cfg) {
    ad::var x = cfg.arm == ablation_arm::raw_cont
                    ? assemble_latent_input(ctx, seq.latents, seq.rel_depths, {}, cfg.bb)
                    : assemble_token_input(ctx, seq.tokens, seq.rel_depths, {}, cfg.bb);
    return backbone_forward(ctx, x, cfg.bb);
}

}  // namespace detail

/// Deterministic head outputs for one labeled sequence (no parameter update).
inline task_outputs predict_sequence(named_params& P, const labeled_sequence& ls,
                                     const finetune_config& cfg) {
    graph_ctx ctx(P, nullptr);
    ad::var states = detail::sequence_states(ctx, ls.seq, cfg.pre);
    detail::head_forward h = detail::run_heads(ctx, states);

    task_outputs o;
    o.litho_probs = h.litho_probs->val;
    o.poro.resize(ls.size());
    o.recon.reserve(ls.size());
    for (std::size_t i = 0; i < ls.size(); ++i) {
        o.poro[i] = h.poro->val.at(i, 0);
        tensor win(cfg.channels, cfg.patch_length);
        for (std::size_t c = 0; c < cfg.channels; ++c)
            for (std::size_t t = 0; t < cfg.patch_length; ++t)
                win.at(c, t) = h.recon->val.at(i, c * cfg.patch_length + t);
        o.recon.push_back(std::move(win));
    }
    return o;
}

// ---------------------------------------------------------------------------
// Adaptation step
// ---------------------------------------------------------------------------

struct finetune_metrics {
    double recon = 0.0;
    double poro = 0.0;
    double litho = 0.0;
    double consistency = 0.0;
    double total = 0.0;
    double litho_accuracy = 0.0;  // top-1 over all windows in the batch
    std::size_t masked_entries = 0;
};

namespace detail {

struct multitask_graph_out {
    ad::var loss;
    finetune_metrics metrics;
};

/// Builds the full weighted multi-task loss graph over a batch. Shared by the
/// training step and by gradient tests, so both differentiate the same graph.
inline multitask_graph_out multitask_graph(graph_ctx& ctx, const labeled_batch& batch,
                                           const finetune_config& cfg) {
    require(!batch.empty(), errc::degenerate_input, "empty batch");
    std::vector<ad::var> recon_preds, recon_targets_v;
    std::vector<ad::var> poro_rows, kl_rows;
    std::vector<ad::var> ce_rows;
    std::size_t hits = 0, total_rows = 0, masked = 0;

    for (const auto& ls : batch) {
        require(ls.size() > 0, errc::degenerate_input, "empty sequence in batch");
        ad::var states = sequence_states(ctx, ls.seq, cfg.pre);
        head_forward h = run_heads(ctx, states);

        // reconstruction: pooled squared error over the masked entries
        for (std::size_t i = 0; i < ls.size(); ++i) {
            if (ls.recon_masks[i].empty()) continue;
            entry_set rc;
            tensor want(ls.recon_masks[i].size(), 1);
            for (std::size_t e = 0; e < ls.recon_masks[i].size(); ++e) {
                auto [c, t] = ls.recon_masks[i][e];
                rc.emplace_back(i, c * cfg.patch_length + t);
                want.v[e] = ls.recon_targets[i].at(c, t);
            }
            masked += rc.size();
            recon_preds.push_back(ad::select_entries(h.recon, std::move(rc)));
            recon_targets_v.push_back(ad::constant(std::move(want)));
        }

        // porosity: absolute residuals, pooled
        tensor ptrue(ls.size(), 1);
        for (std::size_t i = 0; i < ls.size(); ++i) ptrue.at(i, 0) = ls.seq.poro_at[i];
        poro_rows.push_back(ad::abs_(ad::sub(h.poro, ad::constant(std::move(ptrue)))));

        // lithology: -sum(one_hot * log(probs + eps)) per row, pooled
        ad::var logp = ad::log_(ad::add_scalar(h.litho_probs, log_floor_eps));
        ce_rows.push_back(
            ad::scale(ad::row_sum(ad::hadamard(ad::constant(ls.y_litho), logp)), -1.0));

        // consistency: implied porosity distribution vs predicted lithology
        std::vector<ad::var> loglik;
        for (std::size_t k = 0; k < cfg.priors.size(); ++k) {
            const litho_prior& pr = cfg.priors[k];
            ad::var z = ad::add_scalar(h.poro, -pr.mean);
            loglik.push_back(ad::add_scalar(
                ad::scale(ad::square(z), -1.0 / (2.0 * pr.std * pr.std)), -std::log(pr.std)));
        }
        ad::var implied = ad::softmax_rows(ad::concat_cols(loglik));
        const double inv = 1.0 / (1.0 + static_cast<double>(cfg.priors.size()) * kl_eps);
        ad::var psm = ad::scale(ad::add_scalar(implied, kl_eps), inv);
        ad::var qsm = ad::scale(ad::add_scalar(h.litho_probs, kl_eps), inv);
        kl_rows.push_back(
            ad::row_sum(ad::hadamard(psm, ad::sub(ad::log_(psm), ad::log_(qsm)))));

        // accuracy bookkeeping
        const tensor& pv = h.litho_probs->val;
        for (std::size_t i = 0; i < ls.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < pv.cols; ++k)
                if (pv.at(i, k) > pv.at(i, best)) best = k;
            if (best == static_cast<std::size_t>(ls.seq.litho_at[i])) ++hits;
            ++total_rows;
        }
    }

    multitask_graph_out out;
    finetune_metrics& m = out.metrics;
    m.masked_entries = masked;
    m.litho_accuracy = static_cast<double>(hits) / static_cast<double>(total_rows);

    ad::var recon_term;
    if (masked > 0) {
        ad::var diff = ad::sub(ad::concat_rows(recon_preds), ad::concat_rows(recon_targets_v));
        recon_term = ad::mean_all(ad::square(diff));
        m.recon = recon_term->val.item();
    }
    ad::var poro_term = ad::mean_all(ad::concat_rows(poro_rows));
    ad::var litho_term = ad::mean_all(ad::concat_rows(ce_rows));
    ad::var cons_term = ad::mean_all(ad::concat_rows(kl_rows));
    m.poro = poro_term->val.item();
    m.litho = litho_term->val.item();
    m.consistency = cons_term->val.item();

    const multitask_weights& w = cfg.weights;
    ad::var loss = ad::constant(tensor::scalar(0.0));
    if (masked > 0 && w.lambda_r > 0.0) loss = ad::add(loss, ad::scale(recon_term, w.lambda_r));
    if (w.lambda_p > 0.0) loss = ad::add(loss, ad::scale(poro_term, w.lambda_p));
    if (w.lambda_l > 0.0) loss = ad::add(loss, ad::scale(litho_term, w.lambda_l));
    if (w.gamma > 0.0) loss = ad::add(loss, ad::scale(cons_term, w.gamma));
    m.total = loss->val.item();
    out.loss = loss;
    return out;
}

}  // namespace detail

/// One optimization step of the weighted multi-task objective. With
/// freeze_encoder set, only parameters named "head.*" move; everything else
/// is bit-identical afterwards.
inline finetune_metrics finetune_step(named_params& P, const labeled_batch& batch,
                                      const finetune_config& cfg, ad::adam& opt, double lr) {
    cfg.validate();
    ad::param_binder binder;
    graph_ctx ctx(P, &binder);
    detail::multitask_graph_out g = detail::multitask_graph(ctx, batch, cfg);
    require(std::isfinite(g.metrics.total), errc::non_finite_loss, "adaptation loss diverged");

    ad::backward(g.loss);
    if (cfg.freeze_encoder) {
        std::vector<ad::param_binder::ref> head_refs;
        for (const auto& r : binder.refs())
            if (r.name.rfind("head.", 0) == 0) head_refs.push_back(r);
        opt.step(head_refs, lr);
    } else {
        opt.step(binder, lr);
    }
    return g.metrics;
}

// ---------------------------------------------------------------------------
// Per-depth prediction export
// ---------------------------------------------------------------------------

/// Depth-resolved predictions for one well. Each depth sample takes the head
/// outputs of the window whose center is nearest, so every sample of the
/// well is covered even where windows do not tile it exactly.
struct well_predictions {
    std::string well_id;
    std::vector<double> depths;
    std::vector<int> litho_pred;
    tensor litho_probs;  // [n × K]
    std::vector<double> poro_pred;
    std::vector<std::size_t> source_window;
};

inline well_predictions predict_well(named_params& P, const well_log& w, tokenizer_model& tok,
                                     const finetune_config& cfg) {
    require(cfg.patch_length == tok.cfg.patch_length, errc::config_error,
            "window length does not match the tokenizer's");
    std::vector<patch> patches = extract_patches(w, cfg.patch_length, tok.cfg.patch_stride);
    require(!patches.empty(), errc::degenerate_input, w.well_id + ": shorter than one window");

    token_sequence seq;
    seq.well_id = w.well_id;
    seq.tokens.resize(patches.size());
    seq.rel_depths.resize(patches.size());
    seq.latents = tensor(patches.size(), tok.cfg.latent_dim);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        detail::encode_window(tok, patches[i], seq, i);
        seq.rel_depths[i] = patches[i].rel_depth;
    }

    graph_ctx ctx(P, nullptr);
    ad::var states = detail::sequence_states(ctx, seq, cfg.pre);
    detail::head_forward h = detail::run_heads(ctx, states);

    const std::size_t n = w.depths.size();
    well_predictions out;
    out.well_id = w.well_id;
    out.depths = w.depths;
    out.litho_pred.resize(n);
    out.litho_probs = tensor(n, cfg.n_lithologies);
    out.poro_pred.resize(n);
    out.source_window.resize(n);

    std::vector<double> centers(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i)
        centers[i] = static_cast<double>(patches[i].start_index) +
                     (static_cast<double>(cfg.patch_length) - 1.0) / 2.0;

    std::size_t win = 0;
    for (std::size_t s = 0; s < n; ++s) {
        const double pos = static_cast<double>(s);
        while (win + 1 < centers.size() &&
               std::abs(centers[win + 1] - pos) < std::abs(centers[win] - pos))
            ++win;
        out.source_window[s] = win;
        out.poro_pred[s] = h.poro->val.at(win, 0);
        std::size_t best = 0;
        for (std::size_t k = 0; k < cfg.n_lithologies; ++k) {
            out.litho_probs.at(s, k) = h.litho_probs->val.at(win, k);
            if (out.litho_probs.at(s, k) > out.litho_probs.at(s, best)) best = k;
        }
        out.litho_pred[s] = static_cast<int>(best);
    }
    return out;
}

/// CSV rows: depth, litho_pred, one probability column per class, poro_pred.
inline void write_predictions_csv(const std::filesystem::path& path,
                                  const well_predictions& wp) {
    csv_writer out(path);
    std::vector<std::string> header = {"depth", "litho_pred"};
    for (std::size_t k = 0; k < wp.litho_probs.cols; ++k)
        header.push_back("litho_prob_" + std::to_string(k));
    header.push_back("poro_pred");
    out.row(header);
    for (std::size_t s = 0; s < wp.depths.size(); ++s) {
        std::vector<std::string> row = {format_double(wp.depths[s]),
                                        std::to_string(wp.litho_pred[s])};
        for (std::size_t k = 0; k < wp.litho_probs.cols; ++k)
            row.push_back(format_double(wp.litho_probs.at(s, k)));
        row.push_back(format_double(wp.poro_pred[s]));
        out.row(row);
    }
}

}  // namespace wlfm

#pragma once

// Run configuration: one JSON document drives every pipeline stage. Keys are
// optional (defaults below apply), unknown keys are rejected by name, and the
// resolved document — defaults applied — is echoed next to every run's
// outputs and embedded in every checkpoint so later stages never need the
// original file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wlfm/autodiff.hpp"
#include "wlfm/corpus.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/finetune.hpp"
#include "wlfm/loader.hpp"
#include "wlfm/pretrain.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

using ordered_json = nlohmann::ordered_json;

namespace detail {

/// Strict reader over one JSON object: every `get` marks its key as consumed,
/// and `finish` rejects whatever was never asked for, by name.
class strict_object {
public:
    strict_object(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
        require(j_.is_object(), errc::config_error, where_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            raise(errc::config_error, where_ + "." + key + ": " + e.what());
        }
    }

    /// Like `get`, but JSON null maps to negative infinity (JSON itself has
    /// no literal for it).
    void get_or_neg_inf(const char* key, double& out) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_null()) {
            out = -std::numeric_limits<double>::infinity();
            return;
        }
        try {
            out = it->get<double>();
        } catch (const nlohmann::json::exception& e) {
            raise(errc::config_error, where_ + "." + key + ": " + e.what());
        }
    }

    const ordered_json* sub(const char* key) {
        seen_.push_back(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& kv : j_.items()) {
            bool known = false;
            for (const char* s : seen_)
                if (kv.key() == s) known = true;
            require(known, errc::config_error, "unknown config key: " + where_ + "." + kv.key());
        }
    }

private:
    const ordered_json& j_;
    std::string where_;
    std::vector<const char*> seen_;
};

inline ordered_json threshold_to_json(double v) {
    if (std::isinf(v) && v < 0.0) return nullptr;
    return v;
}

}  // namespace detail

/// Every tunable of the pipeline, with defaults. The synthetic-corpus block
/// exposes its scalar knobs; the lithology menu and transition matrix stay at
/// the library's built-in three-facies model.
struct train_config {
    int format_version = 1;

    // -- tokenizer: vocabulary and patch grid --
    std::size_t codebook_size = 256;  // K
    std::size_t latent_dim = 64;      // d
    double beta = 0.25;               // commitment weight
    std::size_t patch_length = 64;    // L
    std::size_t patch_stride = 32;    // s
    double ema_decay = 0.99;
    std::size_t dead_threshold = 200;
    std::size_t curve_emb_dim = 8;
    std::size_t depth_pos_dim = 8;
    std::size_t enc_hidden = 32;
    std::size_t conv_layers = 3;
    std::size_t conv_kernel = 5;

    // -- backbone --
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t d_model = 128;
    std::size_t ffn_dim = 256;
    std::size_t proj_dim = 32;

    // -- pretraining --
    double mask_ratio = 0.3;  // r
    std::size_t block_length = 5;
    double temperature = 0.07;  // contrastive tau
    double alpha = 0.1;         // contrastive weight
    std::size_t negatives = 16;
    double negative_min_gap = 0.05;
    std::string pair_mode = "depth_similarity";
    double depth_tolerance = 0.02;
    double tau_sim = 0.8;
    std::size_t smooth_window = 11;
    std::string ablation = "vq_ce";  // vq_ce | vq_noscl | raw_cont

    // -- adaptation --
    double dropout_prob = 0.2;  // modality-dropout probability p
    double lambda_r = 1.0;
    double lambda_p = 1.0;
    double lambda_l = 1.0;
    double gamma = 0.1;  // consistency weight
    bool freeze_encoder = true;

    // -- loader --
    double lambda1 = 0.5;  // score: depth-gradient weight
    double lambda2 = 0.5;  // score: cross-channel variance weight
    double score_threshold = -std::numeric_limits<double>::infinity();
    std::size_t workers = 4;
    std::size_t queue_capacity = 64;

    // -- optimizer and schedule --
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // <= 0 disables
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    std::size_t max_steps = 0;  // cap on optimizer steps per stage; 0 = none

    // -- reproducibility and evaluation --
    std::uint64_t seed = 42;
    std::vector<std::uint64_t> eval_seeds = {1, 2, 3};

    // -- well-level split --
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;

    // -- synthetic corpus --
    synth_config synth = default_synth_config();

    void validate() const {
        require(format_version == 1, errc::config_error,
                "unsupported config format_version " + std::to_string(format_version));
        require(codebook_size >= 2, errc::config_error, "codebook_size must be >= 2");
        require(latent_dim >= 1 && patch_length >= 1 && patch_stride >= 1, errc::config_error,
                "latent_dim, patch_length, patch_stride must be positive");
        require(beta >= 0.0, errc::config_error, "beta must be nonnegative");
        require(layers >= 1 && heads >= 1 && d_model >= 1 && ffn_dim >= 1 && proj_dim >= 1,
                errc::config_error, "backbone dimensions must be positive");
        require(d_model % heads == 0, errc::config_error, "d_model must be divisible by heads");
        require(mask_ratio >= 0.0 && mask_ratio <= 1.0, errc::config_error,
                "mask_ratio outside [0,1]");
        require(block_length >= 1, errc::config_error, "block_length must be >= 1");
        require(temperature > 0.0, errc::config_error, "temperature must be positive");
        require(alpha >= 0.0, errc::config_error, "alpha must be nonnegative");
        pair_mode_from_name(pair_mode);    // raises on unknown names
        ablation_from_name(ablation);      // raises on unknown names
        require(dropout_prob >= 0.0 && dropout_prob < 1.0, errc::config_error,
                "dropout_prob outside [0,1)");
        require(lambda_r >= 0.0 && lambda_p >= 0.0 && lambda_l >= 0.0 && gamma >= 0.0,
                errc::config_error, "task weights must be nonnegative");
        require(lambda1 >= 0.0 && lambda2 >= 0.0, errc::config_error,
                "score weights must be nonnegative");
        require(workers >= 1, errc::config_error, "workers must be >= 1");
        require(queue_capacity >= 1, errc::config_error, "queue_capacity must be >= 1");
        require(lr > 0.0, errc::config_error, "lr must be positive");
        require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
                errc::config_error, "adam betas outside [0,1)");
        require(adam_eps > 0.0, errc::config_error, "adam_eps must be positive");
        require(epochs >= 1, errc::config_error, "epochs must be >= 1");
        require(batch_size >= 1, errc::config_error, "batch_size must be >= 1");
        require(!eval_seeds.empty(), errc::config_error, "eval_seeds must not be empty");
        require(train_ratio >= 0.0 && val_ratio >= 0.0 && test_ratio >= 0.0 &&
                    std::abs(train_ratio + val_ratio + test_ratio - 1.0) <= 1e-9,
                errc::config_error, "split ratios must be nonnegative and sum to 1");
        synth.validate();
    }

    // ---- projections onto each stage's native configuration ----

    tok_config tokenizer() const {
        tok_config t;
        t.codebook_size = codebook_size;
        t.latent_dim = latent_dim;
        t.beta = beta;
        t.patch_length = patch_length;
        t.patch_stride = patch_stride;
        t.ema_decay = ema_decay;
        t.dead_threshold = dead_threshold;
        t.curve_emb_dim = curve_emb_dim;
        t.depth_pos_dim = depth_pos_dim;
        t.enc_hidden = enc_hidden;
        t.conv_layers = conv_layers;
        t.conv_kernel = conv_kernel;
        return t;
    }

    backbone_config backbone() const {
        backbone_config b;
        b.layers = layers;
        b.heads = heads;
        b.d_model = d_model;
        b.ffn_dim = ffn_dim;
        b.proj_dim = proj_dim;
        b.depth_pos_dim = depth_pos_dim;
        return b;
    }

    /// The vq_noscl arm zeroes the contrastive weight here, so the resolved
    /// stage config is self-describing.
    pretrain_config pretraining() const {
        pretrain_config p;
        p.bb = backbone();
        p.vocab = codebook_size;
        p.latent_dim = latent_dim;
        p.mask_ratio = mask_ratio;
        p.block_length = block_length;
        p.temperature = temperature;
        p.alpha = ablation_from_name(ablation) == ablation_arm::vq_noscl ? 0.0 : alpha;
        p.negatives = negatives;
        p.negative_min_gap = negative_min_gap;
        p.arm = ablation_from_name(ablation);
        return p;
    }

    pair_config pairs() const {
        pair_config pc;
        pc.depth_tolerance = depth_tolerance;
        pc.tau_sim = tau_sim;
        pc.smooth_window = smooth_window;
        pc.mode = pair_mode_from_name(pair_mode);
        return pc;
    }

    finetune_config adaptation() const {
        finetune_config f;
        f.pre = pretraining();
        f.n_lithologies = synth.lithologies.size();
        f.channels = n_curve_kinds;
        f.patch_length = patch_length;
        f.weights.lambda_r = lambda_r;
        f.weights.lambda_p = lambda_p;
        f.weights.lambda_l = lambda_l;
        f.weights.gamma = gamma;
        f.priors = priors_from_synth(synth);
        f.dropout_prob = dropout_prob;
        f.freeze_encoder = freeze_encoder;
        return f;
    }

    score_params scoring() const {
        score_params sp;
        sp.lambda1 = lambda1;
        sp.lambda2 = lambda2;
        sp.score_threshold = score_threshold;
        return sp;
    }

    ad::adam_settings optimizer() const {
        ad::adam_settings s;
        s.beta1 = adam_beta1;
        s.beta2 = adam_beta2;
        s.eps = adam_eps;
        s.grad_clip = grad_clip;
        return s;
    }

    std::array<double, 3> split_ratios() const { return {train_ratio, val_ratio, test_ratio}; }
};

// ---- JSON (de)serialization ----

inline ordered_json to_json(const synth_config& s) {
    ordered_json j;
    j["format_version"] = s.format_version;
    j["n_wells"] = s.n_wells;
    j["depth_start"] = s.depth_start;
    j["well_length_min"] = s.well_length_min;
    j["well_length_max"] = s.well_length_max;
    j["sample_spacing"] = s.sample_spacing;
    j["noise_std"] = s.noise_std;
    j["drift_amplitude"] = s.drift_amplitude;
    j["channel_missing_prob"] = s.channel_missing_prob;
    j["seed"] = s.seed;
    return j;
}

inline synth_config synth_from_json(const ordered_json& j) {
    synth_config s = default_synth_config();
    detail::strict_object o(j, "synth");
    o.get("format_version", s.format_version);
    o.get("n_wells", s.n_wells);
    o.get("depth_start", s.depth_start);
    o.get("well_length_min", s.well_length_min);
    o.get("well_length_max", s.well_length_max);
    o.get("sample_spacing", s.sample_spacing);
    o.get("noise_std", s.noise_std);
    o.get("drift_amplitude", s.drift_amplitude);
    o.get("channel_missing_prob", s.channel_missing_prob);
    o.get("seed", s.seed);
    o.finish();
    return s;
}

inline ordered_json to_json(const train_config& c) {
    ordered_json j;
    j["format_version"] = c.format_version;
    j["codebook_size"] = c.codebook_size;
    j["latent_dim"] = c.latent_dim;
    j["beta"] = c.beta;
    j["patch_length"] = c.patch_length;
    j["patch_stride"] = c.patch_stride;
    j["ema_decay"] = c.ema_decay;
    j["dead_threshold"] = c.dead_threshold;
    j["curve_emb_dim"] = c.curve_emb_dim;
    j["depth_pos_dim"] = c.depth_pos_dim;
    j["enc_hidden"] = c.enc_hidden;
    j["conv_layers"] = c.conv_layers;
    j["conv_kernel"] = c.conv_kernel;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["d_model"] = c.d_model;
    j["ffn_dim"] = c.ffn_dim;
    j["proj_dim"] = c.proj_dim;
    j["mask_ratio"] = c.mask_ratio;
    j["block_length"] = c.block_length;
    j["temperature"] = c.temperature;
    j["alpha"] = c.alpha;
    j["negatives"] = c.negatives;
    j["negative_min_gap"] = c.negative_min_gap;
    j["pair_mode"] = c.pair_mode;
    j["depth_tolerance"] = c.depth_tolerance;
    j["tau_sim"] = c.tau_sim;
    j["smooth_window"] = c.smooth_window;
    j["ablation"] = c.ablation;
    j["dropout_prob"] = c.dropout_prob;
    j["lambda_r"] = c.lambda_r;
    j["lambda_p"] = c.lambda_p;
    j["lambda_l"] = c.lambda_l;
    j["gamma"] = c.gamma;
    j["freeze_encoder"] = c.freeze_encoder;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["score_threshold"] = detail::threshold_to_json(c.score_threshold);
    j["workers"] = c.workers;
    j["queue_capacity"] = c.queue_capacity;
    j["lr"] = c.lr;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["grad_clip"] = c.grad_clip;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["max_steps"] = c.max_steps;
    j["seed"] = c.seed;
    j["eval_seeds"] = c.eval_seeds;
    j["train_ratio"] = c.train_ratio;
    j["val_ratio"] = c.val_ratio;
    j["test_ratio"] = c.test_ratio;
    j["synth"] = to_json(c.synth);
    return j;
}

inline train_config train_config_from_json(const ordered_json& j) {
    train_config c;
    detail::strict_object o(j, "config");
    o.get("format_version", c.format_version);
    o.get("codebook_size", c.codebook_size);
    o.get("latent_dim", c.latent_dim);
    o.get("beta", c.beta);
    o.get("patch_length", c.patch_length);
    o.get("patch_stride", c.patch_stride);
    o.get("ema_decay", c.ema_decay);
    o.get("dead_threshold", c.dead_threshold);
    o.get("curve_emb_dim", c.curve_emb_dim);
    o.get("depth_pos_dim", c.depth_pos_dim);
    o.get("enc_hidden", c.enc_hidden);
    o.get("conv_layers", c.conv_layers);
    o.get("conv_kernel", c.conv_kernel);
    o.get("layers", c.layers);
    o.get("heads", c.heads);
    o.get("d_model", c.d_model);
    o.get("ffn_dim", c.ffn_dim);
    o.get("proj_dim", c.proj_dim);
    o.get("mask_ratio", c.mask_ratio);
    o.get("block_length", c.block_length);
    o.get("temperature", c.temperature);
    o.get("alpha", c.alpha);
    o.get("negatives", c.negatives);
    o.get("negative_min_gap", c.negative_min_gap);
    o.get("pair_mode", c.pair_mode);
    o.get("depth_tolerance", c.depth_tolerance);
    o.get("tau_sim", c.tau_sim);
    o.get("smooth_window", c.smooth_window);
    o.get("ablation", c.ablation);
    o.get("dropout_prob", c.dropout_prob);
    o.get("lambda_r", c.lambda_r);
    o.get("lambda_p", c.lambda_p);
    o.get("lambda_l", c.lambda_l);
    o.get("gamma", c.gamma);
    o.get("freeze_encoder", c.freeze_encoder);
    o.get("lambda1", c.lambda1);
    o.get("lambda2", c.lambda2);
    o.get_or_neg_inf("score_threshold", c.score_threshold);
    o.get("workers", c.workers);
    o.get("queue_capacity", c.queue_capacity);
    o.get("lr", c.lr);
    o.get("adam_beta1", c.adam_beta1);
    o.get("adam_beta2", c.adam_beta2);
    o.get("adam_eps", c.adam_eps);
    o.get("grad_clip", c.grad_clip);
    o.get("epochs", c.epochs);
    o.get("batch_size", c.batch_size);
    o.get("max_steps", c.max_steps);
    o.get("seed", c.seed);
    o.get("eval_seeds", c.eval_seeds);
    o.get("train_ratio", c.train_ratio);
    o.get("val_ratio", c.val_ratio);
    o.get("test_ratio", c.test_ratio);
    if (const ordered_json* s = o.sub("synth")) c.synth = synth_from_json(*s);
    o.finish();
    c.validate();
    return c;
}

inline train_config load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), errc::io_error, "cannot open config " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        raise(errc::config_error, path.string() + ": " + e.what());
    }
    return train_config_from_json(j);
}

/// Writes the fully resolved configuration (defaults applied) to `path`.
inline void write_resolved_config(const train_config& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), errc::io_error, "cannot write " + path.string());
    out << to_json(c).dump(2) << '\n';
}

}  // namespace wlfm

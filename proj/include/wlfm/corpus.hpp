#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wlfm/csv.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/tensor.hpp"

namespace wlfm {

// ---- curves ----

enum class curve_kind : int { gr = 0, sp = 1, ac = 2, den = 3, rt = 4 };

inline constexpr std::size_t n_curve_kinds = 5;
inline constexpr std::array<curve_kind, n_curve_kinds> all_curve_kinds{
    curve_kind::gr, curve_kind::sp, curve_kind::ac, curve_kind::den, curve_kind::rt};

inline const char* curve_name(curve_kind k) {
    switch (k) {
        case curve_kind::gr: return "GR";
        case curve_kind::sp: return "SP";
        case curve_kind::ac: return "AC";
        case curve_kind::den: return "DEN";
        case curve_kind::rt: return "RT";
    }
    raise(errc::unknown_curve_name, "bad curve_kind value");
}

inline curve_kind curve_from_name(std::string_view name) {
    for (curve_kind k : all_curve_kinds)
        if (name == curve_name(k)) return k;
    raise(errc::unknown_curve_name, "'" + std::string(name) + "'");
}

/// Only resistivity is measured on a multiplicative scale.
inline bool log_transformed(curve_kind k) { return k == curve_kind::rt; }

// ---- well log ----

struct curve_series {
    curve_kind kind{};
    std::vector<double> values;
    // Normalization record; filled by normalize_well so values can be inverted.
    bool normalized = false;
    bool log10_applied = false;
    double norm_mean = 0.0;
    double norm_std = 1.0;  // the floored divisor actually used
};

struct layer_top {
    double depth = 0.0;
    int layer_id = 0;  // lithology class of the layer starting here
};

struct well_log {
    std::string well_id;
    std::vector<double> depths;
    std::vector<curve_series> curves;
    std::vector<int> litho_labels;   // empty when absent
    std::vector<double> porosity;    // empty when absent
    std::vector<layer_top> layer_tops;

    std::size_t n() const { return depths.size(); }

    const curve_series* find_curve(curve_kind k) const {
        for (const auto& c : curves)
            if (c.kind == k) return &c;
        return nullptr;
    }
    curve_series* find_curve(curve_kind k) {
        for (auto& c : curves)
            if (c.kind == k) return &c;
        return nullptr;
    }

    void validate() const {
        require(!depths.empty(), errc::degenerate_input, well_id + ": empty well");
        for (std::size_t i = 1; i < depths.size(); ++i)
            require(depths[i] > depths[i - 1], errc::non_monotonic_depth,
                    well_id + " at row " + std::to_string(i));
        if (depths.size() >= 3) {
            const double step = depths[1] - depths[0];
            for (std::size_t i = 2; i < depths.size(); ++i)
                require(std::abs((depths[i] - depths[i - 1]) - step) <= 1e-6 * step,
                        errc::non_monotonic_depth, well_id + ": non-uniform depth spacing");
        }
        for (const auto& c : curves)
            require(c.values.size() == depths.size(), errc::ragged_columns,
                    well_id + ": curve " + curve_name(c.kind));
        require(litho_labels.empty() || litho_labels.size() == depths.size(),
                errc::ragged_columns, well_id + ": LITHO length");
        require(porosity.empty() || porosity.size() == depths.size(), errc::ragged_columns,
                well_id + ": PORO length");
        for (double p : porosity)
            require(p >= 0.0 && p <= 1.0, errc::degenerate_input,
                    well_id + ": porosity outside [0,1]");
    }
};

// ---- patches ----

struct patch {
    std::string well_id;
    std::size_t start_index = 0;
    std::vector<curve_kind> curve_kinds;  // one per row of values
    tensor values;                        // C×L
    std::vector<char> missing_mask;       // length C; true = channel absent/dropped
    double rel_depth = 0.5;               // patch center within the well, in [0,1]
    std::vector<int> litho_at;            // per-position labels when the well has them
    std::vector<double> poro_at;

    std::size_t channels() const { return curve_kinds.size(); }
    std::size_t length() const { return values.cols; }

    bool all_missing() const {
        for (char m : missing_mask)
            if (!m) return false;
        return !missing_mask.empty();
    }

    int majority_litho() const {
        require(!litho_at.empty(), errc::degenerate_input, "patch has no lithology labels");
        std::map<int, std::size_t> counts;
        for (int l : litho_at) ++counts[l];
        int best = litho_at[0];
        std::size_t best_n = 0;
        for (const auto& [label, cnt] : counts)
            if (cnt > best_n) {
                best = label;
                best_n = cnt;
            }
        return best;
    }

    double mean_poro() const {
        require(!poro_at.empty(), errc::degenerate_input, "patch has no porosity labels");
        double s = 0.0;
        for (double p : poro_at) s += p;
        return s / static_cast<double>(poro_at.size());
    }
};

// ---- well-level split ----

struct well_split {
    std::vector<std::string> train, val, test;
    std::uint64_t seed = 0;

    const std::vector<std::string>* set_of(const std::string& id) const {
        auto in = [&](const std::vector<std::string>& v) {
            return std::find(v.begin(), v.end(), id) != v.end();
        };
        if (in(train)) return &train;
        if (in(val)) return &val;
        if (in(test)) return &test;
        return nullptr;
    }
};

// ---- synthetic corpus config ----

struct litho_params {
    std::string name;
    std::array<double, n_curve_kinds> curve_mean{};
    std::array<double, n_curve_kinds> curve_std{};
    double poro_mean = 0.1;
    double poro_std = 0.02;
};

struct synth_config {
    int format_version = 1;
    std::size_t n_wells = 100;
    double depth_start = 1000.0;  // meters; top of the shallowest possible well
    double well_length_min = 140.0;
    double well_length_max = 160.0;
    double sample_spacing = 0.125;  // meters between samples
    std::vector<litho_params> lithologies;
    std::vector<std::vector<double>> transition;  // row-stochastic, per-sample
    double noise_std = 0.3;        // relative to each curve's mean lithology std
    double drift_amplitude = 0.5;  // relative, same scale convention
    double channel_missing_prob = 0.0;
    std::uint64_t seed = 42;

    void validate() const {
        require(n_wells >= 1, errc::config_error, "n_wells must be >= 1");
        require(sample_spacing > 0, errc::config_error, "sample_spacing must be > 0");
        require(well_length_min > 0 && well_length_max >= well_length_min, errc::config_error,
                "bad well length range");
        require(!lithologies.empty(), errc::config_error, "no lithologies");
        require(transition.size() == lithologies.size(), errc::invalid_transition_matrix,
                "transition matrix size");
        for (const auto& row : transition) {
            require(row.size() == lithologies.size(), errc::invalid_transition_matrix,
                    "transition row size");
            double s = 0.0;
            for (double p : row) {
                require(p >= 0.0, errc::invalid_transition_matrix, "negative entry");
                s += p;
            }
            require(std::abs(s - 1.0) <= 1e-9, errc::invalid_transition_matrix,
                    "row sums to " + format_double(s));
        }
        for (const auto& lp : lithologies) {
            for (double s : lp.curve_std)
                require(s >= 0.0, errc::config_error, lp.name + ": negative curve std");
            require(lp.poro_std >= 0.0, errc::config_error, lp.name + ": negative poro std");
        }
        require(noise_std >= 0 && drift_amplitude >= 0, errc::config_error, "negative noise");
        require(channel_missing_prob >= 0.0 && channel_missing_prob <= 1.0, errc::config_error,
                "channel_missing_prob outside [0,1]");
    }
};

/// Three-lithology default with well-separated GR/DEN/RT signatures.
inline synth_config default_synth_config() {
    synth_config cfg;
    cfg.lithologies = {
        //        name          GR        SP        AC        DEN          RT         poro
        {"shale", {110.0, -10.0, 90.0, 2.45, 3.0}, {12.0, 4.0, 6.0, 0.05, 0.5}, 0.08, 0.02},
        {"sand", {45.0, -60.0, 70.0, 2.30, 20.0}, {8.0, 8.0, 5.0, 0.05, 4.0}, 0.26, 0.04},
        {"carbonate", {30.0, -25.0, 55.0, 2.65, 120.0}, {6.0, 5.0, 4.0, 0.04, 20.0}, 0.12, 0.03},
    };
    cfg.transition = {
        {0.970, 0.020, 0.010},
        {0.025, 0.970, 0.005},
        {0.015, 0.015, 0.970},
    };
    return cfg;
}

// ---- operations ----

/// Reads one well CSV: DEPTH plus any subset of GR,SP,AC,DEN,RT, optionally
/// LITHO and PORO. Layer tops are reconstructed from lithology transitions.
inline well_log load_well(const std::filesystem::path& path, std::string well_id = "") {
    csv_table t = read_csv(path);
    well_log w;
    w.well_id = well_id.empty() ? path.stem().string() : std::move(well_id);

    int depth_col = t.find_column("DEPTH");
    if (depth_col < 0) raise(errc::missing_depth_column, path.string());

    std::vector<int> curve_cols(t.header.size(), -1);
    int litho_col = -1, poro_col = -1;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (static_cast<int>(j) == depth_col) continue;
        const std::string& h = t.header[j];
        if (h == "LITHO") {
            litho_col = static_cast<int>(j);
        } else if (h == "PORO") {
            poro_col = static_cast<int>(j);
        } else {
            curve_from_name(h);  // rejects unknown names
            curve_cols[j] = static_cast<int>(j);
        }
    }

    const std::size_t n = t.rows.size();
    w.depths.resize(n);
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (curve_cols[j] < 0) continue;
        curve_series c;
        c.kind = curve_from_name(t.header[j]);
        c.values.resize(n);
        w.curves.push_back(std::move(c));
    }
    if (litho_col >= 0) w.litho_labels.resize(n);
    if (poro_col >= 0) w.porosity.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = t.rows[i];
        w.depths[i] = parse_double(row[static_cast<std::size_t>(depth_col)]);
        std::size_t ci = 0;
        for (std::size_t j = 0; j < t.header.size(); ++j) {
            if (curve_cols[j] < 0) continue;
            w.curves[ci++].values[i] = parse_double(row[j]);
        }
        if (litho_col >= 0)
            w.litho_labels[i] = static_cast<int>(parse_double(row[static_cast<std::size_t>(litho_col)]));
        if (poro_col >= 0) w.porosity[i] = parse_double(row[static_cast<std::size_t>(poro_col)]);
    }
    w.validate();

    if (!w.litho_labels.empty()) {
        w.layer_tops.push_back({w.depths[0], w.litho_labels[0]});
        for (std::size_t i = 1; i < n; ++i)
            if (w.litho_labels[i] != w.litho_labels[i - 1])
                w.layer_tops.push_back({w.depths[i], w.litho_labels[i]});
    }
    return w;
}

/// Writes the canonical well CSV (curves in GR,SP,AC,DEN,RT order).
inline void write_well(const well_log& w, const std::filesystem::path& path) {
    std::vector<const curve_series*> ordered;
    for (curve_kind k : all_curve_kinds)
        if (const auto* c = w.find_curve(k)) ordered.push_back(c);

    csv_writer out(path);
    std::vector<std::string> header{"DEPTH"};
    for (const auto* c : ordered) header.push_back(curve_name(c->kind));
    if (!w.litho_labels.empty()) header.push_back("LITHO");
    if (!w.porosity.empty()) header.push_back("PORO");
    out.row(header);

    std::vector<std::string> row;
    for (std::size_t i = 0; i < w.n(); ++i) {
        row.clear();
        row.push_back(format_double(w.depths[i]));
        for (const auto* c : ordered) row.push_back(format_double(c->values[i]));
        if (!w.litho_labels.empty()) row.push_back(std::to_string(w.litho_labels[i]));
        if (!w.porosity.empty()) row.push_back(format_double(w.porosity[i]));
        out.row(row);
    }
}

inline constexpr double norm_std_floor = 1e-6;

/// Per-well z-scoring; resistivity passes through log10 first. The constants
/// used are recorded on each curve so the transform can be inverted.
inline well_log normalize_well(const well_log& w) {
    well_log out = w;
    for (auto& c : out.curves) {
        require(!c.normalized, errc::degenerate_input,
                out.well_id + ": curve already normalized");
        if (log_transformed(c.kind)) {
            for (double& v : c.values) {
                require(v > 0.0, errc::non_positive_resistivity,
                        out.well_id + ": " + format_double(v));
                v = std::log10(v);
            }
            c.log10_applied = true;
        }
        double mean = 0.0;
        for (double v : c.values) mean += v;
        mean /= static_cast<double>(c.values.size());
        double var_ = 0.0;
        for (double v : c.values) var_ += (v - mean) * (v - mean);
        var_ /= static_cast<double>(c.values.size());  // population variance
        const double sd = std::max(std::sqrt(var_), norm_std_floor);
        for (double& v : c.values) v = (v - mean) / sd;
        c.normalized = true;
        c.norm_mean = mean;
        c.norm_std = sd;
    }
    return out;
}

/// Inverts normalize_well using the recorded constants.
inline well_log denormalize_well(const well_log& w) {
    well_log out = w;
    for (auto& c : out.curves) {
        require(c.normalized, errc::degenerate_input, out.well_id + ": curve not normalized");
        for (double& v : c.values) {
            v = v * c.norm_std + c.norm_mean;
            if (c.log10_applied) v = std::pow(10.0, v);
        }
        c.normalized = false;
        c.log10_applied = false;
    }
    return out;
}

/// Fixed-stride windows over the well. Patches always carry all five channel
/// rows in canonical order; channels the well lacks are flagged missing and
/// zero-filled so every consumer sees a uniform C×L layout.
inline std::vector<patch> extract_patches(const well_log& w, std::size_t L, std::size_t s) {
    require(L >= 1 && s >= 1, errc::config_error, "patch length and stride must be >= 1");
    std::vector<patch> out;
    const std::size_t n = w.n();
    if (n < L) return out;
    const double top = w.depths.front();
    const double bottom = w.depths.back();
    const double span = bottom - top;
    for (std::size_t start = 0; start + L <= n; start += s) {
        patch p;
        p.well_id = w.well_id;
        p.start_index = start;
        p.curve_kinds.assign(all_curve_kinds.begin(), all_curve_kinds.end());
        p.values = tensor(n_curve_kinds, L);
        p.missing_mask.assign(n_curve_kinds, 1);
        for (std::size_t c = 0; c < n_curve_kinds; ++c) {
            const curve_series* cs = w.find_curve(all_curve_kinds[c]);
            if (!cs) continue;
            p.missing_mask[c] = 0;
            for (std::size_t i = 0; i < L; ++i) p.values.at(c, i) = cs->values[start + i];
        }
        const double center = 0.5 * (w.depths[start] + w.depths[start + L - 1]);
        p.rel_depth = span > 0.0 ? (center - top) / span : 0.5;
        if (!w.litho_labels.empty())
            p.litho_at.assign(w.litho_labels.begin() + static_cast<std::ptrdiff_t>(start),
                              w.litho_labels.begin() + static_cast<std::ptrdiff_t>(start + L));
        if (!w.porosity.empty())
            p.poro_at.assign(w.porosity.begin() + static_cast<std::ptrdiff_t>(start),
                             w.porosity.begin() + static_cast<std::ptrdiff_t>(start + L));
        out.push_back(std::move(p));
    }
    return out;
}

/// Deterministic well-level split with rounded proportions.
inline well_split split_wells(std::vector<std::string> well_ids,
                              std::array<double, 3> ratios, std::uint64_t seed) {
    double rsum = 0.0;
    for (double r : ratios) {
        require(r >= 0.0, errc::bad_ratios, "negative ratio");
        rsum += r;
    }
    require(std::abs(rsum - 1.0) <= 1e-9, errc::bad_ratios,
            "ratios sum to " + format_double(rsum));
    rng g(rng::derive(seed, /*stream=*/7, 0));
    g.shuffle(well_ids);
    const auto n = static_cast<double>(well_ids.size());
    auto rounded = [](double x) { return static_cast<std::size_t>(std::llround(x)); };
    std::size_t n_train = std::min(well_ids.size(), rounded(n * ratios[0]));
    std::size_t n_val = std::min(well_ids.size() - n_train, rounded(n * ratios[1]));
    well_split sp;
    sp.seed = seed;
    sp.train.assign(well_ids.begin(), well_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    sp.val.assign(well_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                  well_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    sp.test.assign(well_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                   well_ids.end());
    return sp;
}

/// Markov-chain stratigraphy: lithology states persist per the transition
/// matrix; curve values are lithology response + per-layer offset + smooth
/// drift + sample noise; porosity is drawn per sample from the lithology's
/// prior. Fully deterministic given cfg.seed.
inline std::vector<well_log> generate_corpus(const synth_config& cfg) {
    cfg.validate();
    const std::size_t n_litho = cfg.lithologies.size();

    // Per-curve scale for the relative noise/drift settings: the mean of the
    // per-lithology stds for that curve.
    std::array<double, n_curve_kinds> curve_scale{};
    for (std::size_t c = 0; c < n_curve_kinds; ++c) {
        double s = 0.0;
        for (const auto& lp : cfg.lithologies) s += lp.curve_std[c];
        curve_scale[c] = s / static_cast<double>(n_litho);
    }

    std::vector<well_log> wells;
    wells.reserve(cfg.n_wells);
    for (std::size_t widx = 0; widx < cfg.n_wells; ++widx) {
        rng g(rng::derive(cfg.seed, /*stream=*/1, widx));
        well_log w;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "W%04zu", widx);
        w.well_id = idbuf;

        const double length_m = cfg.well_length_min +
                                g.uniform01() * (cfg.well_length_max - cfg.well_length_min);
        const std::size_t n = static_cast<std::size_t>(length_m / cfg.sample_spacing) + 1;
        const double start_depth =
            cfg.depth_start + std::floor(g.uniform01() * 400.0) * cfg.sample_spacing;
        w.depths.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            w.depths[i] = start_depth + static_cast<double>(i) * cfg.sample_spacing;

        // lithology chain
        w.litho_labels.resize(n);
        std::size_t state = g.below(n_litho);
        w.litho_labels[0] = static_cast<int>(state);
        for (std::size_t i = 1; i < n; ++i) {
            const double u = g.uniform01();
            double acc = 0.0;
            std::size_t next = n_litho - 1;
            for (std::size_t k = 0; k < n_litho; ++k) {
                acc += cfg.transition[state][k];
                if (u < acc) {
                    next = k;
                    break;
                }
            }
            state = next;
            w.litho_labels[i] = static_cast<int>(state);
        }
        w.layer_tops.push_back({w.depths[0], w.litho_labels[0]});
        for (std::size_t i = 1; i < n; ++i)
            if (w.litho_labels[i] != w.litho_labels[i - 1])
                w.layer_tops.push_back({w.depths[i], w.litho_labels[i]});

        // per-layer response offsets: unit normals, scaled by the lithology's
        // curve std where the value is assembled
        std::vector<std::array<double, n_curve_kinds>> layer_offset(w.layer_tops.size());
        for (auto& lo : layer_offset)
            for (std::size_t c = 0; c < n_curve_kinds; ++c) lo[c] = g.normal();

        // channel presence
        std::array<bool, n_curve_kinds> present{};
        present.fill(true);
        if (cfg.channel_missing_prob > 0.0) {
            for (std::size_t c = 1; c < n_curve_kinds; ++c)  // always keep GR
                if (g.uniform01() < cfg.channel_missing_prob) present[c] = false;
        }

        // smooth drift: one sinusoid per curve with random period and phase
        std::array<double, n_curve_kinds> drift_period{}, drift_phase{};
        for (std::size_t c = 0; c < n_curve_kinds; ++c) {
            drift_period[c] = 40.0 + g.uniform01() * 80.0;  // meters
            drift_phase[c] = g.uniform01() * 6.283185307179586;
        }

        // layer index per sample for offset lookup
        std::vector<std::size_t> layer_of(n, 0);
        {
            std::size_t li = 0;
            for (std::size_t i = 1; i < n; ++i) {
                if (w.litho_labels[i] != w.litho_labels[i - 1]) ++li;
                layer_of[i] = li;
            }
        }

        for (std::size_t c = 0; c < n_curve_kinds; ++c) {
            if (!present[c]) continue;
            curve_series cs;
            cs.kind = all_curve_kinds[c];
            cs.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& lp = cfg.lithologies[static_cast<std::size_t>(w.litho_labels[i])];
                const double drift =
                    cfg.drift_amplitude * curve_scale[c] *
                    std::sin(6.283185307179586 * (w.depths[i] - w.depths[0]) / drift_period[c] +
                             drift_phase[c]);
                double v = lp.curve_mean[c] + layer_offset[layer_of[i]][c] * lp.curve_std[c] +
                           drift + cfg.noise_std * curve_scale[c] * g.normal();
                if (cs.kind == curve_kind::rt) v = std::max(v, 0.1);
                cs.values[i] = v;
            }
            w.curves.push_back(std::move(cs));
        }

        w.porosity.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& lp = cfg.lithologies[static_cast<std::size_t>(w.litho_labels[i])];
            w.porosity[i] = std::clamp(lp.poro_mean + lp.poro_std * g.normal(), 0.0, 1.0);
        }

        w.validate();
        wells.push_back(std::move(w));
    }
    return wells;
}

/// Writes wells under dir/wells/ and a manifest CSV (well_id,path,split).
/// Paths in the manifest are relative to the manifest's directory.
inline std::filesystem::path write_corpus(const std::vector<well_log>& wells,
                                          const std::filesystem::path& dir,
                                          const well_split* split = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "wells");
    csv_writer manifest(dir / "manifest.csv");
    manifest.row({"well_id", "path", "split"});
    for (const auto& w : wells) {
        const std::string rel = "wells/" + w.well_id + ".csv";
        write_well(w, dir / rel);
        std::string split_name;
        if (split) {
            if (const auto* s = split->set_of(w.well_id)) {
                if (s == &split->train) split_name = "train";
                else if (s == &split->val) split_name = "val";
                else split_name = "test";
            }
        }
        manifest.row({w.well_id, rel, split_name});
    }
    return dir / "manifest.csv";
}

struct manifest_entry {
    std::string well_id;
    std::filesystem::path path;  // absolute after load
    std::string split;           // may be empty
};

inline std::vector<manifest_entry> read_manifest(const std::filesystem::path& manifest_path) {
    csv_table t = read_csv(manifest_path);
    const auto id_col = static_cast<std::size_t>(t.column("well_id"));
    const auto path_col = static_cast<std::size_t>(t.column("path"));
    const int split_col = t.find_column("split");
    std::vector<manifest_entry> out;
    const auto base = manifest_path.parent_path();
    for (const auto& row : t.rows) {
        manifest_entry e;
        e.well_id = row[id_col];
        std::filesystem::path p = row[path_col];
        e.path = p.is_absolute() ? p : base / p;
        if (split_col >= 0) e.split = row[static_cast<std::size_t>(split_col)];
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace wlfm

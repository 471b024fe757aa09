#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "wlfm/corpus.hpp"
#include "wlfm/csv.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/pretrain.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/stats.hpp"
#include "wlfm/tensor.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

// ---------------------------------------------------------------------------
// Classification and regression metrics
// ---------------------------------------------------------------------------

struct classification_result {
    double accuracy_pct = 0.0;
    double macro_f1 = 0.0;
};

/// Accuracy (percent) and macro F1. F1 is averaged over the classes that
/// occur in the targets; classes the model invents contribute only through
/// the false positives of real classes.
inline classification_result classification_metrics(const std::vector<int>& preds,
                                                    const std::vector<int>& targets) {
    require(preds.size() == targets.size(), errc::length_mismatch,
            "prediction and target lengths differ");
    require(!targets.empty(), errc::degenerate_input, "no classification samples");

    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == targets[i]) ++correct;

    std::vector<int> classes = targets;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    double f1_sum = 0.0;
    for (int c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool p = preds[i] == c, t = targets[i] == c;
            if (p && t) ++tp;
            else if (p) ++fp;
            else if (t) ++fn;
        }
        const double prec = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        f1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }

    classification_result r;
    r.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(targets.size());
    r.macro_f1 = f1_sum / static_cast<double>(classes.size());
    return r;
}

struct regression_result {
    double mae = 0.0;
    double mse = 0.0;
};

inline regression_result regression_metrics(const std::vector<double>& preds,
                                            const std::vector<double>& targets) {
    require(preds.size() == targets.size(), errc::length_mismatch,
            "prediction and target lengths differ");
    require(!targets.empty(), errc::degenerate_input, "no regression samples");
    regression_result r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - targets[i];
        r.mae += std::abs(e);
        r.mse += e * e;
    }
    r.mae /= static_cast<double>(targets.size());
    r.mse /= static_cast<double>(targets.size());
    return r;
}

// ---------------------------------------------------------------------------
// Clustering: k-means, adjusted Rand index, purity
// ---------------------------------------------------------------------------

namespace detail {

inline double sq_distance(const tensor& x, std::size_t i, const tensor& c, std::size_t j) {
    double s = 0.0;
    for (std::size_t d = 0; d < x.cols; ++d) {
        const double diff = x.at(i, d) - c.at(j, d);
        s += diff * diff;
    }
    return s;
}

}  // namespace detail

/// Lloyd's k-means with greedy farthest-point seeding. The first center is a
/// seeded random point; each later center is the point farthest from every
/// center chosen so far (ties to the lowest index). Iterates until no center
/// moves more than 1e-6 or 100 rounds elapse. A cluster that empties keeps
/// its previous center. Deterministic for a fixed seed.
inline std::vector<int> kmeans(const tensor& points, std::size_t k, std::uint64_t seed) {
    require(k >= 2, errc::config_error, "k-means needs k >= 2");
    require(points.rows >= k, errc::degenerate_input, "fewer points than clusters");
    const std::size_t n = points.rows, d = points.cols;

    tensor centers(k, d);
    rng g(seed);
    std::size_t first = static_cast<std::size_t>(g.below(n));
    for (std::size_t j = 0; j < d; ++j) centers.at(0, j) = points.at(first, j);

    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = detail::sq_distance(points, i, centers, 0);
    for (std::size_t c = 1; c < k; ++c) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (nearest[i] > nearest[far]) far = i;
        for (std::size_t j = 0; j < d; ++j) centers.at(c, j) = points.at(far, j);
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], detail::sq_distance(points, i, centers, c));
    }

    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = detail::sq_distance(points, i, centers, 0);
            for (std::size_t c = 1; c < k; ++c) {
                const double dist = detail::sq_distance(points, i, centers, c);
                if (dist < bd) {
                    bd = dist;
                    best = c;
                }
            }
            assign[i] = static_cast<int>(best);
        }
        tensor sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[static_cast<std::size_t>(assign[i])];
            for (std::size_t j = 0; j < d; ++j)
                sums.at(static_cast<std::size_t>(assign[i]), j) += points.at(i, j);
        }
        double max_move = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its center
            for (std::size_t j = 0; j < d; ++j) {
                const double nc = sums.at(c, j) / static_cast<double>(counts[c]);
                max_move = std::max(max_move, std::abs(nc - centers.at(c, j)));
                centers.at(c, j) = nc;
            }
        }
        if (max_move < 1e-6) break;
    }
    return assign;
}

/// Adjusted Rand index between two labelings of the same points.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    require(a.size() == b.size(), errc::length_mismatch, "labelings differ in length");
    require(!a.empty(), errc::degenerate_input, "no points");
    const double n = static_cast<double>(a.size());
    auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };

    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++ca[a[i]];
        ++cb[b[i]];
    }
    double index = 0.0, suma = 0.0, sumb = 0.0;
    for (const auto& kv : joint) index += choose2(kv.second);
    for (const auto& kv : ca) suma += choose2(kv.second);
    for (const auto& kv : cb) sumb += choose2(kv.second);

    const double expected = suma * sumb / choose2(n);
    const double max_index = 0.5 * (suma + sumb);
    const double num = index - expected;
    const double den = max_index - expected;
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;  // both partitions trivial
    return num / den;
}

/// Purity: each cluster votes for its most common class.
inline double purity(const std::vector<int>& clusters, const std::vector<int>& labels) {
    require(clusters.size() == labels.size(), errc::length_mismatch,
            "clusterings differ in length");
    require(!clusters.empty(), errc::degenerate_input, "no points");
    std::map<int, std::map<int, std::size_t>> counts;
    for (std::size_t i = 0; i < clusters.size(); ++i) ++counts[clusters[i]][labels[i]];
    std::size_t agree = 0;
    for (const auto& by_cluster : counts) {
        std::size_t best = 0;
        for (const auto& by_class : by_cluster.second) best = std::max(best, by_class.second);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(clusters.size());
}

struct clustering_result {
    double ari = 0.0;
    double purity = 0.0;
    std::vector<int> assignments;
};

inline clustering_result clustering_metrics(const tensor& embeddings,
                                            const std::vector<int>& labels, std::size_t k,
                                            std::uint64_t seed) {
    require(embeddings.rows == labels.size(), errc::length_mismatch,
            "embedding and label counts differ");
    clustering_result r;
    r.assignments = kmeans(embeddings, k, seed);
    r.ari = adjusted_rand_index(r.assignments, labels);
    r.purity = purity(r.assignments, labels);
    return r;
}

// ---------------------------------------------------------------------------
// Metric reports over seeds
// ---------------------------------------------------------------------------

struct metric_summary {
    std::string name;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> per_seed;
};

/// Named scalar metrics with mean and spread over a list of seeds.
struct metric_report {
    std::string split;
    std::vector<std::uint64_t> seeds;
    std::vector<metric_summary> metrics;

    void add(const std::string& name, std::vector<double> per_seed) {
        require(per_seed.size() == seeds.size(), errc::length_mismatch,
                name + ": one value per seed required");
        require(!per_seed.empty(), errc::degenerate_input, name + ": no seeds");
        metric_summary m;
        m.name = name;
        m.mean = mean_of(per_seed);
        m.std = sample_stddev(per_seed);
        m.per_seed = std::move(per_seed);
        metrics.push_back(std::move(m));
    }

    void write_csv(const std::filesystem::path& path) const {
        csv_writer out(path);
        std::vector<std::string> header = {"split", "metric", "mean", "std"};
        for (std::uint64_t s : seeds) header.push_back("seed_" + std::to_string(s));
        out.row(header);
        for (const auto& m : metrics) {
            std::vector<std::string> row = {split, m.name, format_double(m.mean),
                                            format_double(m.std)};
            for (double v : m.per_seed) row.push_back(format_double(v));
            out.row(row);
        }
    }

    void print(std::ostream& os) const {
        os << "== " << split << " (" << seeds.size() << " seed"
           << (seeds.size() == 1 ? "" : "s") << ") ==\n";
        for (const auto& m : metrics)
            os << "  " << m.name << ": " << m.mean << " +/- " << m.std << "\n";
    }
};

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

enum class embedding_level { token, patch };

inline const char* embedding_level_name(embedding_level l) {
    return l == embedding_level::token ? "token" : "patch";
}

inline embedding_level embedding_level_from_name(const std::string& s) {
    if (s == "token") return embedding_level::token;
    if (s == "patch") return embedding_level::patch;
    raise(errc::config_error, "unknown embedding level: " + s);
}

struct embedding_export_stats {
    std::size_t rows = 0;
    std::size_t dim = 0;
};

/// Writes one row per window of every well: identity and label columns
/// followed by the embedding. Token level exports the window's codebook
/// vector; patch level exports the contextual projection produced by the
/// backbone. layer_id is the layer containing the window center and litho
/// the window's majority label; both are -1 for unlabeled wells.
inline embedding_export_stats export_embeddings(named_params& P,
                                                const std::vector<well_log>& wells,
                                                tokenizer_model& tok,
                                                const pretrain_config& cfg,
                                                embedding_level level,
                                                const std::filesystem::path& path) {
    const std::size_t dim =
        level == embedding_level::token ? tok.cfg.latent_dim : cfg.bb.proj_dim;

    csv_writer out(path);
    std::vector<std::string> header = {"well_id", "depth", "layer_id", "litho"};
    for (std::size_t j = 0; j < dim; ++j) header.push_back("e_" + std::to_string(j + 1));
    out.row(header);

    std::size_t rows = 0;
    for (const auto& w : wells) {
        std::vector<patch> patches =
            extract_patches(w, tok.cfg.patch_length, tok.cfg.patch_stride);
        if (patches.empty()) continue;

        token_sequence seq;
        seq.well_id = w.well_id;
        seq.latents = tensor(patches.size(), tok.cfg.latent_dim);
        for (std::size_t i = 0; i < patches.size(); ++i) {
            tensor z_e = encode_patch(tok.params, patches[i], tok.cfg);
            auto [idx, z_q] = quantize(z_e, tok.cb);
            (void)z_q;
            seq.tokens.push_back(idx);
            seq.rel_depths.push_back(patches[i].rel_depth);
            for (std::size_t j = 0; j < tok.cfg.latent_dim; ++j)
                seq.latents.at(i, j) = z_e.v[j];
        }

        tensor proj;
        if (level == embedding_level::patch) proj = embed_sequence(P, seq, cfg);

        for (std::size_t i = 0; i < patches.size(); ++i) {
            const std::size_t center = patches[i].start_index + (tok.cfg.patch_length - 1) / 2;
            const double depth = w.depths[center];

            int layer_id = -1;
            for (const auto& lt : w.layer_tops)
                if (lt.depth <= depth) layer_id = lt.layer_id;
            const int litho = patches[i].litho_at.empty() ? -1 : patches[i].majority_litho();

            std::vector<std::string> row = {w.well_id, format_double(depth),
                                            std::to_string(layer_id), std::to_string(litho)};
            if (level == embedding_level::token) {
                for (std::size_t j = 0; j < dim; ++j)
                    row.push_back(format_double(tok.cb.vectors.at(seq.tokens[i], j)));
            } else {
                for (std::size_t j = 0; j < dim; ++j)
                    row.push_back(format_double(proj.at(i, j)));
            }
            out.row(row);
            ++rows;
        }
    }
    return {rows, dim};
}

}  // namespace wlfm

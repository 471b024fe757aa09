#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wlfm/corpus.hpp"
#include "wlfm/csv.hpp"

namespace wlfm {

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Weights of the informativeness score plus the admission threshold.
struct score_params {
    double lambda1 = 0.5;  // weight of the depth-gradient term
    double lambda2 = 0.5;  // weight of the cross-channel variance term
    double score_threshold = -std::numeric_limits<double>::infinity();

    void validate() const {
        require(lambda1 >= 0.0 && lambda2 >= 0.0, errc::config_error,
                "score weights must be nonnegative");
    }
};

/// Informativeness of a window: mean absolute first difference along depth
/// (averaged over non-missing channels) plus the variance of the per-channel
/// means. High values flag layer boundaries and divergent channels.
inline double score_patch(const patch& p, const score_params& sp) {
    sp.validate();
    require(!p.all_missing(), errc::all_channels_missing, "cannot score " + p.well_id);
    const std::size_t L = p.length();
    double grad_sum = 0.0;
    std::vector<double> means;
    for (std::size_t c = 0; c < p.channels(); ++c) {
        if (p.missing_mask[c]) continue;
        double m = 0.0;
        for (std::size_t j = 0; j < L; ++j) m += p.values.at(c, j);
        means.push_back(m / static_cast<double>(L));
        if (L > 1) {
            double d = 0.0;
            for (std::size_t j = 0; j + 1 < L; ++j)
                d += std::abs(p.values.at(c, j + 1) - p.values.at(c, j));
            grad_sum += d / static_cast<double>(L - 1);
        }
    }
    const double n_present = static_cast<double>(means.size());
    const double grad = grad_sum / n_present;
    double mean_of_means = 0.0;
    for (double m : means) mean_of_means += m;
    mean_of_means /= n_present;
    double var = 0.0;
    for (double m : means) var += (m - mean_of_means) * (m - mean_of_means);
    var /= n_present;  // population variance across channels
    return sp.lambda1 * grad + sp.lambda2 * var;
}

/// Percentile (with linear interpolation) of the window scores over a
/// calibration sample; used to pick the admission threshold. `q` in [0,1],
/// default the 30th percentile.
inline double calibrate_threshold(const std::vector<well_log>& wells, const score_params& sp,
                                  std::size_t patch_length, std::size_t patch_stride,
                                  double q = 0.3, std::size_t max_patches = 2000) {
    require(q >= 0.0 && q <= 1.0, errc::config_error, "percentile outside [0,1]");
    std::vector<double> scores;
    for (const auto& w : wells) {
        for (const auto& p : extract_patches(w, patch_length, patch_stride)) {
            scores.push_back(score_patch(p, sp));
            if (scores.size() >= max_patches) break;
        }
        if (scores.size() >= max_patches) break;
    }
    require(!scores.empty(), errc::degenerate_input, "no windows to calibrate on");
    std::sort(scores.begin(), scores.end());
    const double pos = q * static_cast<double>(scores.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, scores.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return scores[lo] * (1.0 - frac) + scores[hi] * frac;
}

// ---------------------------------------------------------------------------
// Bounded multiple-producer / single-consumer queue
// ---------------------------------------------------------------------------

/// Blocking bounded queue. push() blocks while full; pop() blocks while empty
/// until close() (drains remaining items, then reports exhaustion) or
/// poison() (abandons everything immediately, failing pushers too).
template <typename T>
class bounded_queue {
public:
    explicit bounded_queue(std::size_t capacity) : cap_(capacity) {
        require(capacity >= 1, errc::config_error, "queue capacity must be >= 1");
    }

    bool push(T item) {
        std::unique_lock<std::mutex> lk(mu_);
        not_full_.wait(lk, [&] { return poisoned_ || q_.size() < cap_; });
        if (poisoned_) return false;
        q_.push_back(std::move(item));
        ++pushes_;
        occupancy_sum_ += static_cast<double>(q_.size());
        max_occ_ = std::max(max_occ_, q_.size());
        lk.unlock();
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock<std::mutex> lk(mu_);
        not_empty_.wait(lk, [&] { return poisoned_ || closed_ || !q_.empty(); });
        if (poisoned_ || q_.empty()) return std::nullopt;
        T item = std::move(q_.front());
        q_.pop_front();
        lk.unlock();
        not_full_.notify_one();
        return item;
    }

    void close() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            closed_ = true;
        }
        not_empty_.notify_all();
    }

    void poison() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            poisoned_ = true;
            q_.clear();
        }
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t capacity() const { return cap_; }

    double mean_occupancy() const {
        std::lock_guard<std::mutex> lk(mu_);
        return pushes_ > 0 ? occupancy_sum_ / static_cast<double>(pushes_) : 0.0;
    }

    std::size_t max_occupancy() const {
        std::lock_guard<std::mutex> lk(mu_);
        return max_occ_;
    }

private:
    const std::size_t cap_;
    mutable std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> q_;
    bool closed_ = false;
    bool poisoned_ = false;
    std::size_t pushes_ = 0;
    double occupancy_sum_ = 0.0;
    std::size_t max_occ_ = 0;
};

// ---------------------------------------------------------------------------
// Loader
// ---------------------------------------------------------------------------

/// One admitted window as delivered to the training consumer. `encoded` is
/// filled producer-side when an encoding hook is supplied.
struct loader_item {
    std::string well_id;
    std::size_t patch_index = 0;  // window index within the well's grid
    double score = 0.0;
    patch data;
    std::vector<double> encoded;  // latent vector (empty when no hook is set)
};

struct loader_stats {
    std::size_t produced = 0;      // windows extracted
    std::size_t scored = 0;        // windows scored (== produced)
    std::size_t filtered_out = 0;  // rejected by the threshold
    std::size_t enqueued = 0;      // admitted to the queue
    std::size_t consumed = 0;      // delivered to the consumer
    double wall_time_s = 0.0;
    double throughput = 0.0;  // consumed per second
    double mean_occupancy = 0.0;
    std::size_t max_occupancy = 0;

    void check_invariants() const {
        require(scored == produced, errc::degenerate_input, "scored != produced");
        require(enqueued <= scored, errc::degenerate_input, "enqueued > scored");
        require(consumed <= enqueued, errc::degenerate_input, "consumed > enqueued");
        require(enqueued + filtered_out <= produced, errc::degenerate_input,
                "admission counters exceed production");
    }
};

using consumer_fn = std::function<void(const loader_item&)>;
using encode_fn = std::function<void(loader_item&)>;

/// Synchronous baseline: extract, score, filter, and deliver well by well on
/// the calling thread. Defines the reference multiset for the async loader.
inline loader_stats run_loader_sync(const std::vector<well_log>& wells, const score_params& sp,
                                    const consumer_fn& consumer, std::size_t patch_length = 64,
                                    std::size_t patch_stride = 32, const encode_fn& encode = {}) {
    sp.validate();
    loader_stats st;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& w : wells) {
        for (auto& p : extract_patches(w, patch_length, patch_stride)) {
            ++st.produced;
            ++st.scored;
            const double s = score_patch(p, sp);
            if (!(s > sp.score_threshold)) {
                ++st.filtered_out;
                continue;
            }
            loader_item item;
            item.well_id = w.well_id;
            item.patch_index = p.start_index / std::max<std::size_t>(patch_stride, 1);
            item.score = s;
            item.data = std::move(p);
            if (encode) encode(item);
            ++st.enqueued;
            consumer(item);
            ++st.consumed;
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    st.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    st.throughput = static_cast<double>(st.consumed) / std::max(st.wall_time_s, 1e-9);
    st.check_invariants();
    return st;
}

/// Asynchronous loader: `workers` producer threads pull wells from a shared
/// cursor, extract and score windows, and push admitted (optionally encoded)
/// items into a bounded queue; the calling thread consumes until the
/// producers finish and the queue drains. Exactly-once delivery: the
/// delivered multiset equals the synchronous baseline's for any threshold.
inline loader_stats run_loader(const std::vector<well_log>& wells, std::size_t workers,
                               const score_params& sp, std::size_t queue_capacity,
                               const consumer_fn& consumer, std::size_t patch_length = 64,
                               std::size_t patch_stride = 32, const encode_fn& encode = {}) {
    sp.validate();
    require(workers >= 1, errc::config_error, "need at least one worker");
    bounded_queue<loader_item> queue(queue_capacity);
    std::atomic<std::size_t> next_well{0};
    std::atomic<std::size_t> live_producers{workers};
    std::mutex err_mu;
    std::exception_ptr producer_error;

    struct worker_counters {
        std::size_t produced = 0, scored = 0, filtered_out = 0, enqueued = 0;
    };
    std::vector<worker_counters> counters(workers);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> producers;
    producers.reserve(workers);
    for (std::size_t wi = 0; wi < workers; ++wi) {
        producers.emplace_back([&, wi] {
            auto& c = counters[wi];
            try {
                for (;;) {
                    const std::size_t i = next_well.fetch_add(1);
                    if (i >= wells.size()) break;
                    const auto& w = wells[i];
                    bool poisoned = false;
                    for (auto& p : extract_patches(w, patch_length, patch_stride)) {
                        ++c.produced;
                        ++c.scored;
                        const double s = score_patch(p, sp);
                        if (!(s > sp.score_threshold)) {
                            ++c.filtered_out;
                            continue;
                        }
                        loader_item item;
                        item.well_id = w.well_id;
                        item.patch_index = p.start_index / std::max<std::size_t>(patch_stride, 1);
                        item.score = s;
                        item.data = std::move(p);
                        if (encode) encode(item);
                        if (!queue.push(std::move(item))) {
                            poisoned = true;  // consumer failed; stop producing
                            break;
                        }
                        ++c.enqueued;
                    }
                    if (poisoned) break;
                }
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!producer_error) producer_error = std::current_exception();
                }
                queue.poison();
            }
            if (live_producers.fetch_sub(1) == 1) queue.close();
        });
    }

    loader_stats st;
    std::exception_ptr consumer_error;
    for (;;) {
        std::optional<loader_item> item = queue.pop();
        if (!item) break;
        try {
            consumer(*item);
        } catch (...) {
            consumer_error = std::current_exception();
            queue.poison();
            break;
        }
        ++st.consumed;
    }
    for (auto& t : producers) t.join();
    const auto t1 = std::chrono::steady_clock::now();

    if (consumer_error) {
        try {
            std::rethrow_exception(consumer_error);
        } catch (const std::exception& e) {
            raise(errc::consumer_panic, e.what());
        } catch (...) {
            raise(errc::consumer_panic, "consumer failed");
        }
    }
    if (producer_error) std::rethrow_exception(producer_error);

    for (const auto& c : counters) {
        st.produced += c.produced;
        st.scored += c.scored;
        st.filtered_out += c.filtered_out;
        st.enqueued += c.enqueued;
    }
    st.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    st.throughput = static_cast<double>(st.consumed) / std::max(st.wall_time_s, 1e-9);
    st.mean_occupancy = queue.mean_occupancy();
    st.max_occupancy = queue.max_occupancy();
    st.check_invariants();
    return st;
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

struct bench_config {
    std::size_t workers = 4;
    std::size_t queue_capacity = 64;
    double score_threshold = -std::numeric_limits<double>::infinity();
};

struct bench_row {
    std::string config_id;
    std::size_t workers = 0;
    std::size_t queue_capacity = 0;
    double threshold = 0.0;
    double sync_throughput = 0.0;
    double async_throughput = 0.0;
    double speedup = 0.0;
    double mean_occupancy = 0.0;
};

/// Runs the synchronous baseline and the asynchronous loader under identical
/// scoring, per-item consumer latency, and producer-side encoding work, one
/// row per configuration.
inline std::vector<bench_row> loader_bench(const std::vector<well_log>& wells,
                                           const std::vector<bench_config>& configs,
                                           double consumer_latency_ms,
                                           std::size_t patch_length = 64,
                                           std::size_t patch_stride = 32,
                                           const encode_fn& encode = {}) {
    require(!wells.empty(), errc::degenerate_input, "benchmark corpus is empty");
    std::vector<bench_row> rows;
    const auto latency = std::chrono::duration<double, std::milli>(consumer_latency_ms);
    std::size_t id = 0;
    for (const auto& bc : configs) {
        score_params sp;
        sp.score_threshold = bc.score_threshold;
        auto consumer = [&](const loader_item&) {
            if (consumer_latency_ms > 0.0)
                std::this_thread::sleep_for(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(latency));
        };
        loader_stats sync_st =
            run_loader_sync(wells, sp, consumer, patch_length, patch_stride, encode);
        loader_stats async_st = run_loader(wells, bc.workers, sp, bc.queue_capacity, consumer,
                                           patch_length, patch_stride, encode);
        bench_row r;
        r.config_id = "c" + std::to_string(id++);
        r.workers = bc.workers;
        r.queue_capacity = bc.queue_capacity;
        r.threshold = bc.score_threshold;
        r.sync_throughput = sync_st.throughput;
        r.async_throughput = async_st.throughput;
        r.speedup = sync_st.throughput > 0.0 ? async_st.throughput / sync_st.throughput : 0.0;
        r.mean_occupancy = async_st.mean_occupancy;
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_bench_csv(const std::string& path, const std::vector<bench_row>& rows) {
    csv_writer out(path);
    out.row({"config_id", "workers", "queue_capacity", "threshold", "sync_throughput",
             "async_throughput", "speedup", "mean_occupancy"});
    for (const auto& r : rows) {
        out.row({r.config_id, std::to_string(r.workers), std::to_string(r.queue_capacity),
                 format_double(r.threshold), format_double(r.sync_throughput),
                 format_double(r.async_throughput), format_double(r.speedup),
                 format_double(r.mean_occupancy)});
    }
}

/// Worker-count cap from the environment: WLFM_THREADS, when set to a
/// positive integer, limits any requested worker count.
inline std::size_t effective_workers(std::size_t requested) {
    const char* env = std::getenv("WLFM_THREADS");
    if (!env || !*env) return requested;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) return requested;
    return std::min<std::size_t>(requested, static_cast<std::size_t>(v));
}

}  // namespace wlfm

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wlfm {

enum class errc {
    // corpus
    missing_depth_column,
    non_monotonic_depth,
    unknown_curve_name,
    ragged_columns,
    non_positive_resistivity,
    invalid_transition_matrix,
    bad_ratios,
    // tokenizer
    shape_mismatch,
    index_out_of_range,
    no_candidates,
    // pretrain
    empty_mask,
    zero_vector,
    non_finite_loss,
    // finetune / eval
    length_mismatch,
    not_a_distribution,
    zero_variance,
    degenerate_input,
    missing_baseline,
    // loader
    all_channels_missing,
    consumer_panic,
    // cli / io
    stage_order_violation,
    config_error,
    io_error,
};

inline std::string_view errc_name(errc c) {
    switch (c) {
        case errc::missing_depth_column: return "MissingDepthColumn";
        case errc::non_monotonic_depth: return "NonMonotonicDepth";
        case errc::unknown_curve_name: return "UnknownCurveName";
        case errc::ragged_columns: return "RaggedColumns";
        case errc::non_positive_resistivity: return "NonPositiveResistivity";
        case errc::invalid_transition_matrix: return "InvalidTransitionMatrix";
        case errc::bad_ratios: return "BadRatios";
        case errc::shape_mismatch: return "ShapeMismatch";
        case errc::index_out_of_range: return "IndexOutOfRange";
        case errc::no_candidates: return "NoCandidates";
        case errc::empty_mask: return "EmptyMask";
        case errc::zero_vector: return "ZeroVector";
        case errc::non_finite_loss: return "NonFiniteLoss";
        case errc::length_mismatch: return "LengthMismatch";
        case errc::not_a_distribution: return "NotADistribution";
        case errc::zero_variance: return "ZeroVariance";
        case errc::degenerate_input: return "DegenerateInput";
        case errc::missing_baseline: return "MissingBaseline";
        case errc::all_channels_missing: return "AllChannelsMissing";
        case errc::consumer_panic: return "ConsumerPanic";
        case errc::stage_order_violation: return "StageOrderViolation";
        case errc::config_error: return "ConfigError";
        case errc::io_error: return "IoError";
    }
    return "UnknownError";
}

/// Exception carrying a typed error code; what() is "Name: detail".
class error : public std::runtime_error {
public:
    error(errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& detail) {
    throw error(code, detail);
}

inline void require(bool cond, errc code, const std::string& detail) {
    if (!cond) raise(code, detail);
}

}  // namespace wlfm

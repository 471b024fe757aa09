#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wlfm/errors.hpp"
#include "wlfm/rng.hpp"

namespace wlfm {

/// Dense row-major matrix of doubles. Vectors are 1×n, scalars 1×1.
struct tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    tensor() = default;
    tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    static tensor scalar(double x) {
        tensor t(1, 1);
        t.v[0] = x;
        return t;
    }

    static tensor row_vector(std::vector<double> xs) {
        tensor t;
        t.rows = 1;
        t.cols = xs.size();
        t.v = std::move(xs);
        return t;
    }

    static tensor randn(std::size_t r, std::size_t c, double stddev, rng& g) {
        tensor t(r, c);
        for (auto& x : t.v) x = g.normal(0.0, stddev);
        return t;
    }

    std::size_t size() const { return v.size(); }
    bool same_shape(const tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    double* row_ptr(std::size_t r) { return v.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return v.data() + r * cols; }

    double item() const {
        require(size() == 1, errc::shape_mismatch, "item() on non-scalar tensor");
        return v[0];
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

inline void check_same_shape(const tensor& a, const tensor& b, const char* op) {
    require(a.same_shape(b), errc::shape_mismatch,
            std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

// ---- plain (non-differentiated) kernels, shared with the autodiff ops ----

inline tensor matmul(const tensor& a, const tensor& b) {
    require(a.cols == b.rows, errc::shape_mismatch,
            "matmul: " + a.shape_str() + " * " + b.shape_str());
    tensor out(a.rows, b.cols);
    // ikj order keeps the inner loop contiguous
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

/// out += a^T * b, used by matmul backward.
inline void add_at_b(tensor& out, const tensor& a, const tensor& b) {
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row_ptr(k);
        const double* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
}

/// out += a * b^T, used by matmul backward.
inline void add_a_bt(tensor& out, const tensor& a, const tensor& b) {
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] += acc;
        }
    }
}

inline tensor transpose(const tensor& a) {
    tensor out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

inline double l2_norm(const tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const tensor& a, const tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

inline double cosine_similarity(const tensor& a, const tensor& b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    require(na > 0.0 && nb > 0.0, errc::zero_vector, "cosine of zero vector");
    return dot(a, b) / (na * nb);
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), errc::shape_mismatch, "cosine: length mismatch");
    double na = 0.0, nb = 0.0, d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        d += a[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, errc::zero_vector, "cosine of zero vector");
    return d / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace wlfm

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wlfm/tensor.hpp"

// Reverse-mode autodiff over whole tensors. Ops record a backward closure on
// a tape node; creation order doubles as the topological order because every
// op is created after its parents.
namespace wlfm::ad {

struct node;
using var = std::shared_ptr<node>;

struct node {
    tensor val;
    tensor grad;
    bool requires_grad = false;
    std::uint64_t order = 0;
    std::vector<var> parents;
    std::function<void(node&)> backprop;
};

namespace detail {
inline std::uint64_t next_order() {
    static std::uint64_t counter = 0;
    return ++counter;
}
}  // namespace detail

inline void ensure_grad(node& n) {
    if (n.grad.size() != n.val.size()) n.grad = tensor(n.val.rows, n.val.cols);
}

inline var constant(tensor t) {
    auto n = std::make_shared<node>();
    n->val = std::move(t);
    n->order = detail::next_order();
    return n;
}

/// Trainable leaf: a copy of the parameter value whose grad is read back by
/// the optimizer after backward().
inline var leaf(const tensor& t) {
    auto n = std::make_shared<node>();
    n->val = t;
    n->requires_grad = true;
    n->order = detail::next_order();
    return n;
}

inline var make_op(tensor val, std::vector<var> parents, std::function<void(node&)> backprop) {
    auto n = std::make_shared<node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    n->order = detail::next_order();
    return n;
}

// ---- elementwise ----

inline var add(const var& a, const var& b) {
    check_same_shape(a->val, b->val, "add");
    tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i];
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad.v[i] += n.grad.v[i];
        }
    });
}

inline var sub(const var& a, const var& b) {
    check_same_shape(a->val, b->val, "sub");
    tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i];
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad.v[i] -= n.grad.v[i];
        }
    });
}

inline var hadamard(const var& a, const var& b) {
    check_same_shape(a->val, b->val, "hadamard");
    tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i] * b->val.v[i];
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad.v[i] += n.grad.v[i] * a->val.v[i];
        }
    });
}

inline var scale(const var& a, double c) {
    tensor out = a->val;
    for (auto& x : out.v) x *= c;
    return make_op(std::move(out), {a}, [a, c](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += c * n.grad.v[i];
    });
}

inline var add_scalar(const var& a, double c) {
    tensor out = a->val;
    for (auto& x : out.v) x += c;
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i];
    });
}

inline var square(const var& a) { return hadamard(a, a); }

inline var exp_(const var& a) {
    tensor out = a->val;
    for (auto& x : out.v) x = std::exp(x);
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i] * n.val.v[i];
    });
}

/// Elementwise |x|; the subgradient at 0 is taken as 0.
inline var abs_(const var& a) {
    tensor out = a->val;
    for (auto& x : out.v) x = std::abs(x);
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = a->val.v[i];
            if (x > 0.0)
                a->grad.v[i] += n.grad.v[i];
            else if (x < 0.0)
                a->grad.v[i] -= n.grad.v[i];
        }
    });
}

inline var log_(const var& a) {
    tensor out = a->val;
    for (auto& x : out.v) x = std::log(x);
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i] / a->val.v[i];
    });
}

inline var sqrt_(const var& a) {
    tensor out = a->val;
    for (auto& x : out.v) x = std::sqrt(x);
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad.v[i] += n.grad.v[i] * 0.5 / n.val.v[i];
    });
}

inline var div(const var& a, const var& b) {
    check_same_shape(a->val, b->val, "div");
    tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] /= b->val.v[i];
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                a->grad.v[i] += n.grad.v[i] / b->val.v[i];
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                b->grad.v[i] -= n.grad.v[i] * a->val.v[i] / (b->val.v[i] * b->val.v[i]);
        }
    });
}

inline var gelu(const var& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    tensor out = a->val;
    for (auto& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = a->val.v[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a->grad.v[i] += n.grad.v[i] * (cdf + x * pdf);
        }
    });
}

// ---- matrix ----

inline var matmul(const var& a, const var& b) {
    tensor out = wlfm::matmul(a->val, b->val);
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            add_a_bt(a->grad, n.grad, b->val);  // dA += dC * B^T
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            add_at_b(b->grad, a->val, n.grad);  // dB += A^T * dC
        }
    });
}

/// a * b^T without materializing the transpose: [m×k] x [n×k] -> [m×n].
inline var matmul_nt(const var& a, const var& b) {
    require(a->val.cols == b->val.cols, errc::shape_mismatch,
            "matmul_nt: " + a->val.shape_str() + " vs " + b->val.shape_str());
    tensor out(a->val.rows, b->val.rows);
    add_a_bt(out, a->val, b->val);
    return make_op(std::move(out), {a, b}, [a, b](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.rows; ++i)  // dA += dC * B
                for (std::size_t j = 0; j < n.grad.cols; ++j) {
                    const double g = n.grad.at(i, j);
                    if (g == 0.0) continue;
                    const double* brow = b->val.row_ptr(j);
                    double* arow = a->grad.row_ptr(i);
                    for (std::size_t k = 0; k < b->val.cols; ++k) arow[k] += g * brow[k];
                }
        }
        if (b->requires_grad) {
            ensure_grad(*b);
            add_at_b(b->grad, n.grad, a->val);  // dB += dC^T * A
        }
    });
}

inline var add_row_broadcast(const var& a, const var& brow) {
    require(brow->val.rows == 1 && brow->val.cols == a->val.cols, errc::shape_mismatch,
            "add_row_broadcast: " + a->val.shape_str() + " + " + brow->val.shape_str());
    tensor out = a->val;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += brow->val.v[j];
    return make_op(std::move(out), {a, brow}, [a, brow](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i];
        }
        if (brow->requires_grad) {
            ensure_grad(*brow);
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                for (std::size_t j = 0; j < n.grad.cols; ++j) brow->grad.v[j] += n.grad.at(i, j);
        }
    });
}

// ---- shape / selection ----

inline var row_select(const var& a, std::size_t r) {
    require(r < a->val.rows, errc::index_out_of_range, "row_select");
    tensor out(1, a->val.cols);
    for (std::size_t j = 0; j < out.cols; ++j) out.v[j] = a->val.at(r, j);
    return make_op(std::move(out), {a}, [a, r](node& n) {
        ensure_grad(*a);
        for (std::size_t j = 0; j < n.grad.cols; ++j) a->grad.at(r, j) += n.grad.v[j];
    });
}

inline var rows_gather(const var& a, std::vector<std::size_t> idx) {
    tensor out(idx.size(), a->val.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < a->val.rows, errc::index_out_of_range, "rows_gather");
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) = a->val.at(idx[i], j);
    }
    return make_op(std::move(out), {a}, [a, idx = std::move(idx)](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n.grad.cols; ++j) a->grad.at(idx[i], j) += n.grad.at(i, j);
    });
}

inline var cols_gather(const var& a, std::vector<std::size_t> idx) {
    tensor out(a->val.rows, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        require(idx[j] < a->val.cols, errc::index_out_of_range, "cols_gather");
        for (std::size_t i = 0; i < out.rows; ++i) out.at(i, j) = a->val.at(i, idx[j]);
    }
    return make_op(std::move(out), {a}, [a, idx = std::move(idx)](node& n) {
        ensure_grad(*a);
        for (std::size_t j = 0; j < idx.size(); ++j)
            for (std::size_t i = 0; i < n.grad.rows; ++i) a->grad.at(i, idx[j]) += n.grad.at(i, j);
    });
}

inline var col_slice(const var& a, std::size_t c0, std::size_t len) {
    require(c0 + len <= a->val.cols, errc::index_out_of_range, "col_slice");
    tensor out(a->val.rows, len);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = a->val.at(i, c0 + j);
    return make_op(std::move(out), {a}, [a, c0, len](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.grad.rows; ++i)
            for (std::size_t j = 0; j < len; ++j) a->grad.at(i, c0 + j) += n.grad.at(i, j);
    });
}

inline var concat_cols(const std::vector<var>& parts) {
    require(!parts.empty(), errc::shape_mismatch, "concat_cols: empty");
    std::size_t total = 0;
    for (const auto& p : parts) total += p->val.cols;
    tensor out(parts[0]->val.rows, total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        require(p->val.rows == out.rows, errc::shape_mismatch, "concat_cols: row mismatch");
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < p->val.cols; ++j) out.at(i, off + j) = p->val.at(i, j);
        off += p->val.cols;
    }
    return make_op(std::move(out), parts, [parts](node& n) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                ensure_grad(*p);
                for (std::size_t i = 0; i < n.grad.rows; ++i)
                    for (std::size_t j = 0; j < p->val.cols; ++j)
                        p->grad.at(i, j) += n.grad.at(i, off + j);
            }
            off += p->val.cols;
        }
    });
}

inline var concat_rows(const std::vector<var>& parts) {
    require(!parts.empty(), errc::shape_mismatch, "concat_rows: empty");
    std::size_t total = 0;
    for (const auto& p : parts) total += p->val.rows;
    tensor out(total, parts[0]->val.cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        require(p->val.cols == out.cols, errc::shape_mismatch, "concat_rows: col mismatch");
        for (std::size_t i = 0; i < p->val.rows; ++i)
            for (std::size_t j = 0; j < out.cols; ++j) out.at(off + i, j) = p->val.at(i, j);
        off += p->val.rows;
    }
    return make_op(std::move(out), parts, [parts](node& n) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                ensure_grad(*p);
                for (std::size_t i = 0; i < p->val.rows; ++i)
                    for (std::size_t j = 0; j < n.grad.cols; ++j)
                        p->grad.at(i, j) += n.grad.at(off + i, j);
            }
            off += p->val.rows;
        }
    });
}

inline var stack_scalars(const std::vector<var>& xs) {
    tensor out(1, xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out.v[i] = xs[i]->val.item();
    return make_op(std::move(out), xs, [xs](node& n) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!xs[i]->requires_grad) continue;
            ensure_grad(*xs[i]);
            xs[i]->grad.v[0] += n.grad.v[i];
        }
    });
}

inline var select_entries(const var& a, std::vector<std::pair<std::size_t, std::size_t>> rc) {
    tensor out(rc.size(), 1);
    for (std::size_t i = 0; i < rc.size(); ++i) {
        require(rc[i].first < a->val.rows && rc[i].second < a->val.cols, errc::index_out_of_range,
                "select_entries");
        out.v[i] = a->val.at(rc[i].first, rc[i].second);
    }
    return make_op(std::move(out), {a}, [a, rc = std::move(rc)](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < rc.size(); ++i)
            a->grad.at(rc[i].first, rc[i].second) += n.grad.v[i];
    });
}

// ---- reductions ----

inline var sum_all(const var& a) {
    double s = 0.0;
    for (double x : a->val.v) s += x;
    return make_op(tensor::scalar(s), {a}, [a](node& n) {
        ensure_grad(*a);
        for (auto& g : a->grad.v) g += n.grad.v[0];
    });
}

inline var mean_all(const var& a) {
    const double inv = 1.0 / static_cast<double>(a->val.size());
    double s = 0.0;
    for (double x : a->val.v) s += x;
    return make_op(tensor::scalar(s * inv), {a}, [a, inv](node& n) {
        ensure_grad(*a);
        for (auto& g : a->grad.v) g += n.grad.v[0] * inv;
    });
}

inline var mean_over_rows(const var& a) {
    const double inv = 1.0 / static_cast<double>(a->val.rows);
    tensor out(1, a->val.cols);
    for (std::size_t i = 0; i < a->val.rows; ++i)
        for (std::size_t j = 0; j < a->val.cols; ++j) out.v[j] += a->val.at(i, j) * inv;
    return make_op(std::move(out), {a}, [a, inv](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < a->val.rows; ++i)
            for (std::size_t j = 0; j < a->val.cols; ++j) a->grad.at(i, j) += n.grad.v[j] * inv;
    });
}

inline var row_sum(const var& a) {
    tensor out(a->val.rows, 1);
    for (std::size_t i = 0; i < a->val.rows; ++i) {
        double s = 0.0;
        const double* r = a->val.row_ptr(i);
        for (std::size_t j = 0; j < a->val.cols; ++j) s += r[j];
        out.v[i] = s;
    }
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < a->val.rows; ++i)
            for (std::size_t j = 0; j < a->val.cols; ++j) a->grad.at(i, j) += n.grad.v[i];
    });
}

inline var div_rowwise(const var& a, const var& s) {
    require(s->val.cols == 1 && s->val.rows == a->val.rows, errc::shape_mismatch, "div_rowwise");
    tensor out = a->val;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) /= s->val.v[i];
    return make_op(std::move(out), {a, s}, [a, s](node& n) {
        if (a->requires_grad) {
            ensure_grad(*a);
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                for (std::size_t j = 0; j < n.grad.cols; ++j)
                    a->grad.at(i, j) += n.grad.at(i, j) / s->val.v[i];
        }
        if (s->requires_grad) {
            ensure_grad(*s);
            for (std::size_t i = 0; i < n.grad.rows; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n.grad.cols; ++j)
                    acc += n.grad.at(i, j) * a->val.at(i, j);
                s->grad.v[i] -= acc / (s->val.v[i] * s->val.v[i]);
            }
        }
    });
}

// ---- fused neural-net ops ----

inline var softmax_rows(const var& a) {
    tensor out = a->val;
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.row_ptr(i);
        double mx = r[0];
        for (std::size_t j = 1; j < out.cols; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            z += r[j];
        }
        for (std::size_t j = 0; j < out.cols; ++j) r[j] /= z;
    }
    return make_op(std::move(out), {a}, [a](node& n) {
        ensure_grad(*a);
        for (std::size_t i = 0; i < n.val.rows; ++i) {
            const double* p = n.val.row_ptr(i);
            const double* g = n.grad.row_ptr(i);
            double dotpg = 0.0;
            for (std::size_t j = 0; j < n.val.cols; ++j) dotpg += p[j] * g[j];
            double* ag = a->grad.row_ptr(i);
            for (std::size_t j = 0; j < n.val.cols; ++j) ag[j] += p[j] * (g[j] - dotpg);
        }
    });
}

/// Mean cross-entropy from logits with integer targets.
inline var ce_mean(const var& logits, std::vector<std::size_t> targets) {
    require(targets.size() == logits->val.rows, errc::shape_mismatch, "ce_mean: target count");
    const std::size_t m = targets.size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        require(targets[i] < logits->val.cols, errc::index_out_of_range, "ce_mean: target id");
        const double* r = logits->val.row_ptr(i);
        double mx = r[0];
        for (std::size_t j = 1; j < logits->val.cols; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < logits->val.cols; ++j) z += std::exp(r[j] - mx);
        total += std::log(z) + mx - r[targets[i]];
    }
    return make_op(tensor::scalar(total / static_cast<double>(m)), {logits},
                   [logits, targets = std::move(targets)](node& n) {
                       ensure_grad(*logits);
                       const double gm = n.grad.v[0] / static_cast<double>(targets.size());
                       for (std::size_t i = 0; i < targets.size(); ++i) {
                           const double* r = logits->val.row_ptr(i);
                           double* gr = logits->grad.row_ptr(i);
                           double mx = r[0];
                           for (std::size_t j = 1; j < logits->val.cols; ++j) mx = std::max(mx, r[j]);
                           double z = 0.0;
                           for (std::size_t j = 0; j < logits->val.cols; ++j) z += std::exp(r[j] - mx);
                           for (std::size_t j = 0; j < logits->val.cols; ++j) {
                               const double p = std::exp(r[j] - mx) / z;
                               gr[j] += gm * (p - (j == targets[i] ? 1.0 : 0.0));
                           }
                       }
                   });
}

inline var layer_norm(const var& x, const var& gain, const var& bias, double eps = 1e-5) {
    const std::size_t nc = x->val.cols;
    require(gain->val.cols == nc && bias->val.cols == nc, errc::shape_mismatch, "layer_norm");
    tensor out(x->val.rows, nc);
    tensor xhat(x->val.rows, nc);
    std::vector<double> inv_std(x->val.rows);
    for (std::size_t i = 0; i < x->val.rows; ++i) {
        const double* r = x->val.row_ptr(i);
        double mu = 0.0;
        for (std::size_t j = 0; j < nc; ++j) mu += r[j];
        mu /= static_cast<double>(nc);
        double var_ = 0.0;
        for (std::size_t j = 0; j < nc; ++j) var_ += (r[j] - mu) * (r[j] - mu);
        var_ /= static_cast<double>(nc);
        const double is = 1.0 / std::sqrt(var_ + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < nc; ++j) {
            xhat.at(i, j) = (r[j] - mu) * is;
            out.at(i, j) = xhat.at(i, j) * gain->val.v[j] + bias->val.v[j];
        }
    }
    return make_op(std::move(out), {x, gain, bias},
                   [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](node& n) {
                       const std::size_t nc = x->val.cols;
                       const double invn = 1.0 / static_cast<double>(nc);
                       if (gain->requires_grad) ensure_grad(*gain);
                       if (bias->requires_grad) ensure_grad(*bias);
                       if (x->requires_grad) ensure_grad(*x);
                       for (std::size_t i = 0; i < n.grad.rows; ++i) {
                           const double* g = n.grad.row_ptr(i);
                           const double* xh = xhat.row_ptr(i);
                           for (std::size_t j = 0; j < nc; ++j) {
                               if (gain->requires_grad) gain->grad.v[j] += g[j] * xh[j];
                               if (bias->requires_grad) bias->grad.v[j] += g[j];
                           }
                           if (!x->requires_grad) continue;
                           double sum_dxhat = 0.0;
                           double sum_dxhat_xhat = 0.0;
                           for (std::size_t j = 0; j < nc; ++j) {
                               const double dxh = g[j] * gain->val.v[j];
                               sum_dxhat += dxh;
                               sum_dxhat_xhat += dxh * xh[j];
                           }
                           double* gx = x->grad.row_ptr(i);
                           for (std::size_t j = 0; j < nc; ++j) {
                               const double dxh = g[j] * gain->val.v[j];
                               gx[j] += inv_std[i] *
                                        (dxh - invn * sum_dxhat - xh[j] * invn * sum_dxhat_xhat);
                           }
                       }
                   });
}

/// 1-D depthwise convolution along rows with same padding.
/// x: [L×h] sequence of h-dim features, kern: [h×k] one kernel per feature.
inline var depthwise_conv1d(const var& x, const var& kern) {
    const std::size_t len = x->val.rows;
    const std::size_t h = x->val.cols;
    const std::size_t k = kern->val.cols;
    require(kern->val.rows == h, errc::shape_mismatch, "depthwise_conv1d: channel count");
    require(k % 2 == 1, errc::shape_mismatch, "depthwise_conv1d: kernel must be odd");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    tensor out(len, h);
    for (std::size_t l = 0; l < len; ++l)
        for (std::size_t c = 0; c < h; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                acc += x->val.at(static_cast<std::size_t>(src), c) * kern->val.at(c, j);
            }
            out.at(l, c) = acc;
        }
    return make_op(std::move(out), {x, kern}, [x, kern, len, h, k, pad](node& n) {
        if (x->requires_grad) ensure_grad(*x);
        if (kern->requires_grad) ensure_grad(*kern);
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t c = 0; c < h; ++c) {
                const double g = n.grad.at(l, c);
                if (g == 0.0) continue;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                    if (x->requires_grad)
                        x->grad.at(static_cast<std::size_t>(src), c) += g * kern->val.at(c, j);
                    if (kern->requires_grad)
                        kern->grad.at(c, j) += g * x->val.at(static_cast<std::size_t>(src), c);
                }
            }
    });
}

// ---- backward ----

inline void backward(const var& loss) {
    require(loss->val.size() == 1, errc::shape_mismatch, "backward: loss must be scalar");
    // collect the reachable subgraph
    std::vector<node*> order;
    std::unordered_set<node*> seen;
    std::vector<node*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        node* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (const auto& p : cur->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    // creation order is a valid topological order
    std::sort(order.begin(), order.end(),
              [](const node* a, const node* b) { return a->order > b->order; });
    ensure_grad(*loss);
    loss->grad.v[0] = 1.0;
    for (node* n : order) {
        if (!n->requires_grad || !n->backprop) continue;
        if (n->grad.size() != n->val.size()) continue;  // no gradient flowed here
        n->backprop(*n);
    }
}

// ---- parameters and optimizer ----

/// Per-step registry tying model tensors to their graph leaves.
class param_binder {
public:
    var use(const std::string& name, tensor& t) {
        var v = leaf(t);
        refs_.push_back({name, &t, v});
        return v;
    }

    struct ref {
        std::string name;
        tensor* value;
        var node_;
    };

    const std::vector<ref>& refs() const { return refs_; }

    /// Global L2 norm of all accumulated gradients.
    double grad_norm() const {
        double s = 0.0;
        for (const auto& r : refs_)
            if (r.node_->grad.size() == r.node_->val.size())
                for (double g : r.node_->grad.v) s += g * g;
        return std::sqrt(s);
    }

private:
    std::vector<ref> refs_;
};

struct adam_settings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // <= 0 disables clipping
};

/// Adam with global-norm gradient clipping.
class adam {
public:
    using settings = adam_settings;

    explicit adam(settings s = {}) : s_(s) {}

    void step(const param_binder& params, double lr) { step(params.refs(), lr); }

    /// Step an explicit subset of bound parameters; anything not in `refs`
    /// keeps its value bit-for-bit (the freezing mechanism). Gradient clipping
    /// is computed over the stepped subset only.
    void step(const std::vector<param_binder::ref>& refs, double lr) {
        ++t_;
        double clip_scale = 1.0;
        if (s_.grad_clip > 0.0) {
            double norm2 = 0.0;
            for (const auto& r : refs)
                if (r.node_->grad.size() == r.node_->val.size())
                    for (double g : r.node_->grad.v) norm2 += g * g;
            const double norm = std::sqrt(norm2);
            if (norm > s_.grad_clip) clip_scale = s_.grad_clip / norm;
        }
        const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (const auto& r : refs) {
            if (r.node_->grad.size() != r.node_->val.size()) continue;
            auto& slot = slots_[r.name];
            if (slot.m.size() != r.value->size()) {
                slot.m = tensor(r.value->rows, r.value->cols);
                slot.v = tensor(r.value->rows, r.value->cols);
            }
            for (std::size_t i = 0; i < r.value->size(); ++i) {
                const double g = r.node_->grad.v[i] * clip_scale;
                slot.m.v[i] = s_.beta1 * slot.m.v[i] + (1.0 - s_.beta1) * g;
                slot.v.v[i] = s_.beta2 * slot.v.v[i] + (1.0 - s_.beta2) * g * g;
                const double mhat = slot.m.v[i] / bc1;
                const double vhat = slot.v.v[i] / bc2;
                r.value->v[i] -= lr * mhat / (std::sqrt(vhat) + s_.eps);
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    struct slot {
        tensor m, v;
    };
    settings s_;
    std::unordered_map<std::string, slot> slots_;
    std::int64_t t_ = 0;
};

/// Cosine decay with linear warmup.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr,
                        std::int64_t warmup_steps = 0) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 *
                                           std::min(1.0, progress)));
}

}  // namespace wlfm::ad

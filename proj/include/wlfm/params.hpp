#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wlfm/autodiff.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/tensor.hpp"

namespace wlfm {

/// Ordered collection of named parameter tensors. Order is insertion order,
/// which makes optimizer traversal and serialization deterministic.
class named_params {
public:
    tensor& add(const std::string& name, tensor t) {
        require(index_.find(name) == index_.end(), errc::config_error,
                "duplicate parameter '" + name + "'");
        index_.emplace(name, items_.size());
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const { return index_.find(name) != index_.end(); }

    tensor& at(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), errc::config_error, "unknown parameter '" + name + "'");
        return items_[it->second].second;
    }
    const tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), errc::config_error, "unknown parameter '" + name + "'");
        return items_[it->second].second;
    }

    std::vector<std::pair<std::string, tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    void merge_from(const named_params& other) {
        for (const auto& [name, t] : other.items()) add(name, t);
    }

    /// Total scalar count, for parameter-budget checks.
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

private:
    std::vector<std::pair<std::string, tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Builds graph leaves for parameters on demand. With a binder, each tensor
/// becomes a trainable leaf exactly once per graph (repeat lookups reuse the
/// same node, so gradients accumulate correctly); without one, parameters
/// enter the graph as constants and no gradient machinery is engaged.
class graph_ctx {
public:
    explicit graph_ctx(named_params& params, ad::param_binder* binder = nullptr)
        : params_(&params), binder_(binder) {}

    ad::var operator[](const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        tensor& t = params_->at(name);
        ad::var v = binder_ ? binder_->use(name, t) : ad::constant(t);
        bound_.emplace(name, v);
        return v;
    }

    bool trainable() const { return binder_ != nullptr; }
    named_params& params() { return *params_; }

private:
    named_params* params_;
    ad::param_binder* binder_;
    std::unordered_map<std::string, ad::var> bound_;
};

/// Xavier-style random initialization helper.
inline tensor init_weight(std::size_t rows, std::size_t cols, rng& g) {
    tensor t(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& x : t.v) x = g.normal() * scale;
    return t;
}

}  // namespace wlfm

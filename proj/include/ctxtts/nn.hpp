#pragma once
// Parameterized layers built on the autograd ops.

#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ctxtts/autograd.hpp"

namespace ctxtts::nn {

using ag::Parameter;
using ag::Var;

// Owns every trainable tensor of a model under a canonical dotted name.
// Addresses are stable for the store's lifetime.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter " + name);
    params_.push_back(Parameter<T>{name, Mat<T>(rows, cols), Mat<T>(rows, cols)});
    index_[name] = &params_.back();
    return params_.back();
  }

  // Xavier-uniform weight.
  Parameter<T>& weight(const std::string& name, std::size_t rows, std::size_t cols,
                       std::size_t fan_in, std::size_t fan_out) {
    auto& p = add(name, rows, cols);
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = T(u(rng_));
    return p;
  }

  Parameter<T>& constant(const std::string& name, std::size_t rows, std::size_t cols, T v) {
    auto& p = add(name, rows, cols);
    p.value.fill(v);
    return p;
  }

  Parameter<T>& normal(const std::string& name, std::size_t rows, std::size_t cols, double stddev) {
    auto& p = add(name, rows, cols);
    std::normal_distribution<double> n(0.0, stddev);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = T(n(rng_));
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::deque<Parameter<T>> params_;
  std::map<std::string, Parameter<T>*> index_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out)
      : w_(&ps.weight(name + ".weight", in, out, in, out)),
        b_(&ps.constant(name + ".bias", 1, out, T(0))) {}

  Var<T> operator()(const Var<T>& x) const {
    return ag::add_row(ag::matmul(x, ag::param(*w_)), ag::param(*b_));
  }
  Parameter<T>& weight() const { return *w_; }
  Parameter<T>& bias() const { return *b_; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
};

// Same-padded 1-D convolution over time; input [T x in], output [T x out].
// Weight layout is [kernel*in x out] with row k*in + c for tap k, channel c.
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel)
      : kernel_(kernel),
        w_(&ps.weight(name + ".weight", kernel * in, out, kernel * in, out)),
        b_(&ps.constant(name + ".bias", 1, out, T(0))) {
    if (kernel % 2 == 0) throw InvalidConfig(name + ": kernel must be odd");
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> cols = kernel_ == 1 ? x : ag::im2col(x, kernel_, kernel_ / 2);
    return ag::add_row(ag::matmul(cols, ag::param(*w_)), ag::param(*b_));
  }
  std::size_t kernel() const { return kernel_; }
  Parameter<T>& weight() const { return *w_; }
  Parameter<T>& bias() const { return *b_; }

 private:
  std::size_t kernel_ = 1;
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t dim)
      : g_(&ps.constant(name + ".gamma", 1, dim, T(1))),
        b_(&ps.constant(name + ".beta", 1, dim, T(0))) {}

  Var<T> operator()(const Var<T>& x) const {
    return ag::layer_norm(x, ag::param(*g_), ag::param(*b_));
  }

 private:
  Parameter<T>* g_ = nullptr;
  Parameter<T>* b_ = nullptr;
};

template <typename T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& name, std::size_t count, std::size_t dim,
            double stddev)
      : table_(&ps.normal(name + ".table", count, dim, stddev)) {}

  Var<T> operator()(std::vector<std::size_t> ids) const {
    return ag::gather_rows(ag::param(*table_), std::move(ids));
  }
  std::size_t count() const { return table_->value.rows(); }
  Parameter<T>& table() const { return *table_; }

 private:
  Parameter<T>* table_ = nullptr;
};

template <typename T>
struct AttentionResult {
  Var<T> output;
  // Row-stochastic weights [queries x keys], one matrix per head.
  std::vector<Mat<T>> weights;
};

// Scaled dot-product multi-head attention with separate query and key/value
// input widths.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, const std::string& name, std::size_t query_dim,
                     std::size_t kv_dim, std::size_t hidden, std::size_t heads,
                     std::size_t out_dim)
      : heads_(heads), hidden_(hidden),
        wq_(ps, name + ".wq", query_dim, hidden),
        wk_(ps, name + ".wk", kv_dim, hidden),
        wv_(ps, name + ".wv", kv_dim, hidden),
        wo_(ps, name + ".wo", hidden, out_dim) {
    if (heads == 0 || hidden % heads != 0) {
      throw InvalidConfig(name + ": hidden must be divisible by heads");
    }
  }

  // key_offset, when defined, is added to the projected keys (one row per key).
  AttentionResult<T> operator()(const Var<T>& query, const Var<T>& kv,
                                const Var<T>& key_offset = {}) const {
    Var<T> q = wq_(query);
    Var<T> k = wk_(kv);
    if (key_offset.defined()) k = ag::add(k, key_offset);
    Var<T> v = wv_(kv);
    const std::size_t dh = hidden_ / heads_;
    const T inv = T(1) / std::sqrt(T(dh));
    std::vector<Var<T>> outs;
    AttentionResult<T> res;
    for (std::size_t h = 0; h < heads_; ++h) {
      auto qh = ag::slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = ag::slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = ag::slice_cols(v, h * dh, (h + 1) * dh);
      auto w = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv));
      res.weights.push_back(w.value());
      outs.push_back(ag::matmul(w, vh));
    }
    res.output = wo_(heads_ == 1 ? outs[0] : ag::concat_cols(outs));
    return res;
  }

  const Linear<T>& wq() const { return wq_; }
  const Linear<T>& wk() const { return wk_; }
  const Linear<T>& wv() const { return wv_; }
  const Linear<T>& wo() const { return wo_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t heads_ = 1;
  std::size_t hidden_ = 0;
  Linear<T> wq_, wk_, wv_, wo_;
};

// Fixed sinusoidal position table [len x dim].
template <typename T>
Mat<T> sinusoid_positions(std::size_t len, std::size_t dim) {
  Mat<T> pe(len, dim);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
      pe(t, i) = T(i % 2 == 0 ? std::sin(double(t) * rate) : std::cos(double(t) * rate));
    }
  return pe;
}

}  // namespace ctxtts::nn

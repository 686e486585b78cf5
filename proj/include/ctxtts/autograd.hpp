#pragma once
// Minimal reverse-mode automatic differentiation over 2-D matrices.
//
// Every op builds a Node holding its value and, when any input needs a
// gradient, a closure that pushes the output gradient back to its inputs.
// Graphs are per forward pass; Parameters persist across passes and receive
// accumulated gradients when backward() reaches their leaves.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ctxtts/errors.hpp"
#include "ctxtts/kernels.hpp"
#include "ctxtts/matrix.hpp"

namespace ctxtts::ag {

template <typename T>
struct Node;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  std::vector<NodePtr<T>> inputs;
  std::function<void(Node<T>&)> backward;

  Mat<T>& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat<T>(value.rows(), value.cols());
    }
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

  static Var constant(Mat<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  // A differentiable input that is not a Parameter (e.g. loss targets in
  // gradient probes).
  static Var leaf(Mat<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = grad_enabled();
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat<T>& value() const { return node_->value; }
  const Mat<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Mat<T>(value.rows(), value.cols());
    grad.fill(T(0));
  }
};

// Leaf referencing a Parameter; its gradient is added into p.grad.
template <typename T>
Var<T> param(Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->value = p.value;
  if (grad_enabled()) {
    n->requires_grad = true;
    Parameter<T>* target = &p;
    n->backward = [target](Node<T>& self) {
      if (!target->grad.same_shape(target->value)) target->zero_grad();
      const auto& g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += g[i];
    };
  }
  return Var<T>(std::move(n));
}

namespace detail {

template <typename T>
Var<T> make(Mat<T> value, std::vector<NodePtr<T>> inputs,
            std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (ag::grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " +
                       std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                       " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()));
  }
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D df) {
  Mat<T> out(a.rows(), a.cols());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make<T>(std::move(out), {a.node()}, [df](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(in.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

// Run reverse accumulation from a 1x1 root.
template <typename T>
void backward(const Var<T>& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw InvalidInput("backward: root must be a scalar");
  }
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimension mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Mat<T> out(m, n);
  const auto& kt = kernels::active<T>();
  if (m && n && k) kt.gemm_nn(m, n, k, a.value().data(), k, b.value().data(), n, out.data(), n);
  return detail::make<T>(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    const auto& kt = kernels::active<T>();
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (m == 0 || n == 0 || k == 0) return;
    if (na.requires_grad) {
      kt.gemm_nt(m, k, n, self.grad.data(), n, nb.value.data(), n, na.ensure_grad().data(), k);
    }
    if (nb.requires_grad) {
      kt.gemm_tn(k, n, m, na.value.data(), k, self.grad.data(), n, nb.ensure_grad().data(), n);
    }
  });
}

// a [m x k] times b^T where b is [n x k].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) throw InvalidInput("matmul_nt: inner dimension mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Mat<T> out(m, n);
  const auto& kt = kernels::active<T>();
  if (m && n && k) kt.gemm_nt(m, n, k, a.value().data(), k, b.value().data(), k, out.data(), n);
  return detail::make<T>(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    const auto& kt = kernels::active<T>();
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (m == 0 || n == 0 || k == 0) return;
    if (na.requires_grad) {
      kt.gemm_nn(m, k, n, self.grad.data(), n, nb.value.data(), k, na.ensure_grad().data(), k);
    }
    if (nb.requires_grad) {
      kt.gemm_tn(n, k, m, self.grad.data(), n, na.value.data(), k, nb.ensure_grad().data(), k);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Mat<T> out(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a.value()(i, j);
  return detail::make<T>(std::move(out), {a.node()}, [r, c](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Mat<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Mat<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Mat<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

// a [r x c] + row [1 x c] broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("add_row: shape mismatch");
  Mat<T> out = a.value();
  const std::size_t c = a.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out(r, j) += row.value()[j];
  return detail::make<T>(std::move(out), {a.node(), row.node()}, [c](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nr = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nr.requires_grad) {
      auto& g = nr.ensure_grad();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(r, j);
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

// x * sigmoid(x)
template <typename T>
Var<T> silu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// Gated linear unit over columns: left half * sigmoid(right half).
template <typename T>
Var<T> glu(const Var<T>& a) {
  if (a.cols() % 2 != 0) throw InvalidInput("glu: odd column count");
  const std::size_t h = a.cols() / 2, r = a.rows();
  Mat<T> out(r, h);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const T s = T(1) / (T(1) + std::exp(-a.value()(i, h + j)));
      out(i, j) = a.value()(i, j) * s;
    }
  return detail::make<T>(std::move(out), {a.node()}, [h, r](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        const T x = in.value(i, j);
        const T s = T(1) / (T(1) + std::exp(-in.value(i, h + j)));
        const T dy = self.grad(i, j);
        g(i, j) += dy * s;
        g(i, h + j) += dy * x * s * (T(1) - s);
      }
  });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  const std::size_t r = a.rows(), c = a.cols();
  if (gamma.cols() != c || beta.cols() != c) throw InvalidInput("layer_norm: shape mismatch");
  Mat<T> out(r, c);
  Mat<T> xhat(r, c);
  std::vector<T> rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += a.value()(i, j);
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = a.value()(i, j) - mean;
      var += d * d;
    }
    var /= T(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (a.value()(i, j) - mean) * rstd[i];
      out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
    }
  }
  return detail::make<T>(
      std::move(out), {a.node(), gamma.node(), beta.node()},
      [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nb = *self.inputs[2];
        if (ng.requires_grad) {
          auto& g = ng.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j) * xhat(i, j);
        }
        if (nb.requires_grad) {
          auto& g = nb.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j);
        }
        if (na.requires_grad) {
          auto& g = na.ensure_grad();
          for (std::size_t i = 0; i < r; ++i) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T dxh = self.grad(i, j) * ng.value[j];
              m1 += dxh;
              m2 += dxh * xhat(i, j);
            }
            m1 /= T(c);
            m2 /= T(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T dxh = self.grad(i, j) * ng.value[j];
              g(i, j) += rstd[i] * (dxh - m1 - xhat(i, j) * m2);
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Mat<T> out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    T mx = a.value()(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, a.value()(i, j));
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(a.value()(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= sum;
  }
  return detail::make<T>(std::move(out), {a.node()}, [r, c](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < c; ++j) s += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.value(i, j) * (self.grad(i, j) - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<NodePtr<T>> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != r) throw InvalidInput("concat_cols: row count mismatch");
    offsets.push_back(c);
    c += p.cols();
    nodes.push_back(p.node());
  }
  Mat<T> out(r, c);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < parts[k].cols(); ++j)
        out(i, offsets[k] + j) = parts[k].value()(i, j);
  return detail::make<T>(std::move(out), std::move(nodes), [offsets, r](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += self.grad(i, offsets[k] + j);
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
  std::size_t c = 0;
  for (const auto& p : parts) c = std::max(c, p.cols());
  std::size_t r = 0;
  std::vector<NodePtr<T>> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != 0 && p.cols() != c) throw InvalidInput("concat_rows: column mismatch");
    offsets.push_back(r);
    r += p.rows();
    nodes.push_back(p.node());
  }
  Mat<T> out(r, c);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.data(), v.data() + v.size(), out.data() + offsets[k] * c);
  }
  return detail::make<T>(std::move(out), std::move(nodes), [offsets, c](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad || in.value.size() == 0) continue;
      auto& g = in.ensure_grad();
      const T* src = self.grad.data() + offsets[k] * c;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > a.rows()) throw InvalidInput("slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  Mat<T> out = a.value().slice_rows(r0, r1);
  return detail::make<T>(std::move(out), {a.node()}, [r0, c](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    T* dst = g.data() + r0 * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > a.cols()) throw InvalidInput("slice_cols: range out of bounds");
  const std::size_t r = a.rows(), w = c1 - c0;
  Mat<T> out(r, w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = a.value()(i, c0 + j);
  return detail::make<T>(std::move(out), {a.node()}, [r, w, c0](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g(i, c0 + j) += self.grad(i, j);
  });
}

// out[i] = a[index[i]]; used for embeddings and length regulation.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<std::size_t> index) {
  const std::size_t c = a.cols();
  Mat<T> out(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw InvalidInput("gather_rows: index out of range");
    const auto src = a.value().row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make<T>(std::move(out), {a.node()},
                         [c, index = std::move(index)](Node<T>& self) {
                           auto& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           for (std::size_t i = 0; i < index.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               g(index[i], j) += self.grad(i, j);
                         });
}

// out[i] = take_a[i] ? a[i] : b[i]. Row r of `a` may also be a single
// broadcast row when a has one row.
template <typename T>
Var<T> where_rows(const std::vector<bool>& take_a, const Var<T>& a, const Var<T>& b) {
  const std::size_t r = b.rows(), c = b.cols();
  const bool broadcast = a.rows() == 1 && r != 1;
  if (take_a.size() != r || a.cols() != c || (!broadcast && a.rows() != r)) {
    throw InvalidInput("where_rows: shape mismatch");
  }
  Mat<T> out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const auto src = take_a[i] ? a.value().row(broadcast ? 0 : i) : b.value().row(i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make<T>(std::move(out), {a.node(), b.node()},
                         [take_a, broadcast, r, c](Node<T>& self) {
                           auto& na = *self.inputs[0];
                           auto& nb = *self.inputs[1];
                           for (std::size_t i = 0; i < r; ++i) {
                             Node<T>& dst = take_a[i] ? na : nb;
                             if (!dst.requires_grad) continue;
                             auto& g = dst.ensure_grad();
                             const std::size_t gi = (take_a[i] && broadcast) ? 0 : i;
                             for (std::size_t j = 0; j < c; ++j) g(gi, j) += self.grad(i, j);
                           }
                         });
}

// Unfold [T x C] into [T x K*C]; row t holds frames t-pad_left .. t-pad_left+K-1
// (zeros outside the sequence).
template <typename T>
Var<T> im2col(const Var<T>& a, std::size_t kernel, std::size_t pad_left) {
  const std::size_t len = a.rows(), c = a.cols();
  Mat<T> out(len, kernel * c);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const auto from = a.value().row(static_cast<std::size_t>(src));
      std::copy(from.begin(), from.end(), out.data() + t * kernel * c + k * c);
    }
  return detail::make<T>(std::move(out), {a.node()}, [len, c, kernel, pad_left](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad_left);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const T* gsrc = self.grad.data() + t * kernel * c + k * c;
        T* gdst = g.data() + static_cast<std::size_t>(src) * c;
        for (std::size_t j = 0; j < c; ++j) gdst[j] += gsrc[j];
      }
  });
}

// Per-channel convolution with same padding; weight [K x C], bias [1 x C].
template <typename T>
Var<T> depthwise_conv1d(const Var<T>& a, const Var<T>& weight, const Var<T>& bias) {
  const std::size_t len = a.rows(), c = a.cols(), kernel = weight.rows();
  if (weight.cols() != c || bias.cols() != c) throw InvalidInput("depthwise_conv1d: shape mismatch");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Mat<T> out(len, c);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < c; ++j) out(t, j) = bias.value()[j];
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      for (std::size_t j = 0; j < c; ++j)
        out(t, j) += weight.value()(k, j) * a.value()(static_cast<std::size_t>(src), j);
    }
  }
  return detail::make<T>(
      std::move(out), {a.node(), weight.node(), bias.node()},
      [len, c, kernel, pad](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nw = *self.inputs[1];
        auto& nb = *self.inputs[2];
        if (nb.requires_grad) {
          auto& g = nb.ensure_grad();
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(t, j);
        }
        Mat<T>* gw = nw.requires_grad ? &nw.ensure_grad() : nullptr;
        Mat<T>* ga = na.requires_grad ? &na.ensure_grad() : nullptr;
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t j = 0; j < c; ++j) {
              if (gw) (*gw)(k, j) += self.grad(t, j) * na.value(s, j);
              if (ga) (*ga)(s, j) += self.grad(t, j) * nw.value(k, j);
            }
          }
      });
}

// Inverted dropout. p == 0 returns the input unchanged.
template <typename T>
Var<T> dropout(const Var<T>& a, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return a;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T(1) / (T(1) - p);
  std::vector<T> m(a.value().size());
  for (auto& v : m) v = keep(rng) ? s : T(0);
  Mat<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return detail::make<T>(std::move(out), {a.node()}, [m = std::move(m)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * m[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
  return detail::make<T>(Mat<T>(1, 1, s), {a.node()}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw InvalidInput("mean: empty input");
  return scale(sum(a), T(1) / T(n));
}

template <typename T>
Var<T> add_scalars(const std::vector<Var<T>>& terms) {
  Var<T> acc = terms.at(0);
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

}  // namespace ctxtts::ag

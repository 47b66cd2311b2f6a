#pragma once

// Minimal dense-tensor engine with reverse-mode differentiation.
//
// Tensors are row-major over a scalar type S (float for training, double
// for verification). Ops executed while a Tape<S> is alive are recorded;
// Tape::backward replays the records in strict reverse execution order,
// accumulating gradients additively into every node that requires them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/rng.hpp"

namespace kern::nn {

// Runtime switch for the per-op finiteness assertion. Defaults on in debug
// builds, off in release; tests can force it either way.
inline bool& finite_checks_enabled() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

template <typename S>
struct Node {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized iff requires_grad
  bool requires_grad = false;
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return with_value(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(std::vector<int> shape, S fill, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
    t.check_finite("full");
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<S> values,
                     bool requires_grad = false) {
    Tensor t = with_value(std::move(shape), std::move(values), requires_grad, false);
    t.check_finite("from");
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }
  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_ && node_->requires_grad)
      std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  std::shared_ptr<Node<S>> node() const { return node_; }

  void check_finite(const char* op) const {
    if (!finite_checks_enabled() || !node_) return;
    for (const S v : node_->value) {
      if (!std::isfinite(static_cast<double>(v)))
        throw VerifyError(std::string("non-finite value produced by ") + op);
    }
  }

 private:
  static Tensor with_value(std::vector<int> shape, std::vector<S> values,
                           bool requires_grad, bool zero_fill) {
    std::size_t n = 1;
    for (const int d : shape) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    if (zero_fill) {
      values.assign(n, S(0));
    } else if (values.size() != n) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(n, S(0));
    return t;
  }

  std::shared_ptr<Node<S>> node_;
};

// Ordered record of executed operations. Single consumption: backward may
// run once per reset.
template <typename S>
class Tape {
 public:
  Tape() : prev_(current_ref()) { current_ref() = this; }
  ~Tape() { current_ref() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ref(); }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor<S>& loss) {
    if (consumed_)
      throw VerifyError("backward called twice on the same tape without reset");
    if (loss.numel() != 1)
      throw ShapeError("backward requires a scalar loss, got " +
                       shape_str(loss.shape()));
    consumed_ = true;
    if (loss.requires_grad()) loss.node()->grad[0] += S(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

 private:
  static Tape*& current_ref() {
    static thread_local Tape* current = nullptr;
    return current;
  }

  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

namespace detail {

template <typename S>
bool track(std::initializer_list<const Tensor<S>*> inputs) {
  if (Tape<S>::current() == nullptr) return false;
  for (const Tensor<S>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
Tensor<S> make_output(std::vector<int> shape, bool tracked) {
  return Tensor<S>::zeros(std::move(shape), tracked);
}

template <typename S>
void record(std::function<void()> fn) {
  Tape<S>::current()->record(std::move(fn));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>({m, n}, tracked);
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* po = out.values().data();
    for (int i = 0; i < m; ++i) {
      const S* arow = pa + static_cast<std::size_t>(i) * k;
      S* orow = po + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const S av = arow[kk];
        if (av == S(0)) continue;
        const S* brow = pb + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  out.check_finite("matmul");
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = out.node();
    detail::record<S>([na, nb, no, m, k, n] {
      const S* g = no->grad.data();
      if (na->requires_grad) {
        S* ga = na->grad.data();
        const S* pb = nb->value.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            S acc = 0;
            const S* grow = g + static_cast<std::size_t>(i) * n;
            const S* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * k + kk] += acc;
          }
      }
      if (nb->requires_grad) {
        S* gb = nb->grad.data();
        const S* pa = na->value.data();
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < m; ++i) {
            const S av = pa[static_cast<std::size_t>(i) * k + kk];
            if (av == S(0)) continue;
            const S* grow = g + static_cast<std::size_t>(i) * n;
            S* brow = gb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values()[i] = a.values()[i] + b.values()[i];
  out.check_finite("add");
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = out.node();
    detail::record<S>([na, nb, no] {
      const std::size_t n = no->grad.size();
      if (na->requires_grad)
        for (std::size_t i = 0; i < n; ++i) na->grad[i] += no->grad[i];
      if (nb->requires_grad)
        for (std::size_t i = 0; i < n; ++i) nb->grad[i] += no->grad[i];
    });
  }
  return out;
}

// Row-broadcast add: a[m,n] + b[n]. The bias gradient is the column sum.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0))
    throw ShapeError("add_bias shape mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const int m = a.dim(0), n = a.dim(1);
  const bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>({m, n}, tracked);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          a.values()[static_cast<std::size_t>(i) * n + j] + b.values()[j];
  out.check_finite("add_bias");
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = out.node();
    detail::record<S>([na, nb, no, m, n] {
      if (na->requires_grad)
        for (std::size_t i = 0; i < no->grad.size(); ++i)
          na->grad[i] += no->grad[i];
      if (nb->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            nb->grad[j] += no->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values()[i] = a.values()[i] * b.values()[i];
  out.check_finite("mul");
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = out.node();
    detail::record<S>([na, nb, no] {
      const std::size_t n = no->grad.size();
      if (na->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          na->grad[i] += no->grad[i] * nb->value[i];
      if (nb->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          nb->grad[i] += no->grad[i] * na->value[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values()[i] = a.values()[i] * c;
  out.check_finite("scale");
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no, c] {
      if (na->requires_grad)
        for (std::size_t i = 0; i < no->grad.size(); ++i)
          na->grad[i] += no->grad[i] * c;
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose expects rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>({n, m}, tracked);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(j) * m + i] =
          a.values()[static_cast<std::size_t>(i) * n + j];
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no, m, n] {
      if (!na->requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          na->grad[static_cast<std::size_t>(i) * n + j] +=
              no->grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>({1}, tracked);
  S acc = 0;
  for (const S v : a.values()) acc += v;
  out.values()[0] = acc;
  out.check_finite("sum_all");
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no] {
      if (!na->requires_grad) return;
      const S g = no->grad[0];
      for (std::size_t i = 0; i < na->grad.size(); ++i) na->grad[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

namespace detail {
template <typename S>
inline S gelu_scalar(S x, S& dydx) {
  const S kAlpha = S(0.7978845608028654);  // sqrt(2/pi)
  const S kCubic = S(0.044715);
  const S u = kAlpha * (x + kCubic * x * x * x);
  const S t = std::tanh(u);
  const S du = kAlpha * (S(1) + S(3) * kCubic * x * x);
  dydx = S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
  return S(0.5) * x * (S(1) + t);
}
}  // namespace detail

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  std::vector<S> deriv(tracked ? a.numel() : 0);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    S d;
    out.values()[i] = detail::gelu_scalar(a.values()[i], d);
    if (tracked) deriv[i] = d;
  }
  out.check_finite("gelu");
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no, deriv = std::move(deriv)] {
      if (!na->requires_grad) return;
      for (std::size_t i = 0; i < no->grad.size(); ++i)
        na->grad[i] += no->grad[i] * deriv[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const S x = a.values()[i];
    out.values()[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                                : std::exp(x) / (S(1) + std::exp(x));
  }
  out.check_finite("sigmoid");
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no] {
      if (!na->requires_grad) return;
      for (std::size_t i = 0; i < no->grad.size(); ++i) {
        const S y = no->value[i];
        na->grad[i] += no->grad[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

// Softmax over the last axis with max-subtraction. Rows of equal values
// yield the uniform distribution.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.rank() < 1 || a.dim(a.rank() - 1) < 1)
    throw ShapeError("softmax needs a non-empty last axis, got " +
                     shape_str(a.shape()));
  const int n = a.dim(a.rank() - 1);
  const std::size_t rows = a.numel() / static_cast<std::size_t>(n);
  const bool tracked = detail::track<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), tracked);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = a.values().data() + r * n;
    S* y = out.values().data() + r * n;
    S mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S denom = 0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= denom;
  }
  out.check_finite("softmax");
  if (tracked) {
    auto na = a.node(), no = out.node();
    detail::record<S>([na, no, rows, n] {
      if (!na->requires_grad) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = no->value.data() + r * n;
        const S* g = no->grad.data() + r * n;
        S dot = 0;
        for (int j = 0; j < n; ++j) dot += g[j] * y[j];
        S* gx = na->grad.data() + r * n;
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// Per-last-axis normalization followed by affine gain/bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-12)) {
  const int d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d ||
      bias.dim(0) != d)
    throw ShapeError("layer_norm shape mismatch: x " + shape_str(x.shape()) +
                     ", gain " + shape_str(gain.shape()) + ", bias " +
                     shape_str(bias.shape()));
  if (eps <= S(0)) throw ShapeError("layer_norm eps must be positive");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  const bool tracked = detail::track<S>({&x, &gain, &bias});
  Tensor<S> out = detail::make_output<S>(x.shape(), tracked);
  std::vector<S> xhat(tracked ? x.numel() : 0);
  std::vector<S> inv_std(tracked ? rows : 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* px = x.values().data() + r * d;
    S* py = out.values().data() + r * d;
    S mean = 0;
    for (int j = 0; j < d; ++j) mean += px[j];
    mean /= S(d);
    S var = 0;
    for (int j = 0; j < d; ++j) var += (px[j] - mean) * (px[j] - mean);
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      const S xh = (px[j] - mean) * inv;
      if (tracked) xhat[r * d + j] = xh;
      py[j] = gain.values()[j] * xh + bias.values()[j];
    }
    if (tracked) inv_std[r] = inv;
  }
  out.check_finite("layer_norm");
  if (tracked) {
    auto nx = x.node(), ng = gain.node(), nb = bias.node(), no = out.node();
    detail::record<S>([nx, ng, nb, no, rows, d, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)] {
      for (std::size_t r = 0; r < rows; ++r) {
        const S* g = no->grad.data() + r * d;
        const S* xh = xhat.data() + r * d;
        if (ng->requires_grad)
          for (int j = 0; j < d; ++j) ng->grad[j] += g[j] * xh[j];
        if (nb->requires_grad)
          for (int j = 0; j < d; ++j) nb->grad[j] += g[j];
        if (nx->requires_grad) {
          S mean_gy = 0, mean_gy_xh = 0;
          std::vector<S> gy(static_cast<std::size_t>(d));
          for (int j = 0; j < d; ++j) {
            gy[j] = g[j] * ng->value[j];
            mean_gy += gy[j];
            mean_gy_xh += gy[j] * xh[j];
          }
          mean_gy /= S(d);
          mean_gy_xh /= S(d);
          S* gx = nx->grad.data() + r * d;
          for (int j = 0; j < d; ++j)
            gx[j] += inv_std[r] * (gy[j] - mean_gy - xh[j] * mean_gy_xh);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gathers, slices, concatenation

// Row gather. Works both as an embedding lookup on a parameter table and as
// a row selection on intermediate activations; the gradient scatters
// additively, so repeated ids accumulate.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw ShapeError("embedding_lookup expects a rank-2 table, got " +
                     shape_str(table.shape()));
  const int v = table.dim(0), d = table.dim(1);
  for (const int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding_lookup id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  const bool tracked = detail::track<S>({&table});
  Tensor<S> out =
      detail::make_output<S>({static_cast<int>(ids.size()), d}, tracked);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.values().data() + i * d);
  if (tracked) {
    auto nt = table.node(), no = out.node();
    detail::record<S>([nt, no, ids, d] {
      if (!nt->requires_grad) return;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        S* dst = nt->grad.data() + static_cast<std::size_t>(ids[i]) * d;
        const S* src = no->grad.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& rows) {
  return embedding_lookup(x, rows);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int offset, int len) {
  if (x.rank() != 2 || offset < 0 || len <= 0 || offset + len > x.dim(1))
    throw ShapeError("slice_cols [" + std::to_string(offset) + "," +
                     std::to_string(offset + len) + ") invalid for " +
                     shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  const bool tracked = detail::track<S>({&x});
  Tensor<S> out = detail::make_output<S>({m, len}, tracked);
  for (int i = 0; i < m; ++i)
    std::copy_n(x.values().data() + static_cast<std::size_t>(i) * n + offset,
                len, out.values().data() + static_cast<std::size_t>(i) * len);
  if (tracked) {
    auto nx = x.node(), no = out.node();
    detail::record<S>([nx, no, m, n, offset, len] {
      if (!nx->requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
          nx->grad[static_cast<std::size_t>(i) * n + offset + j] +=
              no->grad[static_cast<std::size_t>(i) * len + j];
    });
  }
  return out;
}

// Concatenate along the last axis.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const int m = parts[0].dim(0);
  int total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m)
      throw ShapeError("concat_cols row mismatch: " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    total += p.dim(1);
    tracked = tracked || detail::track<S>({&p});
  }
  Tensor<S> out = detail::make_output<S>({m, total}, tracked);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      std::copy_n(p.values().data() + static_cast<std::size_t>(i) * w, w,
                  out.values().data() + static_cast<std::size_t>(i) * total + off);
    off += w;
  }
  if (tracked) {
    std::vector<std::shared_ptr<Node<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto no = out.node();
    detail::record<S>([nodes, no, m, total] {
      int off2 = 0;
      for (const auto& np : nodes) {
        const int w = np->shape[1];
        if (np->requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              np->grad[static_cast<std::size_t>(i) * w + j] +=
                  no->grad[static_cast<std::size_t>(i) * total + off2 + j];
        off2 += w;
      }
    });
  }
  return out;
}

// Head splitting for multi-head attention: column blocks of width H/A.
template <typename S>
std::vector<Tensor<S>> split_heads(const Tensor<S>& x, int heads) {
  if (x.rank() != 2 || heads <= 0 || x.dim(1) % heads != 0)
    throw ShapeError("split_heads: " + shape_str(x.shape()) + " by " +
                     std::to_string(heads) + " heads");
  const int dh = x.dim(1) / heads;
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) out.push_back(slice_cols(x, h * dh, dh));
  return out;
}

template <typename S>
Tensor<S> merge_heads(const std::vector<Tensor<S>>& heads) {
  return concat_cols(heads);
}

// ---------------------------------------------------------------------------
// dropout

// Inverted dropout with an explicit rng. p == 0 is the identity and records
// nothing.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p must be in [0,1)");
  if (p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout with p > 0 requires an rng");
  const bool tracked = detail::track<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tracked);
  std::vector<S> mask(x.numel());
  const S keep_scale = S(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = rng->uniform01() >= p ? keep_scale : S(0);
    out.values()[i] = x.values()[i] * mask[i];
  }
  if (tracked) {
    auto nx = x.node(), no = out.node();
    detail::record<S>([nx, no, mask = std::move(mask)] {
      if (!nx->requires_grad) return;
      for (std::size_t i = 0; i < no->grad.size(); ++i)
        nx->grad[i] += no->grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

// Mean of -log softmax(logits)[target] over rows.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 ||
      static_cast<std::size_t>(logits.dim(0)) != targets.size())
    throw ShapeError("cross_entropy logits " + shape_str(logits.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  const int b = logits.dim(0), n = logits.dim(1);
  for (const int t : targets)
    if (t < 0 || t >= n)
      throw IndexError("cross_entropy target " + std::to_string(t) +
                       " out of range [0," + std::to_string(n) + ")");
  const bool tracked = detail::track<S>({&logits});
  Tensor<S> out = detail::make_output<S>({1}, tracked);
  std::vector<S> probs(tracked ? logits.numel() : 0);
  S total = 0;
  for (int r = 0; r < b; ++r) {
    const S* x = logits.values().data() + static_cast<std::size_t>(r) * n;
    S mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S denom = 0;
    for (int j = 0; j < n; ++j) denom += std::exp(x[j] - mx);
    total += mx + std::log(denom) - x[targets[static_cast<std::size_t>(r)]];
    if (tracked)
      for (int j = 0; j < n; ++j)
        probs[static_cast<std::size_t>(r) * n + j] = std::exp(x[j] - mx) / denom;
  }
  out.values()[0] = total / S(b);
  out.check_finite("cross_entropy");
  if (tracked) {
    auto nl = logits.node(), no = out.node();
    detail::record<S>([nl, no, targets, b, n, probs = std::move(probs)] {
      if (!nl->requires_grad) return;
      const S g = no->grad[0] / S(b);
      for (int r = 0; r < b; ++r) {
        S* gx = nl->grad.data() + static_cast<std::size_t>(r) * n;
        const S* p = probs.data() + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < n; ++j) gx[j] += g * p[j];
        gx[targets[static_cast<std::size_t>(r)]] -= g;
      }
    });
  }
  return out;
}

// Mean binary cross-entropy with logits; numerically stable form.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const std::vector<S>& targets) {
  if (logits.numel() != targets.size())
    throw ShapeError("bce_with_logits size mismatch: " +
                     shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.numel();
  if (n == 0) throw ShapeError("bce_with_logits on empty tensor");
  const bool tracked = detail::track<S>({&logits});
  Tensor<S> out = detail::make_output<S>({1}, tracked);
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const S z = logits.values()[i];
    const S y = targets[i];
    total += std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  out.values()[0] = total / S(n);
  out.check_finite("bce_with_logits");
  if (tracked) {
    auto nl = logits.node(), no = out.node();
    detail::record<S>([nl, no, targets, n] {
      if (!nl->requires_grad) return;
      const S g = no->grad[0] / S(n);
      for (std::size_t i = 0; i < n; ++i) {
        const S z = nl->value[i];
        const S sig = z >= S(0) ? S(1) / (S(1) + std::exp(-z))
                                : std::exp(z) / (S(1) + std::exp(z));
        nl->grad[i] += g * (sig - targets[i]);
      }
    });
  }
  return out;
}

// x @ w + b for w[in,out], b[out].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace kern::nn

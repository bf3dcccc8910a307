#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tacvit {

// Error taxonomy shared by the whole stack. The CLI maps these to exit codes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward reaches this tensor
  bool requires_grad = false;
};

// Shared-ownership handle over a dense row-major array. Values are treated as
// immutable once produced by an op; gradients accumulate during backward only.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> value, bool requires_grad = false)
      : d_(std::make_shared<TensorData<T>>()) {
    if (shape_numel(shape) != static_cast<int64_t>(value.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(value.size()) + " values");
    d_->shape = std::move(shape);
    d_->value = std::move(value);
    d_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }
  int64_t dim(size_t i) const { return d_->shape.at(i); }
  size_t rank() const { return d_->shape.size(); }

  // The handle is shallow-const: these mutate the shared storage, which lets
  // backward closures that captured a const handle write gradients into it.
  const std::vector<T>& value() const { return d_->value; }
  std::vector<T>& mutable_value() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) const { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<T>& grad() const { return d_->grad; }
  std::vector<T>& ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T{0});
    return d_->grad;
  }
  void clear_grad() const { d_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw UsageError("item: tensor is not scalar, shape " + shape_str(shape()));
    return d_->value[0];
  }

  // Identity of the underlying storage; used by parameter maps.
  const void* id() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
}

// Define-by-run tape. Ops append a backward closure when any input requires
// grad; backward() replays the closures in reverse recorded order.
template <typename T>
class Tape {
 public:
  struct Entry {
    const char* op;
    Tensor<T> out;
    std::function<void()> backward;
  };

  void record(const char* op, Tensor<T> out, std::function<void()> fn) {
    entries_.push_back({op, std::move(out), std::move(fn)});
  }
  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.ensure_grad()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out.has_grad()) continue;  // nothing flowed here
      it->backward();
      // grads produced by this rule land in the entry's inputs; catch blowups early
      for (T g : it->out.grad())
        if (!std::isfinite(g)) throw NumericError(std::string(it->op) + ": non-finite gradient");
    }
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

template <typename T>
inline bool want_grad(const Tensor<T>& a) {
  return a.requires_grad();
}
template <typename T, typename... Ts>
inline bool want_grad(const Tensor<T>& a, const Ts&... rest) {
  return a.requires_grad() || want_grad(rest...);
}
}  // namespace detail

// ---- core ops ----

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n}, detail::want_grad(a, b));
  detail::MapM<T>(out.mutable_value().data(), m, n) =
      detail::CMapM<T>(a.value().data(), m, k) * detail::CMapM<T>(b.value().data(), k, n);
  check_finite("matmul", out.value());
  if (out.requires_grad()) {
    tape.record("matmul", out, [a, b, out, m, k, n]() mutable {
      detail::CMapM<T> dC(out.grad().data(), m, n);
      if (a.requires_grad())
        detail::MapM<T>(a.ensure_grad().data(), m, k) +=
            dC * detail::CMapM<T>(b.value().data(), k, n).transpose();
      if (b.requires_grad())
        detail::MapM<T>(b.ensure_grad().data(), k, n) +=
            detail::CMapM<T>(a.value().data(), m, k).transpose() * dC;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape(), detail::want_grad(a, b));
  for (int64_t i = 0; i < a.numel(); ++i) out.mutable_value()[i] = a.value()[i] + b.value()[i];
  check_finite("add", out.value());
  if (out.requires_grad()) {
    tape.record("add", out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape(), detail::want_grad(a, b));
  for (int64_t i = 0; i < a.numel(); ++i) out.mutable_value()[i] = a.value()[i] * b.value()[i];
  check_finite("mul", out.value());
  if (out.requires_grad()) {
    tape.record("mul", out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape(), a.requires_grad());
  for (int64_t i = 0; i < a.numel(); ++i) out.mutable_value()[i] = a.value()[i] * c;
  check_finite("scale", out.value());
  if (out.requires_grad()) {
    tape.record("scale", out, [a, out, c]() mutable {
      auto& ga = a.ensure_grad();
      const auto& g = out.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

// Broadcast a [C]-vector over the rows of an [R x C] matrix.
template <typename T>
Tensor<T> add_rowwise(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
    throw ShapeError("add_rowwise: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape(), detail::want_grad(x, b));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.mutable_value()[i * c + j] = x.value()[i * c + j] + b.value()[j];
  check_finite("add_rowwise", out.value());
  if (out.requires_grad()) {
    tape.record("add_rowwise", out, [x, b, out, r, c]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape(), x.requires_grad());
  for (int64_t i = 0; i < x.numel(); ++i) out.mutable_value()[i] = x.value()[i] > T{0} ? x.value()[i] : T{0};
  check_finite("relu", out.value());
  if (out.requires_grad()) {
    // subgradient at exactly 0 is 0
    tape.record("relu", out, [x, out]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (x.value()[i] > T{0}) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  static const T inv_sqrt2 = T{1} / std::sqrt(T{2});
  static const T inv_sqrt2pi = T{1} / std::sqrt(T{2} * T(M_PI));
  Tensor<T> out = Tensor<T>::zeros(x.shape(), x.requires_grad());
  for (int64_t i = 0; i < x.numel(); ++i) {
    T v = x.value()[i];
    out.mutable_value()[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  }
  check_finite("gelu", out.value());
  if (out.requires_grad()) {
    tape.record("gelu", out, [x, out]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T v = x.value()[i];
        T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// Softmax over the last dimension, max-subtracted for stability.
template <typename T>
Tensor<T> softmax_lastdim(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() < 1) throw ShapeError("softmax: empty last dimension");
  const int64_t d = x.shape().back();
  const int64_t rows = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape(), x.requires_grad());
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * d;
    T* o = out.mutable_value().data() + r * d;
    T mx = in[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (int64_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (int64_t j = 0; j < d; ++j) o[j] /= sum;
  }
  check_finite("softmax", out.value());
  if (out.requires_grad()) {
    tape.record("softmax", out, [x, out, rows, d]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      const auto& y = out.value();
      for (int64_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
      }
    });
  }
  return out;
}

// Layer norm over the last dimension with affine gamma/beta of size [D].
template <typename T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps = T{1e-5}) {
  const int64_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layernorm: gamma/beta must match last dim " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape(), detail::want_grad(x, gamma, beta));
  std::vector<T> inv_std(rows), mean(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * d;
    T mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += in[j];
    mu /= T(d);
    T var = 0;
    for (int64_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(d);
    T is = T{1} / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    T* o = out.mutable_value().data() + r * d;
    for (int64_t j = 0; j < d; ++j) o[j] = gamma.value()[j] * (in[j] - mu) * is + beta.value()[j];
  }
  check_finite("layernorm", out.value());
  if (out.requires_grad()) {
    tape.record("layernorm", out, [x, gamma, beta, out, rows, d, mean, inv_std]() mutable {
      const auto& g = out.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.value().data() + r * d;
        const T* go = g.data() + r * d;
        T mu = mean[r], is = inv_std[r];
        if (gamma.requires_grad()) {
          auto& gg = gamma.ensure_grad();
          for (int64_t j = 0; j < d; ++j) gg[j] += go[j] * (in[j] - mu) * is;
        }
        if (beta.requires_grad()) {
          auto& gb = beta.ensure_grad();
          for (int64_t j = 0; j < d; ++j) gb[j] += go[j];
        }
        if (x.requires_grad()) {
          auto& gx = x.ensure_grad();
          T sum_gy = 0, sum_gyx = 0;
          for (int64_t j = 0; j < d; ++j) {
            T gy = go[j] * gamma.value()[j];
            T xh = (in[j] - mu) * is;
            sum_gy += gy;
            sum_gyx += gy * xh;
          }
          for (int64_t j = 0; j < d; ++j) {
            T gy = go[j] * gamma.value()[j];
            T xh = (in[j] - mu) * is;
            gx[r * d + j] += is * (gy - sum_gy / T(d) - xh * sum_gyx / T(d));
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + shape_str(x.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({c, r}, x.requires_grad());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.mutable_value()[j * r + i] = x.value()[i * c + j];
  if (out.requires_grad()) {
    tape.record("transpose", out, [x, out, r, c]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& x, int64_t start, int64_t len) {
  if (x.rank() != 2 || start < 0 || start + len > x.dim(0))
    throw ShapeError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of " + shape_str(x.shape()));
  const int64_t c = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({len, c}, x.requires_grad());
  std::copy(x.value().begin() + start * c, x.value().begin() + (start + len) * c,
            out.mutable_value().begin());
  if (out.requires_grad()) {
    tape.record("slice_rows", out, [x, out, start, c, len]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (int64_t i = 0; i < len * c; ++i) gx[start * c + i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, int64_t start, int64_t len) {
  if (x.rank() != 2 || start < 0 || start + len > x.dim(1))
    throw ShapeError("slice_cols: out of range for " + shape_str(x.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({r, len}, x.requires_grad());
  for (int64_t i = 0; i < r; ++i)
    std::copy(x.value().begin() + i * c + start, x.value().begin() + i * c + start + len,
              out.mutable_value().begin() + i * len);
  if (out.requires_grad()) {
    tape.record("slice_cols", out, [x, out, start, r, c, len]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < len; ++j) gx[i * c + start + j] += g[i * len + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int64_t c = parts[0].dim(1);
  int64_t rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != c) throw ShapeError("concat_rows: column mismatch");
    rows += p.dim(0);
    rg = rg || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros({rows, c}, rg);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), out.mutable_value().begin() + off);
    off += p.numel();
  }
  if (rg) {
    tape.record("concat_rows", out, [parts, out]() mutable {
      const auto& g = out.grad();
      int64_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = p.ensure_grad();
          for (int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t r = parts[0].dim(0);
  int64_t cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) throw ShapeError("concat_cols: row mismatch");
    cols += p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros({r, cols}, rg);
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t pc = p.dim(1);
    for (int64_t i = 0; i < r; ++i)
      std::copy(p.value().begin() + i * pc, p.value().begin() + (i + 1) * pc,
                out.mutable_value().begin() + i * cols + off);
    off += pc;
  }
  if (rg) {
    tape.record("concat_cols", out, [parts, out, r, cols]() mutable {
      const auto& g = out.grad();
      int64_t off = 0;
      for (auto& p : parts) {
        const int64_t pc = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.ensure_grad();
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + off + j];
        }
        off += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value(), x.requires_grad());
  if (out.requires_grad()) {
    tape.record("reshape", out, [x, out]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
  T s = 0;
  for (T v : x.value()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s, x.requires_grad());
  check_finite("sum", out.value());
  if (out.requires_grad()) {
    tape.record("sum", out, [x, out]() mutable {
      auto& gx = x.ensure_grad();
      T g = out.grad()[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

// Mean over all N*D elements of the squared difference.
template <typename T>
Tensor<T> mse_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  const int64_t n = pred.numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    T d = pred.value()[i] - truth.value()[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(acc / T(n), detail::want_grad(pred, truth));
  check_finite("mse_loss", out.value());
  if (out.requires_grad()) {
    tape.record("mse_loss", out, [pred, truth, out, n]() mutable {
      T g = out.grad()[0];
      const T c = T{2} / T(n);
      if (pred.requires_grad()) {
        auto& gp = pred.ensure_grad();
        for (int64_t i = 0; i < n; ++i) gp[i] += g * c * (pred.value()[i] - truth.value()[i]);
      }
      if (truth.requires_grad()) {
        auto& gt = truth.ensure_grad();
        for (int64_t i = 0; i < n; ++i) gt[i] -= g * c * (pred.value()[i] - truth.value()[i]);
      }
    });
  }
  return out;
}

}  // namespace tacvit

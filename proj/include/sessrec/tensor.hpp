// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, activations, dropout, seeded RNG and the
// AdaGrad-with-momentum optimizer shared by the recurrent models.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sessrec {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major double matrix. A vector is a 1 x n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data size does not match rows*cols");
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out[i,j] = sum_k x[i,k] W[k,j] + b[j]
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
  if (x.cols() != w.rows() || b.size() != w.cols())
    throw ShapeError("affine: shape mismatch (" + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                     ") * (" + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ") + [" +
                     std::to_string(b.size()) + "]");
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      auto wr = w.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += xv * wr[j];
    }
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += b[j];
  }
  return out;
}

/// out += v * W  (v is a row vector of length W.rows()).
inline void accumulate_vec_mat(std::span<const double> v, const Matrix& w, std::span<double> out) {
  if (v.size() != w.rows() || out.size() != w.cols()) throw ShapeError("vec*mat: shape mismatch");
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double vk = v[k];
    if (vk == 0.0) continue;
    auto wr = w.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += vk * wr[j];
  }
}

/// out += v * W^T  (v has length W.cols()).
inline void accumulate_vec_mat_t(std::span<const double> v, const Matrix& w, std::span<double> out) {
  if (v.size() != w.cols() || out.size() != w.rows()) throw ShapeError("vec*mat^T: shape mismatch");
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto wr = w.row(k);
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += v[j] * wr[j];
    out[k] += s;
  }
}

/// G += a^T b  (outer product of two vectors).
inline void accumulate_outer(std::span<const double> a, std::span<const double> b, Matrix& g) {
  if (a.size() != g.rows() || b.size() != g.cols()) throw ShapeError("outer: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    auto gr = g.row(i);
    for (std::size_t j = 0; j < b.size(); ++j) gr[j] += ai * b[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class Activation { kSigmoid, kTanh, kSoftmaxRow, kIdentity };

inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline void activate_inplace(std::span<double> v, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid:
      for (double& x : v) x = sigmoid(x);
      break;
    case Activation::kTanh:
      for (double& x : v) x = std::tanh(x);
      break;
    case Activation::kSoftmaxRow:
      softmax_inplace(v);
      break;
    case Activation::kIdentity:
      break;
  }
}

inline Matrix apply_activation(Matrix x, Activation kind) {
  if (kind == Activation::kSoftmaxRow) {
    for (std::size_t i = 0; i < x.rows(); ++i) softmax_inplace(x.row(i));
  } else {
    activate_inplace(x.flat(), kind);
  }
  return x;
}

/// Seeded pseudo-random stream. mt19937_64 is fully specified by the
/// standard, and the conversions below avoid the implementation-defined
/// distributions, so a seed yields the same numbers on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  /// Independent stream for a sub-task (trial, seed replica, ...).
  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Bernoulli keep-mask scaled by 1/(1-p); empty when dropout is inactive.
inline std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return {};
  std::vector<double> mask(n);
  const double scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : scale;
  return mask;
}

/// Inverted dropout: training zeroes each element with probability p and
/// scales survivors by 1/(1-p); inference is the identity.
inline Matrix dropout(Matrix x, double p, Rng& rng, bool training) {
  const auto mask = dropout_mask(x.size(), p, rng, training);
  if (!mask.empty())
    for (std::size_t i = 0; i < x.size(); ++i) x.flat()[i] *= mask[i];
  return x;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Matrix init_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.flat()) v = rng.uniform(-bound, bound);
  return m;
}

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double epsilon = 1e-6;
};

/// AdaGrad accumulator and momentum velocity for one parameter matrix.
struct OptState {
  Matrix accum;
  Matrix velocity;

  OptState() = default;
  explicit OptState(const Matrix& like)
      : accum(like.rows(), like.cols()), velocity(like.rows(), like.cols()) {}
};

namespace detail {
inline void adagrad_momentum_elem(double& param, double grad, double& accum, double& vel,
                                  const OptimizerConfig& cfg) {
  accum += grad * grad;
  const double adjusted = grad / (std::sqrt(accum) + cfg.epsilon);
  vel = cfg.momentum * vel + cfg.learning_rate * adjusted;
  param -= vel;
}
}  // namespace detail

/// accum += g^2; v = momentum*v + lr*g/(sqrt(accum)+eps); param -= v
inline void adagrad_momentum_step(Matrix& param, const Matrix& grad, OptState& state,
                                  const OptimizerConfig& cfg) {
  if (!param.same_shape(grad) || !param.same_shape(state.accum) || !param.same_shape(state.velocity))
    throw ShapeError("adagrad_momentum_step: shape mismatch");
  auto p = param.flat();
  auto g = grad.flat();
  auto a = state.accum.flat();
  auto v = state.velocity.flat();
  for (std::size_t i = 0; i < p.size(); ++i) detail::adagrad_momentum_elem(p[i], g[i], a[i], v[i], cfg);
}

/// Same update restricted to the listed rows (item-indexed matrices).
inline void adagrad_momentum_step_rows(Matrix& param, const Matrix& grad, OptState& state,
                                       const OptimizerConfig& cfg, std::span<const std::size_t> rows) {
  if (!param.same_shape(grad) || !param.same_shape(state.accum) || !param.same_shape(state.velocity))
    throw ShapeError("adagrad_momentum_step_rows: shape mismatch");
  for (std::size_t r : rows) {
    auto p = param.row(r);
    auto g = grad.row(r);
    auto a = state.accum.row(r);
    auto v = state.velocity.row(r);
    for (std::size_t j = 0; j < p.size(); ++j) detail::adagrad_momentum_elem(p[j], g[j], a[j], v[j], cfg);
  }
}

// Matrix serialization: little-endian u64 rows, u64 cols, then row-major
// IEEE-754 doubles.

namespace detail {
inline void write_le64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}
inline std::uint64_t read_le64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("matrix stream truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline void write_matrix(std::ostream& os, const Matrix& m) {
  detail::write_le64(os, m.rows());
  detail::write_le64(os, m.cols());
  for (double v : m.flat()) detail::write_le64(os, std::bit_cast<std::uint64_t>(v));
}

inline Matrix read_matrix(std::istream& is) {
  const auto rows = detail::read_le64(is);
  const auto cols = detail::read_le64(is);
  if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw std::runtime_error("matrix header out of range");
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = std::bit_cast<double>(detail::read_le64(is));
  return m;
}

}  // namespace sessrec

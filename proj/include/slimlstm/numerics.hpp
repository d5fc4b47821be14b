#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace slim {

/// Dense real vector. A default-constructed vector is empty and stands for
/// an absent parameter; sized vectors always hold exactly size() values.
template <std::floating_point Real>
class BasicVector {
 public:
  BasicVector() = default;
  explicit BasicVector(std::size_t len, Real fill = Real(0)) : data_(len, fill) {}
  BasicVector(std::initializer_list<Real> values) : data_(values) {}
  explicit BasicVector(std::vector<Real> values) : data_(std::move(values)) {}

  template <std::floating_point Other>
  explicit BasicVector(const BasicVector<Other>& other)
      : data_(other.begin(), other.end()) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  BasicVector& operator+=(const BasicVector& other);
  BasicVector& operator-=(const BasicVector& other);
  BasicVector& operator*=(Real s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const BasicVector&, const BasicVector&) = default;

 private:
  std::vector<Real> data_;
};

/// Dense row-major real matrix. Default-constructed means absent (0 x 0).
template <std::floating_point Real>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
      throw std::invalid_argument("matrix dimensions must be >= 1, got " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<Real> values)
      : BasicMatrix(rows, cols) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("matrix data length " + std::to_string(values.size()) +
                                  " does not match " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
    data_ = std::move(values);
  }

  template <std::floating_point Other>
  explicit BasicMatrix(const BasicMatrix<Other>& other)
      : rows_(other.rows()), cols_(other.cols()),
        data_(other.values().begin(), other.values().end()) {}

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = Real(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using Vector = BasicVector<double>;
using Matrix = BasicMatrix<double>;

std::string shape_string(std::size_t rows, std::size_t cols);

namespace detail {
[[noreturn]] void throw_length_mismatch(const char* op, std::size_t a, std::size_t b);
[[noreturn]] void throw_shape_mismatch(const char* op, std::size_t rows, std::size_t cols,
                                       std::size_t len);
}  // namespace detail

template <std::floating_point Real>
BasicVector<Real>& BasicVector<Real>::operator+=(const BasicVector& other) {
  if (other.size() != size()) detail::throw_length_mismatch("add", size(), other.size());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <std::floating_point Real>
BasicVector<Real>& BasicVector<Real>::operator-=(const BasicVector& other) {
  if (other.size() != size()) detail::throw_length_mismatch("sub", size(), other.size());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

template <std::floating_point Real>
BasicVector<Real> operator+(BasicVector<Real> a, const BasicVector<Real>& b) {
  a += b;
  return a;
}

template <std::floating_point Real>
BasicVector<Real> operator-(BasicVector<Real> a, const BasicVector<Real>& b) {
  a -= b;
  return a;
}

/// y = A x
template <std::floating_point Real>
BasicVector<Real> matvec(const BasicMatrix<Real>& a, const BasicVector<Real>& x) {
  if (a.cols() != x.size()) detail::throw_shape_mismatch("matvec", a.rows(), a.cols(), x.size());
  BasicVector<Real> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    Real acc = 0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

/// y += A x
template <std::floating_point Real>
void matvec_accumulate(const BasicMatrix<Real>& a, const BasicVector<Real>& x,
                       BasicVector<Real>& y) {
  if (a.cols() != x.size()) detail::throw_shape_mismatch("matvec", a.rows(), a.cols(), x.size());
  if (a.rows() != y.size()) detail::throw_length_mismatch("matvec output", a.rows(), y.size());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    Real acc = 0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    y[i] += acc;
  }
}

/// y += A^T x
template <std::floating_point Real>
void matvec_transposed_accumulate(const BasicMatrix<Real>& a, const BasicVector<Real>& x,
                                  BasicVector<Real>& y) {
  if (a.rows() != x.size()) {
    detail::throw_shape_mismatch("matvec_transposed", a.rows(), a.cols(), x.size());
  }
  if (a.cols() != y.size()) detail::throw_length_mismatch("matvec_transposed output", a.cols(), y.size());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const Real xi = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
}

/// A += u v^T
template <std::floating_point Real>
void add_outer(BasicMatrix<Real>& a, const BasicVector<Real>& u, const BasicVector<Real>& v) {
  if (a.rows() != u.size() || a.cols() != v.size()) {
    throw std::invalid_argument("add_outer: matrix " + shape_string(a.rows(), a.cols()) +
                                " vs outer product " + shape_string(u.size(), v.size()));
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    const Real ui = u[i];
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += ui * v[j];
  }
}

template <std::floating_point Real>
BasicVector<Real> hadamard(const BasicVector<Real>& u, const BasicVector<Real>& v) {
  if (u.size() != v.size()) detail::throw_length_mismatch("hadamard", u.size(), v.size());
  BasicVector<Real> w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = u[i] * v[i];
  return w;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { sigmoid, tanh, relu };

std::string_view to_string(Activation kind);
Activation parse_activation(std::string_view name);

/// Logistic sigmoid; exp is only ever taken of a non-positive argument.
template <std::floating_point Real>
Real sigmoid(Real x) {
  if (x >= 0) {
    const Real z = std::exp(-x);
    return Real(1) / (Real(1) + z);
  }
  const Real z = std::exp(x);
  return z / (Real(1) + z);
}

template <std::floating_point Real>
Real activate(Activation kind, Real x) {
  switch (kind) {
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::tanh:
      return std::tanh(x);
    case Activation::relu:
      return x > 0 ? x : Real(0);
  }
  return x;
}

/// Derivative expressed through the activation's output y = act(x).
/// For relu this is the indicator x > 0, which equals y > 0.
template <std::floating_point Real>
Real derivative_from_output(Activation kind, Real y) {
  switch (kind) {
    case Activation::sigmoid:
      return y * (Real(1) - y);
    case Activation::tanh:
      return Real(1) - y * y;
    case Activation::relu:
      return y > 0 ? Real(1) : Real(0);
  }
  return Real(1);
}

template <std::floating_point Real>
BasicVector<Real> activate(Activation kind, const BasicVector<Real>& x) {
  BasicVector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = activate(kind, x[i]);
  return y;
}

template <std::floating_point Real>
BasicVector<Real> derivative_from_output(Activation kind, const BasicVector<Real>& y) {
  BasicVector<Real> d(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = derivative_from_output(kind, y[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Seeded generator with a platform-independent draw sequence. The engine
/// is mt19937_64, whose output is fixed by the standard; the mappings to
/// reals and bounded integers are done here rather than through the
/// implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Glorot-uniform matrix in [-s, s], s = sqrt(6 / (rows + cols)).
/// Consumes exactly rows * cols draws, row-major.
Matrix init_matrix(Rng& rng, std::size_t rows, std::size_t cols);

/// Glorot-uniform vector, treated as a len x 1 matrix.
Vector init_vector(Rng& rng, std::size_t len);

double glorot_bound(std::size_t rows, std::size_t cols);

}  // namespace slim

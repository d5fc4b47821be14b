#include "slimlstm/numerics.hpp"

#include <limits>

namespace slim {

std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace detail {

void throw_length_mismatch(const char* op, std::size_t a, std::size_t b) {
  throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a) +
                              " vs " + std::to_string(b));
}

void throw_shape_mismatch(const char* op, std::size_t rows, std::size_t cols, std::size_t len) {
  throw std::invalid_argument(std::string(op) + ": matrix " + shape_string(rows, cols) +
                              " incompatible with vector of length " + std::to_string(len));
}

}  // namespace detail

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double glorot_bound(std::size_t rows, std::size_t cols) {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

Matrix init_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  const double s = glorot_bound(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(-s, s);
  return m;
}

Vector init_vector(Rng& rng, std::size_t len) {
  if (len == 0) throw std::invalid_argument("init_vector: length must be >= 1");
  Vector v(len);
  const double s = glorot_bound(len, 1);
  for (auto& x : v) x = rng.uniform(-s, s);
  return v;
}

}  // namespace slim

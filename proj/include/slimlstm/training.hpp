#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slimlstm/cells.hpp"
#include "slimlstm/data.hpp"
#include "slimlstm/numerics.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Model

/// Embedding -> recurrent cell (optionally bidirectional) -> affine readout
/// of the final hidden state.
template <std::floating_point Real>
struct BasicNetwork {
  BasicEmbeddingTable<Real> embedding;
  BasicCellParams<Real> cell;
  std::optional<BasicCellParams<Real>> cell_bwd;
  BasicOutputLayer<Real> readout;

  bool bidirectional() const { return cell_bwd.has_value(); }
};

using Network = BasicNetwork<double>;

struct NetworkShape {
  CellVariant variant = CellVariant::lstm;
  Activation act = Activation::sigmoid;
  std::size_t vocab_size = 5000;
  std::size_t embed_dim = 32;  // m
  std::size_t hidden = 100;    // n
  std::size_t out_dim = 1;
  double forget_const = kDefaultForget;
  bool bidirectional = false;
};

/// Draws embedding, forward cell, backward cell and readout, in that order.
Network make_network(const NetworkShape& shape, Rng& rng);

/// Throws if the pieces do not fit together.
void validate(const Network& net);

template <std::floating_point To, std::floating_point From>
BasicNetwork<To> convert_network(const BasicNetwork<From>& net) {
  BasicNetwork<To> out;
  out.embedding = {BasicMatrix<To>(net.embedding.E), net.embedding.trainable};
  out.cell = convert_params<To>(net.cell);
  if (net.cell_bwd) out.cell_bwd = convert_params<To>(*net.cell_bwd);
  out.readout = convert_output<To>(net.readout);
  return out;
}

/// Gradient of the loss w.r.t. every adaptive array. Shapes mirror the
/// network exactly; there is no entry for the forget constant. A frozen
/// embedding keeps an all-zero gradient.
struct GradientSet {
  Matrix embedding;
  CellParams cell;
  std::optional<CellParams> cell_bwd;
  OutputLayer readout;
};

GradientSet zeros_like(const Network& net);

/// Visits every adaptive tensor as fn("group.name", tensor), in a fixed
/// order shared by Network, its long double twin and GradientSet.
template <class Model, class Fn>
void for_each_model_tensor(Model& model, Fn&& fn) {
  auto prefixed = [&fn](std::string_view prefix) {
    return [&fn, prefix](std::string_view name, auto& t) {
      std::string full(prefix);
      full += name;
      fn(std::string_view(full), t);
    };
  };
  if constexpr (requires { model.embedding.E; }) {
    fn(std::string_view("emb.E"), model.embedding.E);
  } else {
    fn(std::string_view("emb.E"), model.embedding);
  }
  for_each_tensor(model.cell, prefixed("fwd."));
  if (model.cell_bwd) for_each_tensor(*model.cell_bwd, prefixed("bwd."));
  for_each_tensor_out(model.readout, prefixed("out."));
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { binary_cross_entropy, categorical_cross_entropy };

std::string_view to_string(LossKind kind);
/// Accepts "bce"/"cce" and the long names.
LossKind parse_loss(std::string_view name);

inline constexpr double kProbClamp = 1e-12;

struct LossValue {
  double loss = 0;
  Vector grad;  // dL / d(raw output)
};

/// binary: p = sigmoid(raw), loss = -[y ln p + (1-y) ln(1-p)], grad = p - y.
/// categorical: p = softmax(raw), loss = -sum y ln p, grad = p - y.
/// Probabilities inside the logarithms are clamped to [1e-12, 1 - 1e-12].
LossValue loss_eval(LossKind kind, const Vector& raw, const Vector& y_true);

/// One-hot (or scalar {0,1}) target for an integer label.
Vector target_vector(LossKind kind, int label, std::size_t out_dim);

/// Loss for an integer label, in any precision.
template <std::floating_point Real>
Real loss_for_label(LossKind kind, const BasicVector<Real>& raw, int label);

// ---------------------------------------------------------------------------
// Forward and gradients

/// Readout of one token sequence.
template <std::floating_point Real>
BasicVector<Real> network_forward(const BasicNetwork<Real>& net, std::span<const Token> tokens);

/// Mean loss over the batch. When min_kink is given, it receives the
/// smallest |pre-activation| seen at any relu input (infinity otherwise).
template <std::floating_point Real>
Real network_loss(const BasicNetwork<Real>& net, const SequenceBatch& batch, LossKind loss,
                  Real* min_kink = nullptr);

struct BatchGradient {
  double mean_loss = 0;
  GradientSet grads;
};

/// Exact gradients of the mean batch loss by back-propagation through time.
BatchGradient bptt_gradients(const Network& net, const SequenceBatch& batch, LossKind loss);

inline constexpr double kDefaultFdEpsilon = 1e-6;
inline constexpr double kKinkExclusion = 1e-4;

struct FiniteDifferenceResult {
  GradientSet grads;
  /// Flat mask in for_each_model_tensor order; set where a relu kink lies within
  /// kKinkExclusion of either perturbed evaluation.
  std::vector<char> excluded;
  std::size_t excluded_count = 0;
};

/// Central differences (L(t+eps) - L(t-eps)) / 2 eps for every scalar
/// parameter. Losses are evaluated in extended precision so the result is
/// limited by truncation error rather than roundoff. Cost is two forward
/// passes per parameter: tiny networks only.
FiniteDifferenceResult finite_difference_oracle(const Network& net, const SequenceBatch& batch,
                                                LossKind loss, double epsilon = kDefaultFdEpsilon);

/// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double a, double b);

struct GroupError {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

/// Max relative error per tensor ("fwd.W_c", ...), skipping excluded entries.
std::map<std::string, GroupError> compare_gradients(const GradientSet& analytic,
                                                    const FiniteDifferenceResult& numeric);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { adam, rmsprop, sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;   // adam m
  std::vector<std::vector<double>> second;  // adam v, rmsprop mean square
};

OptimizerState make_optimizer(OptimizerKind kind, double eta);

/// One update over paired parameter/gradient arrays. Moment buffers are
/// allocated on the first call and must keep their shapes afterwards.
void optimizer_step(OptimizerState& state, std::span<const std::span<double>> params,
                    std::span<const std::span<const double>> grads);

/// Updates every adaptive tensor of net. A frozen embedding is left as is,
/// and the padding row never moves.
void optimizer_step(OptimizerState& state, Network& net, const GradientSet& grads);

// ---------------------------------------------------------------------------
// Epochs

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_loss = 0;
  double test_acc = 0;
  double seconds = 0;  // forward + backward + update time of the epoch
};

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

/// Inference-mode mean loss and accuracy (binary: sigmoid > 0.5;
/// categorical: argmax).
Evaluation evaluate(const Network& net, const SequenceBatch& data, LossKind loss);

/// Shuffles the train split with rng, runs one optimizer step per
/// mini-batch, then evaluates both splits.
MetricsRecord train_epoch(Network& net, const Dataset& data, OptimizerState& opt, LossKind loss,
                          std::size_t batch_size, Rng& rng, std::size_t epoch);

}  // namespace slim

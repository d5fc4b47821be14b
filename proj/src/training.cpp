#include "slimlstm/training.hpp"

#include <chrono>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace slim {

// ---------------------------------------------------------------------------
// Model

Network make_network(const NetworkShape& shape, Rng& rng) {
  if (shape.out_dim == 0) throw std::invalid_argument("output dimension must be >= 1");
  Network net;
  net.embedding = make_embedding(shape.vocab_size, shape.embed_dim, rng);
  net.cell = make_random_params(shape.variant, shape.embed_dim, shape.hidden, rng, shape.act,
                                shape.forget_const);
  if (shape.bidirectional) {
    net.cell_bwd = make_random_params(shape.variant, shape.embed_dim, shape.hidden, rng, shape.act,
                                      shape.forget_const);
  }
  const std::size_t features = shape.bidirectional ? 2 * shape.hidden : shape.hidden;
  net.readout = make_output_layer(features, shape.out_dim, rng);
  return net;
}

void validate(const Network& net) {
  validate(net.cell);
  if (net.embedding.dim() != net.cell.m) {
    throw std::invalid_argument("embedding width " + std::to_string(net.embedding.dim()) +
                                " does not match cell input m=" + std::to_string(net.cell.m));
  }
  if (net.cell_bwd) {
    validate(*net.cell_bwd);
    check_bidirectional_pair(net.cell, *net.cell_bwd);
  }
  const std::size_t features = net.cell_bwd ? 2 * net.cell.n : net.cell.n;
  if (net.readout.W_hy.cols() != features || net.readout.W_hy.rows() != net.readout.b_y.size()) {
    throw std::invalid_argument("readout W_hy " +
                                shape_string(net.readout.W_hy.rows(), net.readout.W_hy.cols()) +
                                " does not fit " + std::to_string(features) + " features and " +
                                std::to_string(net.readout.b_y.size()) + " outputs");
  }
}

GradientSet zeros_like(const Network& net) {
  GradientSet g;
  g.embedding = Matrix(net.embedding.vocab_size(), net.embedding.dim());
  g.cell = zeros_like(net.cell);
  if (net.cell_bwd) g.cell_bwd = zeros_like(*net.cell_bwd);
  g.readout = {Matrix(net.readout.W_hy.rows(), net.readout.W_hy.cols()), Vector(net.readout.b_y.size())};
  return g;
}

// ---------------------------------------------------------------------------
// Losses

std::string_view to_string(LossKind kind) {
  return kind == LossKind::binary_cross_entropy ? "bce" : "cce";
}

LossKind parse_loss(std::string_view name) {
  if (name == "bce" || name == "binary_cross_entropy") return LossKind::binary_cross_entropy;
  if (name == "cce" || name == "categorical_cross_entropy") return LossKind::categorical_cross_entropy;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

namespace {

template <std::floating_point Real>
Real clamp_prob(Real p) {
  return std::clamp(p, Real(kProbClamp), Real(1) - Real(kProbClamp));
}

template <std::floating_point Real>
BasicVector<Real> softmax(const BasicVector<Real>& raw) {
  const Real top = *std::max_element(raw.begin(), raw.end());
  BasicVector<Real> p(raw.size());
  Real sum = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    p[i] = std::exp(raw[i] - top);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

void check_label(LossKind kind, int label, std::size_t out_dim) {
  if (kind == LossKind::binary_cross_entropy) {
    if (out_dim != 1) throw std::invalid_argument("binary cross-entropy needs a single output");
    if (label != 0 && label != 1) {
      throw std::invalid_argument("binary label must be 0 or 1, got " + std::to_string(label));
    }
  } else if (label < 0 || static_cast<std::size_t>(label) >= out_dim) {
    throw std::invalid_argument("class label " + std::to_string(label) + " outside " +
                                std::to_string(out_dim) + " classes");
  }
}

}  // namespace

Vector target_vector(LossKind kind, int label, std::size_t out_dim) {
  check_label(kind, label, out_dim);
  if (kind == LossKind::binary_cross_entropy) return Vector{static_cast<double>(label)};
  Vector y(out_dim);
  y[static_cast<std::size_t>(label)] = 1.0;
  return y;
}

LossValue loss_eval(LossKind kind, const Vector& raw, const Vector& y_true) {
  if (raw.size() != y_true.size()) {
    throw std::invalid_argument("loss: prediction length " + std::to_string(raw.size()) +
                                " vs target length " + std::to_string(y_true.size()));
  }
  LossValue out;
  if (kind == LossKind::binary_cross_entropy) {
    if (raw.size() != 1) throw std::invalid_argument("binary cross-entropy needs a single output");
    const double y = y_true[0];
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("binary target must be 0 or 1");
    const double p = sigmoid(raw[0]);
    const double pc = clamp_prob(p);
    out.loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    out.grad = Vector{p - y};
    return out;
  }
  std::size_t ones = 0;
  for (const double y : y_true) {
    if (y == 1.0) {
      ++ones;
    } else if (y != 0.0) {
      throw std::invalid_argument("categorical target must be one-hot");
    }
  }
  if (ones != 1) throw std::invalid_argument("categorical target must be one-hot");
  const Vector p = softmax(raw);
  out.grad = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y_true[i] == 1.0) out.loss = -std::log(clamp_prob(p[i]));
    out.grad[i] -= y_true[i];
  }
  return out;
}

template <std::floating_point Real>
Real loss_for_label(LossKind kind, const BasicVector<Real>& raw, int label) {
  check_label(kind, label, raw.size());
  if (kind == LossKind::binary_cross_entropy) {
    const Real p = clamp_prob(sigmoid(raw[0]));
    return label == 1 ? -std::log(p) : -std::log(Real(1) - p);
  }
  const auto p = softmax(raw);
  return -std::log(clamp_prob(p[static_cast<std::size_t>(label)]));
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <std::floating_point Real>
struct ForwardTrace {
  std::vector<BasicVector<Real>> xs;
  std::vector<BasicStepCache<Real>> fwd;
  std::vector<BasicStepCache<Real>> bwd;
  BasicVector<Real> features;
  BasicVector<Real> y;
};

template <std::floating_point Real>
ForwardTrace<Real> trace_forward(const BasicNetwork<Real>& net, std::span<const Token> tokens) {
  ForwardTrace<Real> tr;
  tr.xs = embed_lookup(net.embedding, tokens);
  tr.fwd = run_cell(net.cell, tr.xs);
  if (net.cell_bwd) {
    const std::vector<BasicVector<Real>> reversed(tr.xs.rbegin(), tr.xs.rend());
    tr.bwd = run_cell(*net.cell_bwd, reversed);
    const std::size_t n = net.cell.n;
    tr.features = BasicVector<Real>(2 * n);
    std::copy(tr.fwd.back().h.begin(), tr.fwd.back().h.end(), tr.features.begin());
    std::copy(tr.bwd.back().h.begin(), tr.bwd.back().h.end(),
              tr.features.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    tr.features = tr.fwd.back().h;
  }
  tr.y = output_layer_apply(net.readout, tr.features);
  return tr;
}

template <std::floating_point Real>
void track_kinks(const BasicCellParams<Real>& p, const std::vector<BasicStepCache<Real>>& caches,
                 Real& min_kink) {
  if (p.act != Activation::relu) return;
  for (const auto& s : caches) {
    for (const Real v : s.pre) min_kink = std::min(min_kink, std::abs(v));
    // c == 0 exactly only arises when every contribution sits on the flat
    // side of relu, so the loss is locally constant in c there.
    for (const Real v : s.c) {
      if (v != 0) min_kink = std::min(min_kink, std::abs(v));
    }
  }
}

}  // namespace

template <std::floating_point Real>
BasicVector<Real> network_forward(const BasicNetwork<Real>& net, std::span<const Token> tokens) {
  return trace_forward(net, tokens).y;
}

template <std::floating_point Real>
Real network_loss(const BasicNetwork<Real>& net, const SequenceBatch& batch, LossKind loss,
                  Real* min_kink) {
  if (batch.empty()) throw std::invalid_argument("network_loss: empty batch");
  Real total = 0;
  Real kink = std::numeric_limits<Real>::infinity();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto tr = trace_forward(net, batch.row(b));
    total += loss_for_label(loss, tr.y, batch.labels[b]);
    if (min_kink) {
      track_kinks(net.cell, tr.fwd, kink);
      if (net.cell_bwd) track_kinks(*net.cell_bwd, tr.bwd, kink);
    }
  }
  if (min_kink) *min_kink = kink;
  return total / static_cast<Real>(batch.size());
}

template BasicVector<double> network_forward(const BasicNetwork<double>&, std::span<const Token>);
template BasicVector<long double> network_forward(const BasicNetwork<long double>&,
                                                  std::span<const Token>);
template double network_loss(const BasicNetwork<double>&, const SequenceBatch&, LossKind, double*);
template long double network_loss(const BasicNetwork<long double>&, const SequenceBatch&, LossKind,
                                  long double*);
template double loss_for_label(LossKind, const BasicVector<double>&, int);
template long double loss_for_label(LossKind, const BasicVector<long double>&, int);

// ---------------------------------------------------------------------------
// Gradients

BatchGradient bptt_gradients(const Network& net, const SequenceBatch& batch, LossKind loss) {
  if (batch.empty()) throw std::invalid_argument("bptt_gradients: empty batch");
  validate(net);
  batch.validate(net.embedding.vocab_size());

  BatchGradient out;
  out.grads = zeros_like(net);
  GradientSet& g = out.grads;
  const std::size_t n = net.cell.n;
  const std::size_t T = batch.T;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto tokens = batch.row(b);
    const auto tr = trace_forward(net, tokens);
    const LossValue lv = loss_eval(loss, tr.y, target_vector(loss, batch.labels[b], tr.y.size()));
    out.mean_loss += lv.loss;

    add_outer(g.readout.W_hy, lv.grad, tr.features);
    g.readout.b_y += lv.grad;
    Vector dfeat(tr.features.size());
    matvec_transposed_accumulate(net.readout.W_hy, lv.grad, dfeat);

    Vector dh_fwd(n);
    std::copy(dfeat.begin(), dfeat.begin() + static_cast<std::ptrdiff_t>(n), dh_fwd.begin());
    std::vector<Vector> dxs = sequence_backward(net.cell, tr.fwd, dh_fwd, g.cell);

    if (net.cell_bwd) {
      Vector dh_bwd(n);
      std::copy(dfeat.begin() + static_cast<std::ptrdiff_t>(n), dfeat.end(), dh_bwd.begin());
      const std::vector<Vector> dxs_rev = sequence_backward(*net.cell_bwd, tr.bwd, dh_bwd, *g.cell_bwd);
      for (std::size_t t = 0; t < T; ++t) dxs[T - 1 - t] += dxs_rev[t];
    }
    if (net.embedding.trainable) embedding_scatter_add(g.embedding, tokens, dxs);
  }

  const double scale = 1.0 / static_cast<double>(batch.size());
  out.mean_loss *= scale;
  for_each_model_tensor(g, [scale](std::string_view, auto& t) {
    for (auto& v : t.values()) v *= scale;
  });
  return out;
}

FiniteDifferenceResult finite_difference_oracle(const Network& net, const SequenceBatch& batch,
                                                LossKind loss, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("finite difference epsilon must be positive");
  validate(net);
  batch.validate(net.embedding.vocab_size());

  using Ext = long double;
  BasicNetwork<Ext> probe = convert_network<Ext>(net);
  const Ext eps = static_cast<Ext>(epsilon);
  const bool relu = net.cell.act == Activation::relu;

  std::vector<double> flat;
  std::vector<char> excluded;

  // Visiting probe while perturbing it in place is safe: the visitor only
  // hands out references, and every forward pass reads the whole network.
  for_each_model_tensor(probe, [&](std::string_view name, auto& t) {
    const bool is_embedding = name == "emb.E";
    auto values = t.values();
    const std::size_t width = is_embedding ? probe.embedding.dim() : 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (is_embedding && (!probe.embedding.trainable || k < width)) {
        flat.push_back(0.0);  // frozen table or padding row
        excluded.push_back(0);
        continue;
      }
      const Ext saved = values[k];
      Ext kink_plus = 0, kink_minus = 0;
      values[k] = saved + eps;
      const Ext up = network_loss(probe, batch, loss, relu ? &kink_plus : nullptr);
      values[k] = saved - eps;
      const Ext down = network_loss(probe, batch, loss, relu ? &kink_minus : nullptr);
      values[k] = saved;
      flat.push_back(static_cast<double>((up - down) / (2 * eps)));
      excluded.push_back(relu && std::min(kink_plus, kink_minus) < Ext(kKinkExclusion) ? 1 : 0);
    }
  });

  FiniteDifferenceResult out;
  out.grads = zeros_like(net);
  std::size_t pos = 0;
  for_each_model_tensor(out.grads, [&](std::string_view, auto& t) {
    for (auto& v : t.values()) v = flat[pos++];
  });
  out.excluded = std::move(excluded);
  out.excluded_count = static_cast<std::size_t>(std::count(out.excluded.begin(), out.excluded.end(), 1));
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

std::map<std::string, GroupError> compare_gradients(const GradientSet& analytic,
                                                    const FiniteDifferenceResult& numeric) {
  std::vector<std::pair<std::string, std::span<const double>>> lhs, rhs;
  for_each_model_tensor(analytic, [&](std::string_view name, const auto& t) {
    lhs.emplace_back(std::string(name), t.values());
  });
  for_each_model_tensor(numeric.grads, [&](std::string_view name, const auto& t) {
    rhs.emplace_back(std::string(name), t.values());
  });
  if (lhs.size() != rhs.size()) throw std::invalid_argument("gradient sets have different layouts");

  std::map<std::string, GroupError> report;
  std::size_t flat = 0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i].first != rhs[i].first || lhs[i].second.size() != rhs[i].second.size()) {
      throw std::invalid_argument("gradient sets disagree at tensor " + lhs[i].first);
    }
    GroupError& ge = report[lhs[i].first];
    for (std::size_t k = 0; k < lhs[i].second.size(); ++k, ++flat) {
      if (flat < numeric.excluded.size() && numeric.excluded[flat]) {
        ++ge.excluded;
        continue;
      }
      ge.max_rel_error = std::max(ge.max_rel_error, relative_error(lhs[i].second[k], rhs[i].second[k]));
      ++ge.checked;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Optimizers

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::adam:
      return "adam";
    case OptimizerKind::rmsprop:
      return "rmsprop";
    case OptimizerKind::sgd:
      return "sgd";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

OptimizerState make_optimizer(OptimizerKind kind, double eta) {
  OptimizerState s;
  s.kind = kind;
  s.eta = eta;
  return s;
}

void optimizer_step(OptimizerState& state, std::span<const std::span<double>> params,
                    std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer: " + std::to_string(params.size()) + " parameter arrays vs " +
                                std::to_string(grads.size()) + " gradient arrays");
  }
  for (std::size_t a = 0; a < params.size(); ++a) {
    if (params[a].size() != grads[a].size()) {
      throw std::invalid_argument("optimizer: array " + std::to_string(a) + " has " +
                                  std::to_string(params[a].size()) + " parameters but " +
                                  std::to_string(grads[a].size()) + " gradients");
    }
  }
  if (state.step == 0) {
    state.first.clear();
    state.second.clear();
    for (const auto& p : params) {
      state.first.emplace_back(state.kind == OptimizerKind::adam ? p.size() : 0, 0.0);
      state.second.emplace_back(state.kind == OptimizerKind::sgd ? 0 : p.size(), 0.0);
    }
  } else if (state.second.size() != params.size()) {
    throw std::invalid_argument("optimizer: parameter layout changed between steps");
  }
  ++state.step;

  const double eta = state.eta;
  const double eps = state.epsilon;
  switch (state.kind) {
    case OptimizerKind::sgd:
      for (std::size_t a = 0; a < params.size(); ++a) {
        for (std::size_t k = 0; k < params[a].size(); ++k) params[a][k] -= eta * grads[a][k];
      }
      break;
    case OptimizerKind::rmsprop: {
      const double rho = state.rho;
      for (std::size_t a = 0; a < params.size(); ++a) {
        auto& v = state.second[a];
        if (v.size() != params[a].size()) throw std::invalid_argument("optimizer: shape changed");
        for (std::size_t k = 0; k < v.size(); ++k) {
          const double g = grads[a][k];
          v[k] = rho * v[k] + (1.0 - rho) * g * g;
          params[a][k] -= eta * g / (std::sqrt(v[k]) + eps);
        }
      }
      break;
    }
    case OptimizerKind::adam: {
      const double b1 = state.beta1, b2 = state.beta2;
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(b1, t);
      const double c2 = 1.0 - std::pow(b2, t);
      for (std::size_t a = 0; a < params.size(); ++a) {
        auto& m = state.first[a];
        auto& v = state.second[a];
        if (v.size() != params[a].size()) throw std::invalid_argument("optimizer: shape changed");
        for (std::size_t k = 0; k < v.size(); ++k) {
          const double g = grads[a][k];
          m[k] = b1 * m[k] + (1.0 - b1) * g;
          v[k] = b2 * v[k] + (1.0 - b2) * g * g;
          const double m_hat = m[k] / c1;
          const double v_hat = v[k] / c2;
          params[a][k] -= eta * m_hat / (std::sqrt(v_hat) + eps);
        }
      }
      break;
    }
  }
}

void optimizer_step(OptimizerState& state, Network& net, const GradientSet& grads) {
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> gs;
  const bool frozen = !net.embedding.trainable;
  for_each_model_tensor(net, [&](std::string_view name, auto& t) {
    if (frozen && name == "emb.E") return;
    params.push_back(t.values());
  });
  for_each_model_tensor(grads, [&](std::string_view name, const auto& t) {
    if (frozen && name == "emb.E") return;
    gs.push_back(t.values());
  });
  optimizer_step(state, std::span<const std::span<double>>(params), std::span<const std::span<const double>>(gs));
}

// ---------------------------------------------------------------------------
// Epochs

Evaluation evaluate(const Network& net, const SequenceBatch& data, LossKind loss) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty split");
  Evaluation ev;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); ++b) {
    const Vector y = network_forward(net, data.row(b));
    const int label = data.labels[b];
    ev.loss += loss_for_label(loss, y, label);
    int predicted;
    if (loss == LossKind::binary_cross_entropy) {
      predicted = sigmoid(y[0]) > 0.5 ? 1 : 0;
    } else {
      predicted = static_cast<int>(std::max_element(y.begin(), y.end()) - y.begin());
    }
    if (predicted == label) ++correct;
  }
  ev.loss /= static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return ev;
}

MetricsRecord train_epoch(Network& net, const Dataset& data, OptimizerState& opt, LossKind loss,
                          std::size_t batch_size, Rng& rng, std::size_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (data.train.empty()) throw std::invalid_argument("train split is empty");
  if (data.test.empty()) throw std::invalid_argument("test split is empty");

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  using Clock = std::chrono::steady_clock;
  Clock::duration busy{};
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    const SequenceBatch batch =
        data.train.select(std::span<const std::size_t>(order.data() + start, stop - start));
    const auto t0 = Clock::now();
    const BatchGradient bg = bptt_gradients(net, batch, loss);
    optimizer_step(opt, net, bg.grads);
    busy += Clock::now() - t0;
  }

  MetricsRecord rec;
  rec.epoch = epoch;
  const Evaluation tr = evaluate(net, data.train, loss);
  const Evaluation te = evaluate(net, data.test, loss);
  rec.train_loss = tr.loss;
  rec.train_acc = tr.accuracy;
  rec.test_loss = te.loss;
  rec.test_acc = te.accuracy;
  rec.seconds = std::chrono::duration<double>(busy).count();
  return rec;
}

}  // namespace slim

#pragma once

// Recurrent cell variants: the simple RNN, the standard LSTM, and the two
// slim variants with constant gates.
//
//   lstm     i,f,o = sigmoid(W x + U h + b)   c~ = act(W_c x + U_c h + b_c)
//            c = f*c_prev + i*c~              h  = o * act(c)
//   lstm6    c = f*c_prev + act(W_c x + U_c h_prev + b_c),  h = act(c)
//   lstm_c6  c = f*c_prev + act(W_c x + u_c*h_prev + b_c),  h = act(c)
//   srnn     h = act(W_hx x + W_hh h_prev + b_h)
//
// f is a fixed scalar in (-1, 1) for the slim variants; their input and
// output gates are exactly 1.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "slimlstm/numerics.hpp"

namespace slim {

enum class CellVariant { srnn, lstm, lstm6, lstm_c6 };

std::string_view to_string(CellVariant v);
CellVariant parse_variant(std::string_view name);

inline constexpr double kDefaultForget = 0.59;

template <std::floating_point Real>
struct BasicCellParams {
  CellVariant variant = CellVariant::lstm;
  std::size_t m = 0;  // input dimension
  std::size_t n = 0;  // hidden dimension
  Activation act = Activation::sigmoid;
  double forget_const = kDefaultForget;  // slim variants only; not adaptive

  // Absent tensors are empty. srnn stores W_hx, W_hh, b_h in the *_c slots.
  BasicMatrix<Real> W_i, W_f, W_o, W_c;
  BasicMatrix<Real> U_i, U_f, U_o, U_c;
  BasicVector<Real> u_c;
  BasicVector<Real> b_i, b_f, b_o, b_c;

  bool is_slim() const { return variant == CellVariant::lstm6 || variant == CellVariant::lstm_c6; }
};

using CellParams = BasicCellParams<double>;

/// All-zero parameters with the shapes required by the variant.
/// Throws when m or n is zero, or when a slim variant gets |f| >= 1.
CellParams make_zero_params(CellVariant variant, std::size_t m, std::size_t n,
                            Activation act = Activation::sigmoid,
                            double forget_const = kDefaultForget);

/// Glorot-uniform weights (and u_c), zero biases.
CellParams make_random_params(CellVariant variant, std::size_t m, std::size_t n, Rng& rng,
                              Activation act = Activation::sigmoid,
                              double forget_const = kDefaultForget);

/// Checks every shape against (variant, m, n) and the forget-constant range.
void validate(const CellParams& p);

/// Visits every stored tensor in a fixed order as fn(name, tensor), where
/// tensor is a BasicMatrix or BasicVector. Works on const and mutable params.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  const bool srnn = p.variant == CellVariant::srnn;
  auto visit = [&](std::string_view name, auto& t) {
    if (!t.empty()) fn(name, t);
  };
  visit("W_i", p.W_i);
  visit("W_f", p.W_f);
  visit("W_o", p.W_o);
  visit(srnn ? "W_hx" : "W_c", p.W_c);
  visit("U_i", p.U_i);
  visit("U_f", p.U_f);
  visit("U_o", p.U_o);
  visit(srnn ? "W_hh" : "U_c", p.U_c);
  visit("u_c", p.u_c);
  visit("b_i", p.b_i);
  visit("b_f", p.b_f);
  visit("b_o", p.b_o);
  visit(srnn ? "b_h" : "b_c", p.b_c);
}

/// Same structure, every value converted to another scalar type.
template <std::floating_point To, std::floating_point From>
BasicCellParams<To> convert_params(const BasicCellParams<From>& p) {
  BasicCellParams<To> q;
  q.variant = p.variant;
  q.m = p.m;
  q.n = p.n;
  q.act = p.act;
  q.forget_const = p.forget_const;
  auto cm = [](const BasicMatrix<From>& a) { return a.empty() ? BasicMatrix<To>{} : BasicMatrix<To>(a); };
  auto cv = [](const BasicVector<From>& a) { return BasicVector<To>(a); };
  q.W_i = cm(p.W_i), q.W_f = cm(p.W_f), q.W_o = cm(p.W_o), q.W_c = cm(p.W_c);
  q.U_i = cm(p.U_i), q.U_f = cm(p.U_f), q.U_o = cm(p.U_o), q.U_c = cm(p.U_c);
  q.u_c = cv(p.u_c);
  q.b_i = cv(p.b_i), q.b_f = cv(p.b_f), q.b_o = cv(p.b_o), q.b_c = cv(p.b_c);
  return q;
}

/// Same shapes, all zeros. Used as a gradient accumulator.
CellParams zeros_like(const CellParams& p);

/// Number of real values actually stored in p.
std::size_t adaptive_count(const CellParams& p);

/// Forward intermediates of one timestep, kept for the backward pass.
/// For the slim variants the constant gates are recorded (i = o = 1, f = f).
/// For srnn only x, h_prev and h are filled.
template <std::floating_point Real>
struct BasicStepCache {
  BasicVector<Real> x, h_prev, c_prev;
  BasicVector<Real> i, f, o;
  BasicVector<Real> pre;  // candidate (srnn: hidden) pre-activation
  BasicVector<Real> c_tilde;
  BasicVector<Real> c;
  BasicVector<Real> c_act;  // act(c)
  BasicVector<Real> h;
};

using StepCache = BasicStepCache<double>;

/// Optional constant overrides for the standard LSTM gates. A pinned gate
/// skips its sigmoid and takes the constant instead.
struct GatePins {
  std::optional<double> input;
  std::optional<double> forget;
  std::optional<double> output;
};

template <std::floating_point Real>
BasicStepCache<Real> srnn_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev);

template <std::floating_point Real>
BasicStepCache<Real> lstm_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev);

/// Test hook: lstm_step with some gates pinned to constants. The forget pin
/// must lie in (-1, 1]; input/output pins must be exactly 1.
template <std::floating_point Real>
BasicStepCache<Real> gate_override_step(const BasicCellParams<Real>& p, const GatePins& pins,
                                        const BasicVector<Real>& x, const BasicVector<Real>& h_prev,
                                        const BasicVector<Real>& c_prev);

template <std::floating_point Real>
BasicStepCache<Real> lstm6_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                                const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev);

template <std::floating_point Real>
BasicStepCache<Real> lstmc6_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                                 const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev);

/// Dispatches on p.variant. c_prev is ignored by srnn.
template <std::floating_point Real>
BasicStepCache<Real> cell_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev);

// ---------------------------------------------------------------------------
// Output layer

template <std::floating_point Real>
struct BasicOutputLayer {
  BasicMatrix<Real> W_hy;  // out x n
  BasicVector<Real> b_y;   // out

  std::size_t out_dim() const { return b_y.size(); }
  std::size_t in_dim() const { return W_hy.cols(); }
};

using OutputLayer = BasicOutputLayer<double>;

OutputLayer make_output_layer(std::size_t in_dim, std::size_t out_dim, Rng& rng);

template <class Layer, class Fn>
void for_each_tensor_out(Layer& o, Fn&& fn) {
  fn(std::string_view("W_hy"), o.W_hy);
  fn(std::string_view("b_y"), o.b_y);
}

template <std::floating_point To, std::floating_point From>
BasicOutputLayer<To> convert_output(const BasicOutputLayer<From>& o) {
  return {BasicMatrix<To>(o.W_hy), BasicVector<To>(o.b_y)};
}

/// y = W_hy h + b_y (no squashing; the loss applies sigmoid/softmax).
template <std::floating_point Real>
BasicVector<Real> output_layer_apply(const BasicOutputLayer<Real>& o, const BasicVector<Real>& h);

// ---------------------------------------------------------------------------
// Sequences

template <std::floating_point Real>
struct BasicSequenceRun {
  BasicVector<Real> y;                       // readout of the final hidden state
  std::vector<BasicStepCache<Real>> caches;  // one per timestep
};

using SequenceRun = BasicSequenceRun<double>;

/// Runs the cell over xs (t = 1..T) and returns the readout of h_T.
template <std::floating_point Real>
BasicSequenceRun<Real> run_sequence(const BasicCellParams<Real>& p,
                                    const BasicOutputLayer<Real>& out,
                                    const std::vector<BasicVector<Real>>& xs,
                                    const BasicVector<Real>& h0, const BasicVector<Real>& c0);

/// Runs the cell only, from zero state. Returns the per-step caches.
template <std::floating_point Real>
std::vector<BasicStepCache<Real>> run_cell(const BasicCellParams<Real>& p,
                                           const std::vector<BasicVector<Real>>& xs);

/// [h_fwd_T ; h_bwd_T], the backward cell reading xs in reverse.
template <std::floating_point Real>
BasicVector<Real> bidirectional_run(const BasicCellParams<Real>& p_fwd,
                                    const BasicCellParams<Real>& p_bwd,
                                    const std::vector<BasicVector<Real>>& xs);

/// Throws unless both cells share variant and dimensions.
void check_bidirectional_pair(const CellParams& fwd, const CellParams& bwd);

// ---------------------------------------------------------------------------
// Backward pass (64-bit only)

struct StepGradient {
  Vector dh_prev;
  Vector dc_prev;  // empty for srnn
  Vector dx;
};

/// Back-propagates one step. dh and dc are the total loss gradients w.r.t.
/// h_t and c_t arriving from above (dc is ignored for srnn). Parameter
/// gradients are accumulated into grads, which must be shaped like p.
StepGradient cell_step_backward(const CellParams& p, const StepCache& cache, const Vector& dh,
                                const Vector& dc, CellParams& grads);

/// Reverse recurrence over a whole sequence given dL/dh_T. Returns dL/dx_t
/// for every timestep and accumulates parameter gradients into grads.
std::vector<Vector> sequence_backward(const CellParams& p, const std::vector<StepCache>& caches,
                                      const Vector& dh_last, CellParams& grads);

// ---------------------------------------------------------------------------
// Accounting

/// Adaptive parameter count: lstm 4n(m+n+1), lstm6 and srnn n(m+n+1),
/// lstm_c6 n(m+2); doubled for a bidirectional layer.
std::uint64_t param_count(CellVariant variant, std::uint64_t m, std::uint64_t n,
                          bool bidirectional);

/// Multiply-accumulates in one forward step's matrix and vector products.
std::uint64_t step_mac_count(CellVariant variant, std::uint64_t m, std::uint64_t n);

}  // namespace slim

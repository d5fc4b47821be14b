#include "slimlstm/cells.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace slim {

std::string_view to_string(CellVariant v) {
  switch (v) {
    case CellVariant::srnn:
      return "srnn";
    case CellVariant::lstm:
      return "lstm";
    case CellVariant::lstm6:
      return "lstm6";
    case CellVariant::lstm_c6:
      return "lstm_c6";
  }
  return "?";
}

CellVariant parse_variant(std::string_view name) {
  if (name == "srnn") return CellVariant::srnn;
  if (name == "lstm") return CellVariant::lstm;
  if (name == "lstm6") return CellVariant::lstm6;
  if (name == "lstm_c6") return CellVariant::lstm_c6;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

namespace {

void check_forget(CellVariant variant, double f) {
  if ((variant == CellVariant::lstm6 || variant == CellVariant::lstm_c6) && !(f > -1.0 && f < 1.0)) {
    throw std::invalid_argument("forget constant must satisfy -1 < f < 1, got " + std::to_string(f));
  }
}

// Builds the tensor layout for a variant; gen(rows, cols) makes a weight
// matrix, vec(len) the u_c vector. Biases are always zero.
template <class MatGen, class VecGen>
CellParams build_params(CellVariant variant, std::size_t m, std::size_t n, Activation act,
                        double forget_const, MatGen gen, VecGen vec) {
  if (m == 0 || n == 0) {
    throw std::invalid_argument("cell dimensions must be >= 1, got m=" + std::to_string(m) +
                                " n=" + std::to_string(n));
  }
  check_forget(variant, forget_const);
  CellParams p;
  p.variant = variant;
  p.m = m;
  p.n = n;
  p.act = act;
  p.forget_const = forget_const;
  switch (variant) {
    case CellVariant::lstm:
      p.W_i = gen(n, m);
      p.W_f = gen(n, m);
      p.W_o = gen(n, m);
      p.W_c = gen(n, m);
      p.U_i = gen(n, n);
      p.U_f = gen(n, n);
      p.U_o = gen(n, n);
      p.U_c = gen(n, n);
      p.b_i = Vector(n);
      p.b_f = Vector(n);
      p.b_o = Vector(n);
      p.b_c = Vector(n);
      break;
    case CellVariant::srnn:
    case CellVariant::lstm6:
      p.W_c = gen(n, m);
      p.U_c = gen(n, n);
      p.b_c = Vector(n);
      break;
    case CellVariant::lstm_c6:
      p.W_c = gen(n, m);
      p.u_c = vec(n);
      p.b_c = Vector(n);
      break;
  }
  return p;
}

void expect_matrix(const Matrix& a, std::size_t rows, std::size_t cols, const char* name) {
  if (a.rows() != rows || a.cols() != cols) {
    throw std::invalid_argument(std::string("parameter ") + name + " has shape " +
                                shape_string(a.rows(), a.cols()) + ", expected " +
                                shape_string(rows, cols));
  }
}

void expect_vector(const Vector& v, std::size_t len, const char* name) {
  if (v.size() != len) {
    throw std::invalid_argument(std::string("parameter ") + name + " has length " +
                                std::to_string(v.size()) + ", expected " + std::to_string(len));
  }
}

template <std::floating_point Real>
void check_step_inputs(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                       const BasicVector<Real>& h_prev, const BasicVector<Real>* c_prev) {
  if (x.size() != p.m) {
    throw std::invalid_argument("input x_t has length " + std::to_string(x.size()) +
                                ", cell expects m=" + std::to_string(p.m));
  }
  if (h_prev.size() != p.n) {
    throw std::invalid_argument("h_prev has length " + std::to_string(h_prev.size()) +
                                ", cell expects n=" + std::to_string(p.n));
  }
  if (c_prev && c_prev->size() != p.n) {
    throw std::invalid_argument("c_prev has length " + std::to_string(c_prev->size()) +
                                ", cell expects n=" + std::to_string(p.n));
  }
}

template <std::floating_point Real>
void require_variant(const BasicCellParams<Real>& p, CellVariant v, const char* op) {
  if (p.variant != v) {
    throw std::invalid_argument(std::string(op) + " called with " + std::string(to_string(p.variant)) +
                                " parameters");
  }
}

// W x + U h + b
template <std::floating_point Real>
BasicVector<Real> affine(const BasicMatrix<Real>& w, const BasicVector<Real>& x,
                         const BasicMatrix<Real>& u, const BasicVector<Real>& h,
                         const BasicVector<Real>& b) {
  BasicVector<Real> a = matvec(w, x);
  matvec_accumulate(u, h, a);
  a += b;
  return a;
}

template <std::floating_point Real>
BasicVector<Real> sigmoid_vec(BasicVector<Real> a) {
  for (auto& v : a) v = sigmoid(v);
  return a;
}

template <std::floating_point Real>
void slim_finish(const BasicCellParams<Real>& p, BasicStepCache<Real>& s, BasicVector<Real> pre) {
  const std::size_t n = p.n;
  const Real f = static_cast<Real>(p.forget_const);
  s.i = BasicVector<Real>(n, Real(1));
  s.f = BasicVector<Real>(n, f);
  s.o = BasicVector<Real>(n, Real(1));
  s.c_tilde = activate(p.act, pre);
  s.pre = std::move(pre);
  s.c = BasicVector<Real>(n);
  for (std::size_t k = 0; k < n; ++k) s.c[k] = f * s.c_prev[k] + s.c_tilde[k];
  s.c_act = activate(p.act, s.c);
  s.h = s.c_act;
}

}  // namespace

CellParams make_zero_params(CellVariant variant, std::size_t m, std::size_t n, Activation act,
                            double forget_const) {
  return build_params(
      variant, m, n, act, forget_const, [](std::size_t r, std::size_t c) { return Matrix(r, c); },
      [](std::size_t len) { return Vector(len); });
}

CellParams make_random_params(CellVariant variant, std::size_t m, std::size_t n, Rng& rng,
                              Activation act, double forget_const) {
  return build_params(
      variant, m, n, act, forget_const,
      [&rng](std::size_t r, std::size_t c) { return init_matrix(rng, r, c); },
      [&rng](std::size_t len) { return init_vector(rng, len); });
}

void validate(const CellParams& p) {
  if (p.m == 0 || p.n == 0) throw std::invalid_argument("cell dimensions must be >= 1");
  check_forget(p.variant, p.forget_const);
  const CellParams ref = make_zero_params(p.variant, p.m, p.n, p.act,
                                          p.is_slim() ? p.forget_const : kDefaultForget);
  auto m = [](const Matrix& a, const Matrix& b, const char* name) {
    expect_matrix(a, b.rows(), b.cols(), name);
  };
  auto v = [](const Vector& a, const Vector& b, const char* name) { expect_vector(a, b.size(), name); };
  m(p.W_i, ref.W_i, "W_i");
  m(p.W_f, ref.W_f, "W_f");
  m(p.W_o, ref.W_o, "W_o");
  m(p.W_c, ref.W_c, "W_c");
  m(p.U_i, ref.U_i, "U_i");
  m(p.U_f, ref.U_f, "U_f");
  m(p.U_o, ref.U_o, "U_o");
  m(p.U_c, ref.U_c, "U_c");
  v(p.u_c, ref.u_c, "u_c");
  v(p.b_i, ref.b_i, "b_i");
  v(p.b_f, ref.b_f, "b_f");
  v(p.b_o, ref.b_o, "b_o");
  v(p.b_c, ref.b_c, "b_c");
}

CellParams zeros_like(const CellParams& p) {
  CellParams z = p;
  for_each_tensor(z, [](std::string_view, auto& t) { t.fill(0.0); });
  return z;
}

std::size_t adaptive_count(const CellParams& p) {
  std::size_t total = 0;
  for_each_tensor(p, [&total](std::string_view, const auto& t) { total += t.size(); });
  return total;
}

// ---------------------------------------------------------------------------
// Forward steps

template <std::floating_point Real>
BasicStepCache<Real> srnn_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev) {
  require_variant(p, CellVariant::srnn, "srnn_step");
  check_step_inputs(p, x, h_prev, static_cast<const BasicVector<Real>*>(nullptr));
  BasicStepCache<Real> s;
  s.x = x;
  s.h_prev = h_prev;
  s.pre = affine(p.W_c, x, p.U_c, h_prev, p.b_c);
  s.h = activate(p.act, s.pre);
  return s;
}

template <std::floating_point Real>
BasicStepCache<Real> gate_override_step(const BasicCellParams<Real>& p, const GatePins& pins,
                                        const BasicVector<Real>& x, const BasicVector<Real>& h_prev,
                                        const BasicVector<Real>& c_prev) {
  require_variant(p, CellVariant::lstm, "lstm_step");
  check_step_inputs(p, x, h_prev, &c_prev);
  if (pins.input && *pins.input != 1.0) throw std::invalid_argument("input gate pin must be exactly 1");
  if (pins.output && *pins.output != 1.0) throw std::invalid_argument("output gate pin must be exactly 1");
  if (pins.forget && !(*pins.forget > -1.0 && *pins.forget <= 1.0)) {
    throw std::invalid_argument("forget gate pin must lie in (-1, 1]");
  }
  const std::size_t n = p.n;
  auto gate = [&](const std::optional<double>& pin, const BasicMatrix<Real>& w,
                  const BasicMatrix<Real>& u, const BasicVector<Real>& b) {
    if (pin) return BasicVector<Real>(n, static_cast<Real>(*pin));
    return sigmoid_vec(affine(w, x, u, h_prev, b));
  };
  BasicStepCache<Real> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.i = gate(pins.input, p.W_i, p.U_i, p.b_i);
  s.f = gate(pins.forget, p.W_f, p.U_f, p.b_f);
  s.o = gate(pins.output, p.W_o, p.U_o, p.b_o);
  s.pre = affine(p.W_c, x, p.U_c, h_prev, p.b_c);
  s.c_tilde = activate(p.act, s.pre);
  s.c = BasicVector<Real>(n);
  for (std::size_t k = 0; k < n; ++k) s.c[k] = s.f[k] * c_prev[k] + s.i[k] * s.c_tilde[k];
  s.c_act = activate(p.act, s.c);
  s.h = hadamard(s.o, s.c_act);
  return s;
}

template <std::floating_point Real>
BasicStepCache<Real> lstm_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev) {
  return gate_override_step(p, GatePins{}, x, h_prev, c_prev);
}

template <std::floating_point Real>
BasicStepCache<Real> lstm6_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                                const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev) {
  require_variant(p, CellVariant::lstm6, "lstm6_step");
  check_step_inputs(p, x, h_prev, &c_prev);
  BasicStepCache<Real> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  slim_finish(p, s, affine(p.W_c, x, p.U_c, h_prev, p.b_c));
  return s;
}

template <std::floating_point Real>
BasicStepCache<Real> lstmc6_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                                 const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev) {
  require_variant(p, CellVariant::lstm_c6, "lstmc6_step");
  check_step_inputs(p, x, h_prev, &c_prev);
  BasicStepCache<Real> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  BasicVector<Real> pre = matvec(p.W_c, x);
  for (std::size_t k = 0; k < p.n; ++k) pre[k] += p.u_c[k] * h_prev[k] + p.b_c[k];
  slim_finish(p, s, std::move(pre));
  return s;
}

template <std::floating_point Real>
BasicStepCache<Real> cell_step(const BasicCellParams<Real>& p, const BasicVector<Real>& x,
                               const BasicVector<Real>& h_prev, const BasicVector<Real>& c_prev) {
  switch (p.variant) {
    case CellVariant::srnn:
      return srnn_step(p, x, h_prev);
    case CellVariant::lstm:
      return lstm_step(p, x, h_prev, c_prev);
    case CellVariant::lstm6:
      return lstm6_step(p, x, h_prev, c_prev);
    case CellVariant::lstm_c6:
      return lstmc6_step(p, x, h_prev, c_prev);
  }
  throw std::logic_error("unhandled cell variant");
}

// ---------------------------------------------------------------------------
// Output layer and sequences

OutputLayer make_output_layer(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  return {init_matrix(rng, out_dim, in_dim), Vector(out_dim)};
}

template <std::floating_point Real>
BasicVector<Real> output_layer_apply(const BasicOutputLayer<Real>& o, const BasicVector<Real>& h) {
  if (o.W_hy.cols() != h.size()) {
    throw std::invalid_argument("output layer expects hidden length " + std::to_string(o.W_hy.cols()) +
                                ", got " + std::to_string(h.size()));
  }
  BasicVector<Real> y = matvec(o.W_hy, h);
  y += o.b_y;
  return y;
}

template <std::floating_point Real>
BasicSequenceRun<Real> run_sequence(const BasicCellParams<Real>& p,
                                    const BasicOutputLayer<Real>& out,
                                    const std::vector<BasicVector<Real>>& xs,
                                    const BasicVector<Real>& h0, const BasicVector<Real>& c0) {
  if (xs.empty()) throw std::invalid_argument("run_sequence: empty input sequence");
  BasicSequenceRun<Real> run;
  run.caches.reserve(xs.size());
  const BasicVector<Real>* h = &h0;
  const BasicVector<Real>* c = &c0;
  for (const auto& x : xs) {
    run.caches.push_back(cell_step(p, x, *h, *c));
    h = &run.caches.back().h;
    c = &run.caches.back().c;
  }
  run.y = output_layer_apply(out, *h);
  return run;
}

template <std::floating_point Real>
std::vector<BasicStepCache<Real>> run_cell(const BasicCellParams<Real>& p,
                                           const std::vector<BasicVector<Real>>& xs) {
  if (xs.empty()) throw std::invalid_argument("run_cell: empty input sequence");
  std::vector<BasicStepCache<Real>> caches;
  caches.reserve(xs.size());
  const BasicVector<Real> zero(p.n);
  const BasicVector<Real>* h = &zero;
  const BasicVector<Real>* c = &zero;
  for (const auto& x : xs) {
    caches.push_back(cell_step(p, x, *h, *c));
    h = &caches.back().h;
    c = p.variant == CellVariant::srnn ? &zero : &caches.back().c;
  }
  return caches;
}

void check_bidirectional_pair(const CellParams& fwd, const CellParams& bwd) {
  if (fwd.variant != bwd.variant || fwd.m != bwd.m || fwd.n != bwd.n) {
    throw std::invalid_argument(
        "bidirectional cells must share variant and shape: " + std::string(to_string(fwd.variant)) +
        " " + shape_string(fwd.n, fwd.m) + " vs " + std::string(to_string(bwd.variant)) + " " +
        shape_string(bwd.n, bwd.m));
  }
}

template <std::floating_point Real>
BasicVector<Real> bidirectional_run(const BasicCellParams<Real>& p_fwd,
                                    const BasicCellParams<Real>& p_bwd,
                                    const std::vector<BasicVector<Real>>& xs) {
  if (p_fwd.variant != p_bwd.variant || p_fwd.m != p_bwd.m || p_fwd.n != p_bwd.n) {
    throw std::invalid_argument("bidirectional cells must share variant and shape");
  }
  const std::vector<BasicVector<Real>> reversed(xs.rbegin(), xs.rend());
  const auto fwd = run_cell(p_fwd, xs);
  const auto bwd = run_cell(p_bwd, reversed);
  BasicVector<Real> out(2 * p_fwd.n);
  std::copy(fwd.back().h.begin(), fwd.back().h.end(), out.begin());
  std::copy(bwd.back().h.begin(), bwd.back().h.end(), out.begin() + static_cast<std::ptrdiff_t>(p_fwd.n));
  return out;
}

// ---------------------------------------------------------------------------
// Backward

StepGradient cell_step_backward(const CellParams& p, const StepCache& s, const Vector& dh,
                                const Vector& dc_in, CellParams& g) {
  const std::size_t n = p.n;
  StepGradient out;
  out.dx = Vector(p.m);
  out.dh_prev = Vector(n);

  if (p.variant == CellVariant::srnn) {
    Vector da = hadamard(dh, derivative_from_output(p.act, s.h));
    add_outer(g.W_c, da, s.x);
    add_outer(g.U_c, da, s.h_prev);
    g.b_c += da;
    matvec_transposed_accumulate(p.W_c, da, out.dx);
    matvec_transposed_accumulate(p.U_c, da, out.dh_prev);
    return out;
  }

  // Total gradient on c_t: the carried-in part plus the path through h_t.
  Vector dc = dc_in;
  for (std::size_t k = 0; k < n; ++k) {
    dc[k] += dh[k] * s.o[k] * derivative_from_output(p.act, s.c_act[k]);
  }
  out.dc_prev = hadamard(dc, s.f);

  // Gradient on the candidate pre-activation.
  Vector da_c(n);
  for (std::size_t k = 0; k < n; ++k) {
    da_c[k] = dc[k] * s.i[k] * derivative_from_output(p.act, s.c_tilde[k]);
  }
  add_outer(g.W_c, da_c, s.x);
  g.b_c += da_c;
  matvec_transposed_accumulate(p.W_c, da_c, out.dx);

  switch (p.variant) {
    case CellVariant::lstm6:
      add_outer(g.U_c, da_c, s.h_prev);
      matvec_transposed_accumulate(p.U_c, da_c, out.dh_prev);
      break;
    case CellVariant::lstm_c6:
      for (std::size_t k = 0; k < n; ++k) {
        g.u_c[k] += da_c[k] * s.h_prev[k];
        out.dh_prev[k] += p.u_c[k] * da_c[k];
      }
      break;
    case CellVariant::lstm: {
      add_outer(g.U_c, da_c, s.h_prev);
      matvec_transposed_accumulate(p.U_c, da_c, out.dh_prev);
      Vector da_i(n), da_f(n), da_o(n);
      for (std::size_t k = 0; k < n; ++k) {
        da_i[k] = dc[k] * s.c_tilde[k] * s.i[k] * (1.0 - s.i[k]);
        da_f[k] = dc[k] * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
        da_o[k] = dh[k] * s.c_act[k] * s.o[k] * (1.0 - s.o[k]);
      }
      auto gate = [&](const Vector& da, Matrix& gw, Matrix& gu, Vector& gb, const Matrix& w,
                      const Matrix& u) {
        add_outer(gw, da, s.x);
        add_outer(gu, da, s.h_prev);
        gb += da;
        matvec_transposed_accumulate(w, da, out.dx);
        matvec_transposed_accumulate(u, da, out.dh_prev);
      };
      gate(da_i, g.W_i, g.U_i, g.b_i, p.W_i, p.U_i);
      gate(da_f, g.W_f, g.U_f, g.b_f, p.W_f, p.U_f);
      gate(da_o, g.W_o, g.U_o, g.b_o, p.W_o, p.U_o);
      break;
    }
    case CellVariant::srnn:
      break;
  }
  return out;
}

std::vector<Vector> sequence_backward(const CellParams& p, const std::vector<StepCache>& caches,
                                      const Vector& dh_last, CellParams& grads) {
  std::vector<Vector> dxs(caches.size());
  Vector dh = dh_last;
  Vector dc(p.n);
  for (std::size_t t = caches.size(); t-- > 0;) {
    StepGradient sg = cell_step_backward(p, caches[t], dh, dc, grads);
    dh = std::move(sg.dh_prev);
    if (p.variant != CellVariant::srnn) dc = std::move(sg.dc_prev);
    dxs[t] = std::move(sg.dx);
  }
  return dxs;
}

// ---------------------------------------------------------------------------
// Accounting

std::uint64_t param_count(CellVariant variant, std::uint64_t m, std::uint64_t n, bool bidirectional) {
  std::uint64_t count = 0;
  switch (variant) {
    case CellVariant::lstm:
      count = 4 * n * (m + n + 1);
      break;
    case CellVariant::lstm6:
    case CellVariant::srnn:
      count = n * (m + n + 1);
      break;
    case CellVariant::lstm_c6:
      count = n * (m + 2);
      break;
  }
  return bidirectional ? 2 * count : count;
}

std::uint64_t step_mac_count(CellVariant variant, std::uint64_t m, std::uint64_t n) {
  switch (variant) {
    case CellVariant::lstm:
      return 4 * n * (m + n);
    case CellVariant::lstm6:
    case CellVariant::srnn:
      return n * (m + n);
    case CellVariant::lstm_c6:
      return n * m + n;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Explicit instantiations: 64-bit for the engine, extended precision for the
// finite-difference oracle.

#define SLIM_INSTANTIATE_CELLS(Real)                                                              \
  template BasicStepCache<Real> srnn_step(const BasicCellParams<Real>&, const BasicVector<Real>&, \
                                          const BasicVector<Real>&);                              \
  template BasicStepCache<Real> lstm_step(const BasicCellParams<Real>&, const BasicVector<Real>&, \
                                          const BasicVector<Real>&, const BasicVector<Real>&);    \
  template BasicStepCache<Real> gate_override_step(                                               \
      const BasicCellParams<Real>&, const GatePins&, const BasicVector<Real>&,                    \
      const BasicVector<Real>&, const BasicVector<Real>&);                                        \
  template BasicStepCache<Real> lstm6_step(const BasicCellParams<Real>&,                          \
                                           const BasicVector<Real>&, const BasicVector<Real>&,    \
                                           const BasicVector<Real>&);                             \
  template BasicStepCache<Real> lstmc6_step(const BasicCellParams<Real>&,                         \
                                            const BasicVector<Real>&, const BasicVector<Real>&,   \
                                            const BasicVector<Real>&);                            \
  template BasicStepCache<Real> cell_step(const BasicCellParams<Real>&, const BasicVector<Real>&, \
                                          const BasicVector<Real>&, const BasicVector<Real>&);    \
  template BasicVector<Real> output_layer_apply(const BasicOutputLayer<Real>&,                    \
                                                const BasicVector<Real>&);                        \
  template BasicSequenceRun<Real> run_sequence(                                                   \
      const BasicCellParams<Real>&, const BasicOutputLayer<Real>&,                                \
      const std::vector<BasicVector<Real>>&, const BasicVector<Real>&, const BasicVector<Real>&); \
  template std::vector<BasicStepCache<Real>> run_cell(const BasicCellParams<Real>&,               \
                                                      const std::vector<BasicVector<Real>>&);     \
  template BasicVector<Real> bidirectional_run(const BasicCellParams<Real>&,                      \
                                               const BasicCellParams<Real>&,                      \
                                               const std::vector<BasicVector<Real>>&);

SLIM_INSTANTIATE_CELLS(double)
SLIM_INSTANTIATE_CELLS(long double)

#undef SLIM_INSTANTIATE_CELLS

}  // namespace slim

#include "slim/cell.hpp"

#include <fmt/format.h>

#include "slim/error.hpp"
#include "slim/init.hpp"

namespace slim {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::kStandard: return "lstm";
    case Variant::kSlim1: return "lstm1";
    case Variant::kSlim2: return "lstm2";
    case Variant::kSlim3: return "lstm3";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError(
      fmt::format("unknown variant '{}' (expected lstm, lstm1, lstm2 or lstm3)", name));
}

GatePresence gate_presence(Variant variant) {
  switch (variant) {
    case Variant::kStandard: return {true, true, true};
    case Variant::kSlim1: return {false, true, true};
    case Variant::kSlim2: return {false, true, false};
    case Variant::kSlim3: return {false, false, true};
  }
  return {true, true, true};
}

CellState CellState::zeros(std::size_t hidden_dim) {
  return {Matrix(hidden_dim, 1), Matrix(hidden_dim, 1)};
}

namespace {

GateParams zeros_like(const GateParams& g) {
  GateParams out;
  if (g.input_weights) out.input_weights = Matrix(g.input_weights->rows(), g.input_weights->cols());
  if (g.recurrent_weights) {
    out.recurrent_weights = Matrix(g.recurrent_weights->rows(), g.recurrent_weights->cols());
  }
  if (g.bias) out.bias = Matrix(g.bias->rows(), 1);
  return out;
}

void check_block(const GateParams& g, const GatePresence& want, std::size_t m, std::size_t n,
                 std::string_view label) {
  auto check = [&](const std::optional<Matrix>& p, bool present, std::size_t rows,
                   std::size_t cols, std::string_view what) {
    if (p.has_value() != present) {
      throw ConfigError(fmt::format("{} {}: expected {}", label, what,
                                    present ? "present" : "absent"));
    }
    if (p && (p->rows() != rows || p->cols() != cols)) {
      throw ConfigError(fmt::format("{} {}: expected {}x{}, got {}", label, what, rows, cols,
                                    p->shape_string()));
    }
  };
  check(g.input_weights, want.input_weights, n, m, "input weights");
  check(g.recurrent_weights, want.recurrent_weights, n, n, "recurrent weights");
  check(g.bias, want.bias, n, 1, "bias");
}

GateParams init_block(const GatePresence& presence, std::size_t m, std::size_t n, double bias,
                      Rng& rng) {
  GateParams g;
  if (presence.input_weights) g.input_weights = glorot_uniform(n, m, rng);
  if (presence.recurrent_weights) g.recurrent_weights = glorot_uniform(n, n, rng);
  if (presence.bias) g.bias = Matrix(n, 1, bias);
  return g;
}

// z = W x + U h + b using whichever terms are present.
void affine(const GateParams& g, const Matrix& x, const Matrix& h, Matrix& z) {
  if (g.bias) {
    z = *g.bias;
  } else {
    z.fill(0.0);
  }
  if (g.input_weights) matvec_acc(*g.input_weights, x, z);
  if (g.recurrent_weights) matvec_acc(*g.recurrent_weights, h, z);
}

void affine_backward(const GateParams& g, const Matrix& dz, const StepCache& cache,
                     GateParams& grad, StepGradients& out) {
  if (g.input_weights) {
    outer_acc(dz, cache.x, *grad.input_weights);
    matvec_t_acc(*g.input_weights, dz, out.dx);
  }
  if (g.recurrent_weights) {
    outer_acc(dz, cache.h_prev, *grad.recurrent_weights);
    matvec_t_acc(*g.recurrent_weights, dz, out.dh_prev);
  }
  if (g.bias) grad.bias->add_scaled(dz);
}

}  // namespace

CellParams CellParams::zeros_like() const {
  CellParams out;
  out.variant = variant;
  out.input_dim = input_dim;
  out.hidden_dim = hidden_dim;
  out.candidate = slim::zeros_like(candidate);
  out.input_gate = slim::zeros_like(input_gate);
  out.forget_gate = slim::zeros_like(forget_gate);
  out.output_gate = slim::zeros_like(output_gate);
  return out;
}

void CellParams::validate() const {
  const GatePresence gates = gate_presence(variant);
  check_block(candidate, {true, true, true}, input_dim, hidden_dim, "candidate");
  check_block(input_gate, gates, input_dim, hidden_dim, "input gate");
  check_block(forget_gate, gates, input_dim, hidden_dim, "forget gate");
  check_block(output_gate, gates, input_dim, hidden_dim, "output gate");
}

CellParams init_cell(Variant variant, std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                     const InitOptions& options) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw ConfigError("init_cell: input and hidden dims must be positive");
  }
  const GatePresence gates = gate_presence(variant);
  CellParams p;
  p.variant = variant;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.candidate = init_block({true, true, true}, input_dim, hidden_dim, options.other_bias, rng);
  p.input_gate = init_block(gates, input_dim, hidden_dim, options.other_bias, rng);
  p.forget_gate = init_block(gates, input_dim, hidden_dim, options.forget_bias, rng);
  p.output_gate = init_block(gates, input_dim, hidden_dim, options.other_bias, rng);
  return p;
}

std::uint64_t param_count(Variant variant, std::size_t input_dim, std::size_t hidden_dim) {
  const std::uint64_t m = input_dim;
  const std::uint64_t n = hidden_dim;
  const std::uint64_t block = n * m + n * n + n;
  switch (variant) {
    case Variant::kStandard: return 4 * block;
    case Variant::kSlim1: return block + 3 * (n * n + n);
    case Variant::kSlim2: return block + 3 * n * n;
    case Variant::kSlim3: return block + 3 * n;
  }
  return 0;
}

StepResult step_forward(const CellParams& params, const CellConfig& config, const Matrix& x,
                        const CellState& prev) {
  const std::size_t n = params.hidden_dim;
  if (x.rows() != params.input_dim || x.cols() != 1) {
    throw ConfigError(fmt::format("step_forward: input is {}, cell expects {}x1",
                                  x.shape_string(), params.input_dim));
  }
  if (prev.h.rows() != n || prev.c.rows() != n) {
    throw ConfigError(fmt::format("step_forward: state is {}/{}, cell expects {}x1",
                                  prev.h.shape_string(), prev.c.shape_string(), n));
  }

  StepResult r;
  StepCache& k = r.cache;
  k.x = x;
  k.h_prev = prev.h;
  k.c_prev = prev.c;
  k.input_gate = Matrix(n, 1);
  k.forget_gate = Matrix(n, 1);
  k.output_gate = Matrix(n, 1);
  k.candidate = Matrix(n, 1);

  affine(params.input_gate, x, prev.h, k.input_gate);
  affine(params.forget_gate, x, prev.h, k.forget_gate);
  affine(params.output_gate, x, prev.h, k.output_gate);
  affine(params.candidate, x, prev.h, k.candidate);
  apply_inplace(config.gate, k.input_gate);
  apply_inplace(config.gate, k.forget_gate);
  apply_inplace(config.gate, k.output_gate);
  apply_inplace(config.cell, k.candidate);

  k.c = Matrix(n, 1);
  for (std::size_t j = 0; j < n; ++j) {
    k.c[j] = k.forget_gate[j] * prev.c[j] + k.input_gate[j] * k.candidate[j];
  }
  k.cell_out = apply(config.cell, k.c);

  r.state.c = k.c;
  r.state.h = Matrix(n, 1);
  for (std::size_t j = 0; j < n; ++j) r.state.h[j] = k.output_gate[j] * k.cell_out[j];

  if (!r.state.h.all_finite() || !r.state.c.all_finite()) {
    throw NumericError(fmt::format("non-finite cell state ({} cell, {}/{} activations)",
                                   to_string(params.variant), to_string(config.gate),
                                   to_string(config.cell)));
  }
  return r;
}

StepGradients step_backward(const CellParams& params, const CellConfig& config,
                            const StepCache& cache, const Matrix& dh, const Matrix& dc,
                            CellParams& grads) {
  if (grads.variant != params.variant || grads.hidden_dim != params.hidden_dim ||
      grads.input_dim != params.input_dim) {
    throw ConfigError("step_backward: gradient container does not match the cell");
  }
  const std::size_t n = params.hidden_dim;
  if (dh.rows() != n || dc.rows() != n) {
    throw ConfigError(fmt::format("step_backward: upstream {}/{}, expected {}x1",
                                  dh.shape_string(), dc.shape_string(), n));
  }

  // h = o * s, s = sigma(c)
  Matrix d_out(n, 1);
  Matrix d_s(n, 1);
  for (std::size_t j = 0; j < n; ++j) {
    d_out[j] = dh[j] * cache.cell_out[j];
    d_s[j] = dh[j] * cache.output_gate[j];
  }
  Matrix dc_total = backprop(config.cell, cache.cell_out, d_s);
  dc_total.add_scaled(dc);

  // c = f * c_prev + i * candidate
  Matrix d_in(n, 1);
  Matrix d_forget(n, 1);
  Matrix d_cand(n, 1);
  StepGradients out{Matrix(n, 1), Matrix(n, 1), Matrix(params.input_dim, 1)};
  for (std::size_t j = 0; j < n; ++j) {
    d_forget[j] = dc_total[j] * cache.c_prev[j];
    d_in[j] = dc_total[j] * cache.candidate[j];
    d_cand[j] = dc_total[j] * cache.input_gate[j];
    out.dc_prev[j] = dc_total[j] * cache.forget_gate[j];
  }

  const Matrix dz_in = backprop(config.gate, cache.input_gate, d_in);
  const Matrix dz_forget = backprop(config.gate, cache.forget_gate, d_forget);
  const Matrix dz_out = backprop(config.gate, cache.output_gate, d_out);
  const Matrix dz_cand = backprop(config.cell, cache.candidate, d_cand);

  affine_backward(params.input_gate, dz_in, cache, grads.input_gate, out);
  affine_backward(params.forget_gate, dz_forget, cache, grads.forget_gate, out);
  affine_backward(params.output_gate, dz_out, cache, grads.output_gate, out);
  affine_backward(params.candidate, dz_cand, cache, grads.candidate, out);
  return out;
}

StepCost flops_per_step(Variant variant, std::size_t input_dim, std::size_t hidden_dim) {
  const std::uint64_t m = input_dim;
  const std::uint64_t n = hidden_dim;
  const GatePresence gates = gate_presence(variant);
  StepCost cost;
  // Candidate block: W_c x + U_c h + b_c.
  cost.macs += n * m + n * n;
  cost.adds += n;
  if (gates.input_weights) cost.macs += 3 * n * m;
  if (gates.recurrent_weights) cost.macs += 3 * n * n;
  if (gates.bias) cost.adds += 3 * n;
  // f * c_prev, i * candidate, o * sigma(c), and the memory-cell sum.
  cost.macs += 3 * n;
  cost.adds += n;
  return cost;
}

Unrolled unroll(const CellParams& params, const CellConfig& config, const std::vector<Matrix>& xs,
                const CellState& initial) {
  Unrolled u;
  u.states.reserve(xs.size());
  u.caches.reserve(xs.size());
  CellState state = initial;
  for (const Matrix& x : xs) {
    StepResult r = step_forward(params, config, x, state);
    state = r.state;
    u.states.push_back(std::move(r.state));
    u.caches.push_back(std::move(r.cache));
  }
  return u;
}

std::vector<Matrix> backprop_through_time(const CellParams& params, const CellConfig& config,
                                          const std::vector<StepCache>& caches,
                                          const std::vector<Matrix>& dh, CellParams& grads) {
  if (dh.size() != caches.size()) {
    throw ConfigError(fmt::format("bptt: {} upstream gradients for {} steps", dh.size(),
                                  caches.size()));
  }
  const std::size_t n = params.hidden_dim;
  std::vector<Matrix> dxs(caches.size());
  Matrix dh_next(n, 1);
  Matrix dc_next(n, 1);
  for (std::size_t t = caches.size(); t-- > 0;) {
    Matrix dh_t = dh[t];
    dh_t.add_scaled(dh_next);
    StepGradients g = step_backward(params, config, caches[t], dh_t, dc_next, grads);
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
    dxs[t] = std::move(g.dx);
  }
  return dxs;
}

}  // namespace slim

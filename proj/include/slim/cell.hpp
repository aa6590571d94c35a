#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "slim/activations.hpp"
#include "slim/matrix.hpp"
#include "slim/rng.hpp"

namespace slim {

/// Gate parameterizations. The candidate (input block) is never reduced;
/// only the i, f, o gates differ between variants:
///   kStandard  sigma_in(W x + U h + b)
///   kSlim1     sigma_in(U h + b)
///   kSlim2     sigma_in(U h)
///   kSlim3     sigma_in(b)
enum class Variant { kStandard, kSlim1, kSlim2, kSlim3 };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::kStandard, Variant::kSlim1,
                                                        Variant::kSlim2, Variant::kSlim3};

/// Config spelling: lstm, lstm1, lstm2, lstm3.
std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);

struct GatePresence {
  bool input_weights;
  bool recurrent_weights;
  bool bias;
};
GatePresence gate_presence(Variant variant);

/// One affine block feeding a gate or the candidate. Absent terms stay empty
/// optionals; they are never zero-filled.
struct GateParams {
  std::optional<Matrix> input_weights;      // n x m
  std::optional<Matrix> recurrent_weights;  // n x n
  std::optional<Matrix> bias;               // n x 1
};

/// Parameter container for one cell. Also used as the gradient container,
/// which keeps gradient presence identical to parameter presence.
struct CellParams {
  Variant variant = Variant::kStandard;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  GateParams candidate;
  GateParams input_gate;
  GateParams forget_gate;
  GateParams output_gate;

  /// Visits every present matrix as f(name, matrix) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  CellParams zeros_like() const;
  /// Throws ConfigError if presence or shapes disagree with the variant.
  void validate() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto block = [&f](auto& gate, const char* w, const char* u, const char* b) {
      if (gate.input_weights) f(std::string_view(w), *gate.input_weights);
      if (gate.recurrent_weights) f(std::string_view(u), *gate.recurrent_weights);
      if (gate.bias) f(std::string_view(b), *gate.bias);
    };
    block(self.candidate, "W_c", "U_c", "b_c");
    block(self.input_gate, "W_i", "U_i", "b_i");
    block(self.forget_gate, "W_f", "U_f", "b_f");
    block(self.output_gate, "W_o", "U_o", "b_o");
  }
};

struct CellConfig {
  Activation gate = Activation::kSigmoid;  // sigma_in in the i, f, o gates
  Activation cell = Activation::kTanh;     // sigma in the candidate and in h = o * sigma(c)
};

struct CellState {
  Matrix h;
  Matrix c;
  static CellState zeros(std::size_t hidden_dim);
};

/// Everything the backward pass needs from one forward step.
struct StepCache {
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
  Matrix input_gate;
  Matrix forget_gate;
  Matrix output_gate;
  Matrix candidate;
  Matrix c;
  Matrix cell_out;  // sigma(c)
};

struct StepResult {
  CellState state;
  StepCache cache;
};

struct StepGradients {
  Matrix dh_prev;
  Matrix dc_prev;
  Matrix dx;
};

struct InitOptions {
  double forget_bias = 1.0;
  double other_bias = 0.0;
};

/// Glorot-uniform weights, constant biases. Draw order: candidate W, U, then
/// each gate (i, f, o) W, U, so equal seeds give equal parameters.
CellParams init_cell(Variant variant, std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                     const InitOptions& options = {});

/// Closed form scalar count for a variant.
std::uint64_t param_count(Variant variant, std::size_t input_dim, std::size_t hidden_dim);

/// One time step. Throws NumericError if h or c become non-finite.
StepResult step_forward(const CellParams& params, const CellConfig& config, const Matrix& x,
                        const CellState& prev);

/// Backward through one step. Parameter gradients are accumulated into
/// `grads`, which must have the same variant and dims as `params`.
StepGradients step_backward(const CellParams& params, const CellConfig& config,
                            const StepCache& cache, const Matrix& dh, const Matrix& dc,
                            CellParams& grads);

/// Multiply-accumulate tally of one forward step. `macs` counts every
/// multiplication (matrix-vector products and the three Hadamard products);
/// `adds` counts bias additions and the memory-cell sum.
struct StepCost {
  std::uint64_t macs = 0;
  std::uint64_t adds = 0;
};
StepCost flops_per_step(Variant variant, std::size_t input_dim, std::size_t hidden_dim);

/// Runs the cell over a whole sequence from `initial`.
struct Unrolled {
  std::vector<CellState> states;
  std::vector<StepCache> caches;
};
Unrolled unroll(const CellParams& params, const CellConfig& config, const std::vector<Matrix>& xs,
                const CellState& initial);

/// BPTT over an unrolled sequence. dh[t] is the loss gradient w.r.t. the
/// hidden state emitted at step t. Returns dx for every step.
std::vector<Matrix> backprop_through_time(const CellParams& params, const CellConfig& config,
                                          const std::vector<StepCache>& caches,
                                          const std::vector<Matrix>& dh, CellParams& grads);

}  // namespace slim

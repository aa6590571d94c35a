#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slim/cell.hpp"
#include "slim/data.hpp"
#include "slim/layers.hpp"
#include "slim/matrix.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln(probs[label] + 1e-12). probs must sum to 1 within 1e-6.
double cross_entropy(const Matrix& probs, std::size_t label);
/// Gradient at the softmax pre-activation: probs - onehot(label).
Matrix cross_entropy_logit_grad(const Matrix& probs, std::size_t label);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers are allocated on the first step, one per parameter matrix
/// passed in; later steps must pass the same shapes in the same order.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps_taken() const { return steps_; }
  std::size_t buffer_count() const { return first_moment_.size(); }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
};

std::vector<Matrix*> param_pointers(Model& model);
std::vector<const Matrix*> param_pointers(const Model& model);
std::vector<Matrix*> param_pointers(CellParams& cell);
std::vector<const Matrix*> param_pointers(const CellParams& cell);

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  bool collapsed = false;
  bool nonfinite = false;
};

/// Bitwise comparison, so NaN fields compare equal to themselves.
bool identical(const EpochRecord& a, const EpochRecord& b);
bool identical(const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b);

struct ExperimentConfig {
  Variant variant = Variant::kStandard;
  Activation activation = Activation::kTanh;  // cell activation, sigma in the candidate and h
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  std::string task = "synthetic";  // label carried into output records
  ArchSpec arch;                   // variant/activation/data dims are overwritten by fit
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t batch_size = 16;
  double val_fraction = 0.2;
};

/// The architecture fit() actually builds for this config and data.
ArchSpec resolve_arch(const ExperimentConfig& config, const Dataset& data);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Splits `data` by the run seed, then trains for config.epochs epochs.
/// Batches whose loss or gradient is non-finite are skipped and the epoch is
/// flagged; training stops after an epoch in which every batch was
/// non-finite. Collapse flags are set after the last epoch.
std::vector<EpochRecord> fit(const ExperimentConfig& config, const Dataset& data,
                             const Matrix* pretrained = nullptr,
                             const EpochCallback& on_epoch = {});

struct Evaluation {
  double loss = 0.0;  // mean over finite examples
  double accuracy = 0.0;
  std::size_t nonfinite = 0;
};
Evaluation evaluate(const Model& model, const Dataset& data, Split which);

/// Collapse threshold max(0.05, 1.5 / classes).
double collapse_threshold(std::size_t classes);

/// Index of the first epoch after which validation accuracy stays below the
/// threshold, provided some earlier epoch reached twice the threshold.
std::optional<std::size_t> detect_collapse(std::span<const EpochRecord> records,
                                           std::size_t classes);

// ---------------------------------------------------------------------------
// Gradient checking

struct NamedParam {
  std::string name;
  Matrix* value;
};

struct ParamCheck {
  std::string name;
  std::size_t scalars = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradViolation {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  std::vector<GradViolation> violations;
  double max_rel_error = 0.0;
  std::size_t scalars = 0;

  bool passed() const { return violations.empty(); }
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Central differences of `loss` over every scalar of every param, compared
/// with `analytic` (same order and shapes). Parameters are restored exactly.
GradCheckReport check_gradients(const std::vector<NamedParam>& params,
                                const std::vector<const Matrix*>& analytic,
                                const std::function<double()>& loss, double eps, double tol);

struct LossAndGrad {
  double loss = 0.0;
  Model grads;
};
/// Eval-mode loss and analytic gradient for one example.
LossAndGrad model_loss_and_grad(const Model& model, std::span<const TokenId> tokens,
                                std::size_t label);
double model_loss(const Model& model, std::span<const TokenId> tokens, std::size_t label);

/// The model must have zero dropout rates; eval mode is used throughout.
GradCheckReport grad_check_model(Model& model, const Example& example, double eps, double tol);

struct CellCheckSpec {
  Variant variant = Variant::kStandard;
  CellConfig config;
  std::size_t input_dim = 3;
  std::size_t hidden_dim = 4;
  std::size_t steps = 5;
  std::uint64_t seed = 0;
};

/// Unrolls a randomly initialised cell over random inputs and checks the
/// gradient of sum_t r_t . h_t (random r_t) w.r.t. every cell parameter and
/// every input x_t.
GradCheckReport grad_check_cell(const CellCheckSpec& spec, double eps, double tol);

}  // namespace slim

#include "slim/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>
#include <fmt/format.h>

#include "slim/error.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Loss

namespace {

void check_distribution(const Matrix& probs, std::size_t label) {
  if (probs.cols() != 1 || probs.empty()) {
    throw ConfigError(fmt::format("cross_entropy: probabilities must be a column, got {}",
                                  probs.shape_string()));
  }
  if (label >= probs.rows()) {
    throw DataError(fmt::format("label {} outside [0, {})", label, probs.rows()));
  }
  double total = 0.0;
  for (double p : probs.values()) total += p;
  if (!(std::abs(total - 1.0) <= 1e-6)) {
    throw ConfigError(fmt::format("cross_entropy: probabilities sum to {}", total));
  }
}

}  // namespace

double cross_entropy(const Matrix& probs, std::size_t label) {
  check_distribution(probs, label);
  return -std::log(probs[label] + kProbabilityFloor);
}

Matrix cross_entropy_logit_grad(const Matrix& probs, std::size_t label) {
  check_distribution(probs, label);
  Matrix g = probs;
  g[label] -= 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError(fmt::format("unknown optimizer '{}' (expected sgd or adam)", name));
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) {
    throw ConfigError(fmt::format("learning rate {} must be positive", config_.learning_rate));
  }
}

void Optimizer::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) {
    throw ConfigError(fmt::format("optimizer: {} parameters but {} gradients", params.size(),
                                  grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i])) {
      throw ConfigError(fmt::format("optimizer: parameter {} is {} but gradient is {}", i,
                                    params[i]->shape_string(), grads[i]->shape_string()));
    }
  }
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->add_scaled(*grads[i], -lr);
    ++steps_;
    return;
  }

  if (steps_ == 0) {
    first_moment_.clear();
    second_moment_.clear();
    for (const Matrix* p : params) {
      first_moment_.emplace_back(p->rows(), p->cols());
      second_moment_.emplace_back(p->rows(), p->cols());
    }
  } else if (first_moment_.size() != params.size()) {
    throw ConfigError(fmt::format("optimizer: moment buffers track {} parameters, step got {}",
                                  first_moment_.size(), params.size()));
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correct1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correct2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!first_moment_[i].same_shape(*params[i])) {
      throw ConfigError(fmt::format("optimizer: parameter {} changed shape to {}", i,
                                    params[i]->shape_string()));
    }
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = first_moment_[i].values();
    auto v = second_moment_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

std::vector<Matrix*> param_pointers(Model& model) {
  std::vector<Matrix*> out;
  model.for_each_param([&out](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> param_pointers(const Model& model) {
  std::vector<const Matrix*> out;
  model.for_each_param([&out](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<Matrix*> param_pointers(CellParams& cell) {
  std::vector<Matrix*> out;
  cell.for_each([&out](std::string_view, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> param_pointers(const CellParams& cell) {
  std::vector<const Matrix*> out;
  cell.for_each([&out](std::string_view, const Matrix& m) { out.push_back(&m); });
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

bool identical(const EpochRecord& a, const EpochRecord& b) {
  auto same = [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; };
  return a.epoch == b.epoch && same(a.train_loss, b.train_loss) &&
         same(a.train_acc, b.train_acc) && same(a.val_loss, b.val_loss) &&
         same(a.val_acc, b.val_acc) && a.collapsed == b.collapsed && a.nonfinite == b.nonfinite;
}

bool identical(const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(),
                                            [](const auto& x, const auto& y) {
                                              return identical(x, y);
                                            });
}

ArchSpec resolve_arch(const ExperimentConfig& config, const Dataset& data) {
  ArchSpec arch = config.arch;
  arch.variant = config.variant;
  arch.cell.cell = config.activation;
  arch.vocab_size = data.vocab_size;
  arch.seq_len = data.seq_len;
  arch.classes = data.classes;
  return arch;
}

namespace {

enum RunStream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kDropoutStream = 3 };

std::size_t argmax(const Matrix& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

bool all_finite(const Model& grads) {
  bool ok = true;
  grads.for_each_param([&ok](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

}  // namespace

Evaluation evaluate(const Model& model, const Dataset& data, Split which) {
  Evaluation ev;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t finite = 0;
  double loss_sum = 0.0;
  for (const Example& e : data.examples) {
    if (e.split != which) continue;
    ++total;
    try {
      const Matrix probs = predict(model, e.tokens);
      const double loss = cross_entropy(probs, e.label);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss");
      loss_sum += loss;
      ++finite;
      if (argmax(probs) == e.label) ++correct;
    } catch (const NumericError&) {
      ++ev.nonfinite;
    }
  }
  if (total > 0) ev.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  if (finite > 0) {
    ev.loss = loss_sum / static_cast<double>(finite);
  } else if (total > 0) {
    ev.loss = std::nan("");
  }
  return ev;
}

std::vector<EpochRecord> fit(const ExperimentConfig& config, const Dataset& data,
                             const Matrix* pretrained, const EpochCallback& on_epoch) {
  std::vector<EpochRecord> records;
  if (config.epochs == 0) return records;
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  data.validate();

  Dataset ds = data;
  split(ds, config.val_fraction, config.seed);

  const Rng root(config.seed);
  Rng init_rng = root.derive(kInitStream);
  Rng shuffle_rng = root.derive(kShuffleStream);
  Rng dropout_rng = root.derive(kDropoutStream);

  Model model = model_assemble(resolve_arch(config, ds), init_rng, pretrained);
  Optimizer optimizer({config.optimizer, config.learning_rate});
  Model grads = model.zeros_like();
  const std::vector<Matrix*> params = param_pointers(model);
  const std::vector<const Matrix*> grad_ptrs = param_pointers(std::as_const(grads));
  std::vector<Matrix*> grad_mut = param_pointers(grads);

  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    if (ds.examples[i].split == Split::kTrain) train_idx.push_back(i);
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      std::swap(train_idx[i - 1], train_idx[shuffle_rng.below(i)]);
    }
    std::size_t batches = 0;
    std::size_t bad_batches = 0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      const std::size_t stop = std::min(start + config.batch_size, train_idx.size());
      ++batches;
      for (Matrix* g : grad_mut) g->fill(0.0);
      bool ok = true;
      double batch_loss = 0.0;
      std::size_t batch_correct = 0;
      for (std::size_t b = start; b < stop && ok; ++b) {
        const Example& e = ds.examples[train_idx[b]];
        try {
          ModelResult fwd = model_forward(model, e.tokens, Mode::kTrain, &dropout_rng);
          const double loss = cross_entropy(fwd.probs, e.label);
          if (!std::isfinite(loss)) throw NumericError("non-finite loss");
          batch_loss += loss;
          if (argmax(fwd.probs) == e.label) ++batch_correct;
          model_backward(model, fwd.cache, cross_entropy_logit_grad(fwd.probs, e.label), grads);
        } catch (const NumericError&) {
          ok = false;
        }
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (Matrix* g : grad_mut) {
        for (double& v : g->values()) v *= scale;
      }
      if (!ok || !all_finite(grads)) {
        ++bad_batches;
        continue;
      }
      optimizer.step(params, grad_ptrs);
      seen += stop - start;
      correct += batch_correct;
      loss_sum += batch_loss;
    }

    const Evaluation val = evaluate(model, ds, Split::kValidation);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : std::nan("");
    rec.train_acc = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    rec.val_loss = val.loss;
    rec.val_acc = val.accuracy;
    rec.nonfinite = bad_batches > 0 || val.nonfinite > 0;
    records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (batches > 0 && bad_batches == batches) break;
  }

  if (const auto start = detect_collapse(records, ds.classes)) {
    for (std::size_t i = *start; i < records.size(); ++i) records[i].collapsed = true;
  }
  return records;
}

double collapse_threshold(std::size_t classes) {
  return std::max(0.05, 1.5 / static_cast<double>(classes));
}

std::optional<std::size_t> detect_collapse(std::span<const EpochRecord> records,
                                           std::size_t classes) {
  const double threshold = collapse_threshold(classes);
  std::size_t start = records.size();
  while (start > 0 && records[start - 1].val_acc < threshold) --start;
  if (start == records.size()) return std::nullopt;
  for (std::size_t i = 0; i < start; ++i) {
    if (records[i].val_acc >= 2.0 * threshold) return start;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(const std::vector<NamedParam>& params,
                                const std::vector<const Matrix*>& analytic,
                                const std::function<double()>& loss, double eps, double tol) {
  if (params.size() != analytic.size()) {
    throw ConfigError(fmt::format("gradient check: {} parameters but {} gradients",
                                  params.size(), analytic.size()));
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = *params[p].value;
    const Matrix& grad = *analytic[p];
    if (!value.same_shape(grad)) {
      throw ConfigError(fmt::format("gradient check: {} is {} but its gradient is {}",
                                    params[p].name, value.shape_string(), grad.shape_string()));
    }
    ParamCheck check{params[p].name, value.size(), 0.0, 0};
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = loss();
      value[i] = saved - eps;
      const double down = loss();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(grad[i], numeric);
      if (err > check.max_rel_error || !std::isfinite(err)) {
        check.max_rel_error = err;
        check.worst_index = i;
      }
      if (!(err < tol)) report.violations.push_back({params[p].name, i, grad[i], numeric, err});
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.scalars += check.scalars;
    report.params.push_back(std::move(check));
  }
  return report;
}

double model_loss(const Model& model, std::span<const TokenId> tokens, std::size_t label) {
  return cross_entropy(predict(model, tokens), label);
}

LossAndGrad model_loss_and_grad(const Model& model, std::span<const TokenId> tokens,
                                std::size_t label) {
  ModelResult fwd = model_forward(model, tokens, Mode::kEval, nullptr);
  LossAndGrad out{cross_entropy(fwd.probs, label), model.zeros_like()};
  model_backward(model, fwd.cache, cross_entropy_logit_grad(fwd.probs, label), out.grads);
  return out;
}

GradCheckReport grad_check_model(Model& model, const Example& example, double eps, double tol) {
  const LossAndGrad analytic = model_loss_and_grad(model, example.tokens, example.label);
  std::vector<NamedParam> params;
  model.for_each_param(
      [&params](const std::string& name, Matrix& m) { params.push_back({name, &m}); });
  const auto loss = [&] { return model_loss(model, example.tokens, example.label); };
  return check_gradients(params, param_pointers(analytic.grads), loss, eps, tol);
}

GradCheckReport grad_check_cell(const CellCheckSpec& spec, double eps, double tol) {
  Rng rng(spec.seed);
  CellParams params = init_cell(spec.variant, spec.input_dim, spec.hidden_dim, rng);
  // Random biases so no gate sits at its initial constant.
  params.for_each([&rng](std::string_view name, Matrix& m) {
    if (name.starts_with("b_")) {
      for (double& v : m.values()) v = rng.uniform(-0.5, 0.5);
    }
  });
  std::vector<Matrix> xs;
  std::vector<Matrix> weights;
  for (std::size_t t = 0; t < spec.steps; ++t) {
    Matrix x(spec.input_dim, 1);
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    xs.push_back(std::move(x));
    Matrix r(spec.hidden_dim, 1);
    for (double& v : r.values()) v = rng.uniform(-1.0, 1.0);
    weights.push_back(std::move(r));
  }
  const CellState initial = CellState::zeros(spec.hidden_dim);

  const auto loss = [&] {
    const Unrolled u = unroll(params, spec.config, xs, initial);
    double total = 0.0;
    for (std::size_t t = 0; t < u.states.size(); ++t) {
      for (std::size_t i = 0; i < spec.hidden_dim; ++i) total += weights[t][i] * u.states[t].h[i];
    }
    return total;
  };

  const Unrolled u = unroll(params, spec.config, xs, initial);
  CellParams grads = params.zeros_like();
  const std::vector<Matrix> dxs = backprop_through_time(params, spec.config, u.caches, weights, grads);

  std::vector<NamedParam> named;
  params.for_each([&named](std::string_view name, Matrix& m) {
    named.push_back({std::string(name), &m});
  });
  std::vector<const Matrix*> analytic = param_pointers(std::as_const(grads));
  for (std::size_t t = 0; t < xs.size(); ++t) {
    named.push_back({fmt::format("x[{}]", t), &xs[t]});
    analytic.push_back(&dxs[t]);
  }
  return check_gradients(named, analytic, loss, eps, tol);
}

}  // namespace slim

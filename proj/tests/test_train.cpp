#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "slim/error.hpp"
#include "slim/train.hpp"

using namespace slim;

namespace {

std::vector<EpochRecord> records_from(const std::vector<double>& accs) {
  std::vector<EpochRecord> out;
  for (std::size_t i = 0; i < accs.size(); ++i) {
    EpochRecord r;
    r.epoch = i + 1;
    r.val_acc = accs[i];
    out.push_back(r);
  }
  return out;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.arch.conv_blocks = 0;
  c.arch.hidden = 8;
  c.arch.dense_units = 8;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

Dataset small_task(std::size_t examples = 200) {
  SyntheticTaskSpec spec;
  spec.examples = examples;
  return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy(Matrix(4, 1, 0.25), 2) == doctest::Approx(1.3862944).epsilon(1e-7));
  CHECK(cross_entropy(Matrix::column({0, 1, 0}), 1) == doctest::Approx(0.0).epsilon(1e-11));
  CHECK(cross_entropy(Matrix::column({0.7, 0.3}), 1) == doctest::Approx(1.2039728).epsilon(1e-7));
  CHECK_THROWS_AS(cross_entropy(Matrix::column({0.7, 0.3}), 2), DataError);
  CHECK_THROWS_AS(cross_entropy(Matrix::column({0.7, 0.4}), 0), ConfigError);
  CHECK(cross_entropy(Matrix::column({1, 0}), 1) == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy_logit_grad(Matrix::column({0.7, 0.3}), 1) == Matrix::column({0.7, 0.3 - 1.0}));
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Matrix p(3, 1);
    double s = 0.0;
    for (double& v : p.values()) s += (v = rng.next_uniform());
    for (double& v : p.values()) v /= s;
    CHECK(cross_entropy(p, rng.below(3)) >= 0.0);
  }
}

TEST_CASE("sgd step") {
  Matrix p(1, 1, 1.0);
  const Matrix g(1, 1, 2.0);
  Optimizer sgd({OptimizerKind::kSgd, 0.1});
  std::vector<Matrix*> ps{&p};
  std::vector<const Matrix*> gs{&g};
  sgd.step(ps, gs);
  CHECK(p(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  Matrix q = Matrix::column({0.123456789, -3.5});
  const Matrix before = q;
  const Matrix zero(2, 1);
  std::vector<Matrix*> qs{&q};
  std::vector<const Matrix*> zs{&zero};
  sgd.step(qs, zs);
  CHECK(q == before);
}

TEST_CASE("adam first step is about the learning rate") {
  for (double g : {1e-3, 0.5, -7.0}) {
    Matrix p(1, 1, 2.0);
    const Matrix grad(1, 1, g);
    Optimizer adam({OptimizerKind::kAdam, 1e-3});
    std::vector<Matrix*> ps{&p};
    std::vector<const Matrix*> gs{&grad};
    adam.step(ps, gs);
    const double delta = p(0, 0) - 2.0;
    CHECK(std::abs(std::abs(delta) - 1e-3) < 1e-7);
    CHECK(std::signbit(delta) != std::signbit(g));
    CHECK(adam.steps_taken() == 1);
  }
}

TEST_CASE("optimizer rejects shape changes") {
  Matrix p(2, 1);
  Matrix g(2, 1, 1.0);
  Matrix wrong(3, 1, 1.0);
  Optimizer adam({OptimizerKind::kAdam, 1e-3});
  std::vector<Matrix*> ps{&p};
  std::vector<const Matrix*> gs{&g};
  adam.step(ps, gs);
  std::vector<const Matrix*> bad{&wrong};
  CHECK_THROWS_AS(adam.step(ps, bad), ConfigError);
  std::vector<const Matrix*> none;
  CHECK_THROWS_AS(adam.step(ps, none), ConfigError);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
  CHECK(parse_optimizer("sgd") == OptimizerKind::kSgd);
}

TEST_CASE("optimizer only touches present parameters") {
  Rng rng(2);
  CellParams cell = init_cell(Variant::kSlim3, 3, 4, rng);
  CellParams grads = cell.zeros_like();
  grads.for_each([](std::string_view, Matrix& m) { m.fill(0.1); });
  Optimizer adam({OptimizerKind::kAdam, 1e-2});
  for (int i = 0; i < 5; ++i) adam.step(param_pointers(cell), param_pointers(std::as_const(grads)));
  CHECK(adam.buffer_count() == 6);
  CHECK_NOTHROW(cell.validate());
  CHECK_FALSE(cell.input_gate.input_weights.has_value());
  CHECK_FALSE(cell.input_gate.recurrent_weights.has_value());
  CHECK(param_count(Variant::kSlim3, 3, 4) == 44);
}

TEST_CASE("collapse detection") {
  CHECK(collapse_threshold(20) == doctest::Approx(0.075));
  CHECK(collapse_threshold(100) == doctest::Approx(0.05));
  const auto collapsed = records_from({0.6, 0.65, 0.04, 0.04, 0.04});
  REQUIRE(detect_collapse(collapsed, 20).has_value());
  CHECK(*detect_collapse(collapsed, 20) == 2);
  CHECK_FALSE(detect_collapse(records_from({0.1, 0.3, 0.5, 0.9}), 20).has_value());
  CHECK_FALSE(detect_collapse(records_from({0.04, 0.04, 0.04}), 20).has_value());
  CHECK_FALSE(detect_collapse(records_from({0.6, 0.65, 0.04, 0.04, 0.04, 0.5}), 20).has_value());
  CHECK_FALSE(detect_collapse(records_from({0.6, 0.04, 0.3}), 20).has_value());
}

TEST_CASE("fit basics") {
  const Dataset data = small_task();
  ExperimentConfig c = small_config();
  c.epochs = 0;
  CHECK(fit(c, data).empty());

  c.epochs = 2;
  std::size_t calls = 0;
  const auto a = fit(c, data, nullptr, [&calls](const EpochRecord&) { ++calls; });
  CHECK(calls == 2);
  REQUIRE(a.size() == 2);
  CHECK(a[0].epoch == 1);
  CHECK(a[1].epoch == 2);
  for (const auto& r : a) {
    CHECK(r.val_acc >= 0.0);
    CHECK(r.val_acc <= 1.0);
    CHECK(r.train_acc >= 0.0);
    CHECK(r.train_acc <= 1.0);
    CHECK_FALSE(r.nonfinite);
  }
  CHECK(identical(a, fit(c, data)));
  c.seed = 4;
  CHECK_FALSE(identical(a, fit(c, data)));
}

TEST_CASE("sgd training lowers the loss") {
  ExperimentConfig c = small_config();
  c.optimizer = OptimizerKind::kSgd;
  c.learning_rate = 0.05;
  c.epochs = 4;
  const auto r = fit(c, small_task(400));
  CHECK(r.back().train_loss < r.front().train_loss);
}

TEST_CASE("non-finite batches are flagged, not fatal") {
  Dataset data = small_task(300);
  const TokenId poison = static_cast<TokenId>(data.vocab_size);
  data.vocab_size += 1;
  for (std::size_t i = 0; i < data.examples.size(); i += 25) data.examples[i].tokens[0] = poison;

  ExperimentConfig c = small_config();
  c.arch.embeddings_trainable = false;
  c.epochs = 3;
  Rng rng(5);
  Matrix table(data.vocab_size, c.arch.embed_dim);
  for (double& v : table.values()) v = rng.uniform(-0.5, 0.5);
  for (std::size_t j = 0; j < table.cols(); ++j) {
    table(static_cast<std::size_t>(poison), j) = std::numeric_limits<double>::quiet_NaN();
  }

  const auto records = fit(c, data, &table);
  REQUIRE(records.size() == 3);
  for (const auto& r : records) {
    CHECK(r.nonfinite);
    CHECK(std::isfinite(r.train_loss));
    CHECK(std::isfinite(r.val_loss));
  }
}

TEST_CASE("training stops after an epoch with only bad batches") {
  Dataset data = small_task(100);
  ExperimentConfig c = small_config();
  c.arch.embeddings_trainable = false;
  c.epochs = 5;
  Matrix table(data.vocab_size, c.arch.embed_dim, std::numeric_limits<double>::quiet_NaN());
  const auto records = fit(c, data, &table);
  REQUIRE(records.size() == 1);
  CHECK(records[0].nonfinite);
  CHECK(std::isnan(records[0].train_loss));
}

TEST_CASE("gradient checker") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.1) == doctest::Approx(0.1 / 1.1));
  CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-4));

  const GradCheckReport empty = check_gradients({}, {}, [] { return 0.0; }, 1e-5, 1e-4);
  CHECK(empty.passed());
  CHECK(empty.scalars == 0);

  ArchSpec arch;
  arch.conv_dropout = 0.0;
  arch.lstm_dropout = {0.0, 0.0};
  Rng rng(6);
  Model model = model_assemble(arch, rng);
  Example ex;
  for (std::size_t t = 0; t < arch.seq_len; ++t) ex.tokens.push_back(static_cast<TokenId>(1 + t % 40));
  ex.label = 1;
  LossAndGrad lg = model_loss_and_grad(model, ex.tokens, ex.label);
  CHECK(lg.loss == doctest::Approx(model_loss(model, ex.tokens, ex.label)));

  Matrix& target = lg.grads.head.weights;
  std::size_t worst = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (std::abs(target[i]) > std::abs(target[worst])) worst = i;
  }
  target[worst] *= 1.1;

  const Model before = model;
  std::vector<NamedParam> params;
  model.for_each_param([&params](const std::string& n, Matrix& m) { params.push_back({n, &m}); });
  const auto loss = [&] { return model_loss(model, ex.tokens, ex.label); };
  const GradCheckReport r = check_gradients(params, param_pointers(std::as_const(lg.grads)), loss, 1e-5, 1e-4);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].name == "head.weights");
  CHECK(r.violations[0].index == worst);
  CHECK(r.violations[0].rel_error == doctest::Approx(0.1 / 1.1).epsilon(1e-3));

  std::size_t same = 0;
  model.for_each_param([&](const std::string& n, const Matrix& m) {
    before.for_each_param([&](const std::string& bn, const Matrix& bm) {
      if (n == bn && m == bm) ++same;
    });
  });
  CHECK(same == params.size());
}

TEST_CASE("evaluation and resolve_arch") {
  Dataset data = small_task();
  ExperimentConfig c = small_config();
  c.variant = Variant::kSlim2;
  c.activation = Activation::kRelu;
  const ArchSpec arch = resolve_arch(c, data);
  CHECK(arch.variant == Variant::kSlim2);
  CHECK(arch.cell.cell == Activation::kRelu);
  CHECK(arch.cell.gate == Activation::kSigmoid);
  CHECK(arch.vocab_size == data.vocab_size);
  CHECK(arch.seq_len == data.seq_len);
  CHECK(arch.classes == data.classes);

  split(data, 0.2, 1);
  Rng rng(7);
  const Model model = model_assemble(arch, rng);
  const Evaluation e = evaluate(model, data, Split::kValidation);
  CHECK(e.nonfinite == 0);
  CHECK(e.accuracy >= 0.0);
  CHECK(e.accuracy <= 1.0);
  CHECK(e.loss > 0.0);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "slim/error.hpp"
#include "slim/layers.hpp"
#include "slim/train.hpp"

using namespace slim;

namespace {

Sequence random_seq(std::size_t length, std::size_t dim, Rng& rng) {
  Sequence seq;
  for (std::size_t t = 0; t < length; ++t) {
    Matrix x(dim, 1);
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    seq.push_back(std::move(x));
  }
  return seq;
}

double dot_seq(const Sequence& a, const Sequence& w) {
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) total += a[t][i] * w[t][i];
  }
  return total;
}

double dot(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  return total;
}

void zero_cell(CellParams& p) {
  p.for_each([](std::string_view, Matrix& m) { m.fill(0.0); });
}

BiLstmLayer zero_grads(const BiLstmLayer& layer) {
  BiLstmLayer g = layer;
  g.forward_cell = layer.forward_cell.zeros_like();
  g.backward_cell = layer.backward_cell.zeros_like();
  return g;
}

void randomize_cell(CellParams& p, Rng& rng) {
  p.for_each([&rng](std::string_view, Matrix& m) {
    for (double& v : m.values()) v = rng.uniform(-0.8, 0.8);
  });
}

}  // namespace

TEST_CASE("embedding forward") {
  const EmbeddingLayer layer{Matrix::identity(3), true};
  const std::vector<TokenId> tokens{0, 2};
  const Sequence out = embed_forward(layer, tokens);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == Matrix::column({1, 0, 0}));
  CHECK(out[1] == Matrix::column({0, 0, 1}));
  CHECK(embed_forward(layer, std::vector<TokenId>{}).empty());
  const std::vector<TokenId> bad{1, 3};
  try {
    (void)embed_forward(layer, bad);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("position 1") != std::string::npos);
  }
}

TEST_CASE("embedding backward scatters only when trainable") {
  EmbeddingLayer layer{Matrix(3, 2, 0.5), true};
  const std::vector<TokenId> tokens{2, 0, 2};
  const Sequence d{Matrix::column({1, 2}), Matrix::column({3, 4}), Matrix::column({5, 6})};
  EmbeddingLayer grads{Matrix(3, 2), true};
  embed_backward(layer, tokens, d, grads);
  CHECK(grads.table == Matrix{{3, 4}, {0, 0}, {6, 8}});
  layer.trainable = false;
  EmbeddingLayer frozen{Matrix(3, 2), false};
  embed_backward(layer, tokens, d, frozen);
  CHECK(frozen.table == Matrix(3, 2));
}

TEST_CASE("conv1d examples") {
  Rng rng(1);
  Conv1DLayer id = make_conv1d(2, 2, 1, Activation::kLinear, rng);
  id.weights = Matrix::identity(2);
  id.bias.fill(0.0);
  const Sequence seq = random_seq(4, 2, rng);
  CHECK(conv1d_forward(id, seq) == seq);

  Conv1DLayer sum = make_conv1d(1, 1, 2, Activation::kLinear, rng);
  sum.weights = Matrix{{1, 1}};
  sum.bias.fill(0.0);
  const Sequence in{Matrix::column({1}), Matrix::column({2}), Matrix::column({3})};
  const Sequence out = conv1d_forward(sum, in);
  REQUIRE(out.size() == 2);
  CHECK(out[0][0] == 3);
  CHECK(out[1][0] == 5);
  CHECK_THROWS_AS(conv1d_forward(sum, Sequence{Matrix::column({1})}), DataError);
}

TEST_CASE("conv1d backward matches finite differences") {
  Rng rng(2);
  for (Activation act : {Activation::kLinear, Activation::kTanh, Activation::kRelu}) {
    Conv1DLayer layer = make_conv1d(3, 4, 3, act, rng);
    for (double& v : layer.bias.values()) v = rng.uniform(-0.5, 0.5);
    Sequence seq = random_seq(7, 3, rng);
    const Sequence w = random_seq(5, 4, rng);
    Conv1DCache cache;
    (void)conv1d_forward(layer, seq, &cache);
    Conv1DLayer grads = layer;
    grads.weights.fill(0.0);
    grads.bias.fill(0.0);
    const Sequence dseq = conv1d_backward(layer, cache, w, grads);
    std::vector<NamedParam> params{{"weights", &layer.weights}, {"bias", &layer.bias}};
    std::vector<const Matrix*> analytic{&grads.weights, &grads.bias};
    for (std::size_t t = 0; t < seq.size(); ++t) {
      params.push_back({"x" + std::to_string(t), &seq[t]});
      analytic.push_back(&dseq[t]);
    }
    const auto loss = [&] { return dot_seq(conv1d_forward(layer, seq), w); };
    CHECK(check_gradients(params, analytic, loss, 1e-6, 1e-5).passed());
  }
}

TEST_CASE("maxpool examples") {
  const MaxPool1DLayer pool{2};
  const Sequence seq{Matrix::column({1}), Matrix::column({3}), Matrix::column({2}),
                     Matrix::column({2})};
  const MaxPoolResult r = maxpool_forward(pool, seq);
  REQUIRE(r.output.size() == 2);
  CHECK(r.output[0][0] == 3);
  CHECK(r.output[1][0] == 2);
  CHECK(r.cache.argmax[1][0] == 2);
  CHECK(maxpool_forward(pool, Sequence{Matrix::column({5})}).output.empty());

  const Sequence constant(6, Matrix::column({1, 1}));
  const MaxPoolResult c = maxpool_forward(MaxPool1DLayer{3}, constant);
  REQUIRE(c.output.size() == 2);
  CHECK(c.cache.argmax[0] == std::vector<std::size_t>{0, 0});
  CHECK(c.cache.argmax[1] == std::vector<std::size_t>{3, 3});

  const MaxPoolResult small = maxpool_forward(pool, Sequence{Matrix::column({1}), Matrix::column({3})});
  const Sequence back = maxpool_backward(pool, small.cache, Sequence{Matrix::column({7})});
  REQUIRE(back.size() == 2);
  CHECK(back[0][0] == 0);
  CHECK(back[1][0] == 7);
}

TEST_CASE("maxpool backward matches finite differences") {
  Rng rng(3);
  Sequence seq = random_seq(9, 3, rng);
  const MaxPool1DLayer pool{2};
  const MaxPoolResult r = maxpool_forward(pool, seq);
  const Sequence w = random_seq(r.output.size(), 3, rng);
  const Sequence d = maxpool_backward(pool, r.cache, w);
  REQUIRE(d.size() == 9);
  std::vector<NamedParam> params;
  std::vector<const Matrix*> analytic;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    params.push_back({"x" + std::to_string(t), &seq[t]});
    analytic.push_back(&d[t]);
  }
  const auto loss = [&] { return dot_seq(maxpool_forward(pool, seq).output, w); };
  CHECK(check_gradients(params, analytic, loss, 1e-7, 1e-5).passed());
}

TEST_CASE("dropout masks") {
  Rng rng(4);
  const double rate = 0.3;
  const double keep = 1.0 / (1.0 - rate);
  Matrix sum(16, 1);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Matrix m = sample_dropout_mask(16, rate, rng);
    for (double v : m.values()) CHECK((v == 0.0 || v == keep));
    sum.add_scaled(m);
  }
  for (double v : sum.values()) CHECK(std::abs(v / draws - 1.0) < 0.02);
  CHECK(sample_dropout_mask(4, 0.0, rng) == Matrix(4, 1, 1.0));
  CHECK_THROWS_AS(sample_dropout_mask(4, 1.0, rng), ConfigError);
  CHECK_THROWS_AS((DropoutSpec{0.2, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((DropoutSpec{-0.1, 0.3}.validate()), ConfigError);
}

TEST_CASE("bilstm zero dynamics and empty input") {
  Rng rng(5);
  BiLstmLayer layer = make_bilstm(Variant::kStandard, 3, 2, CellConfig{}, DropoutSpec{}, rng);
  zero_cell(layer.forward_cell);
  zero_cell(layer.backward_cell);
  const BiLstmResult r = bilstm_forward(layer, random_seq(5, 3, rng), Mode::kEval, nullptr);
  CHECK(r.output == Matrix(4, 1));
  CHECK_THROWS_AS(bilstm_forward(layer, Sequence{}, Mode::kEval, nullptr), DataError);
}

TEST_CASE("bilstm palindrome symmetry") {
  Rng rng(6);
  BiLstmLayer layer = make_bilstm(Variant::kSlim1, 2, 3, CellConfig{}, DropoutSpec{}, rng);
  layer.backward_cell = layer.forward_cell;
  Sequence seq = random_seq(3, 2, rng);
  seq.push_back(seq[1]);
  seq.push_back(seq[0]);
  const Matrix out = bilstm_forward(layer, seq, Mode::kEval, nullptr).output;
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == out[i + 3]);
}

TEST_CASE("bilstm with zero rates trains like eval") {
  Rng rng(7);
  const BiLstmLayer layer =
      make_bilstm(Variant::kStandard, 3, 4, CellConfig{}, DropoutSpec{0.0, 0.0}, rng);
  const Sequence seq = random_seq(6, 3, rng);
  Rng drop(1);
  CHECK(bilstm_forward(layer, seq, Mode::kTrain, &drop).output ==
        bilstm_forward(layer, seq, Mode::kEval, nullptr).output);
}

TEST_CASE("bilstm masks are reused at every step") {
  Rng rng(8);
  const BiLstmLayer layer =
      make_bilstm(Variant::kStandard, 3, 4, CellConfig{}, DropoutSpec{0.4, 0.4}, rng);
  const Sequence seq = random_seq(8, 3, rng);
  Rng drop(2);
  const BiLstmResult r = bilstm_forward(layer, seq, Mode::kTrain, &drop);
  for (const DirectionCache* dir : {&r.cache.forward, &r.cache.backward}) {
    REQUIRE(dir->input_mask.size() == 3);
    REQUIRE(dir->recurrent_mask.size() == 4);
    for (std::size_t t = 1; t < dir->steps.size(); ++t) {
      const StepCache& prev = dir->steps[t - 1];
      const Matrix h = hadamard(prev.output_gate, prev.cell_out);
      CHECK(dir->steps[t].h_prev == hadamard(h, dir->recurrent_mask));
    }
  }
  for (std::size_t t = 0; t < seq.size(); ++t) {
    CHECK(r.cache.forward.steps[t].x == hadamard(seq[t], r.cache.forward.input_mask));
    CHECK(r.cache.backward.steps[t].x ==
          hadamard(seq[seq.size() - 1 - t], r.cache.backward.input_mask));
  }
}

TEST_CASE("bilstm backward") {
  Rng rng(9);
  for (Variant v : kAllVariants) {
    CAPTURE(to_string(v));
    BiLstmLayer layer = make_bilstm(v, 2, 2, CellConfig{}, DropoutSpec{0.25, 0.35}, rng);
    randomize_cell(layer.forward_cell, rng);
    randomize_cell(layer.backward_cell, rng);
    Sequence seq = random_seq(3, 2, rng);
    const Matrix w = Matrix::column({0.7, -1.1, 0.4, 0.9});

    // Zero upstream gives zero gradients.
    {
      Rng drop(3);
      const BiLstmResult r = bilstm_forward(layer, seq, Mode::kTrain, &drop);
      BiLstmLayer grads = zero_grads(layer);
      const Sequence d = bilstm_backward(layer, r.cache, Matrix(4, 1), grads);
      for (const Matrix& m : d) CHECK(m == Matrix(2, 1));
      grads.forward_cell.for_each([](std::string_view, const Matrix& m) { CHECK(m == Matrix(m.rows(), m.cols())); });
    }

    // Finite differences with the dropout masks replayed.
    Rng drop(4);
    const BiLstmResult r = bilstm_forward(layer, seq, Mode::kTrain, &drop);
    BiLstmLayer grads = zero_grads(layer);
    const Sequence dseq = bilstm_backward(layer, r.cache, w, grads);
    std::vector<NamedParam> params;
    std::vector<const Matrix*> analytic;
    layer.forward_cell.for_each([&](std::string_view n, Matrix& m) { params.push_back({"fwd." + std::string(n), &m}); });
    layer.backward_cell.for_each([&](std::string_view n, Matrix& m) { params.push_back({"bwd." + std::string(n), &m}); });
    grads.forward_cell.for_each([&](std::string_view, const Matrix& m) { analytic.push_back(&m); });
    grads.backward_cell.for_each([&](std::string_view, const Matrix& m) { analytic.push_back(&m); });
    for (std::size_t t = 0; t < seq.size(); ++t) {
      params.push_back({"x" + std::to_string(t), &seq[t]});
      analytic.push_back(&dseq[t]);
    }
    const auto loss = [&] {
      Rng replay(4);
      return dot(bilstm_forward(layer, seq, Mode::kTrain, &replay).output, w);
    };
    const GradCheckReport report = check_gradients(params, analytic, loss, 1e-6, 1e-5);
    CHECK(report.passed());
  }
}

TEST_CASE("bilstm directions are independent") {
  Rng rng(10);
  BiLstmLayer layer = make_bilstm(Variant::kStandard, 3, 4, CellConfig{}, DropoutSpec{}, rng);
  const Sequence seq = random_seq(5, 3, rng);
  Rng drop(5);
  const BiLstmResult r = bilstm_forward(layer, seq, Mode::kTrain, &drop);

  BiLstmLayer only_fwd = zero_grads(layer);
  (void)bilstm_backward(layer, r.cache, Matrix::column({1, -1, 2, 0.5, 0, 0, 0, 0}), only_fwd);
  only_fwd.backward_cell.for_each([](std::string_view, const Matrix& m) { CHECK(m == Matrix(m.rows(), m.cols())); });
  bool any = false;
  only_fwd.forward_cell.for_each([&any](std::string_view, const Matrix& m) { any = any || !(m == Matrix(m.rows(), m.cols())); });
  CHECK(any);

  BiLstmLayer only_bwd = zero_grads(layer);
  (void)bilstm_backward(layer, r.cache, Matrix::column({0, 0, 0, 0, 1, -1, 2, 0.5}), only_bwd);
  only_bwd.forward_cell.for_each([](std::string_view, const Matrix& m) { CHECK(m == Matrix(m.rows(), m.cols())); });
}

TEST_CASE("dense layer") {
  Rng rng(11);
  DenseLayer id = make_dense(3, 3, Activation::kLinear, rng);
  id.weights = Matrix::identity(3);
  id.bias.fill(0.0);
  const Matrix x = Matrix::column({1, -2, 3});
  CHECK(dense_forward(id, x) == x);

  for (Activation act : kAllActivations) {
    DenseLayer layer = make_dense(4, 3, act, rng);
    for (double& v : layer.bias.values()) v = rng.uniform(-0.5, 0.5);
    Matrix in = Matrix::column({0.3, -0.8, 0.5, 1.2});
    const Matrix w = Matrix::column({1.0, -0.4, 0.6});
    const Matrix y = dense_forward(layer, in);
    DenseLayer grads = layer;
    grads.weights.fill(0.0);
    grads.bias.fill(0.0);
    const Matrix dx = dense_backward(layer, in, y, w, grads);
    const std::vector<NamedParam> params{{"weights", &layer.weights}, {"bias", &layer.bias}, {"x", &in}};
    const std::vector<const Matrix*> analytic{&grads.weights, &grads.bias, &dx};
    const auto loss = [&] { return dot(dense_forward(layer, in), w); };
    CHECK(check_gradients(params, analytic, loss, 1e-6, 1e-5).passed());
  }
  CHECK_THROWS_AS(dense_forward(id, Matrix::column({1, 2})), ConfigError);
}

TEST_CASE("model assembly") {
  Rng rng(12);
  const ArchSpec arch;
  const Model model = model_assemble(arch, rng);
  CHECK(model.convs.size() == 3);
  std::uint64_t total = 0;
  model.for_each_param([&total](const std::string&, const Matrix& m) { total += m.size(); });
  CHECK(model.parameter_count() == total);
  const std::uint64_t layers = arch.vocab_size * arch.embed_dim +
                               (8 * 3 * 8 + 8) * 3 + 2 * param_count(Variant::kStandard, 8, 6) +
                               (12 * 8 + 8) + (8 * 4 + 4);
  CHECK(total == layers);

  ArchSpec s1 = arch;
  s1.variant = Variant::kSlim1;
  ArchSpec s3 = arch;
  s3.variant = Variant::kSlim3;
  Rng r1(1);
  Rng r3(1);
  const std::uint64_t n = arch.hidden;
  CHECK(model_assemble(s1, r1).parameter_count() - model_assemble(s3, r3).parameter_count() ==
        2 * 3 * n * n);

  const std::vector<TokenId> pad(arch.seq_len, 0);
  const Matrix probs = predict(model, pad);
  double sum = 0.0;
  for (double p : probs.values()) sum += p;
  CHECK(std::abs(sum - 1.0) < 1e-12);

  ArchSpec short_seq = arch;
  short_seq.seq_len = 12;
  try {
    (void)model_assemble(short_seq, rng);
    FAIL("expected a shape error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("conv") != std::string::npos);
    CHECK(msg.find("pool") != std::string::npos);
  }

  const Matrix wrong(arch.vocab_size, arch.embed_dim + 1);
  CHECK_THROWS_AS(model_assemble(arch, rng, &wrong), ConfigError);
  ArchSpec frozen = arch;
  frozen.embeddings_trainable = false;
  const Model fm = model_assemble(frozen, rng);
  CHECK(fm.parameter_count() == total - arch.vocab_size * arch.embed_dim);
}

TEST_CASE("full model gradient check at desk scale") {
  ArchSpec arch;
  arch.conv_dropout = 0.0;
  arch.lstm_dropout = {0.0, 0.0};
  for (Variant v : kAllVariants) {
    CAPTURE(to_string(v));
    arch.variant = v;
    Rng rng(13);
    Model model = model_assemble(arch, rng);
    Example ex;
    for (std::size_t t = 0; t < arch.seq_len; ++t) ex.tokens.push_back(static_cast<TokenId>(rng.below(arch.vocab_size)));
    ex.label = 2;
    const GradCheckReport r = grad_check_model(model, ex, 1e-5, 1e-4);
    if (v == Variant::kStandard) CHECK(r.passed());
    // Remaining violations must be rounding-floor scalars (see the cell test).
    for (const GradViolation& g : r.violations) {
      CAPTURE(g.name);
      CAPTURE(g.rel_error);
      CHECK(std::max(std::abs(g.analytic), std::abs(g.numeric)) < 1e-5);
      CHECK(std::abs(g.analytic - g.numeric) < 1e-10);
    }
    CHECK(r.scalars == model.parameter_count());
  }
}

TEST_CASE("model backward replays conv and recurrent dropout") {
  ArchSpec arch;
  arch.vocab_size = 12;
  arch.seq_len = 14;
  arch.conv_blocks = 1;
  arch.hidden = 3;
  arch.conv_dropout = 0.3;
  arch.lstm_dropout = {0.2, 0.3};
  arch.dense_activation = Activation::kTanh;
  arch.conv_activation = Activation::kTanh;
  Rng rng(14);
  Model model = model_assemble(arch, rng);
  std::vector<TokenId> tokens;
  for (std::size_t t = 0; t < arch.seq_len; ++t) tokens.push_back(static_cast<TokenId>(rng.below(12)));
  const std::size_t label = 1;

  Rng drop(6);
  const ModelResult r = model_forward(model, tokens, Mode::kTrain, &drop);
  Model grads = model.zeros_like();
  model_backward(model, r.cache, cross_entropy_logit_grad(r.probs, label), grads);
  std::vector<NamedParam> params;
  model.for_each_param([&params](const std::string& n, Matrix& m) { params.push_back({n, &m}); });
  const auto loss = [&] {
    Rng replay(6);
    return cross_entropy(model_forward(model, tokens, Mode::kTrain, &replay).probs, label);
  };
  CHECK(check_gradients(params, param_pointers(std::as_const(grads)), loss, 1e-6, 1e-5).passed());
}

#include "slim/layers.hpp"

#include <fmt/format.h>

#include "slim/error.hpp"
#include "slim/init.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Embedding

Sequence embed_forward(const EmbeddingLayer& layer, std::span<const TokenId> tokens) {
  Sequence out;
  out.reserve(tokens.size());
  const std::size_t dim = layer.dim();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= layer.vocab_size()) {
      throw DataError(fmt::format("token id {} at position {} outside vocabulary of size {}", id,
                                  t, layer.vocab_size()));
    }
    Matrix row(dim, 1);
    for (std::size_t j = 0; j < dim; ++j) row[j] = layer.table(static_cast<std::size_t>(id), j);
    out.push_back(std::move(row));
  }
  return out;
}

void embed_backward(const EmbeddingLayer& layer, std::span<const TokenId> tokens,
                    const Sequence& d_seq, EmbeddingLayer& grads) {
  if (!layer.trainable) return;
  if (d_seq.size() != tokens.size()) {
    throw ConfigError(fmt::format("embed_backward: {} gradients for {} tokens", d_seq.size(),
                                  tokens.size()));
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = static_cast<std::size_t>(tokens[t]);
    for (std::size_t j = 0; j < layer.dim(); ++j) grads.table(row, j) += d_seq[t][j];
  }
}

// ---------------------------------------------------------------------------
// Conv1D

Conv1DLayer make_conv1d(std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel_width, Activation activation, Rng& rng) {
  Conv1DLayer layer;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel_width = kernel_width;
  layer.weights = glorot_uniform(out_channels, in_channels * kernel_width, rng);
  layer.bias = Matrix(out_channels, 1);
  layer.activation = activation;
  return layer;
}

Sequence conv1d_forward(const Conv1DLayer& layer, const Sequence& seq, Conv1DCache* cache) {
  const std::size_t k = layer.kernel_width;
  const std::size_t in = layer.in_channels;
  if (seq.size() < k) {
    throw DataError(fmt::format("conv1d: sequence of length {} is shorter than kernel width {}",
                                seq.size(), k));
  }
  const std::size_t length = seq.size() - k + 1;
  Sequence out;
  out.reserve(length);
  if (cache) {
    cache->windows.clear();
    cache->outputs.clear();
    cache->windows.reserve(length);
  }
  for (std::size_t t = 0; t < length; ++t) {
    Matrix window(k * in, 1);
    for (std::size_t j = 0; j < k; ++j) {
      const Matrix& x = seq[t + j];
      if (x.rows() != in || x.cols() != 1) {
        throw ConfigError(fmt::format("conv1d: input step is {}, expected {}x1",
                                      x.shape_string(), in));
      }
      for (std::size_t c = 0; c < in; ++c) window[j * in + c] = x[c];
    }
    Matrix y = layer.bias;
    matvec_acc(layer.weights, window, y);
    apply_inplace(layer.activation, y);
    if (cache) cache->windows.push_back(std::move(window));
    out.push_back(std::move(y));
  }
  if (cache) cache->outputs = out;
  return out;
}

Sequence conv1d_backward(const Conv1DLayer& layer, const Conv1DCache& cache,
                         const Sequence& d_out, Conv1DLayer& grads) {
  if (d_out.size() != cache.outputs.size()) {
    throw ConfigError(fmt::format("conv1d_backward: {} gradients for {} outputs", d_out.size(),
                                  cache.outputs.size()));
  }
  const std::size_t k = layer.kernel_width;
  const std::size_t in = layer.in_channels;
  Sequence d_seq(d_out.size() + k - 1, Matrix(in, 1));
  for (std::size_t t = 0; t < d_out.size(); ++t) {
    const Matrix dz = backprop(layer.activation, cache.outputs[t], d_out[t]);
    outer_acc(dz, cache.windows[t], grads.weights);
    grads.bias.add_scaled(dz);
    Matrix d_window(k * in, 1);
    matvec_t_acc(layer.weights, dz, d_window);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < in; ++c) d_seq[t + j][c] += d_window[j * in + c];
    }
  }
  return d_seq;
}

// ---------------------------------------------------------------------------
// MaxPool1D

MaxPoolResult maxpool_forward(const MaxPool1DLayer& layer, const Sequence& seq) {
  const std::size_t w = layer.pool_width;
  if (w == 0) throw ConfigError("maxpool: pool width must be positive");
  MaxPoolResult r;
  r.cache.input_length = seq.size();
  r.cache.channels = seq.empty() ? 0 : seq.front().rows();
  const std::size_t length = seq.size() / w;
  const std::size_t channels = r.cache.channels;
  r.output.reserve(length);
  r.cache.argmax.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    Matrix y(channels, 1);
    std::vector<std::size_t> idx(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t best = t * w;
      for (std::size_t j = t * w + 1; j < (t + 1) * w; ++j) {
        if (seq[j][c] > seq[best][c]) best = j;
      }
      y[c] = seq[best][c];
      idx[c] = best;
    }
    r.output.push_back(std::move(y));
    r.cache.argmax.push_back(std::move(idx));
  }
  return r;
}

Sequence maxpool_backward(const MaxPool1DLayer& /*layer*/, const MaxPoolCache& cache,
                          const Sequence& d_out) {
  if (d_out.size() != cache.argmax.size()) {
    throw ConfigError(fmt::format("maxpool_backward: {} gradients for {} outputs", d_out.size(),
                                  cache.argmax.size()));
  }
  if (cache.channels == 0) return Sequence(cache.input_length);
  Sequence d_seq(cache.input_length, Matrix(cache.channels, 1));
  for (std::size_t t = 0; t < d_out.size(); ++t) {
    for (std::size_t c = 0; c < cache.channels; ++c) {
      d_seq[cache.argmax[t][c]][c] += d_out[t][c];
    }
  }
  return d_seq;
}

// ---------------------------------------------------------------------------
// Dropout

void DropoutSpec::validate() const {
  for (double rate : {input_rate, recurrent_rate}) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError(fmt::format("dropout rate {} outside [0, 1)", rate));
    }
  }
}

Matrix sample_dropout_mask(std::size_t size, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(fmt::format("dropout rate {} outside [0, 1)", rate));
  }
  Matrix mask(size, 1);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = rng.next_uniform() < rate ? 0.0 : keep;
  return mask;
}

// ---------------------------------------------------------------------------
// BiLSTM

BiLstmLayer make_bilstm(Variant variant, std::size_t input_dim, std::size_t hidden_dim,
                        const CellConfig& config, const DropoutSpec& dropout, Rng& rng,
                        const InitOptions& init) {
  dropout.validate();
  BiLstmLayer layer;
  layer.forward_cell = init_cell(variant, input_dim, hidden_dim, rng, init);
  layer.backward_cell = init_cell(variant, input_dim, hidden_dim, rng, init);
  layer.config = config;
  layer.dropout = dropout;
  return layer;
}

namespace {

Matrix masked(const Matrix& v, const Matrix& mask) {
  return mask.empty() ? v : hadamard(v, mask);
}

// Runs one direction from a zero state; `reversed` consumes t = T-1 .. 0.
Matrix run_direction(const CellParams& cell, const CellConfig& config, const Sequence& seq,
                     bool reversed, Mode mode, const DropoutSpec& dropout, Rng* rng,
                     DirectionCache& cache, std::string_view label) {
  const std::size_t n = cell.hidden_dim;
  cache.steps.clear();
  cache.steps.reserve(seq.size());
  cache.input_mask = Matrix();
  cache.recurrent_mask = Matrix();
  if (mode == Mode::kTrain) {
    if (dropout.input_rate > 0.0 || dropout.recurrent_rate > 0.0) {
      if (rng == nullptr) throw ConfigError("bilstm: train-mode dropout needs an rng");
    }
    if (dropout.input_rate > 0.0) {
      cache.input_mask = sample_dropout_mask(cell.input_dim, dropout.input_rate, *rng);
    }
    if (dropout.recurrent_rate > 0.0) {
      cache.recurrent_mask = sample_dropout_mask(n, dropout.recurrent_rate, *rng);
    }
  }
  CellState state = CellState::zeros(n);
  for (std::size_t s = 0; s < seq.size(); ++s) {
    const std::size_t t = reversed ? seq.size() - 1 - s : s;
    const CellState in{masked(state.h, cache.recurrent_mask), std::move(state.c)};
    try {
      StepResult r = step_forward(cell, config, masked(seq[t], cache.input_mask), in);
      state = std::move(r.state);
      cache.steps.push_back(std::move(r.cache));
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("bilstm {} direction, step {}: {}", label, t, e.what()));
    }
  }
  return state.h;
}

void backprop_direction(const CellParams& cell, const CellConfig& config,
                        const DirectionCache& cache, const Matrix& dh_last, bool reversed,
                        CellParams& grads, Sequence& d_seq) {
  const std::size_t n = cell.hidden_dim;
  const std::size_t length = cache.steps.size();
  Matrix dh = dh_last;
  Matrix dc(n, 1);
  for (std::size_t s = length; s-- > 0;) {
    StepGradients g = step_backward(cell, config, cache.steps[s], dh, dc, grads);
    const std::size_t t = reversed ? length - 1 - s : s;
    d_seq[t].add_scaled(masked(g.dx, cache.input_mask));
    dh = masked(g.dh_prev, cache.recurrent_mask);
    dc = std::move(g.dc_prev);
  }
}

}  // namespace

BiLstmResult bilstm_forward(const BiLstmLayer& layer, const Sequence& seq, Mode mode,
                            Rng* rng) {
  if (seq.empty()) throw DataError("bilstm: empty input sequence");
  BiLstmResult r;
  const Matrix h_fwd = run_direction(layer.forward_cell, layer.config, seq, false, mode,
                                     layer.dropout, rng, r.cache.forward, "forward");
  const Matrix h_bwd = run_direction(layer.backward_cell, layer.config, seq, true, mode,
                                     layer.dropout, rng, r.cache.backward, "backward");
  r.output = vstack(h_fwd, h_bwd);
  return r;
}

Sequence bilstm_backward(const BiLstmLayer& layer, const BiLstmCache& cache,
                         const Matrix& d_output, BiLstmLayer& grads) {
  const std::size_t n = layer.hidden_dim();
  if (d_output.rows() != 2 * n || d_output.cols() != 1) {
    throw ConfigError(fmt::format("bilstm_backward: upstream is {}, expected {}x1",
                                  d_output.shape_string(), 2 * n));
  }
  Matrix dh_fwd(n, 1);
  Matrix dh_bwd(n, 1);
  for (std::size_t j = 0; j < n; ++j) {
    dh_fwd[j] = d_output[j];
    dh_bwd[j] = d_output[n + j];
  }
  Sequence d_seq(cache.forward.steps.size(), Matrix(layer.input_dim(), 1));
  backprop_direction(layer.forward_cell, layer.config, cache.forward, dh_fwd, false,
                     grads.forward_cell, d_seq);
  backprop_direction(layer.backward_cell, layer.config, cache.backward, dh_bwd, true,
                     grads.backward_cell, d_seq);
  return d_seq;
}

// ---------------------------------------------------------------------------
// Dense

DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng) {
  return {glorot_uniform(out, in, rng), Matrix(out, 1), activation};
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  Matrix y = layer.bias;
  matvec_acc(layer.weights, x, y);
  apply_inplace(layer.activation, y);
  return y;
}

Matrix dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& y,
                      const Matrix& dy, DenseLayer& grads) {
  const Matrix dz = backprop(layer.activation, y, dy);
  outer_acc(dz, x, grads.weights);
  grads.bias.add_scaled(dz);
  Matrix dx(layer.weights.cols(), 1);
  matvec_t_acc(layer.weights, dz, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Model

std::size_t ArchSpec::recurrent_length() const {
  std::size_t length = seq_len;
  std::string previous = "embedding";
  for (std::size_t b = 1; b <= conv_blocks; ++b) {
    const std::string conv = fmt::format("conv1d[{}]", b);
    if (length < conv_kernel) {
      throw ConfigError(fmt::format("{} emits length {} but {} needs at least {}", previous,
                                    length, conv, conv_kernel));
    }
    length = length - conv_kernel + 1;
    const std::string pool = fmt::format("maxpool1d[{}]", b);
    if (length / pool_width == 0) {
      throw ConfigError(fmt::format("{} emits length {} but {} with width {} needs at least {}",
                                    conv, length, pool, pool_width, pool_width));
    }
    length /= pool_width;
    previous = pool;
  }
  if (length == 0) {
    throw ConfigError(fmt::format("{} emits an empty sequence into bilstm", previous));
  }
  return length;
}

void ArchSpec::validate() const {
  auto positive = [](std::size_t v, std::string_view what) {
    if (v == 0) throw ConfigError(fmt::format("{} must be positive", what));
  };
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(seq_len, "seq_len");
  positive(hidden, "hidden");
  positive(dense_units, "dense_units");
  positive(classes, "classes");
  if (conv_blocks > 0) {
    positive(conv_filters, "conv_filters");
    positive(conv_kernel, "conv_kernel");
    positive(pool_width, "pool_width");
    if (!(conv_dropout >= 0.0 && conv_dropout < 1.0)) {
      throw ConfigError(fmt::format("conv_dropout {} outside [0, 1)", conv_dropout));
    }
  }
  lstm_dropout.validate();
  (void)recurrent_length();
}

Model Model::zeros_like() const {
  Model out = *this;
  out.for_each_param([](const std::string&, Matrix& m) { m.fill(0.0); });
  if (!embedding.trainable) out.embedding.table = Matrix();
  return out;
}

std::uint64_t Model::parameter_count() const {
  std::uint64_t total = 0;
  for_each_param([&total](const std::string&, const Matrix& m) { total += m.size(); });
  return total;
}

Model model_assemble(const ArchSpec& arch, Rng& rng, const Matrix* pretrained) {
  arch.validate();
  Model model;
  model.arch = arch;
  if (pretrained) {
    if (pretrained->rows() != arch.vocab_size || pretrained->cols() != arch.embed_dim) {
      throw ConfigError(fmt::format("pretrained embeddings are {}, architecture expects {}x{}",
                                    pretrained->shape_string(), arch.vocab_size,
                                    arch.embed_dim));
    }
    model.embedding.table = *pretrained;
  } else {
    model.embedding.table = glorot_uniform(arch.vocab_size, arch.embed_dim, rng);
  }
  model.embedding.trainable = arch.embeddings_trainable;

  std::size_t channels = arch.embed_dim;
  for (std::size_t b = 0; b < arch.conv_blocks; ++b) {
    model.convs.push_back(
        make_conv1d(channels, arch.conv_filters, arch.conv_kernel, arch.conv_activation, rng));
    channels = arch.conv_filters;
  }
  model.pool.pool_width = arch.pool_width;
  model.bilstm = make_bilstm(arch.variant, channels, arch.hidden, arch.cell, arch.lstm_dropout,
                             rng, InitOptions{arch.forget_bias, 0.0});
  model.hidden = make_dense(2 * arch.hidden, arch.dense_units, arch.dense_activation, rng);
  model.head = make_dense(arch.dense_units, arch.classes, Activation::kSoftmax, rng);
  return model;
}

ModelResult model_forward(const Model& model, std::span<const TokenId> tokens, Mode mode,
                          Rng* rng) {
  ModelResult r;
  ModelCache& cache = r.cache;
  cache.tokens.assign(tokens.begin(), tokens.end());
  Sequence seq = embed_forward(model.embedding, tokens);

  const double rate = model.arch.conv_dropout;
  const bool drop = mode == Mode::kTrain && rate > 0.0;
  if (drop && rng == nullptr) throw ConfigError("model_forward: train-mode dropout needs an rng");
  cache.convs.resize(model.convs.size());
  cache.pools.resize(model.convs.size());
  cache.dropout_masks.assign(drop ? model.convs.size() : 0, Sequence());
  for (std::size_t b = 0; b < model.convs.size(); ++b) {
    seq = conv1d_forward(model.convs[b], seq, &cache.convs[b]);
    MaxPoolResult pooled = maxpool_forward(model.pool, seq);
    seq = std::move(pooled.output);
    cache.pools[b] = std::move(pooled.cache);
    if (drop) {
      for (Matrix& x : seq) {
        Matrix mask = sample_dropout_mask(x.rows(), rate, *rng);
        x = hadamard(x, mask);
        cache.dropout_masks[b].push_back(std::move(mask));
      }
    }
  }

  BiLstmResult rec = bilstm_forward(model.bilstm, seq, mode, rng);
  cache.bilstm = std::move(rec.cache);
  cache.recurrent_out = std::move(rec.output);
  cache.hidden_out = dense_forward(model.hidden, cache.recurrent_out);
  r.probs = dense_forward(model.head, cache.hidden_out);
  if (!r.probs.all_finite() || !cache.hidden_out.all_finite()) {
    throw NumericError("non-finite output in dense head");
  }
  return r;
}

Matrix predict(const Model& model, std::span<const TokenId> tokens) {
  return model_forward(model, tokens, Mode::kEval, nullptr).probs;
}

void model_backward(const Model& model, const ModelCache& cache, const Matrix& d_logits,
                    Model& grads) {
  // Softmax head: the caller supplies the gradient at the pre-activation.
  outer_acc(d_logits, cache.hidden_out, grads.head.weights);
  grads.head.bias.add_scaled(d_logits);
  Matrix d_hidden(model.head.weights.cols(), 1);
  matvec_t_acc(model.head.weights, d_logits, d_hidden);

  const Matrix d_rec =
      dense_backward(model.hidden, cache.recurrent_out, cache.hidden_out, d_hidden, grads.hidden);
  Sequence d_seq = bilstm_backward(model.bilstm, cache.bilstm, d_rec, grads.bilstm);

  for (std::size_t b = model.convs.size(); b-- > 0;) {
    if (!cache.dropout_masks.empty()) {
      for (std::size_t t = 0; t < d_seq.size(); ++t) {
        d_seq[t] = hadamard(d_seq[t], cache.dropout_masks[b][t]);
      }
    }
    d_seq = maxpool_backward(model.pool, cache.pools[b], d_seq);
    d_seq = conv1d_backward(model.convs[b], cache.convs[b], d_seq, grads.convs[b]);
  }
  embed_backward(model.embedding, cache.tokens, d_seq, grads.embedding);
}

}  // namespace slim

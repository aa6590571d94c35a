#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slim/activations.hpp"
#include "slim/cell.hpp"
#include "slim/matrix.hpp"
#include "slim/rng.hpp"

namespace slim {

/// Time-ordered column vectors.
using Sequence = std::vector<Matrix>;
using TokenId = std::int32_t;

enum class Mode { kTrain, kEval };

// Layers are plain parameter structs; forward/backward are free functions.
// A zero-initialized copy of a layer doubles as its gradient accumulator.

// ---------------------------------------------------------------------------
// Embedding

struct EmbeddingLayer {
  Matrix table;  // vocab_size x dim
  bool trainable = true;

  std::size_t vocab_size() const { return table.rows(); }
  std::size_t dim() const { return table.cols(); }
};

/// Row lookup. Throws DataError naming the position of an out-of-range id.
Sequence embed_forward(const EmbeddingLayer& layer, std::span<const TokenId> tokens);
/// Scatter-adds d_seq into the rows of grads.table. No-op unless trainable.
void embed_backward(const EmbeddingLayer& layer, std::span<const TokenId> tokens,
                    const Sequence& d_seq, EmbeddingLayer& grads);

// ---------------------------------------------------------------------------
// Conv1D: valid cross-correlation, then bias, then activation.

struct Conv1DLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_width = 0;
  Matrix weights;  // out x (kernel_width * in); column j*in + c is offset j, channel c
  Matrix bias;     // out x 1
  Activation activation = Activation::kRelu;
};

struct Conv1DCache {
  Sequence windows;
  Sequence outputs;
};

Conv1DLayer make_conv1d(std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel_width, Activation activation, Rng& rng);
Sequence conv1d_forward(const Conv1DLayer& layer, const Sequence& seq,
                        Conv1DCache* cache = nullptr);
Sequence conv1d_backward(const Conv1DLayer& layer, const Conv1DCache& cache,
                         const Sequence& d_out, Conv1DLayer& grads);

// ---------------------------------------------------------------------------
// MaxPool1D: non-overlapping windows, remainder dropped, ties to first index.

struct MaxPool1DLayer {
  std::size_t pool_width = 2;
};

struct MaxPoolCache {
  std::size_t input_length = 0;
  std::size_t channels = 0;
  // argmax[t][c] is the input time index chosen for output t, channel c.
  std::vector<std::vector<std::size_t>> argmax;
};

struct MaxPoolResult {
  Sequence output;
  MaxPoolCache cache;
};

MaxPoolResult maxpool_forward(const MaxPool1DLayer& layer, const Sequence& seq);
Sequence maxpool_backward(const MaxPool1DLayer& layer, const MaxPoolCache& cache,
                          const Sequence& d_out);

// ---------------------------------------------------------------------------
// Dropout (inverted scaling)

struct DropoutSpec {
  double input_rate = 0.2;
  double recurrent_rate = 0.3;
  void validate() const;
};

/// Entries are 0 or 1/(1-rate). rate must be in [0, 1).
Matrix sample_dropout_mask(std::size_t size, double rate, Rng& rng);

// ---------------------------------------------------------------------------
// Bidirectional LSTM, returning the concatenated final hidden states.

struct BiLstmLayer {
  CellParams forward_cell;
  CellParams backward_cell;
  CellConfig config;
  DropoutSpec dropout;

  std::size_t input_dim() const { return forward_cell.input_dim; }
  std::size_t hidden_dim() const { return forward_cell.hidden_dim; }
};

struct DirectionCache {
  std::vector<StepCache> steps;  // in processing order
  Matrix input_mask;             // empty in eval mode or at rate 0
  Matrix recurrent_mask;
};

struct BiLstmCache {
  DirectionCache forward;
  DirectionCache backward;
};

struct BiLstmResult {
  Matrix output;  // [h_T forward ; h_1 backward], 2n x 1
  BiLstmCache cache;
};

BiLstmLayer make_bilstm(Variant variant, std::size_t input_dim, std::size_t hidden_dim,
                        const CellConfig& config, const DropoutSpec& dropout, Rng& rng,
                        const InitOptions& init = {});
/// Masks are drawn once per sequence in train mode; rng may be null in eval
/// mode or when both dropout rates are zero.
BiLstmResult bilstm_forward(const BiLstmLayer& layer, const Sequence& seq, Mode mode,
                            Rng* rng);
Sequence bilstm_backward(const BiLstmLayer& layer, const BiLstmCache& cache,
                         const Matrix& d_output, BiLstmLayer& grads);

// ---------------------------------------------------------------------------
// Dense

struct DenseLayer {
  Matrix weights;  // out x in
  Matrix bias;     // out x 1
  Activation activation = Activation::kLinear;
};

DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng);
Matrix dense_forward(const DenseLayer& layer, const Matrix& x);
/// dy is the gradient w.r.t. the layer output y; returns dx.
Matrix dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& y,
                      const Matrix& dy, DenseLayer& grads);

// ---------------------------------------------------------------------------
// Assembled model:
//   Embedding -> [Conv1D -> MaxPool1D -> Dropout] x conv_blocks -> BiLSTM
//   -> Dense(dense_activation) -> Dense(softmax)

struct ArchSpec {
  std::size_t vocab_size = 50;
  std::size_t embed_dim = 8;
  std::size_t seq_len = 30;
  std::size_t conv_blocks = 3;
  std::size_t conv_filters = 8;
  std::size_t conv_kernel = 3;
  std::size_t pool_width = 2;
  Activation conv_activation = Activation::kRelu;
  double conv_dropout = 0.2;
  Variant variant = Variant::kStandard;
  std::size_t hidden = 6;
  CellConfig cell;
  DropoutSpec lstm_dropout;
  double forget_bias = 1.0;
  std::size_t dense_units = 8;
  Activation dense_activation = Activation::kRelu;
  std::size_t classes = 4;
  bool embeddings_trainable = true;

  /// Sequence length entering the BiLSTM. Throws ConfigError naming the two
  /// layers whose shapes fail to chain.
  std::size_t recurrent_length() const;
  void validate() const;
};

struct Model {
  ArchSpec arch;
  EmbeddingLayer embedding;
  std::vector<Conv1DLayer> convs;
  MaxPool1DLayer pool;
  BiLstmLayer bilstm;
  DenseLayer hidden;
  DenseLayer head;

  /// Visits every trainable matrix as f(name, matrix) in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    visit(*this, f);
  }

  Model zeros_like() const;
  std::uint64_t parameter_count() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    if (self.embedding.trainable) f(std::string("embedding.table"), self.embedding.table);
    for (std::size_t i = 0; i < self.convs.size(); ++i) {
      f("conv" + std::to_string(i + 1) + ".weights", self.convs[i].weights);
      f("conv" + std::to_string(i + 1) + ".bias", self.convs[i].bias);
    }
    self.bilstm.forward_cell.for_each(
        [&f](std::string_view name, auto& m) { f("bilstm.fwd." + std::string(name), m); });
    self.bilstm.backward_cell.for_each(
        [&f](std::string_view name, auto& m) { f("bilstm.bwd." + std::string(name), m); });
    f(std::string("dense.weights"), self.hidden.weights);
    f(std::string("dense.bias"), self.hidden.bias);
    f(std::string("head.weights"), self.head.weights);
    f(std::string("head.bias"), self.head.bias);
  }
};

/// Builds the pipeline. If `pretrained` is given it must be vocab_size x
/// embed_dim and becomes the embedding table.
Model model_assemble(const ArchSpec& arch, Rng& rng, const Matrix* pretrained = nullptr);

struct ModelCache {
  std::vector<TokenId> tokens;
  std::vector<Conv1DCache> convs;
  std::vector<MaxPoolCache> pools;
  std::vector<Sequence> dropout_masks;  // per block; empty in eval mode
  BiLstmCache bilstm;
  Matrix recurrent_out;
  Matrix hidden_out;
};

struct ModelResult {
  Matrix probs;
  ModelCache cache;
};

/// rng drives dropout and may be null in eval mode.
ModelResult model_forward(const Model& model, std::span<const TokenId> tokens, Mode mode,
                          Rng* rng);
Matrix predict(const Model& model, std::span<const TokenId> tokens);
/// d_logits is the loss gradient at the softmax pre-activation.
void model_backward(const Model& model, const ModelCache& cache, const Matrix& d_logits,
                    Model& grads);

}  // namespace slim

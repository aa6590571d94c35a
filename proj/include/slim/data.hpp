#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slim/layers.hpp"
#include "slim/matrix.hpp"
#include "slim/rng.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Vocabulary and encoding

struct Vocab {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnknown = 1;

  std::unordered_map<std::string, TokenId> ids;
  std::vector<std::string> tokens;  // tokens[id]; "<pad>" and "<unk>" at 0 and 1

  std::size_t size() const { return tokens.size(); }
  /// kUnknown for words not in the vocabulary.
  TokenId id(const std::string& token) const;
};

/// Lowercases and splits on anything that is not an ASCII letter or digit.
/// Bytes >= 0x80 are kept so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Keeps the max_size - 2 most frequent tokens. Ids follow descending
/// frequency, ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size);

/// Unknown words map to kUnknown. Keeps the first length tokens and left-pads
/// with kPad.
std::vector<TokenId> encode(const Vocab& vocab, std::string_view text, std::size_t length);

// ---------------------------------------------------------------------------
// Datasets

enum class Split : std::uint8_t { kUnassigned, kTrain, kValidation };

struct Example {
  std::vector<TokenId> tokens;
  std::size_t label = 0;
  Split split = Split::kUnassigned;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t classes = 0;
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;

  std::size_t count(Split which) const;
  /// Fixed length, labels in range, ids in vocabulary. Throws DataError.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Deterministic shuffle by seed; the first ceil(N * val_fraction) examples
/// of the shuffled order become validation, the rest training.
void split(Dataset& data, double val_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pretrained embeddings (GloVe text format: "token v1 v2 ... vd" per line)

struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
};

EmbeddingTable read_embedding_file(const std::filesystem::path& path);

/// vocab_size x dim matrix. Rows of words found in the file are copied,
/// missing words get a Glorot row (bound sqrt(6 / (1 + dim))), padding is zero.
Matrix load_embeddings(const std::filesystem::path& path, const Vocab& vocab, Rng& rng);
Matrix embedding_matrix(const EmbeddingTable& table, const Vocab& vocab, Rng& rng);

// ---------------------------------------------------------------------------
// Corpus: one directory per class, one text file per document.

struct Corpus {
  Vocab vocab;
  Dataset data;
  std::vector<std::string> class_names;
};

Corpus load_corpus(const std::filesystem::path& root, std::size_t max_vocab,
                   std::size_t length);

// ---------------------------------------------------------------------------
// Synthetic tasks. Symbol s is token id s + 2 (0 and 1 are pad/unknown).

enum class SyntheticKind { kMajorityToken, kFirstTokenEcho };

std::string_view to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticTaskSpec {
  SyntheticKind kind = SyntheticKind::kMajorityToken;
  std::size_t alphabet = 4;
  std::size_t length = 20;
  std::size_t examples = 2000;
  std::size_t classes = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

/// majority-token: the label symbol leads every other class symbol by at
/// least two occurrences. first-token-echo: the label is the first non-pad
/// symbol. Labels are balanced (round robin, then shuffled).
Dataset gen_synthetic(const SyntheticTaskSpec& spec);

// ---------------------------------------------------------------------------
// Dataset cache, text format:
//   slim-dataset 1
//   classes <k> length <T> vocab <V> examples <N>
//   <label> <t|v|-> <id_1> ... <id_T>      (N lines)

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace slim

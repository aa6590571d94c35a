#include "slim/data.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <sstream>

#include "slim/error.hpp"
#include "slim/init.hpp"

namespace slim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Vocabulary

TokenId Vocab::id(const std::string& token) const {
  const auto it = ids.find(token);
  return it == ids.end() ? kUnknown : it->second;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    const bool word = (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') ||
                      (u >= 'A' && u <= 'Z') || u >= 0x80;
    if (word) {
      current.push_back((u >= 'A' && u <= 'Z') ? static_cast<char>(u - 'A' + 'a') : ch);
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size) {
  if (max_size < 3) throw ConfigError(fmt::format("vocabulary size {} below 3", max_size));
  std::map<std::string, std::size_t> freq;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map iteration is lexicographic, so a stable sort keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  vocab.tokens = {"<pad>", "<unk>"};
  for (const auto& [tok, count] : ranked) {
    if (vocab.tokens.size() >= max_size) break;
    vocab.ids.emplace(tok, static_cast<TokenId>(vocab.tokens.size()));
    vocab.tokens.push_back(tok);
  }
  return vocab;
}

std::vector<TokenId> encode(const Vocab& vocab, std::string_view text, std::size_t length) {
  if (length == 0) throw ConfigError("encode: sequence length must be positive");
  const auto words = tokenize(text);
  const std::size_t kept = std::min(words.size(), length);
  std::vector<TokenId> out(length - kept, Vocab::kPad);
  for (std::size_t i = 0; i < kept; ++i) out.push_back(vocab.id(words[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

std::size_t Dataset::count(Split which) const {
  return static_cast<std::size_t>(std::count_if(
      examples.begin(), examples.end(), [which](const Example& e) { return e.split == which; }));
}

void Dataset::validate() const {
  if (classes == 0) throw DataError("dataset has no classes");
  if (seq_len == 0) throw DataError("dataset sequence length is zero");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& e = examples[i];
    if (e.tokens.size() != seq_len) {
      throw DataError(fmt::format("example {} has length {}, expected {}", i, e.tokens.size(),
                                  seq_len));
    }
    if (e.label >= classes) {
      throw DataError(fmt::format("example {} has label {} outside [0, {})", i, e.label, classes));
    }
    for (std::size_t t = 0; t < e.tokens.size(); ++t) {
      if (e.tokens[t] < 0 || static_cast<std::size_t>(e.tokens[t]) >= vocab_size) {
        throw DataError(fmt::format("example {} position {}: token id {} outside vocabulary {}", i,
                                    t, e.tokens[t], vocab_size));
      }
    }
  }
}

namespace {

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

void split(Dataset& data, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError(fmt::format("validation fraction {} outside (0, 1)", val_fraction));
  }
  const std::size_t n = data.examples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  const auto n_val =
      static_cast<std::size_t>(std::ceil(static_cast<double>(n) * val_fraction - 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    data.examples[order[i]].split = i < n_val ? Split::kValidation : Split::kTrain;
  }
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingTable read_embedding_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read embedding file {}", path.string()));
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    std::string field;
    while (fields >> field) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw DataError(fmt::format("{}:{}: bad value '{}'", path.string(), line_no, field));
      }
      values.push_back(v);
    }
    if (values.empty()) {
      throw DataError(fmt::format("{}:{}: token without values", path.string(), line_no));
    }
    if (table.dim == 0) table.dim = values.size();
    if (values.size() != table.dim) {
      throw DataError(fmt::format("{}:{}: {} values, expected {}", path.string(), line_no,
                                  values.size(), table.dim));
    }
    table.vectors.emplace(std::move(token), std::move(values));
  }
  if (table.dim == 0) throw DataError(fmt::format("{}: no embeddings found", path.string()));
  return table;
}

Matrix embedding_matrix(const EmbeddingTable& table, const Vocab& vocab, Rng& rng) {
  Matrix out(vocab.size(), table.dim);
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (static_cast<TokenId>(id) == Vocab::kPad) continue;
    const auto it = table.vectors.find(vocab.tokens[id]);
    if (it != table.vectors.end()) {
      for (std::size_t j = 0; j < table.dim; ++j) out(id, j) = it->second[j];
    } else {
      const Matrix row = glorot_uniform(1, table.dim, rng);
      for (std::size_t j = 0; j < table.dim; ++j) out(id, j) = row[j];
    }
  }
  return out;
}

Matrix load_embeddings(const fs::path& path, const Vocab& vocab, Rng& rng) {
  return embedding_matrix(read_embedding_file(path), vocab, rng);
}

// ---------------------------------------------------------------------------
// Corpus

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Corpus load_corpus(const fs::path& root, std::size_t max_vocab, std::size_t length) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw IoError(fmt::format("corpus directory {} not found", root.string()));
  }
  Corpus corpus;
  std::vector<std::string> texts;
  std::vector<std::size_t> labels;
  for (const auto& class_dir : sorted_entries(root, true)) {
    const std::size_t label = corpus.class_names.size();
    corpus.class_names.push_back(class_dir.filename().string());
    for (const auto& file : sorted_entries(class_dir, false)) {
      texts.push_back(read_file(file));
      labels.push_back(label);
    }
  }
  if (corpus.class_names.empty()) {
    throw DataError(fmt::format("corpus {} has no class directories", root.string()));
  }
  corpus.vocab = build_vocab(texts, max_vocab);
  corpus.data.classes = corpus.class_names.size();
  corpus.data.seq_len = length;
  corpus.data.vocab_size = corpus.vocab.size();
  corpus.data.examples.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    corpus.data.examples.push_back({encode(corpus.vocab, texts[i], length), labels[i]});
  }
  corpus.data.validate();
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

std::string_view to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kMajorityToken: return "majority-token";
    case SyntheticKind::kFirstTokenEcho: return "first-token-echo";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "majority-token") return SyntheticKind::kMajorityToken;
  if (name == "first-token-echo") return SyntheticKind::kFirstTokenEcho;
  throw ConfigError(fmt::format(
      "unknown synthetic task '{}' (expected majority-token or first-token-echo)", name));
}

void SyntheticTaskSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (classes > alphabet) {
    throw ConfigError(fmt::format("synthetic task: {} classes exceed alphabet of {}", classes,
                                  alphabet));
  }
  if (kind == SyntheticKind::kMajorityToken && length < 2) {
    throw ConfigError("majority-token task needs length >= 2 for a margin of 2");
  }
  if (length == 0) throw ConfigError("synthetic task length must be positive");
}

namespace {

constexpr TokenId kFirstSymbol = 2;

std::vector<TokenId> majority_sequence(const SyntheticTaskSpec& spec, std::size_t label,
                                       Rng& rng) {
  std::vector<std::size_t> symbols(spec.length);
  std::vector<std::size_t> counts(spec.alphabet, 0);
  for (auto& s : symbols) {
    s = rng.below(spec.alphabet);
    ++counts[s];
  }
  for (;;) {
    std::size_t rival = label;
    for (std::size_t s = 0; s < spec.classes; ++s) {
      if (s != label && (rival == label || counts[s] > counts[rival])) rival = s;
    }
    if (counts[label] >= counts[rival] + 2) break;
    // Overwrite a random occurrence of the strongest rival, or of any
    // non-label symbol if the rival does not occur at all.
    std::vector<std::size_t> positions;
    for (std::size_t t = 0; t < symbols.size(); ++t) {
      if (symbols[t] == rival) positions.push_back(t);
    }
    if (positions.empty()) {
      for (std::size_t t = 0; t < symbols.size(); ++t) {
        if (symbols[t] != label) positions.push_back(t);
      }
    }
    const std::size_t t = positions[rng.below(positions.size())];
    --counts[symbols[t]];
    symbols[t] = label;
    ++counts[label];
  }
  std::vector<TokenId> out(spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) {
    out[t] = kFirstSymbol + static_cast<TokenId>(symbols[t]);
  }
  return out;
}

std::vector<TokenId> echo_sequence(const SyntheticTaskSpec& spec, std::size_t label, Rng& rng) {
  const std::size_t pad = spec.length > 1 ? rng.below(spec.length / 2 + 1) : 0;
  std::vector<TokenId> out(spec.length, Vocab::kPad);
  out[pad] = kFirstSymbol + static_cast<TokenId>(label);
  for (std::size_t t = pad + 1; t < spec.length; ++t) {
    out[t] = kFirstSymbol + static_cast<TokenId>(rng.below(spec.alphabet));
  }
  return out;
}

}  // namespace

Dataset gen_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::size_t> labels(spec.examples);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % spec.classes;
  shuffle(labels, rng);

  Dataset data;
  data.classes = spec.classes;
  data.seq_len = spec.length;
  data.vocab_size = spec.alphabet + static_cast<std::size_t>(kFirstSymbol);
  data.examples.reserve(spec.examples);
  for (const std::size_t label : labels) {
    auto tokens = spec.kind == SyntheticKind::kMajorityToken ? majority_sequence(spec, label, rng)
                                                             : echo_sequence(spec, label, rng);
    data.examples.push_back({std::move(tokens), label});
  }
  return data;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

constexpr std::string_view kCacheMagic = "slim-dataset";
constexpr int kCacheVersion = 1;

char split_code(Split s) {
  switch (s) {
    case Split::kTrain: return 't';
    case Split::kValidation: return 'v';
    case Split::kUnassigned: return '-';
  }
  return '-';
}

}  // namespace

void save_dataset(const fs::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << kCacheMagic << ' ' << kCacheVersion << '\n';
  out << "classes " << data.classes << " length " << data.seq_len << " vocab " << data.vocab_size
      << " examples " << data.examples.size() << '\n';
  for (const Example& e : data.examples) {
    out << e.label << ' ' << split_code(e.split);
    for (TokenId id : e.tokens) out << ' ' << id;
    out << '\n';
  }
  if (!out) throw IoError(fmt::format("write to {} failed", path.string()));
}

Dataset load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read dataset cache {}", path.string()));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCacheMagic || version != kCacheVersion) {
    throw DataError(fmt::format("{}: not a version {} dataset cache", path.string(),
                                kCacheVersion));
  }
  Dataset data;
  std::string k1, k2, k3, k4;
  std::size_t n = 0;
  in >> k1 >> data.classes >> k2 >> data.seq_len >> k3 >> data.vocab_size >> k4 >> n;
  if (!in || k1 != "classes" || k2 != "length" || k3 != "vocab" || k4 != "examples") {
    throw DataError(fmt::format("{}: malformed header", path.string()));
  }
  data.examples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example& e = data.examples[i];
    char code = 0;
    in >> e.label >> code;
    e.split = code == 't' ? Split::kTrain : code == 'v' ? Split::kValidation : Split::kUnassigned;
    e.tokens.resize(data.seq_len);
    for (TokenId& id : e.tokens) in >> id;
    if (!in || (code != 't' && code != 'v' && code != '-')) {
      throw DataError(fmt::format("{}: malformed example {}", path.string(), i));
    }
  }
  data.validate();
  return data;
}

}  // namespace slim

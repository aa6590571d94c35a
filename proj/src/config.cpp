#include "slim/config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <sstream>

#include "slim/error.hpp"

namespace slim {

namespace fs = std::filesystem;

std::string TaskSpec::label() const {
  if (kind == "corpus") return "corpus:" + corpus.string();
  if (kind == "cache") return "cache:" + cache.string();
  return fmt::format("{}(alphabet={},classes={},length={},examples={},seed={})", kind,
                     synthetic.alphabet, synthetic.classes, synthetic.length, synthetic.examples,
                     synthetic.seed);
}

TaskData load_task(const TaskSpec& task) {
  TaskData out;
  if (task.kind == "corpus") {
    Corpus corpus = load_corpus(task.corpus, task.max_vocab, task.corpus_length);
    if (!task.embeddings.empty()) {
      Rng rng(task.synthetic.seed);
      out.embeddings = load_embeddings(task.embeddings, corpus.vocab, rng);
    }
    out.data = std::move(corpus.data);
    return out;
  }
  if (!task.embeddings.empty()) {
    throw ConfigError("task.embeddings needs a vocabulary; only kind = corpus supports it");
  }
  if (task.kind == "cache") {
    out.data = load_dataset(task.cache);
    return out;
  }
  SyntheticTaskSpec spec = task.synthetic;
  spec.kind = parse_synthetic_kind(task.kind);
  out.data = gen_synthetic(spec);
  return out;
}

void SweepSpec::validate() const {
  if (variants.empty() || activations.empty() || learning_rates.empty() || seeds.empty()) {
    throw ConfigError("sweep: variants, activations, learning_rates and seeds must be nonempty");
  }
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ConfigError(fmt::format("sweep: learning rate {} must be positive", lr));
  }
}

std::size_t SweepSpec::run_count() const {
  return variants.size() * activations.size() * learning_rates.size() * seeds.size();
}

ArchSpec HarnessConfig::synthetic_task_arch() {
  ArchSpec arch;
  arch.embed_dim = 8;
  arch.conv_blocks = 0;
  arch.hidden = 16;
  arch.dense_units = 16;
  arch.seq_len = 20;
  arch.vocab_size = 6;
  return arch;
}

ExperimentConfig HarnessConfig::experiment(Variant variant, Activation activation,
                                           double learning_rate, std::uint64_t seed) const {
  ExperimentConfig c;
  c.variant = variant;
  c.activation = activation;
  c.learning_rate = learning_rate;
  c.epochs = sweep.epochs;
  c.seed = seed;
  c.task = task.label();
  c.arch = arch;
  c.optimizer = optimizer;
  c.batch_size = batch_size;
  c.val_fraction = val_fraction;
  return c;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string where;  // origin:line for messages
  std::string value;
};

std::size_t to_size(const Entry& e) {
  std::size_t v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: expected a nonnegative integer, got '{}'", e.where, e.value));
  }
  return v;
}

std::uint64_t to_u64(const Entry& e, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: expected an unsigned integer, got '{}'", e.where, text));
  }
  return v;
}

double to_double(const Entry& e, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", e.where, text));
  }
  return v;
}

bool to_bool(const Entry& e) {
  if (e.value == "true") return true;
  if (e.value == "false") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", e.where, e.value));
}

template <typename T, typename F>
std::vector<T> to_list(const Entry& e, F&& convert) {
  std::vector<T> out;
  for (const auto& item : split_list(e.value)) {
    try {
      out.push_back(convert(item));
    } catch (const ConfigError& err) {
      throw ConfigError(fmt::format("{}: {}", e.where, err.what()));
    }
  }
  if (out.empty()) throw ConfigError(fmt::format("{}: empty list", e.where));
  return out;
}

template <typename F>
auto wrap(const Entry& e, F&& convert) {
  try {
    return convert(e.value);
  } catch (const ConfigError& err) {
    throw ConfigError(fmt::format("{}: {}", e.where, err.what()));
  }
}

using Setter = std::function<void(HarnessConfig&, const Entry&)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"",
       {{"version",
         [](HarnessConfig&, const Entry& e) {
           if (e.value != "1") {
             throw ConfigError(fmt::format("{}: unsupported config version '{}'", e.where, e.value));
           }
         }}}},
      {"task",
       {{"kind",
         [](HarnessConfig& c, const Entry& e) {
           if (e.value != "corpus" && e.value != "cache") (void)wrap(e, parse_synthetic_kind);
           c.task.kind = e.value;
         }},
        {"alphabet", [](HarnessConfig& c, const Entry& e) { c.task.synthetic.alphabet = to_size(e); }},
        {"classes", [](HarnessConfig& c, const Entry& e) { c.task.synthetic.classes = to_size(e); }},
        {"length",
         [](HarnessConfig& c, const Entry& e) {
           c.task.synthetic.length = to_size(e);
           c.task.corpus_length = c.task.synthetic.length;
         }},
        {"examples", [](HarnessConfig& c, const Entry& e) { c.task.synthetic.examples = to_size(e); }},
        {"seed", [](HarnessConfig& c, const Entry& e) { c.task.synthetic.seed = to_u64(e, e.value); }},
        {"corpus", [](HarnessConfig& c, const Entry& e) { c.task.corpus = e.value; }},
        {"max_vocab", [](HarnessConfig& c, const Entry& e) { c.task.max_vocab = to_size(e); }},
        {"embeddings", [](HarnessConfig& c, const Entry& e) { c.task.embeddings = e.value; }},
        {"cache", [](HarnessConfig& c, const Entry& e) { c.task.cache = e.value; }}}},
      {"model",
       {{"embed_dim", [](HarnessConfig& c, const Entry& e) { c.arch.embed_dim = to_size(e); }},
        {"conv_blocks", [](HarnessConfig& c, const Entry& e) { c.arch.conv_blocks = to_size(e); }},
        {"conv_filters", [](HarnessConfig& c, const Entry& e) { c.arch.conv_filters = to_size(e); }},
        {"conv_kernel", [](HarnessConfig& c, const Entry& e) { c.arch.conv_kernel = to_size(e); }},
        {"pool_width", [](HarnessConfig& c, const Entry& e) { c.arch.pool_width = to_size(e); }},
        {"conv_activation",
         [](HarnessConfig& c, const Entry& e) { c.arch.conv_activation = wrap(e, parse_activation); }},
        {"conv_dropout",
         [](HarnessConfig& c, const Entry& e) { c.arch.conv_dropout = to_double(e, e.value); }},
        {"hidden", [](HarnessConfig& c, const Entry& e) { c.arch.hidden = to_size(e); }},
        {"gate_activation",
         [](HarnessConfig& c, const Entry& e) { c.arch.cell.gate = wrap(e, parse_activation); }},
        {"input_dropout",
         [](HarnessConfig& c, const Entry& e) { c.arch.lstm_dropout.input_rate = to_double(e, e.value); }},
        {"recurrent_dropout",
         [](HarnessConfig& c, const Entry& e) {
           c.arch.lstm_dropout.recurrent_rate = to_double(e, e.value);
         }},
        {"forget_bias",
         [](HarnessConfig& c, const Entry& e) { c.arch.forget_bias = to_double(e, e.value); }},
        {"dense_units", [](HarnessConfig& c, const Entry& e) { c.arch.dense_units = to_size(e); }},
        {"dense_activation",
         [](HarnessConfig& c, const Entry& e) { c.arch.dense_activation = wrap(e, parse_activation); }},
        {"embeddings_trainable",
         [](HarnessConfig& c, const Entry& e) { c.arch.embeddings_trainable = to_bool(e); }}}},
      {"train",
       {{"optimizer",
         [](HarnessConfig& c, const Entry& e) { c.optimizer = wrap(e, parse_optimizer); }},
        {"batch_size", [](HarnessConfig& c, const Entry& e) { c.batch_size = to_size(e); }},
        {"epochs", [](HarnessConfig& c, const Entry& e) { c.sweep.epochs = to_size(e); }},
        {"val_fraction",
         [](HarnessConfig& c, const Entry& e) { c.val_fraction = to_double(e, e.value); }}}},
      {"sweep",
       {{"variants",
         [](HarnessConfig& c, const Entry& e) {
           c.sweep.variants = to_list<Variant>(e, [](const std::string& s) { return parse_variant(s); });
         }},
        {"activations",
         [](HarnessConfig& c, const Entry& e) {
           c.sweep.activations =
               to_list<Activation>(e, [](const std::string& s) { return parse_activation(s); });
         }},
        {"learning_rates",
         [](HarnessConfig& c, const Entry& e) {
           c.sweep.learning_rates =
               to_list<double>(e, [&e](const std::string& s) { return to_double(e, s); });
         }},
        {"seeds",
         [](HarnessConfig& c, const Entry& e) {
           c.sweep.seeds =
               to_list<std::uint64_t>(e, [&e](const std::string& s) { return to_u64(e, s); });
         }}}},
      {"seed_variance",
       {{"variant",
         [](HarnessConfig& c, const Entry& e) { c.seed_variance.variant = wrap(e, parse_variant); }},
        {"activation",
         [](HarnessConfig& c, const Entry& e) {
           c.seed_variance.activation = wrap(e, parse_activation);
         }},
        {"learning_rate",
         [](HarnessConfig& c, const Entry& e) {
           c.seed_variance.learning_rate = to_double(e, e.value);
         }},
        {"seeds",
         [](HarnessConfig& c, const Entry& e) {
           c.seed_variance.seeds =
               to_list<std::uint64_t>(e, [&e](const std::string& s) { return to_u64(e, s); });
         }}}},
  };
  return table;
}

}  // namespace

HarnessConfig parse_config(const std::string& text, const std::string& origin) {
  HarnessConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = fmt::format("{}:{}", origin, line_no);
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(fmt::format("{}: malformed section header", where));
      section = trim(body.substr(1, body.size() - 2));
      if (!schema().contains(section) || section.empty()) {
        throw ConfigError(fmt::format("{}: unknown section [{}]", where, section));
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}: expected 'key = value'", where));
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto& keys = schema().at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ConfigError(fmt::format("{}: unknown key '{}'{}", where, key,
                                    section.empty() ? "" : " in [" + section + "]"));
    }
    const std::string full = section + "." + key;
    if (const auto prev = seen.find(full); prev != seen.end()) {
      throw ConfigError(fmt::format("{}: duplicate key '{}' (first set on line {})", where, full,
                                    prev->second));
    }
    seen.emplace(full, line_no);
    it->second(config, Entry{where, value});
  }

  if (!seen.contains(".version")) {
    throw ConfigError(fmt::format("{}: missing 'version = 1' at the top", origin));
  }

  // The chain check needs the real input length, which the task determines.
  if (config.task.kind != "cache") {
    config.arch.seq_len =
        config.task.kind == "corpus" ? config.task.corpus_length : config.task.synthetic.length;
    config.arch.validate();
  }
  config.sweep.validate();
  if (config.batch_size == 0) throw ConfigError(fmt::format("{}: batch_size must be positive", origin));
  if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) {
    throw ConfigError(fmt::format("{}: val_fraction must be in (0, 1)", origin));
  }
  if (config.seed_variance.seeds.size() < 2) {
    throw ConfigError(fmt::format("{}: seed_variance needs at least two seeds", origin));
  }
  if (config.task.kind == "corpus" && config.task.corpus.empty()) {
    throw ConfigError(fmt::format("{}: task.kind = corpus needs task.corpus", origin));
  }
  if (config.task.kind == "cache" && config.task.cache.empty()) {
    throw ConfigError(fmt::format("{}: task.kind = cache needs task.cache", origin));
  }
  return config;
}

HarnessConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  HarnessConfig config = parse_config(buf.str(), path.string());
  // Data paths are relative to the config file.
  const fs::path base = path.parent_path();
  for (fs::path* p : {&config.task.corpus, &config.task.embeddings, &config.task.cache}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return config;
}

}  // namespace slim

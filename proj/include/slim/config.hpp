#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slim/activations.hpp"
#include "slim/cell.hpp"
#include "slim/data.hpp"
#include "slim/layers.hpp"
#include "slim/train.hpp"

namespace slim {

/// The eight seeds enumerated for the seed-variance study.
inline const std::vector<std::uint64_t> kReferenceSeeds = {0,    100,  500,   1000,
                                                           5000, 9001, 10000, 100000};

/// Where training data comes from.
struct TaskSpec {
  std::string kind = "majority-token";  // majority-token | first-token-echo | corpus | cache
  SyntheticTaskSpec synthetic;
  std::filesystem::path corpus;
  std::size_t max_vocab = 20000;
  std::size_t corpus_length = 100;
  std::filesystem::path embeddings;  // optional, GloVe text format
  std::filesystem::path cache;

  std::string label() const;
};

struct TaskData {
  Dataset data;
  std::optional<Matrix> embeddings;
};

/// Generates or loads the dataset. Throws DataError / IoError on bad input.
TaskData load_task(const TaskSpec& task);

struct SweepSpec {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::vector<Activation> activations{kAllActivations.begin(), kAllActivations.end()};
  std::vector<double> learning_rates{2e-3, 1e-3, 5e-4};
  std::vector<std::uint64_t> seeds{0};
  std::size_t epochs = 50;

  void validate() const;
  std::size_t run_count() const;
};

struct SeedVarianceSpec {
  Variant variant = Variant::kSlim3;
  Activation activation = Activation::kTanh;
  double learning_rate = 2e-3;
  std::vector<std::uint64_t> seeds = kReferenceSeeds;
};

/// Everything a config file can set. Defaults describe the desk-scale
/// majority-token study.
struct HarnessConfig {
  TaskSpec task;
  ArchSpec arch = synthetic_task_arch();
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t batch_size = 16;
  double val_fraction = 0.2;
  SweepSpec sweep;
  SeedVarianceSpec seed_variance;

  /// Model used by the synthetic task preset: no conv blocks (T = 20 is too
  /// short for three valid conv + pool stages), n = 16.
  static ArchSpec synthetic_task_arch();

  ExperimentConfig experiment(Variant variant, Activation activation, double learning_rate,
                              std::uint64_t seed) const;
};

/// Parses the key = value / [section] format described in README.md.
/// Unknown sections or keys and malformed values throw ConfigError.
HarnessConfig parse_config(const std::string& text, const std::string& origin = "<config>");
HarnessConfig load_config(const std::filesystem::path& path);

}  // namespace slim

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "slim/config.hpp"
#include "slim/train.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Reference values: final-epoch validation accuracy (percent) and loss for
// every (activation, learning rate, variant) cell of the published grid.

struct ReferenceRow {
  Activation activation;
  double learning_rate;
  std::array<double, 4> accuracy_pct;  // indexed like kAllVariants
  std::array<double, 4> loss;
};

const std::vector<ReferenceRow>& reference_table();
const ReferenceRow& reference_row(Activation activation, double learning_rate);

/// Accuracy grid in percent: rows follow (activation, learning rate), the
/// value vector is indexed like kAllVariants.
struct AccuracyGrid {
  struct Row {
    Activation activation;
    double learning_rate;
    std::array<double, 4> values;
  };
  std::vector<Row> rows;

  static AccuracyGrid from_reference();
  double mean_for(Activation activation) const;
  double mean_for(Variant variant) const;
};

struct OrdinalFinding {
  std::string claim;
  bool reference = false;
  bool observed = false;
  bool agrees() const { return reference == observed; }
};

/// Ordinal claims checked on both grids: best/worst activation, best/worst
/// variant, best slim variant.
std::vector<OrdinalFinding> ordinal_findings(const AccuracyGrid& reference,
                                             const AccuracyGrid& observed);

/// Reads an accuracy summary written by run_sweep. It must cover the full
/// 15 x 4 grid; anything else is a ConfigError.
AccuracyGrid read_accuracy_summary(const std::filesystem::path& path);

/// Side-by-side table plus agreement labels.
std::string compare_reference(const AccuracyGrid& observed);

// ---------------------------------------------------------------------------
// Sweep

struct RunResult {
  ExperimentConfig config;
  std::vector<EpochRecord> records;
};

struct SweepResult {
  std::vector<RunResult> runs;  // variant-major, then activation, rate, seed
  std::vector<std::filesystem::path> files;
};

/// Runs every cell of the grid and writes accuracy.csv, loss.csv and one
/// curve file per run under out_dir/curves. The output directory is checked
/// for writability before any training. `log` may be null.
SweepResult run_sweep(const HarnessConfig& config, const std::filesystem::path& out_dir,
                      std::size_t jobs = 1, std::ostream* log = nullptr);

std::string format_learning_rate(double learning_rate);
std::string curve_file_name(const ExperimentConfig& config);
void write_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& records);

// ---------------------------------------------------------------------------
// Seed variance

struct Spread {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double stddev = 0.0;  // sample (n - 1)
  double range() const { return max - min; }
};
Spread spread_of(const std::vector<double>& values);

struct SeedVarianceReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<EpochRecord>> curves;  // one per seed
  std::vector<Spread> per_epoch;                 // validation accuracy across seeds
  Spread final_accuracy;
};

SeedVarianceReport seed_variance(const ExperimentConfig& base,
                                 const std::vector<std::uint64_t>& seeds, const TaskData& task,
                                 std::size_t jobs = 1);
void write_seed_variance(const std::filesystem::path& out_dir, const SeedVarianceReport& report,
                         const ExperimentConfig& base);

// ---------------------------------------------------------------------------
// Parameter / cost reporting

struct ReductionRow {
  Variant variant;
  std::uint64_t params;
  StepCost cost;
  double param_ratio;
  double mac_ratio;
};
std::vector<ReductionRow> report_reduction(std::size_t input_dim, std::size_t hidden_dim);
std::string format_reduction(const std::vector<ReductionRow>& rows);

struct BenchRow {
  Variant variant;
  std::uint64_t macs_per_sequence;
  double median_ms;
  double min_ms;
  double max_ms;
  std::size_t repeats;
};
/// Times forward + BPTT over a T-step sequence; rows are ordered by MAC count.
std::vector<BenchRow> bench_step(const std::vector<Variant>& variants, std::size_t input_dim,
                                 std::size_t hidden_dim, std::size_t steps, std::size_t repeats);
std::string format_bench(const std::vector<BenchRow>& rows);

/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace slim

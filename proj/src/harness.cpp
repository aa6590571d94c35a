#include "slim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "slim/error.hpp"

namespace slim {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out << contents;
    if (!out) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot rename {} to {}: {}", tmp.string(), path.string(),
                                    ec.message()));
}

namespace {

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError(fmt::format("cannot create output directory {}", dir.string()));
  }
  const fs::path probe = dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError(fmt::format("output directory {} is not writable", dir.string()));
  }
  fs::remove(probe, ec);
}

std::string fmt_value(double v, int precision) {
  if (!std::isfinite(v)) return "nan";
  return fmt::format("{:.{}f}", v, precision);
}

// Runs body(i) for i in [0, count) on up to `jobs` threads.
template <typename F>
void parallel_for(std::size_t count, std::size_t jobs, F&& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

const EpochRecord* final_record(const std::vector<EpochRecord>& records) {
  return records.empty() ? nullptr : &records.back();
}

}  // namespace

std::string format_learning_rate(double learning_rate) {
  return fmt::format("{:.2e}", learning_rate);
}

std::string curve_file_name(const ExperimentConfig& c) {
  return fmt::format("{}_{}_lr{}_seed{}.csv", to_string(c.variant), to_string(c.activation),
                     format_learning_rate(c.learning_rate), c.seed);
}

namespace {

std::string curve_text(const std::vector<EpochRecord>& records) {
  std::string text = "epoch,train_loss,train_acc,val_loss,val_acc,collapsed,nonfinite\n";
  for (const auto& r : records) {
    text += fmt::format("{},{},{},{},{},{},{}\n", r.epoch, fmt_value(r.train_loss, 6),
                        fmt_value(r.train_acc, 6), fmt_value(r.val_loss, 6),
                        fmt_value(r.val_acc, 6), r.collapsed ? 1 : 0, r.nonfinite ? 1 : 0);
  }
  return text;
}

}  // namespace

void write_curve(const fs::path& path, const std::vector<EpochRecord>& records) {
  write_file_atomic(path, curve_text(records));
}

SweepResult run_sweep(const HarnessConfig& config, const fs::path& out_dir, std::size_t jobs,
                      std::ostream* log) {
  const SweepSpec& spec = config.sweep;
  spec.validate();
  ensure_writable(out_dir);
  ensure_writable(out_dir / "curves");

  const TaskData task = load_task(config.task);
  const Matrix* pretrained = task.embeddings ? &*task.embeddings : nullptr;

  SweepResult result;
  for (Variant v : spec.variants) {
    for (Activation a : spec.activations) {
      for (double lr : spec.learning_rates) {
        for (std::uint64_t seed : spec.seeds) {
          result.runs.push_back({config.experiment(v, a, lr, seed), {}});
        }
      }
    }
  }

  std::mutex log_mu;
  std::size_t done = 0;
  parallel_for(result.runs.size(), jobs, [&](std::size_t i) {
    RunResult& run = result.runs[i];
    run.records = fit(run.config, task.data, pretrained);
    write_curve(out_dir / "curves" / curve_file_name(run.config), run.records);
    if (log) {
      std::lock_guard lock(log_mu);
      ++done;
      const EpochRecord* last = final_record(run.records);
      *log << fmt::format("[{}/{}] {} {} {} seed {}: val_acc {} val_loss {}{}{}\n", done,
                          result.runs.size(), to_string(run.config.variant),
                          to_string(run.config.activation),
                          format_learning_rate(run.config.learning_rate), run.config.seed,
                          last ? fmt_value(last->val_acc, 4) : "n/a",
                          last ? fmt_value(last->val_loss, 4) : "n/a",
                          last && last->collapsed ? " (collapsed)" : "",
                          last && last->nonfinite ? " (non-finite)" : "");
    }
  });
  for (const auto& run : result.runs) {
    result.files.push_back(out_dir / "curves" / curve_file_name(run.config));
  }

  // Summary tables: one row per (activation, rate), one column per variant,
  // each cell the seed mean of the final-epoch metric.
  std::string acc = "activation,learning_rate";
  std::string loss = acc;
  for (Variant v : spec.variants) {
    acc += fmt::format(",{}", to_string(v));
    loss += fmt::format(",{}", to_string(v));
  }
  acc += '\n';
  loss += '\n';
  for (Activation a : spec.activations) {
    for (double lr : spec.learning_rates) {
      acc += fmt::format("{},{}", to_string(a), format_learning_rate(lr));
      loss += fmt::format("{},{}", to_string(a), format_learning_rate(lr));
      for (Variant v : spec.variants) {
        double acc_sum = 0.0;
        double loss_sum = 0.0;
        std::size_t n = 0;
        for (const auto& run : result.runs) {
          const auto& c = run.config;
          if (c.variant != v || c.activation != a || c.learning_rate != lr) continue;
          const EpochRecord* last = final_record(run.records);
          acc_sum += last ? last->val_acc : std::nan("");
          loss_sum += last ? last->val_loss : std::nan("");
          ++n;
        }
        acc += "," + fmt_value(100.0 * acc_sum / static_cast<double>(n), 3);
        loss += "," + fmt_value(loss_sum / static_cast<double>(n), 6);
      }
      acc += '\n';
      loss += '\n';
    }
  }
  write_file_atomic(out_dir / "accuracy.csv", acc);
  write_file_atomic(out_dir / "loss.csv", loss);
  result.files.push_back(out_dir / "accuracy.csv");
  result.files.push_back(out_dir / "loss.csv");
  return result;
}

// ---------------------------------------------------------------------------
// Seed variance

Spread spread_of(const std::vector<double>& values) {
  Spread s;
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

SeedVarianceReport seed_variance(const ExperimentConfig& base,
                                 const std::vector<std::uint64_t>& seeds, const TaskData& task,
                                 std::size_t jobs) {
  if (seeds.size() < 2) throw ConfigError("seed variance needs at least two seeds");
  SeedVarianceReport report;
  report.seeds = seeds;
  report.curves.resize(seeds.size());
  const Matrix* pretrained = task.embeddings ? &*task.embeddings : nullptr;
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    ExperimentConfig c = base;
    c.seed = seeds[i];
    report.curves[i] = fit(c, task.data, pretrained);
  });

  std::size_t longest = 0;
  for (const auto& curve : report.curves) longest = std::max(longest, curve.size());
  for (std::size_t e = 0; e < longest; ++e) {
    std::vector<double> values;
    for (const auto& curve : report.curves) {
      if (e < curve.size()) values.push_back(curve[e].val_acc);
    }
    report.per_epoch.push_back(spread_of(values));
  }
  std::vector<double> finals;
  for (const auto& curve : report.curves) {
    if (!curve.empty()) finals.push_back(curve.back().val_acc);
  }
  report.final_accuracy = spread_of(finals);
  return report;
}

void write_seed_variance(const fs::path& out_dir, const SeedVarianceReport& report,
                         const ExperimentConfig& base) {
  ensure_writable(out_dir / "curves");
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    ExperimentConfig c = base;
    c.seed = report.seeds[i];
    write_curve(out_dir / "curves" / curve_file_name(c), report.curves[i]);
  }
  std::string text = "epoch,runs,min,max,mean,stddev\n";
  for (std::size_t e = 0; e < report.per_epoch.size(); ++e) {
    const Spread& s = report.per_epoch[e];
    std::size_t runs = 0;
    for (const auto& curve : report.curves) runs += e < curve.size() ? 1 : 0;
    text += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", e + 1, runs, s.min, s.max, s.mean,
                        s.stddev);
  }
  write_file_atomic(out_dir / "seed_variance.csv", text);
}

// ---------------------------------------------------------------------------
// Parameter / cost reporting

std::vector<ReductionRow> report_reduction(std::size_t input_dim, std::size_t hidden_dim) {
  if (input_dim == 0 || hidden_dim == 0) throw ConfigError("reduction report: m, n must be >= 1");
  const auto base_params = static_cast<double>(param_count(Variant::kStandard, input_dim, hidden_dim));
  const auto base_macs = static_cast<double>(flops_per_step(Variant::kStandard, input_dim, hidden_dim).macs);
  std::vector<ReductionRow> rows;
  for (Variant v : kAllVariants) {
    const std::uint64_t params = param_count(v, input_dim, hidden_dim);
    const StepCost cost = flops_per_step(v, input_dim, hidden_dim);
    rows.push_back({v, params, cost, static_cast<double>(params) / base_params,
                    static_cast<double>(cost.macs) / base_macs});
  }
  return rows;
}

std::string format_reduction(const std::vector<ReductionRow>& rows) {
  std::string out = fmt::format("{:<8}{:>12}{:>10}{:>12}{:>10}{:>10}\n", "variant", "params",
                                "ratio", "macs/step", "adds", "ratio");
  for (const auto& r : rows) {
    out += fmt::format("{:<8}{:>12}{:>10.3f}{:>12}{:>10}{:>10.3f}\n", to_string(r.variant),
                       r.params, r.param_ratio, r.cost.macs, r.cost.adds, r.mac_ratio);
  }
  return out;
}

std::vector<BenchRow> bench_step(const std::vector<Variant>& variants, std::size_t input_dim,
                                 std::size_t hidden_dim, std::size_t steps, std::size_t repeats) {
  if (repeats < 5) throw ConfigError(fmt::format("bench: repeats must be >= 5, got {}", repeats));
  if (steps == 0 || input_dim == 0 || hidden_dim == 0) {
    throw ConfigError("bench: m, n and T must be >= 1");
  }
  Rng data_rng(12345);
  std::vector<Matrix> xs;
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix x(input_dim, 1);
    for (double& v : x.values()) v = data_rng.uniform(-1.0, 1.0);
    xs.push_back(std::move(x));
  }
  std::vector<Matrix> dh(steps, Matrix(hidden_dim, 1, 1.0 / static_cast<double>(hidden_dim)));

  std::vector<BenchRow> rows;
  for (Variant v : variants) {
    Rng rng(777);
    const CellParams params = init_cell(v, input_dim, hidden_dim, rng);
    const CellConfig config;
    std::vector<double> times;
    for (std::size_t r = 0; r < repeats; ++r) {
      CellParams grads = params.zeros_like();
      const auto start = std::chrono::steady_clock::now();
      const Unrolled u = unroll(params, config, xs, CellState::zeros(hidden_dim));
      (void)backprop_through_time(params, config, u.caches, dh, grads);
      const auto stop = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times.size() % 2 ? times[times.size() / 2]
                                           : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    rows.push_back({v, flops_per_step(v, input_dim, hidden_dim).macs * steps, median,
                    times.front(), times.back(), repeats});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const BenchRow& a, const BenchRow& b) {
    return a.macs_per_sequence < b.macs_per_sequence;
  });
  return rows;
}

std::string format_bench(const std::vector<BenchRow>& rows) {
  std::string out = fmt::format("{:<8}{:>14}{:>12}{:>12}{:>12}{:>9}\n", "variant", "macs/seq",
                                "median ms", "min ms", "max ms", "repeats");
  for (const auto& r : rows) {
    out += fmt::format("{:<8}{:>14}{:>12.3f}{:>12.3f}{:>12.3f}{:>9}\n", to_string(r.variant),
                       r.macs_per_sequence, r.median_ms, r.min_ms, r.max_ms, r.repeats);
  }
  return out;
}

}  // namespace slim

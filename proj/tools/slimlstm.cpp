#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "slim/config.hpp"
#include "slim/error.hpp"
#include "slim/harness.hpp"
#include "slim/train.hpp"

namespace fs = std::filesystem;
using namespace slim;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::size_t> epochs;
};

HarnessConfig load(const Common& c) {
  return c.config.empty() ? HarnessConfig{} : load_config(c.config);
}

void print_report(const GradCheckReport& report, const std::string& title) {
  std::cout << fmt::format("{}: {} scalars, max relative error {:.3e}, {}\n", title,
                           report.scalars, report.max_rel_error,
                           report.passed() ? "ok" : "FAILED");
  for (const auto& v : report.violations) {
    std::cout << fmt::format("  {}[{}]: analytic {:.9e} numeric {:.9e} rel {:.3e}\n", v.name,
                             v.index, v.analytic, v.numeric, v.rel_error);
  }
}

int cmd_sweep(const Common& c) {
  HarnessConfig config = load(c);
  if (c.seed) config.sweep.seeds = {*c.seed};
  if (c.epochs) config.sweep.epochs = *c.epochs;
  const fs::path out = c.out.empty() ? fs::path("results") : fs::path(c.out);
  std::cout << fmt::format("sweep: {} runs on {}, {} epochs each\n", config.sweep.run_count(),
                           config.task.label(), config.sweep.epochs);
  const SweepResult result = run_sweep(config, out, c.jobs, &std::cout);
  std::size_t flagged = 0;
  for (const auto& run : result.runs) {
    for (const auto& r : run.records) flagged += r.nonfinite ? 1 : 0;
  }
  if (flagged) std::cout << fmt::format("{} epochs had non-finite batches\n", flagged);
  std::cout << fmt::format("wrote {} files under {}\n", result.files.size(), out.string());
  return kOk;
}

int cmd_seed_variance(const Common& c, const std::vector<std::uint64_t>& seeds_override) {
  const HarnessConfig config = load(c);
  const SeedVarianceSpec& sv = config.seed_variance;
  ExperimentConfig base = config.experiment(sv.variant, sv.activation, sv.learning_rate, 0);
  if (c.epochs) base.epochs = *c.epochs;
  const std::vector<std::uint64_t> seeds = seeds_override.empty() ? sv.seeds : seeds_override;
  const TaskData task = load_task(config.task);
  const fs::path out = c.out.empty() ? fs::path("seed_variance") : fs::path(c.out);
  std::cout << fmt::format("seed variance: {} {} lr {} over {} seeds, {} epochs\n",
                           to_string(base.variant), to_string(base.activation),
                           format_learning_rate(base.learning_rate), seeds.size(), base.epochs);
  const SeedVarianceReport report = seed_variance(base, seeds, task, c.jobs);
  write_seed_variance(out, report, base);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& curve = report.curves[i];
    std::cout << fmt::format("  seed {:>6}: final val_acc {:.4f}\n", seeds[i],
                             curve.empty() ? 0.0 : curve.back().val_acc);
  }
  const Spread& s = report.final_accuracy;
  std::cout << fmt::format("final val_acc mean {:.4f} min {:.4f} max {:.4f} range {:.4f} sd {:.4f}\n",
                           s.mean, s.min, s.max, s.range(), s.stddev);
  return kOk;
}

int cmd_grad_check(const Common& c, double eps, double tol, double cell_tol) {
  bool ok = true;
  for (Variant v : kAllVariants) {
    for (Activation a : kAllActivations) {
      CellCheckSpec spec;
      spec.variant = v;
      spec.config.cell = a;
      spec.seed = c.seed.value_or(0);
      const GradCheckReport r = grad_check_cell(spec, eps, cell_tol);
      print_report(r, fmt::format("cell {} sigma={}", to_string(v), to_string(a)));
      ok = ok && r.passed();
    }
  }

  ArchSpec arch;
  if (!c.config.empty()) arch = load_config(c.config).arch;
  arch.conv_dropout = 0.0;
  arch.lstm_dropout = {0.0, 0.0};
  arch.validate();
  Rng rng(c.seed.value_or(0));
  Model model = model_assemble(arch, rng);
  Example example;
  for (std::size_t t = 0; t < arch.seq_len; ++t) {
    example.tokens.push_back(static_cast<TokenId>(rng.below(arch.vocab_size)));
  }
  example.label = rng.below(arch.classes);
  const GradCheckReport r = grad_check_model(model, example, eps, tol);
  print_report(r, fmt::format("model ({} parameters)", model.parameter_count()));
  ok = ok && r.passed();
  return ok ? kOk : kNumeric;
}

int cmd_reduction(std::size_t m, std::size_t n) {
  std::cout << fmt::format("m = {}, n = {}\n", m, n) << format_reduction(report_reduction(m, n));
  return kOk;
}

int cmd_bench(const std::vector<std::string>& names, std::size_t m, std::size_t n, std::size_t T,
              std::size_t repeats) {
  std::vector<Variant> variants;
  for (const auto& name : names) variants.push_back(parse_variant(name));
  if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
  std::cout << fmt::format("forward + BPTT, m = {}, n = {}, T = {}\n", m, n, T)
            << format_bench(bench_step(variants, m, n, T, repeats));
  return kOk;
}

int cmd_compare(const std::string& summary) {
  std::cout << compare_reference(read_accuracy_summary(summary));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLIM LSTM experiment harness"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "Experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Seed override");
    sub->add_option("--jobs", common.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
    sub->add_option("--epochs", common.epochs, "Epoch override")->check(CLI::PositiveNumber);
  };

  auto* sweep = app.add_subcommand("sweep", "Run the variant x activation x rate grid");
  add_common(sweep);

  std::vector<std::uint64_t> seeds;
  auto* variance = app.add_subcommand("seed-variance", "Repeat one configuration over seeds");
  add_common(variance);
  variance->add_option("--seeds", seeds, "Seed list override")->delimiter(',');

  double eps = 1e-5;
  double tol = 1e-4;
  double cell_tol = 1e-5;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  add_common(grad);
  grad->add_option("--eps", eps, "Central difference step");
  grad->add_option("--tol", tol, "Relative error tolerance for the full model");
  grad->add_option("--cell-tol", cell_tol, "Relative error tolerance for the unrolled cell");

  std::size_t m = 3;
  std::size_t n = 4;
  auto* reduction = app.add_subcommand("reduction-report", "Parameter and MAC counts per variant");
  reduction->add_option("--m", m, "Input width")->check(CLI::PositiveNumber);
  reduction->add_option("--n", n, "Hidden width")->check(CLI::PositiveNumber);

  std::size_t bench_m = 64;
  std::size_t bench_n = 128;
  std::size_t steps = 50;
  std::size_t repeats = 7;
  std::vector<std::string> variant_names;
  auto* bench = app.add_subcommand("bench", "Time forward + BPTT per variant");
  bench->add_option("--m", bench_m, "Input width")->check(CLI::PositiveNumber);
  bench->add_option("--n", bench_n, "Hidden width")->check(CLI::PositiveNumber);
  bench->add_option("--T", steps, "Sequence length")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Timed repetitions (>= 5)");
  bench->add_option("--variants", variant_names, "Variants to time")->delimiter(',');

  std::string summary;
  auto* compare = app.add_subcommand("compare", "Compare a sweep summary with the reference grid");
  compare->add_option("summary", summary, "accuracy.csv from a full-grid sweep")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sweep) return cmd_sweep(common);
    if (*variance) return cmd_seed_variance(common, seeds);
    if (*grad) return cmd_grad_check(common, eps, tol, cell_tol);
    if (*reduction) return cmd_reduction(m, n);
    if (*bench) return cmd_bench(variant_names, bench_m, bench_n, steps, repeats);
    if (*compare) return cmd_compare(summary);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  }
  return kOk;
}

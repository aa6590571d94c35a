#include <doctest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "temp_dir.hpp"

namespace {

int run(const std::string& args, const std::string& out_file = "/dev/null") {
  const std::string cmd = std::string(SLIMLSTM_PATH) + " " + args + " >" + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli exit codes") {
  TempDir dir("cli");
  const auto log = (dir.path() / "log.txt").string();

  CHECK(run("reduction-report --m 3 --n 4", log) == 0);
  const std::string report = slurp(log);
  CHECK(report.find("0.344") != std::string::npos);

  CHECK(run("") == 1);
  CHECK(run("sweep --jobs zero") == 1);
  CHECK(run("bench --repeats 3") == 1);

  const auto bad_key = dir.write("bad.ini", "version = 1\n[model]\nwidth = 3\n");
  CHECK(run("sweep --config " + bad_key.string(), log) == 1);
  CHECK(slurp(log).find("bad.ini:3") != std::string::npos);

  const auto missing_cache = dir.write("cache.ini", "version = 1\n[task]\nkind = cache\ncache = none.txt\n");
  CHECK(run("sweep --config " + missing_cache.string() + " --out " + (dir.path() / "o").string()) == 2);

  const auto blocker = dir.write("blocker", "x");
  const auto tiny = dir.write("tiny.ini",
                              "version = 1\n[task]\nexamples = 60\n[model]\nhidden = 3\n"
                              "dense_units = 3\n[train]\nepochs = 1\n[sweep]\nvariants = lstm3\n"
                              "activations = tanh\nlearning_rates = 1e-3\n");
  CHECK(run("sweep --config " + tiny.string() + " --out " + (blocker / "x").string()) == 2);

  const auto out = dir.path() / "sweep";
  CHECK(run("sweep --config " + tiny.string() + " --out " + out.string(), log) == 0);
  CHECK(std::filesystem::exists(out / "accuracy.csv"));
  CHECK(std::filesystem::exists(out / "loss.csv"));
  CHECK(std::filesystem::exists(out / "curves" / "lstm3_tanh_lr1.00e-03_seed0.csv"));

  CHECK(run("compare " + (out / "accuracy.csv").string(), log) == 1);
  CHECK(slurp(log).find("configuration error") != std::string::npos);

  const auto variance = dir.path() / "variance";
  CHECK(run("seed-variance --config " + tiny.string() + " --seeds 1,2 --epochs 1 --out " +
            variance.string()) == 0);
  CHECK(std::filesystem::exists(variance / "seed_variance.csv"));
  CHECK(run("seed-variance --config " + tiny.string() + " --seeds 1 --out " + variance.string()) == 1);

  CHECK(run("grad-check", log) == 0);
  CHECK(slurp(log).find("FAILED") == std::string::npos);
  CHECK(run("bench --m 4 --n 8 --T 3 --repeats 5 --variants lstm,lstm3") == 0);
}

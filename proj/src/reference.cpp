#include <cmath>
#include <functional>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "slim/error.hpp"
#include "slim/harness.hpp"

namespace slim {

namespace {

bool same_rate(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(a, b); }

std::size_t variant_index(Variant v) {
  for (std::size_t i = 0; i < kAllVariants.size(); ++i) {
    if (kAllVariants[i] == v) return i;
  }
  return 0;
}

}  // namespace

// Final-epoch validation accuracy (%) and loss, columns lstm/lstm1/lstm2/lstm3.
const std::vector<ReferenceRow>& reference_table() {
  using A = Activation;
  static const std::vector<ReferenceRow> table = {
      {A::kTanh, 2e-3, {73.793, 73.718, 72.318, 74.469},
       {1.26626372355, 1.17280639938, 1.30214396743, 1.19286979217}},
      {A::kTanh, 1e-3, {72.443, 72.668, 72.618, 71.768},
       {1.2533884461, 1.24007106198, 1.25131325291, 1.28025298847}},
      {A::kTanh, 5e-4, {73.518, 72.343, 71.443, 70.643},
       {1.12991302266, 1.25897071954, 1.25066449667, 1.25003132021}},
      {A::kLinear, 2e-3, {4.501, 4.376, 4.776, 72.668},
       {2.99683079114, 2.9973659225, 2.99631883473, 1.25062232564}},
      {A::kLinear, 1e-3, {72.543, 72.468, 69.742, 73.218},
       {1.12306529774, 1.17703753339, 1.22609648397, 1.1734144355}},
      {A::kLinear, 5e-4, {72.493, 71.218, 71.993, 70.893},
       {1.11253687446, 1.34505273065, 1.14925828157, 1.29449143705}},
      {A::kSigmoid, 2e-3, {73.093, 72.343, 73.243, 71.818},
       {1.17115093154, 1.18445872471, 1.18269565109, 1.23696543557}},
      {A::kSigmoid, 1e-3, {71.118, 70.943, 71.618, 70.993},
       {1.29201206186, 1.30768913518, 1.27823424885, 1.2994762417}},
      {A::kSigmoid, 5e-4, {70.968, 69.792, 69.967, 68.392},
       {1.25363427584, 1.29810960694, 1.20362862963, 1.34441118063}},
      {A::kSoftmax, 2e-3, {70.393, 60.965, 4.501, 26.132},
       {1.17432751731, 1.26089545492, 2.99665749279, 2.14994023913}},
      {A::kSoftmax, 1e-3, {69.717, 66.317, 47.787, 58.690},
       {1.2308979069, 1.30809664535, 1.65336642154, 1.38786871599}},
      {A::kSoftmax, 5e-4, {63.941, 49.862, 29.482, 48.012},
       {1.29078156044, 1.61376436578, 1.91619378461, 1.62440377285}},
      {A::kRelu, 2e-3, {68.367, 68.467, 4.376, 73.043},
       {1.22890987945, 1.30157855895, 2.99658317911, 1.11470258686}},
      {A::kRelu, 1e-3, {73.143, 73.618, 72.118, 71.943},
       {1.10078433252, 1.1446512137, 1.0409039263, 1.32684082522}},
      {A::kRelu, 5e-4, {71.443, 72.593, 72.468, 73.118},
       {1.27224681913, 1.14206915571, 1.10311798523, 1.20242762065}},
  };
  return table;
}

const ReferenceRow& reference_row(Activation activation, double learning_rate) {
  for (const auto& row : reference_table()) {
    if (row.activation == activation && same_rate(row.learning_rate, learning_rate)) return row;
  }
  throw ConfigError(fmt::format("no reference cell for ({}, {})", to_string(activation),
                                learning_rate));
}

AccuracyGrid AccuracyGrid::from_reference() {
  AccuracyGrid grid;
  for (const auto& row : reference_table()) {
    grid.rows.push_back({row.activation, row.learning_rate, row.accuracy_pct});
  }
  return grid;
}

double AccuracyGrid::mean_for(Activation activation) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& row : rows) {
    if (row.activation != activation) continue;
    for (double v : row.values) total += v;
    count += row.values.size();
  }
  return count ? total / static_cast<double>(count) : std::nan("");
}

double AccuracyGrid::mean_for(Variant variant) const {
  const std::size_t i = variant_index(variant);
  double total = 0.0;
  for (const auto& row : rows) total += row.values[i];
  return rows.empty() ? std::nan("") : total / static_cast<double>(rows.size());
}

namespace {

template <typename Key, typename Range>
bool is_extreme(const AccuracyGrid& grid, Key key, const Range& keys, bool highest) {
  const double mine = grid.mean_for(key);
  for (const auto& other : keys) {
    if (other == key) continue;
    const double theirs = grid.mean_for(other);
    if (highest ? theirs > mine : theirs < mine) return false;
  }
  return true;
}

}  // namespace

std::vector<OrdinalFinding> ordinal_findings(const AccuracyGrid& reference,
                                             const AccuracyGrid& observed) {
  const std::array<Variant, 3> slim = {Variant::kSlim1, Variant::kSlim2, Variant::kSlim3};
  struct Claim {
    std::string text;
    std::function<bool(const AccuracyGrid&)> holds;
  };
  const std::vector<Claim> claims = {
      {"tanh has the highest mean accuracy of the activations",
       [](const AccuracyGrid& g) { return is_extreme(g, Activation::kTanh, kAllActivations, true); }},
      {"softmax has the lowest mean accuracy of the activations",
       [](const AccuracyGrid& g) {
         return is_extreme(g, Activation::kSoftmax, kAllActivations, false);
       }},
      {"lstm has the highest mean accuracy of the variants",
       [](const AccuracyGrid& g) { return is_extreme(g, Variant::kStandard, kAllVariants, true); }},
      {"lstm2 has the lowest mean accuracy of the variants",
       [](const AccuracyGrid& g) { return is_extreme(g, Variant::kSlim2, kAllVariants, false); }},
      {"lstm3 has the highest mean accuracy of the slim variants",
       [&slim](const AccuracyGrid& g) { return is_extreme(g, Variant::kSlim3, slim, true); }},
  };
  std::vector<OrdinalFinding> out;
  for (const auto& claim : claims) {
    out.push_back({claim.text, claim.holds(reference), claim.holds(observed)});
  }
  return out;
}

AccuracyGrid read_accuracy_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read summary {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(fmt::format("{}: empty summary", path.string()));

  auto fields_of = [](const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
  };
  const auto header = fields_of(line);
  if (header.size() != 6 || header[0] != "activation" || header[1] != "learning_rate") {
    throw ConfigError(fmt::format("{}: expected header activation,learning_rate + 4 variants",
                                  path.string()));
  }
  std::array<std::size_t, 4> column{};
  std::array<bool, 4> found{};
  for (std::size_t c = 2; c < 6; ++c) {
    const std::size_t i = variant_index(parse_variant(header[c]));
    if (found[i]) throw ConfigError(fmt::format("{}: duplicate column {}", path.string(), header[c]));
    found[i] = true;
    column[i] = c;
  }

  AccuracyGrid grid;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = fields_of(line);
    if (f.size() != 6) {
      throw ConfigError(fmt::format("{}:{}: expected 6 fields", path.string(), line_no));
    }
    AccuracyGrid::Row row{parse_activation(f[0]), std::strtod(f[1].c_str(), nullptr), {}};
    for (std::size_t i = 0; i < 4; ++i) row.values[i] = std::strtod(f[column[i]].c_str(), nullptr);
    (void)reference_row(row.activation, row.learning_rate);
    for (const auto& prev : grid.rows) {
      if (prev.activation == row.activation && same_rate(prev.learning_rate, row.learning_rate)) {
        throw ConfigError(fmt::format("{}:{}: duplicate grid row", path.string(), line_no));
      }
    }
    grid.rows.push_back(row);
  }
  if (grid.rows.size() != reference_table().size()) {
    throw ConfigError(fmt::format("{}: {} grid rows, the reference grid has {}", path.string(),
                                  grid.rows.size(), reference_table().size()));
  }
  return grid;
}

std::string compare_reference(const AccuracyGrid& observed) {
  if (observed.rows.size() != reference_table().size()) {
    throw ConfigError(fmt::format("compare: {} grid rows, the reference grid has {}",
                                  observed.rows.size(), reference_table().size()));
  }
  std::ostringstream out;
  out << "validation accuracy, observed (reference) in percent\n";
  out << fmt::format("{:<10}{:<10}", "activation", "rate");
  for (Variant v : kAllVariants) out << fmt::format("{:>20}", to_string(v));
  out << '\n';
  for (const auto& row : observed.rows) {
    const ReferenceRow& ref = reference_row(row.activation, row.learning_rate);
    out << fmt::format("{:<10}{:<10}", to_string(row.activation),
                       format_learning_rate(row.learning_rate));
    for (std::size_t i = 0; i < 4; ++i) {
      out << fmt::format("{:>20}", fmt::format("{:.3f} ({:.3f})", row.values[i],
                                               ref.accuracy_pct[i]));
    }
    out << '\n';
  }
  out << "\nordinal findings (absolute values are not compared)\n";
  for (const auto& f : ordinal_findings(AccuracyGrid::from_reference(), observed)) {
    out << fmt::format("[{}] {}: reference {}, observed {}\n",
                       f.agrees() ? "agree" : "differ", f.claim, f.reference ? "yes" : "no",
                       f.observed ? "yes" : "no");
  }
  return out.str();
}

}  // namespace slim

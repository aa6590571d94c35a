#include "slim/init.hpp"

#include <cmath>

namespace slim {

Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : m.values()) v = rng.uniform(-limit, limit);
  return m;
}

}  // namespace slim

#pragma once

#include <cstddef>

#include "slim/matrix.hpp"
#include "slim/rng.hpp"

namespace slim {

/// Uniform in [-L, L] with L = sqrt(6 / (rows + cols)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace slim

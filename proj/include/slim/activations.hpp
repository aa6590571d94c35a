#pragma once

#include <array>
#include <string>
#include <string_view>

#include "slim/matrix.hpp"

namespace slim {

enum class Activation { kTanh, kSigmoid, kLinear, kRelu, kSoftmax };

inline constexpr std::array<Activation, 5> kAllActivations = {
    Activation::kTanh, Activation::kLinear, Activation::kSigmoid, Activation::kRelu,
    Activation::kSoftmax};

/// Config spelling: tanh, sigmoid, linear, relu, softmax.
std::string_view to_string(Activation kind);
/// Throws ConfigError on anything but the exact lowercase names.
Activation parse_activation(std::string_view name);

/// Applies the activation to a column vector. Softmax normalizes over the
/// whole vector (max-shifted); the others act per element.
Matrix apply(Activation kind, const Matrix& v);
void apply_inplace(Activation kind, Matrix& v);

/// J^T * upstream, where y is the stored output of apply() on the same input.
/// Derivatives are taken in output form: tanh' = 1 - y^2, sigmoid' = y(1 - y),
/// relu' = [y > 0] (equal to the pre-activation sign, 0 at exactly 0).
Matrix backprop(Activation kind, const Matrix& y, const Matrix& upstream);

}  // namespace slim

#include "slim/activations.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "slim/error.hpp"

namespace slim {

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (Activation kind : kAllActivations) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError(fmt::format(
      "unknown activation '{}' (expected tanh, linear, sigmoid, relu or softmax)", name));
}

void apply_inplace(Activation kind, Matrix& v) {
  auto values = v.values();
  switch (kind) {
    case Activation::kTanh:
      for (double& x : values) x = std::tanh(x);
      break;
    case Activation::kSigmoid:
      for (double& x : values) {
        // Split by sign so exp never overflows.
        if (x >= 0.0) {
          x = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double e = std::exp(x);
          x = e / (1.0 + e);
        }
      }
      break;
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      for (double& x : values) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::kSoftmax: {
      if (values.empty()) break;
      const double peak = *std::max_element(values.begin(), values.end());
      double total = 0.0;
      for (double& x : values) {
        x = std::exp(x - peak);
        total += x;
      }
      for (double& x : values) x /= total;
      break;
    }
  }
}

Matrix apply(Activation kind, const Matrix& v) {
  Matrix out = v;
  apply_inplace(kind, out);
  return out;
}

Matrix backprop(Activation kind, const Matrix& y, const Matrix& upstream) {
  if (!y.same_shape(upstream)) {
    throw ConfigError(fmt::format("activation backprop: shape mismatch {} vs {}",
                                  y.shape_string(), upstream.shape_string()));
  }
  Matrix out = upstream;
  auto g = out.values();
  auto yv = y.values();
  switch (kind) {
    case Activation::kTanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - yv[i] * yv[i];
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= yv[i] * (1.0 - yv[i]);
      break;
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = yv[i] > 0.0 ? g[i] : 0.0;
      break;
    case Activation::kSoftmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += yv[i] * g[i];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = yv[i] * (g[i] - dot);
      break;
    }
  }
  return out;
}

}  // namespace slim

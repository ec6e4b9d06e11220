#pragma once

#include <string>
#include <vector>

#include "gdmae/rng.hpp"
#include "gdmae/tensor.hpp"

namespace gdmae {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], marked as requiring grad.
Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng);
Tensor constant_param(Shape shape, double value);

inline void append_params(ParamList& out, const std::string& prefix, const ParamList& in) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.tensor});
}

}  // namespace gdmae

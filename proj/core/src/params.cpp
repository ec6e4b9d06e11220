#include "gdmae/params.hpp"

#include <algorithm>
#include <cmath>

namespace gdmae {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = uniform(rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor constant_param(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace gdmae

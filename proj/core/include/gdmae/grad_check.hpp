#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdmae/params.hpp"

namespace gdmae {

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denom_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct ParamGradError {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences, perturbing each parameter entry in place and restoring it.
/// `f` must rebuild the loss from the current parameter values on each call.
GradCheckReport finite_diff_grad_check(const std::function<Tensor()>& f,
                                       std::span<const NamedTensor> params,
                                       const GradCheckOptions& options = {});

}  // namespace gdmae

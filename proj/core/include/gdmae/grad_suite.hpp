#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdmae/grad_check.hpp"

namespace gdmae {

/// One finite-difference check of one op or module on a random instance.
struct GradCaseResult {
  std::string module;
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string error;  // set when the case threw
};

/// Module names: "ops", "pillar-grid", "sparse-transformer", "encoder",
/// "decoders", "reconstruction", "end-to-end".
const std::vector<std::string>& grad_check_modules();

/// Runs every case of `module` ("all" for every module) for seeds
/// base_seed .. base_seed + seeds - 1.
std::vector<GradCaseResult> run_grad_checks(const std::string& module, int seeds, std::uint64_t base_seed = 0,
                                            const GradCheckOptions& options = {});

}  // namespace gdmae

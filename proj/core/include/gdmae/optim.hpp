#pragma once

#include <cstdint>
#include <vector>

#include "gdmae/params.hpp"

namespace gdmae {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay applied to every parameter.
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList params, AdamWConfig cfg);

  /// One update with learning rate `lr`; parameters without a gradient are
  /// treated as having a zero gradient.
  void step(double lr);
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  const ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

/// One-cycle policy: cosine warm-up from lr_max/start_div to lr_max over the
/// first warmup_fraction of the steps, then cosine decay to lr_max/final_div
/// at the last step.
struct OneCycle {
  double lr_max = 3e-3;
  std::uint64_t total_steps = 1;
  double warmup_fraction = 0.1;
  double start_div = 25.0;
  double final_div = 100.0;

  std::uint64_t warmup_steps() const;
  double lr(std::uint64_t step) const;
};

}  // namespace gdmae

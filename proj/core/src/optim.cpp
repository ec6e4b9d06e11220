#include "gdmae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gdmae {

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor w = params_[i].tensor;
    auto data = w.mutable_data();
    const auto grad = w.grad();
    const bool has = w.has_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? grad[j] : 0.0;
      data[j] -= lr * cfg_.weight_decay * data[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      data[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::uint64_t OneCycle::warmup_steps() const {
  if (total_steps == 0) throw std::invalid_argument("OneCycle: total_steps must be positive");
  const auto w = static_cast<std::uint64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
  return std::clamp<std::uint64_t>(w, 1, std::max<std::uint64_t>(total_steps - 1, 1));
}

double OneCycle::lr(std::uint64_t step) const {
  const double lo = lr_max / start_div, hi = lr_max, end = lr_max / final_div;
  if (total_steps <= 1) return lo;
  const std::uint64_t w = warmup_steps();
  const std::uint64_t last = total_steps - 1;
  step = std::min(step, last);
  if (step <= w) {
    const double q = static_cast<double>(step) / static_cast<double>(w);
    return lo + (hi - lo) * 0.5 * (1.0 - std::cos(std::numbers::pi * q));
  }
  const double q = static_cast<double>(step - w) / static_cast<double>(last - w);
  return end + (hi - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * q));
}

}  // namespace gdmae

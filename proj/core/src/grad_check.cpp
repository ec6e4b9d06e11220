#include "gdmae/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdmae/autograd.hpp"

namespace gdmae {

namespace {

double eval_value(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

GradCheckReport finite_diff_grad_check(const std::function<Tensor()>& f,
                                       std::span<const NamedTensor> params,
                                       const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite_diff_grad_check: step must be > 0");
  for (const auto& p : params) p.tensor.impl_ptr()->grad.clear();

  const Tensor loss = f();
  const double again = eval_value(f);
  if (loss.item() != again) {
    throw NonDeterministicError("finite_diff_grad_check: two evaluations of f differ (" +
                                std::to_string(loss.item()) + " vs " + std::to_string(again) + ")");
  }
  backward(loss);

  Rng rng(options.sample_seed);
  GradCheckReport report;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.numel(), 0.0);
    std::vector<std::size_t> entries(t.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_param && entries.size() > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    ParamGradError err;
    err.name = p.name;
    auto values = t.mutable_data();
    for (std::size_t i : entries) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = eval_value(f);
      values[i] = saved - options.step;
      const double down = eval_value(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.denom_floor});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, abs_err / denom);
      ++err.entries_checked;
    }
    err.passed = err.max_rel_error < options.rel_tol;
    report.passed = report.passed && err.passed;
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.params.push_back(std::move(err));
  }
  for (const auto& p : params) p.tensor.impl_ptr()->grad.clear();
  return report;
}

}  // namespace gdmae

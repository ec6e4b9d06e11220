#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdmae/tensor.hpp"

namespace gdmae {

/// One recorded operation. `backward` reads the output's value and gradient
/// and adds the vector-Jacobian product into the grad buffers of whichever
/// inputs require grad.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

class BackwardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool grad_enabled();

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Attaches `backward` to `output` when recording is on and any input
/// requires grad. Returns `output` for chaining.
Tensor record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(const TensorImpl& out)> backward);

bool any_requires_grad(std::span<const Tensor> inputs);

/// Zero-initialised on first use; sized like `t`.
std::span<double> grad_buffer(const Tensor& t);

struct TapeEntry {
  std::string op;
  std::vector<std::size_t> input_ids;
  std::size_t output_id = 0;
};

/// Ops reachable from a loss, in topological order: every entry's inputs
/// have ids smaller than its output id.
struct Tape {
  std::vector<TapeEntry> entries;
  std::size_t num_tensors = 0;
};

Tape build_tape(const Tensor& loss);

/// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
/// until zero_grad(); intermediate gradients are released afterwards.
void backward(const Tensor& loss);

}  // namespace gdmae

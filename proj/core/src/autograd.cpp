#include "gdmae/autograd.hpp"

#include <algorithm>
#include <unordered_map>
#include <utility>

namespace gdmae {

namespace {

thread_local bool t_grad_enabled = true;

// Post-order DFS over the graph rooted at `root`; leaves included.
std::vector<TensorImpl*> topo_order(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_map<TensorImpl*, bool> done;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  done[root] = false;
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].impl_ptr().get();
      if (!done.contains(child)) {
        done[child] = false;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    done[impl] = true;
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

Tensor record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(const TensorImpl& out)> backward) {
  if (!t_grad_enabled || !any_requires_grad(inputs)) return output;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  const auto& impl = output.impl_ptr();
  impl->requires_grad = true;
  impl->grad_fn = std::move(node);
  return output;
}

std::span<double> grad_buffer(const Tensor& t) {
  auto& impl = *t.impl_ptr();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

Tape build_tape(const Tensor& loss) {
  Tape tape;
  if (!loss.defined()) return tape;
  const auto order = topo_order(loss.impl_ptr().get());
  std::unordered_map<const TensorImpl*, std::size_t> ids;
  for (std::size_t i = 0; i < order.size(); ++i) ids[order[i]] = i;
  tape.num_tensors = order.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto* node = order[i]->grad_fn.get();
    if (!node) continue;
    TapeEntry entry;
    entry.op = node->op;
    entry.output_id = i;
    for (const auto& in : node->inputs) entry.input_ids.push_back(ids.at(in.impl_ptr().get()));
    tape.entries.push_back(std::move(entry));
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw BackwardError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw BackwardError("backward: loss must be a scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.impl_ptr()->grad_fn) {
    throw BackwardError("backward: loss is detached (no recorded ops lead to it)");
  }
  const auto order = topo_order(loss.impl_ptr().get());
  auto& root = *loss.impl_ptr();
  root.grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->grad_fn || impl->grad.empty()) continue;
    impl->grad_fn->backward(*impl);
  }
  for (TensorImpl* impl : order) {
    if (impl->grad_fn) {
      impl->grad.clear();
      impl->grad.shrink_to_fit();
    }
  }
}

}  // namespace gdmae

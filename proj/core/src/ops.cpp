#include "gdmae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "gdmae/autograd.hpp"

namespace gdmae {

namespace kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernels

namespace {

[[noreturn]] void shape_fail(const std::string& op, const std::string& what, const Shape& a,
                             const Shape& b) {
  throw ShapeError(op + ": " + what + ": " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what, const Shape& a) {
  throw ShapeError(op + ": " + what + ": " + shape_str(a));
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined input tensor");
}

void check_inputs(const char* op, std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (!t->defined()) continue;
    require_finite(op, *t);
  }
}

// (outer, len, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

bool is_bias_for(const Tensor& a, const Tensor& b) {
  return b.ndim() == 1 && a.ndim() >= 1 && a.shape().back() == b.dim(0) && a.ndim() > 1;
}

}  // namespace

void require_finite(const char* op, const Tensor& t) {
  if (!all_finite(t.data())) {
    throw NonFiniteError(std::string(op) + ": non-finite value in input of shape " +
                         shape_str(t.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  check_inputs("add", {&a, &b});
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    return record("add", {a, b}, out, [a, b](const TensorImpl& res) {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = grad_buffer(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
      }
    });
  }
  if (!is_bias_for(a, b)) shape_fail("add", "shapes differ and rhs is not a bias", a.shape(), b.shape());
  const std::size_t n = b.dim(0);
  const std::size_t rows = a.numel() / n;
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = x[r * n + j] + y[j];
  return record("add", {a, b}, out, [a, b, rows, n](const TensorImpl& res) {
    if (a.requires_grad()) {
      auto g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
    }
    if (b.requires_grad()) {
      auto g = grad_buffer(b);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += res.grad[r * n + j];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  check_inputs("sub", {&a, &b});
  if (a.shape() != b.shape()) shape_fail("sub", "shapes differ", a.shape(), b.shape());
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  return record("sub", {a, b}, out, [a, b](const TensorImpl& res) {
    if (a.requires_grad()) {
      auto g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
    }
    if (b.requires_grad()) {
      auto g = grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= res.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  check_inputs("mul", {&a, &b});
  if (a.shape() != b.shape()) shape_fail("mul", "shapes differ", a.shape(), b.shape());
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  return record("mul", {a, b}, out, [a, b](const TensorImpl& res) {
    if (a.requires_grad()) {
      auto g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto g = grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i] * a.data()[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  check_inputs("scale", {&a});
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * factor;
  return record("scale", {a}, out, [a, factor](const TensorImpl& res) {
    auto g = grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.ndim() != 2 || b.ndim() != 2) shape_fail("matmul", "expected 2-D operands", a.shape(), b.shape());
  if (a.dim(1) != b.dim(0)) shape_fail("matmul", "inner dimensions differ", a.shape(), b.shape());
  check_inputs("matmul", {&a, &b});
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.mutable_data().data());
  return record("matmul", {a, b}, out, [a, b, m, k, n](const TensorImpl& res) {
    if (a.requires_grad()) kernels::gemm_nt(m, k, n, res.grad.data(), b.data().data(), grad_buffer(a).data());
    if (b.requires_grad()) kernels::gemm_tn(m, n, k, a.data().data(), res.grad.data(), grad_buffer(b).data());
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined("linear", x);
  require_defined("linear", w);
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0)) {
    shape_fail("linear", "input/weight mismatch", x.shape(), w.shape());
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != w.dim(1))) {
    shape_fail("linear", "bias does not match weight columns", w.shape(), bias.shape());
  }
  check_inputs("linear", {&x, &w, &bias});
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor out({m, n});
  auto o = out.mutable_data();
  if (bias.defined()) {
    for (std::size_t i = 0; i < m; ++i) std::copy_n(bias.data().data(), n, o.data() + i * n);
  }
  kernels::gemm_nn(m, n, k, x.data().data(), w.data().data(), o.data());
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return record("linear", std::move(inputs), out, [x, w, bias, m, k, n](const TensorImpl& res) {
    if (x.requires_grad()) kernels::gemm_nt(m, k, n, res.grad.data(), w.data().data(), grad_buffer(x).data());
    if (w.requires_grad()) kernels::gemm_tn(m, n, k, x.data().data(), res.grad.data(), grad_buffer(w).data());
    if (bias.defined() && bias.requires_grad()) {
      auto g = grad_buffer(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += res.grad[i * n + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (numel(shape) != a.numel()) shape_fail("reshape", "element count differs", a.shape(), shape);
  Tensor out(std::move(shape), a.values());
  return record("reshape", {a}, out, [a](const TensorImpl& res) {
    auto g = grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  check_inputs("sum", {&a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record("sum", {a}, Tensor::scalar(s), [a](const TensorImpl& res) {
    auto g = grad_buffer(a);
    for (double& v : g) v += res.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  if (a.numel() == 0) shape_fail("mean", "empty input", a.shape());
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range", first);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_finite("concat", p);
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", "rank differs", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_fail("concat", "non-axis extent differs", first, s);
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  Tensor out(out_shape);
  auto o = out.mutable_data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const AxisSplit ps = split_axis(p.shape(), axis);
    const std::size_t chunk = ps.len * ps.inner;
    for (std::size_t r = 0; r < ps.outer; ++r) {
      std::copy_n(p.data().data() + r * chunk, chunk,
                  o.data() + r * total.len * total.inner + off * total.inner);
    }
    off += ps.len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record("concat", inputs, out, [inputs, offsets, axis, total](const TensorImpl& res) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor& p = inputs[k];
      if (!p.requires_grad()) continue;
      auto g = grad_buffer(p);
      const AxisSplit ps = split_axis(p.shape(), axis);
      const std::size_t chunk = ps.len * ps.inner;
      for (std::size_t r = 0; r < ps.outer; ++r) {
        const double* src = res.grad.data() + r * total.len * total.inner + offsets[k] * total.inner;
        double* dst = g.data() + r * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  check_inputs("relu", {&x});
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(0.0, x.data()[i]);
  return record("relu", {x}, out, [x](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > 0.0) g[i] += res.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  require_defined("gelu", x);
  check_inputs("gelu", {&x});
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x.data()[i];
    o[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
  }
  return record("gelu", {x}, out, [x](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      const double t = std::tanh(c * (v + a * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      g[i] += res.grad[i] * d;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined("layer_norm", x);
  require_defined("layer_norm", gamma);
  require_defined("layer_norm", beta);
  if (x.ndim() < 1) shape_fail("layer_norm", "input must have at least one axis", x.shape());
  const std::size_t n = x.shape().back();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    shape_fail("layer_norm", "gain/bias must match last axis", x.shape(), gamma.shape());
  }
  check_inputs("layer_norm", {&x, &gamma, &beta});
  const std::size_t rows = n ? x.numel() / n : 0;
  Tensor out(x.shape());
  auto o = out.mutable_data();
  std::vector<double> xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * rstd[r];
      o[r * n + j] = xhat[r * n + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return record("layer_norm", {x, gamma, beta}, out,
                [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                 n](const TensorImpl& res) {
                  const double* gy = res.grad.data();
                  if (gamma.requires_grad()) {
                    auto g = grad_buffer(gamma);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < n; ++j) g[j] += gy[r * n + j] * xhat[r * n + j];
                  }
                  if (beta.requires_grad()) {
                    auto g = grad_buffer(beta);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < n; ++j) g[j] += gy[r * n + j];
                  }
                  if (x.requires_grad()) {
                    auto g = grad_buffer(x);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = gy[r * n + j] * gamma.data()[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + j];
                      }
                      mean_d *= inv_n;
                      mean_dx *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = gy[r * n + j] * gamma.data()[j];
                        g[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                      }
                    }
                  }
                });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined("softmax", x);
  if (axis >= x.ndim()) shape_fail("softmax", "axis " + std::to_string(axis) + " out of range", x.shape());
  check_inputs("softmax", {&x});
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t c = 0; c < s.inner; ++c) {
      const std::size_t base = a * s.len * s.inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, x.data()[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        const double e = std::exp(x.data()[base + i * s.inner] - mx);
        o[base + i * s.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < s.len; ++i) o[base + i * s.inner] /= z;
    }
  }
  return record("softmax", {x}, out, [x, s](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t c = 0; c < s.inner; ++c) {
        const std::size_t base = a * s.len * s.inner + c;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t k = base + i * s.inner;
          dot += res.grad[k] * res.data[k];
        }
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t k = base + i * s.inner;
          g[k] += res.data[k] * (res.grad[k] - dot);
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_defined("conv2d", x);
  require_defined("conv2d", w);
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (x.ndim() != 3 || w.ndim() != 4 || w.dim(1) != x.dim(0)) {
    shape_fail("conv2d", "expected x (C_in,H,W) and w (C_out,C_in,kh,kw)", x.shape(), w.shape());
  }
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && bias.shape() != Shape{co}) shape_fail("conv2d", "bias extent", w.shape(), bias.shape());
  if (h + 2 * padding < kh || wd + 2 * padding < kw) {
    shape_fail("conv2d", "kernel larger than padded input", x.shape(), w.shape());
  }
  check_inputs("conv2d", {&x, &w, &bias});
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  Tensor out({co, ho, wo});
  auto o = out.mutable_data();
  const auto xv = x.data();
  const auto wv = w.data();
  // Visits every (output, input) pair once; `fn(out_idx, in_idx, w_idx)`.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t i = 0; i < ci; ++i)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((c * ci + i) * kh + ky) * kw + kx;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                fn((c * ho + oy) * wo + ox, (i * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix), widx);
              }
            }
          }
  };
  if (bias.defined()) {
    for (std::size_t c = 0; c < co; ++c) std::fill_n(o.data() + c * ho * wo, ho * wo, bias.data()[c]);
  }
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { o[oi] += wv[wi] * xv[ii]; });
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return record("conv2d", std::move(inputs), out, [x, w, bias, for_each_tap, co, ho, wo](const TensorImpl& res) {
    const double* gy = res.grad.data();
    if (x.requires_grad()) {
      auto gx = grad_buffer(x);
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gx[ii] += w.data()[wi] * gy[oi]; });
    }
    if (w.requires_grad()) {
      auto gw = grad_buffer(w);
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += x.data()[ii] * gy[oi]; });
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = grad_buffer(bias);
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t p = 0; p < ho * wo; ++p) gb[c] += gy[c * ho * wo + p];
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                        std::size_t padding) {
  require_defined("conv_transpose2d", x);
  require_defined("conv_transpose2d", w);
  if (stride == 0) throw std::invalid_argument("conv_transpose2d: stride must be positive");
  if (x.ndim() != 3 || w.ndim() != 4 || w.dim(0) != x.dim(0)) {
    shape_fail("conv_transpose2d", "expected x (C_in,H,W) and w (C_in,C_out,kh,kw)", x.shape(), w.shape());
  }
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && bias.shape() != Shape{co}) {
    shape_fail("conv_transpose2d", "bias extent", w.shape(), bias.shape());
  }
  if (h == 0 || wd == 0 || (h - 1) * stride + kh < 2 * padding + 1 || (wd - 1) * stride + kw < 2 * padding + 1) {
    shape_fail("conv_transpose2d", "padding leaves an empty output", x.shape(), w.shape());
  }
  check_inputs("conv_transpose2d", {&x, &w, &bias});
  const std::size_t ho = (h - 1) * stride + kh - 2 * padding;
  const std::size_t wo = (wd - 1) * stride + kw - 2 * padding;
  Tensor out({co, ho, wo});
  auto o = out.mutable_data();
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((i * co + c) * kh + ky) * kw + kx;
            for (std::size_t iy = 0; iy < h; ++iy) {
              const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(ho)) continue;
              for (std::size_t ix = 0; ix < wd; ++ix) {
                const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(wo)) continue;
                fn((c * ho + static_cast<std::size_t>(oy)) * wo + static_cast<std::size_t>(ox), (i * h + iy) * wd + ix, widx);
              }
            }
          }
  };
  if (bias.defined()) {
    for (std::size_t c = 0; c < co; ++c) std::fill_n(o.data() + c * ho * wo, ho * wo, bias.data()[c]);
  }
  const auto xv = x.data();
  const auto wv = w.data();
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { o[oi] += wv[wi] * xv[ii]; });
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return record("conv_transpose2d", std::move(inputs), out,
                [x, w, bias, for_each_tap, co, ho, wo](const TensorImpl& res) {
                  const double* gy = res.grad.data();
                  if (x.requires_grad()) {
                    auto gx = grad_buffer(x);
                    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gx[ii] += w.data()[wi] * gy[oi]; });
                  }
                  if (w.requires_grad()) {
                    auto gw = grad_buffer(w);
                    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += x.data()[ii] * gy[oi]; });
                  }
                  if (bias.defined() && bias.requires_grad()) {
                    auto gb = grad_buffer(bias);
                    for (std::size_t c = 0; c < co; ++c)
                      for (std::size_t p = 0; p < ho * wo; ++p) gb[c] += gy[c * ho * wo + p];
                  }
                });
}

Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  require_defined("max_over_axis", x);
  if (axis >= x.ndim()) shape_fail("max_over_axis", "axis " + std::to_string(axis) + " out of range", x.shape());
  if (x.dim(axis) == 0) shape_fail("max_over_axis", "cannot reduce an empty axis", x.shape());
  check_inputs("max_over_axis", {&x});
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  auto o = out.mutable_data();
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t c = 0; c < s.inner; ++c) {
      std::size_t best = a * s.len * s.inner + c;
      for (std::size_t i = 1; i < s.len; ++i) {
        const std::size_t k = a * s.len * s.inner + i * s.inner + c;
        if (x.data()[k] > x.data()[best]) best = k;
      }
      arg[a * s.inner + c] = best;
      o[a * s.inner + c] = x.data()[best];
    }
  return record("max_over_axis", {x}, out, [x, arg = std::move(arg)](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += res.grad[i];
  });
}

Tensor segment_max(const Tensor& x, std::span<const std::uint32_t> segment, std::size_t num_segments) {
  require_defined("segment_max", x);
  if (x.ndim() != 2 || segment.size() != x.dim(0)) {
    shape_fail("segment_max", "segment ids must label every row", x.shape(), Shape{segment.size()});
  }
  check_inputs("segment_max", {&x});
  const std::size_t rows = x.dim(0), c = x.dim(1);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> arg(num_segments * c, kNone);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t s = segment[r];
    if (s >= num_segments) {
      throw std::out_of_range("segment_max: segment id " + std::to_string(s) + " >= " + std::to_string(num_segments));
    }
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t& best = arg[s * c + j];
      if (best == kNone || xv[r * c + j] > xv[best]) best = r * c + j;
    }
  }
  Tensor out({num_segments, c});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < arg.size(); ++i) {
    if (arg[i] == kNone) throw std::invalid_argument("segment_max: segment " + std::to_string(i / std::max<std::size_t>(c, 1)) + " is empty");
    o[i] = xv[arg[i]];
  }
  return record("segment_max", {x}, out, [x, arg = std::move(arg)](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += res.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> index) {
  require_defined("gather_rows", x);
  if (x.ndim() != 2) shape_fail("gather_rows", "expected a 2-D input", x.shape());
  check_inputs("gather_rows", {&x});
  const std::size_t rows = x.dim(0), c = x.dim(1);
  Tensor out({index.size(), c});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw std::out_of_range("gather_rows: row " + std::to_string(index[i]) + " out of range for shape " +
                              shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + index[i] * c, c, o.data() + i * c);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return record("gather_rows", {x}, out, [x, idx = std::move(idx), c](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += res.grad[i * c + j];
  });
}

Tensor scatter_rows_add(const Tensor& x, std::span<const std::uint32_t> index, std::size_t num_rows) {
  require_defined("scatter_rows_add", x);
  if (x.ndim() != 2 || x.dim(0) != index.size()) {
    shape_fail("scatter_rows_add", "one index per input row", x.shape(), Shape{index.size()});
  }
  check_inputs("scatter_rows_add", {&x});
  const std::size_t c = x.dim(1);
  Tensor out({num_rows, c});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= num_rows) {
      throw std::out_of_range("scatter_rows_add: row " + std::to_string(index[i]) + " >= " + std::to_string(num_rows));
    }
    for (std::size_t j = 0; j < c; ++j) o[index[i] * c + j] += x.data()[i * c + j];
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return record("scatter_rows_add", {x}, out, [x, idx = std::move(idx), c](const TensorImpl& res) {
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += res.grad[idx[i] * c + j];
  });
}

}  // namespace gdmae

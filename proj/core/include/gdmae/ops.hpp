#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gdmae/tensor.hpp"

namespace gdmae {

inline constexpr double kLayerNormEps = 1e-5;

// Elementwise / linear algebra. Shapes must match exactly; the one allowed
// broadcast is adding a (n,) bias to an (m, n) matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x (m, k) times w (k, n) plus optional bias (n,).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor relu(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
/// Normalises over the last axis; gamma and beta have that axis' extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
Tensor softmax(const Tensor& x, std::size_t axis);

/// x (C_in, H, W), w (C_out, C_in, kh, kw), optional bias (C_out,).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// x (C_in, H, W), w (C_in, C_out, kh, kw). Output extent (H-1)*s - 2p + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::size_t stride, std::size_t padding);

/// Drops `axis`, keeping the maximum along it (first index wins ties).
Tensor max_over_axis(const Tensor& x, std::size_t axis);
/// Row-wise max over groups of rows: out[s] = max over {r : segment[r] == s}.
/// Every segment in [0, num_segments) must be non-empty.
Tensor segment_max(const Tensor& x, std::span<const std::uint32_t> segment,
                   std::size_t num_segments);

/// Rows of a 2-D tensor; indices may repeat.
Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> index);
/// out (num_rows, C) with out[index[i]] += x[i].
Tensor scatter_rows_add(const Tensor& x, std::span<const std::uint32_t> index,
                        std::size_t num_rows);

/// Throws NonFiniteError naming `op` if any value is NaN or Inf.
void require_finite(const char* op, const Tensor& t);

namespace kernels {

// Row-major GEMM variants, all accumulating into c.
// nn: c(m,n) += a(m,k) b(k,n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// nt: c(m,n) += a(m,k) b(n,k)^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// tn: c(k,n) += a(m,k)^T b(m,n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

}  // namespace kernels

}  // namespace gdmae

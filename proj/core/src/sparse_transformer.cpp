#include "gdmae/sparse_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "gdmae/autograd.hpp"
#include "gdmae/ops.hpp"

namespace gdmae {

namespace {

std::int32_t floor_mod(std::int32_t v, std::int32_t m) {
  const std::int32_t r = v % m;
  return r < 0 ? r + m : r;
}

}  // namespace

WindowAssignment window_partition(std::span<const Coord> coords, int region_size) {
  if (region_size < 1) throw std::invalid_argument("window_partition: region_size must be >= 1");
  WindowAssignment a;
  a.region_size = region_size;
  a.window.reserve(coords.size());
  a.offset.reserve(coords.size());
  std::map<Coord, std::vector<std::uint32_t>> groups;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Coord w = floor_div(coords[i], region_size);
    a.window.push_back(w);
    a.offset.push_back({floor_mod(coords[i].x, region_size), floor_mod(coords[i].y, region_size)});
    groups[w].push_back(static_cast<std::uint32_t>(i));
  }
  for (auto& [id, members] : groups) {
    a.group_ids.push_back(id);
    a.groups.push_back(std::move(members));
  }
  return a;
}

std::vector<Coord> region_shift(std::span<const Coord> coords, int region_size) {
  if (region_size < 2 || region_size % 2 != 0) {
    throw std::invalid_argument("region_shift: region_size must be even, got " + std::to_string(region_size));
  }
  const std::int32_t half = region_size / 2;
  std::vector<Coord> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back({c.x + half, c.y + half});
  return out;
}

Tensor normalized_offsets(const WindowAssignment& assignment) {
  const std::size_t m = assignment.size();
  Tensor out({m, 2});
  auto o = out.mutable_data();
  const double span = static_cast<double>(assignment.region_size - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& off = assignment.offset[i];
    o[2 * i] = span > 0 ? 2.0 * off.x / span - 1.0 : 0.0;
    o[2 * i + 1] = span > 0 ? 2.0 * off.y / span - 1.0 : 0.0;
  }
  return out;
}

Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          std::span<const std::vector<std::uint32_t>> groups, std::size_t heads) {
  if (!q.defined() || !k.defined() || !v.defined() || q.ndim() != 2 || q.shape() != k.shape() ||
      q.shape() != v.shape()) {
    throw ShapeError("windowed_attention: q, k, v must share an (M, d) shape: " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t m = q.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("windowed_attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  require_finite("windowed_attention", q);
  require_finite("windowed_attention", k);
  require_finite("windowed_attention", v);
  std::vector<std::uint8_t> covered(m, 0);
  for (const auto& g : groups) {
    for (std::uint32_t i : g) {
      if (i >= m || covered[i]) throw std::invalid_argument("windowed_attention: groups must partition the rows");
      covered[i] = 1;
    }
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
    throw std::invalid_argument("windowed_attention: groups must partition the rows");
  }

  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({m, d});
  auto o = out.mutable_data();
  const double* qv = q.data().data();
  const double* kv = k.data().data();
  const double* vv = v.data().data();
  // Attention weights per (group, head), row-major n x n, kept for backward.
  std::vector<std::vector<double>> probs;
  probs.reserve(groups.size() * heads);
  for (const auto& g : groups) {
    const std::size_t n = g.size();
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> p(n * n);
      const std::size_t col = h * dh;
      for (std::size_t a = 0; a < n; ++a) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n; ++b) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qv[g[a] * d + col + c] * kv[g[b] * d + col + c];
          p[a * n + b] = s * inv_sqrt;
          mx = std::max(mx, p[a * n + b]);
        }
        double z = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          p[a * n + b] = std::exp(p[a * n + b] - mx);
          z += p[a * n + b];
        }
        for (std::size_t b = 0; b < n; ++b) p[a * n + b] /= z;
        double* orow = o.data() + g[a] * d + col;
        for (std::size_t b = 0; b < n; ++b) {
          const double w = p[a * n + b];
          const double* vrow = vv + g[b] * d + col;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += w * vrow[c];
        }
      }
      probs.push_back(std::move(p));
    }
  }
  std::vector<std::vector<std::uint32_t>> group_copy(groups.begin(), groups.end());
  return record("windowed_attention", {q, k, v}, out,
                [q, k, v, groups = std::move(group_copy), probs = std::move(probs), heads, dh, d,
                 inv_sqrt](const TensorImpl& res) {
                  const double* gy = res.grad.data();
                  double* gq = q.requires_grad() ? grad_buffer(q).data() : nullptr;
                  double* gk = k.requires_grad() ? grad_buffer(k).data() : nullptr;
                  double* gv = v.requires_grad() ? grad_buffer(v).data() : nullptr;
                  const double* qv = q.data().data();
                  const double* kv = k.data().data();
                  const double* vv = v.data().data();
                  std::size_t slot = 0;
                  std::vector<double> dp;
                  for (const auto& g : groups) {
                    const std::size_t n = g.size();
                    for (std::size_t h = 0; h < heads; ++h, ++slot) {
                      const auto& p = probs[slot];
                      const std::size_t col = h * dh;
                      dp.assign(n * n, 0.0);
                      for (std::size_t a = 0; a < n; ++a) {
                        const double* grow = gy + g[a] * d + col;
                        for (std::size_t b = 0; b < n; ++b) {
                          const double* vrow = vv + g[b] * d + col;
                          double s = 0.0;
                          for (std::size_t c = 0; c < dh; ++c) s += grow[c] * vrow[c];
                          dp[a * n + b] = s;
                          if (gv) {
                            double* gvrow = gv + g[b] * d + col;
                            for (std::size_t c = 0; c < dh; ++c) gvrow[c] += p[a * n + b] * grow[c];
                          }
                        }
                      }
                      if (!gq && !gk) continue;
                      for (std::size_t a = 0; a < n; ++a) {
                        double dot = 0.0;
                        for (std::size_t b = 0; b < n; ++b) dot += dp[a * n + b] * p[a * n + b];
                        for (std::size_t b = 0; b < n; ++b) {
                          const double ds = p[a * n + b] * (dp[a * n + b] - dot) * inv_sqrt;
                          if (ds == 0.0) continue;
                          if (gq) {
                            double* gqrow = gq + g[a] * d + col;
                            const double* krow = kv + g[b] * d + col;
                            for (std::size_t c = 0; c < dh; ++c) gqrow[c] += ds * krow[c];
                          }
                          if (gk) {
                            double* gkrow = gk + g[b] * d + col;
                            const double* qrow = qv + g[a] * d + col;
                            for (std::size_t c = 0; c < dh; ++c) gkrow[c] += ds * qrow[c];
                          }
                        }
                      }
                    }
                  }
                });
}

AttentionParams AttentionParams::create(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("AttentionParams: width " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  const std::size_t inner = dim * mlp_ratio;
  p.ln1_gain = constant_param({dim}, 1.0);
  p.ln1_bias = constant_param({dim}, 0.0);
  p.pos_w1 = uniform_param({2, dim}, 2, rng);
  p.pos_b1 = constant_param({dim}, 0.0);
  p.pos_w2 = uniform_param({dim, dim}, dim, rng);
  p.pos_b2 = constant_param({dim}, 0.0);
  p.wq = uniform_param({dim, dim}, dim, rng);
  p.bq = constant_param({dim}, 0.0);
  p.wk = uniform_param({dim, dim}, dim, rng);
  p.bk = constant_param({dim}, 0.0);
  p.wv = uniform_param({dim, dim}, dim, rng);
  p.bv = constant_param({dim}, 0.0);
  p.wo = uniform_param({dim, dim}, dim, rng);
  p.bo = constant_param({dim}, 0.0);
  p.ln2_gain = constant_param({dim}, 1.0);
  p.ln2_bias = constant_param({dim}, 0.0);
  p.ff_w1 = uniform_param({dim, inner}, dim, rng);
  p.ff_b1 = constant_param({inner}, 0.0);
  p.ff_w2 = uniform_param({inner, dim}, inner, rng);
  p.ff_b2 = constant_param({dim}, 0.0);
  return p;
}

ParamList AttentionParams::parameters() const {
  return {{"ln1.gain", ln1_gain}, {"ln1.bias", ln1_bias}, {"pos.w1", pos_w1}, {"pos.b1", pos_b1},
          {"pos.w2", pos_w2},     {"pos.b2", pos_b2},     {"q.w", wq},          {"q.b", bq},
          {"k.w", wk},            {"k.b", bk},            {"v.w", wv},          {"v.b", bv},
          {"out.w", wo},          {"out.b", bo},          {"ln2.gain", ln2_gain}, {"ln2.bias", ln2_bias},
          {"ff.w1", ff_w1},       {"ff.b1", ff_b1},       {"ff.w2", ff_w2},     {"ff.b2", ff_b2}};
}

Tensor sparse_regional_attention(const Tensor& features, const WindowAssignment& assignment,
                                 const Tensor& positions, const AttentionParams& params) {
  if (!features.defined() || features.ndim() != 2 || features.dim(1) != params.dim) {
    throw ShapeError("sparse_regional_attention: features " +
                     (features.defined() ? shape_str(features.shape()) : std::string("<undefined>")) +
                     " do not match layer width " + std::to_string(params.dim));
  }
  if (features.dim(0) != assignment.size() || positions.shape() != Shape{assignment.size(), 2}) {
    throw ShapeError("sparse_regional_attention: " + std::to_string(features.dim(0)) + " feature rows, " +
                     std::to_string(assignment.size()) + " assigned tokens, positions " + shape_str(positions.shape()));
  }
  if (features.dim(0) == 0) return features;
  const Tensor pos = linear(gelu(linear(positions, params.pos_w1, params.pos_b1)), params.pos_w2, params.pos_b2);
  const Tensor u = add(layer_norm(features, params.ln1_gain, params.ln1_bias), pos);
  const Tensor attn = windowed_attention(linear(u, params.wq, params.bq), linear(u, params.wk, params.bk),
                                         linear(u, params.wv, params.bv), assignment.groups, params.heads);
  const Tensor x1 = add(features, linear(attn, params.wo, params.bo));
  const Tensor h = gelu(linear(layer_norm(x1, params.ln2_gain, params.ln2_bias), params.ff_w1, params.ff_b1));
  return add(x1, linear(h, params.ff_w2, params.ff_b2));
}

Tensor sparse_regional_attention(const Tensor& features, const WindowAssignment& assignment,
                                 const AttentionParams& params) {
  return sparse_regional_attention(features, assignment, normalized_offsets(assignment), params);
}

std::size_t Rulebook::pair_count() const {
  std::size_t n = 0;
  for (const auto& t : taps) n += t.size();
  return n;
}

Tensor sparse_conv(const Tensor& x, const Tensor& weight, const Rulebook& rulebook) {
  if (!x.defined() || !weight.defined() || x.ndim() != 2 || weight.ndim() != 3 || weight.dim(1) != x.dim(1) ||
      weight.dim(0) != rulebook.taps.size()) {
    throw ShapeError("sparse_conv: input " + (x.defined() ? shape_str(x.shape()) : std::string("<undefined>")) +
                     " and weight " + (weight.defined() ? shape_str(weight.shape()) : std::string("<undefined>")) +
                     " incompatible with a " + std::to_string(rulebook.taps.size()) + "-tap rulebook");
  }
  require_finite("sparse_conv", x);
  require_finite("sparse_conv", weight);
  const std::size_t ci = x.dim(1), co = weight.dim(2);
  const std::size_t rows = x.dim(0);
  for (const auto& tap : rulebook.taps) {
    for (const auto& [i, o] : tap) {
      if (i >= rows || o >= rulebook.num_out) throw std::out_of_range("sparse_conv: rulebook pair out of range");
    }
  }
  Tensor out({rulebook.num_out, co});
  auto o = out.mutable_data();
  std::vector<double> gathered, partial;
  for (std::size_t t = 0; t < rulebook.taps.size(); ++t) {
    const auto& pairs = rulebook.taps[t];
    if (pairs.empty()) continue;
    const std::size_t n = pairs.size();
    gathered.resize(n * ci);
    for (std::size_t p = 0; p < n; ++p) std::copy_n(x.data().data() + pairs[p].first * ci, ci, gathered.data() + p * ci);
    partial.assign(n * co, 0.0);
    kernels::gemm_nn(n, co, ci, gathered.data(), weight.data().data() + t * ci * co, partial.data());
    for (std::size_t p = 0; p < n; ++p) {
      double* dst = o.data() + pairs[p].second * co;
      const double* src = partial.data() + p * co;
      for (std::size_t j = 0; j < co; ++j) dst[j] += src[j];
    }
  }
  return record("sparse_conv", {x, weight}, out, [x, weight, rulebook, ci, co](const TensorImpl& res) {
    double* gx = x.requires_grad() ? grad_buffer(x).data() : nullptr;
    double* gw = weight.requires_grad() ? grad_buffer(weight).data() : nullptr;
    std::vector<double> gathered, gout, gin;
    for (std::size_t t = 0; t < rulebook.taps.size(); ++t) {
      const auto& pairs = rulebook.taps[t];
      if (pairs.empty()) continue;
      const std::size_t n = pairs.size();
      gout.resize(n * co);
      for (std::size_t p = 0; p < n; ++p) std::copy_n(res.grad.data() + pairs[p].second * co, co, gout.data() + p * co);
      if (gw) {
        gathered.resize(n * ci);
        for (std::size_t p = 0; p < n; ++p) std::copy_n(x.data().data() + pairs[p].first * ci, ci, gathered.data() + p * ci);
        kernels::gemm_tn(n, co, ci, gathered.data(), gout.data(), gw + t * ci * co);
      }
      if (gx) {
        gin.assign(n * ci, 0.0);
        kernels::gemm_nt(n, ci, co, gout.data(), weight.data().data() + t * ci * co, gin.data());
        for (std::size_t p = 0; p < n; ++p) {
          double* dst = gx + pairs[p].first * ci;
          for (std::size_t j = 0; j < ci; ++j) dst[j] += gin[p * ci + j];
        }
      }
    }
  });
}

SparseConv3 SparseConv3::create(std::size_t in_channels, std::size_t out_channels, Rng& rng) {
  return {uniform_param({9, in_channels, out_channels}, 9 * in_channels, rng), constant_param({out_channels}, 0.0)};
}

std::vector<Coord> downsample_coords(std::span<const Coord> coords) {
  std::vector<Coord> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back(floor_div(c, 2));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Rulebook downsample_rulebook(std::span<const Coord> in, std::span<const Coord> out) {
  const CoordIndex index = index_coords(in);
  Rulebook rb(9, out.size());
  for (std::size_t o = 0; o < out.size(); ++o) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Coord src{2 * out[o].x + kx, 2 * out[o].y + ky};  // 2o + 1 + (k - 1)
        const auto it = index.find(src);
        if (it != index.end()) rb.taps[static_cast<std::size_t>(ky * 3 + kx)].emplace_back(it->second, static_cast<std::uint32_t>(o));
      }
    }
  }
  return rb;
}

Rulebook submanifold_rulebook(std::span<const Coord> coords) {
  const CoordIndex index = index_coords(coords);
  Rulebook rb(9, coords.size());
  for (std::size_t o = 0; o < coords.size(); ++o) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Coord src{coords[o].x + kx - 1, coords[o].y + ky - 1};
        const auto it = index.find(src);
        if (it != index.end()) rb.taps[static_cast<std::size_t>(ky * 3 + kx)].emplace_back(it->second, static_cast<std::uint32_t>(o));
      }
    }
  }
  return rb;
}

TokenSet sparse_conv_downsample(const TokenSet& tokens, const SparseConv3& conv) {
  if (tokens.level >= 2) throw std::invalid_argument("sparse_conv_downsample: input already at the coarsest level");
  if (tokens.channels() != conv.in_channels() && tokens.size() > 0) {
    throw ShapeError("sparse_conv_downsample: token width " + std::to_string(tokens.channels()) +
                     " does not match kernel input width " + std::to_string(conv.in_channels()));
  }
  TokenSet out;
  out.level = tokens.level + 1;
  out.coords = downsample_coords(tokens.coords);
  if (out.coords.empty()) return TokenSet::empty(conv.out_channels(), out.level);
  out.features = add(sparse_conv(tokens.features, conv.weight, downsample_rulebook(tokens.coords, out.coords)), conv.bias);
  return out;
}

TokenSet submanifold_conv(const TokenSet& tokens, const SparseConv3& conv) {
  if (tokens.size() == 0) return TokenSet::empty(conv.out_channels(), tokens.level);
  if (tokens.channels() != conv.in_channels()) {
    throw ShapeError("submanifold_conv: token width " + std::to_string(tokens.channels()) +
                     " does not match kernel input width " + std::to_string(conv.in_channels()));
  }
  return {add(sparse_conv(tokens.features, conv.weight, submanifold_rulebook(tokens.coords)), conv.bias), tokens.coords,
          tokens.level};
}

}  // namespace gdmae

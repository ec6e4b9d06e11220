#pragma once

// Independent reference computations for the tests. Everything here is plain
// loops over dense arrays or brute-force searches; none of it calls the
// library's ops, rulebooks or window partitioning.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "gdmae/decoders.hpp"
#include "gdmae/encoder.hpp"
#include "gdmae/pillar_grid.hpp"
#include "gdmae/reconstruction.hpp"
#include "gdmae/rng.hpp"
#include "gdmae/sparse_transformer.hpp"

namespace oracle {

using gdmae::Coord;
using gdmae::Extent;
using gdmae::Tensor;
using gdmae::TokenSet;
using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const Tensor& t) {
  Rows out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t.at(i, j);
  return out;
}

inline double max_abs_diff(const Tensor& t, const Rows& ref) {
  if (t.dim(0) != ref.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (t.dim(1) != ref[i].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ref[i].size(); ++j) worst = std::max(worst, std::abs(t.at(i, j) - ref[i][j]));
  }
  return worst;
}

inline Tensor random_tensor(gdmae::Shape shape, gdmae::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(gdmae::numel(shape));
  for (auto& x : v) x = gdmae::uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline void randomize(Tensor t, gdmae::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : t.mutable_data()) x = gdmae::uniform(rng, lo, hi);
}

/// `n` distinct random cells of `e`, sorted.
inline std::vector<Coord> random_coords(std::size_t n, const Extent& e, gdmae::Rng& rng) {
  std::set<Coord> s;
  n = std::min(n, e.cells());
  while (s.size() < n) {
    s.insert({static_cast<std::int32_t>(gdmae::uniform_index(rng, static_cast<std::uint64_t>(e.width))),
              static_cast<std::int32_t>(gdmae::uniform_index(rng, static_cast<std::uint64_t>(e.height)))});
  }
  return {s.begin(), s.end()};
}

inline TokenSet random_tokens(std::size_t n, std::size_t channels, const Extent& e, int level, gdmae::Rng& rng) {
  auto coords = random_coords(n, e, rng);
  return TokenSet{random_tensor({coords.size(), channels}, rng), std::move(coords), level};
}

inline std::int32_t floor_div(std::int32_t v, std::int32_t d) {
  return static_cast<std::int32_t>(std::floor(static_cast<double>(v) / d));
}

// Dense (C, H, W) grid stored as [c][y][x].
struct Dense {
  std::size_t channels = 0;
  Extent extent;
  std::vector<double> v;
  Dense(std::size_t c, const Extent& e)
      : channels(c), extent(e), v(c * e.cells(), 0.0) {}
  double& at(std::size_t c, std::int32_t y, std::int32_t x) {
    return v[(c * static_cast<std::size_t>(extent.height) + static_cast<std::size_t>(y)) *
                 static_cast<std::size_t>(extent.width) +
             static_cast<std::size_t>(x)];
  }
  double get(std::size_t c, std::int32_t y, std::int32_t x) const {
    if (x < 0 || y < 0 || x >= extent.width || y >= extent.height) return 0.0;
    return v[(c * static_cast<std::size_t>(extent.height) + static_cast<std::size_t>(y)) *
                 static_cast<std::size_t>(extent.width) +
             static_cast<std::size_t>(x)];
  }
};

inline Dense densify(const TokenSet& t, const Extent& e) {
  const std::size_t c = t.channels();
  Dense d(c, e);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch) d.at(ch, t.coords[i].y, t.coords[i].x) = t.features.at(i, ch);
  return d;
}

// w is (taps, C_in, C_out) row-major.
inline double w3(const Tensor& w, std::size_t tap, std::size_t ci, std::size_t co) {
  return w.data()[(tap * w.dim(1) + ci) * w.dim(2) + co];
}

/// Dense 3x3 stride-1 zero-padded convolution evaluated at `coords`.
inline Rows subconv(const TokenSet& t, const gdmae::SparseConv3& conv) {
  Extent e{1, 1};
  for (const auto& c : t.coords) e = {std::max(e.width, c.x + 2), std::max(e.height, c.y + 2)};
  const Dense x = densify(t, e);
  Rows out;
  for (const auto& c : t.coords) {
    std::vector<double> row(conv.out_channels());
    for (std::size_t o = 0; o < row.size(); ++o) {
      double s = conv.bias.at(o);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          for (std::size_t ci = 0; ci < x.channels; ++ci)
            s += w3(conv.weight, static_cast<std::size_t>(ky * 3 + kx), ci, o) * x.get(ci, c.y + ky - 1, c.x + kx - 1);
      row[o] = s;
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Dense 3x3 stride-2 convolution: output o reads inputs 2o + k, k in
/// {0, 1, 2}, evaluated at every floor(c / 2) of the active inputs.
inline std::pair<std::vector<Coord>, Rows> downsample(const TokenSet& t, const gdmae::SparseConv3& conv) {
  std::set<Coord> outs;
  Extent e{1, 1};
  for (const auto& c : t.coords) {
    outs.insert({floor_div(c.x, 2), floor_div(c.y, 2)});
    e = {std::max(e.width, c.x + 3), std::max(e.height, c.y + 3)};
  }
  const Dense x = densify(t, e);
  Rows rows;
  for (const auto& o : outs) {
    std::vector<double> row(conv.out_channels());
    for (std::size_t co = 0; co < row.size(); ++co) {
      double s = conv.bias.at(co);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          for (std::size_t ci = 0; ci < x.channels; ++ci)
            s += w3(conv.weight, static_cast<std::size_t>(ky * 3 + kx), ci, co) * x.get(ci, 2 * o.y + ky, 2 * o.x + kx);
      row[co] = s;
    }
    rows.push_back(std::move(row));
  }
  return {{outs.begin(), outs.end()}, rows};
}

// ---- dense attention ----

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// y = x W + b with W (in, out).
inline std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> y(w.dim(1), 0.0);
  for (std::size_t o = 0; o < y.size(); ++o) {
    double s = b.defined() ? b.at(o) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w.at(i, o);
    y[o] = s;
  }
  return y;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const Tensor& gain, const Tensor& bias) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gain.at(i) + bias.at(i);
  return y;
}

/// One pre-norm attention layer where token i attends to every token j with
/// window_of(j) == window_of(i), found by comparing all pairs.
template <class WindowOf>
Rows attention_layer(const Rows& x, const Rows& positions, WindowOf window_of, const gdmae::AttentionParams& p) {
  const std::size_t m = x.size(), d = p.dim, dh = d / p.heads;
  Rows q(m), k(m), v(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto pos = affine(positions[i], p.pos_w1, p.pos_b1);
    for (auto& t : pos) t = gelu(t);
    pos = affine(pos, p.pos_w2, p.pos_b2);
    auto u = layer_norm(x[i], p.ln1_gain, p.ln1_bias);
    for (std::size_t c = 0; c < d; ++c) u[c] += pos[c];
    q[i] = affine(u, p.wq, p.bq);
    k[i] = affine(u, p.wk, p.bk);
    v[i] = affine(u, p.wv, p.bv);
  }
  Rows out(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> peers;
    for (std::size_t j = 0; j < m; ++j)
      if (window_of(j) == window_of(i)) peers.push_back(j);
    std::vector<double> attn(d, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h) {
      std::vector<double> score(peers.size());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < peers.size(); ++a) {
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[peers[a]][c];
        score[a] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[a]);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t a = 0; a < peers.size(); ++a)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) attn[c] += score[a] / z * v[peers[a]][c];
    }
    auto x1 = affine(attn, p.wo, p.bo);
    for (std::size_t c = 0; c < d; ++c) x1[c] += x[i][c];
    auto hdn = affine(layer_norm(x1, p.ln2_gain, p.ln2_bias), p.ff_w1, p.ff_b1);
    for (auto& t : hdn) t = gelu(t);
    auto y = affine(hdn, p.ff_w2, p.ff_b2);
    for (std::size_t c = 0; c < d; ++c) y[c] += x1[c];
    out[i] = std::move(y);
  }
  return out;
}

/// In-window offsets mapped to [-1, 1] for windows of `region` cells after
/// translating coords by `shift`.
inline Rows window_offsets(const std::vector<Coord>& coords, int region, int shift) {
  Rows out;
  const double span = region - 1;
  for (const auto& c : coords) {
    const int ox = c.x + shift - floor_div(c.x + shift, region) * region;
    const int oy = c.y + shift - floor_div(c.y + shift, region) * region;
    out.push_back({span > 0 ? 2.0 * ox / span - 1.0 : 0.0, span > 0 ? 2.0 * oy / span - 1.0 : 0.0});
  }
  return out;
}

inline auto window_key(const std::vector<Coord>& coords, int region, int shift) {
  return [&coords, region, shift](std::size_t i) {
    return std::pair{floor_div(coords[i].x + shift, region), floor_div(coords[i].y + shift, region)};
  };
}

/// Attention layer on the plain (shift 0) or shifted (shift region/2)
/// partition with in-window offsets as positions.
inline Rows regional_attention(const Rows& x, const std::vector<Coord>& coords, int region, bool shifted,
                               const gdmae::AttentionParams& p) {
  const int shift = shifted ? region / 2 : 0;
  return attention_layer(x, window_offsets(coords, region, shift), window_key(coords, region, shift), p);
}

// ---- generative decoder ----

/// Features of one level brought to the target grid `te` by explicit
/// convolution (Same, Down) or transposed-convolution (Up) loops.
inline Dense adapt_dense(const gdmae::AdapterGeometry& g, const Tensor& a, const TokenSet& src, const Extent& se,
                         const Extent& te) {
  const Dense x = densify(src, se);
  const std::size_t cin = a.dim(1), dim = a.dim(2);
  Dense out(dim, te);
  if (g.kind == gdmae::AdapterGeometry::Kind::Up) {
    for (std::int32_t iy = 0; iy < se.height; ++iy)
      for (std::int32_t ix = 0; ix < se.width; ++ix)
        for (int ky = 0; ky < g.kernel; ++ky)
          for (int kx = 0; kx < g.kernel; ++kx) {
            const std::int32_t oy = iy * g.stride - g.padding + ky, ox = ix * g.stride - g.padding + kx;
            if (!te.contains({ox, oy})) continue;
            for (std::size_t d = 0; d < dim; ++d)
              for (std::size_t c = 0; c < cin; ++c)
                out.at(d, oy, ox) += w3(a, static_cast<std::size_t>(ky * g.kernel + kx), c, d) * x.get(c, iy, ix);
          }
    return out;
  }
  for (std::int32_t oy = 0; oy < te.height; ++oy)
    for (std::int32_t ox = 0; ox < te.width; ++ox)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const std::int32_t iy = oy * g.stride - g.padding + ky, ix = ox * g.stride - g.padding + kx;
          for (std::size_t d = 0; d < dim; ++d)
            for (std::size_t c = 0; c < cin; ++c)
              out.at(d, oy, ox) += w3(a, static_cast<std::size_t>(ky * g.kernel + kx), c, d) * x.get(c, iy, ix);
        }
  return out;
}

inline Dense adapt_dense(const gdmae::GenerativeDecoder& dec, std::size_t l, const TokenSet& src,
                         const std::array<Extent, 3>& extents) {
  return adapt_dense(dec.geometry(l), dec.adapter(l), src, extents[l],
                     extents[static_cast<std::size_t>(dec.target_level())]);
}

/// Dense maps of all three levels, concatenated, fused by a zero-padded 3x3
/// convolution plus bias and read at `masked`.
inline Rows generative_decode(const gdmae::GenerativeDecoder& dec, const gdmae::EncoderOutput& enc,
                              const std::vector<Coord>& masked, const std::array<Extent, 3>& extents) {
  std::vector<Dense> maps;
  for (std::size_t l = 0; l < 3; ++l) maps.push_back(adapt_dense(dec, l, enc.stages[l], extents));
  const auto& fuse = dec.fusion();
  const std::size_t dim = dec.dim();
  Rows out;
  for (const auto& m : masked) {
    std::vector<double> row(dim);
    for (std::size_t o = 0; o < dim; ++o) {
      double s = fuse.bias.at(o);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t c = 0; c < dim; ++c)
              s += w3(fuse.weight, static_cast<std::size_t>(ky * 3 + kx), l * dim + c, o) *
                   maps[l].get(c, m.y + ky - 1, m.x + kx - 1);
      row[o] = s;
    }
    out.push_back(std::move(row));
  }
  return out;
}

// ---- Chamfer ----

/// O(K^2) double loop per token.
inline double chamfer(const Tensor& pred, const gdmae::TargetSet& t) {
  const std::size_t k = pred.dim(1);
  auto p = [&](std::size_t tok, std::size_t i, std::size_t c) { return pred.data()[(tok * k + i) * 3 + c]; };
  auto d2 = [&](std::size_t tok, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double e = p(tok, i, c) - t.point(tok, j)[c];
      s += e * e;
    }
    return s;
  };
  double total = 0.0;
  for (std::size_t tok = 0; tok < t.tokens; ++tok) {
    const std::size_t v = t.valid_counts[tok];
    double fwd = 0.0, bwd = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v; ++j) best = std::min(best, d2(tok, i, j));
      fwd += best;
    }
    for (std::size_t j = 0; j < v; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) best = std::min(best, d2(tok, i, j));
      bwd += best;
    }
    total += fwd / static_cast<double>(k) + bwd / static_cast<double>(v);
  }
  return total / static_cast<double>(t.tokens);
}

/// Random prediction and target set with T tokens, K points, random valid
/// counts in [1, K].
inline std::pair<Tensor, gdmae::TargetSet> random_chamfer_instance(std::size_t tokens, std::size_t k,
                                                                   gdmae::Rng& rng) {
  gdmae::TargetSet t;
  t.tokens = tokens;
  t.k = k;
  t.points.assign(tokens * k * 3, 0.0);
  t.source.resize(tokens);
  for (std::size_t tok = 0; tok < tokens; ++tok) {
    const auto v = static_cast<std::uint32_t>(1 + gdmae::uniform_index(rng, k));
    t.valid_counts.push_back(v);
    for (std::uint32_t j = 0; j < v; ++j) {
      t.source[tok].push_back(j);
      for (std::size_t c = 0; c < 3; ++c) t.points[(tok * k + j) * 3 + c] = gdmae::uniform(rng, -1.0, 1.0);
    }
  }
  return {random_tensor({tokens, k, 3}, rng), std::move(t)};
}

}  // namespace oracle

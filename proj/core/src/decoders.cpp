#include "gdmae/decoders.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "gdmae/autograd.hpp"
#include "gdmae/ops.hpp"

namespace gdmae {

AdapterGeometry adapter_geometry(int source_level, int target_level) {
  if (source_level < 0 || source_level > 2 || target_level < 0 || target_level > 2) {
    throw std::invalid_argument("adapter_geometry: levels must lie in [0, 2]");
  }
  AdapterGeometry g;
  if (source_level == target_level) return g;
  const int s = 1 << std::abs(source_level - target_level);
  g.kind = source_level > target_level ? AdapterGeometry::Kind::Up : AdapterGeometry::Kind::Down;
  g.stride = s;
  g.kernel = 2 * s;
  g.padding = s / 2;
  return g;
}

Rulebook adapter_rulebook(const AdapterGeometry& g, std::span<const Coord> inputs, std::span<const Coord> outputs) {
  Rulebook rb(g.taps(), outputs.size());
  const int k = g.kernel, s = g.stride, p = g.padding;
  switch (g.kind) {
    case AdapterGeometry::Kind::Same: {
      const CoordIndex index = index_coords(inputs);
      for (std::size_t o = 0; o < outputs.size(); ++o) {
        const auto it = index.find(outputs[o]);
        if (it != index.end()) rb.taps[0].emplace_back(it->second, static_cast<std::uint32_t>(o));
      }
      break;
    }
    case AdapterGeometry::Kind::Up: {
      const CoordIndex index = index_coords(outputs);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const Coord dst{inputs[i].x * s - p + kx, inputs[i].y * s - p + ky};
            const auto it = index.find(dst);
            if (it != index.end()) {
              rb.taps[static_cast<std::size_t>(ky * k + kx)].emplace_back(static_cast<std::uint32_t>(i), it->second);
            }
          }
        }
      }
      break;
    }
    case AdapterGeometry::Kind::Down: {
      const CoordIndex index = index_coords(inputs);
      for (std::size_t o = 0; o < outputs.size(); ++o) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const Coord src{outputs[o].x * s - p + kx, outputs[o].y * s - p + ky};
            const auto it = index.find(src);
            if (it != index.end()) {
              rb.taps[static_cast<std::size_t>(ky * k + kx)].emplace_back(it->second, static_cast<std::uint32_t>(o));
            }
          }
        }
      }
      break;
    }
  }
  return rb;
}

std::array<Extent, 3> level_extents(const GridSpec& spec) { return {spec.extent(0), spec.extent(1), spec.extent(2)}; }

namespace {

// Each output of an Up adapter sees 2x2 inputs; a Down adapter sees k x k.
std::size_t adapter_fan_in(const AdapterGeometry& g, std::size_t channels) {
  switch (g.kind) {
    case AdapterGeometry::Kind::Same: return channels;
    case AdapterGeometry::Kind::Up: return 4 * channels;
    case AdapterGeometry::Kind::Down: return g.taps() * channels;
  }
  return channels;
}

void check_encoder_output(const EncoderOutput& enc, const std::array<Tensor, 3>& adapters, const char* who) {
  for (std::size_t l = 0; l < 3; ++l) {
    const TokenSet& t = enc.stages[l];
    if (t.level != static_cast<int>(l)) {
      throw std::invalid_argument(std::string(who) + ": stage " + std::to_string(l + 1) + " tokens are at level " +
                                  std::to_string(t.level));
    }
    if (t.size() > 0 && t.channels() != adapters[l].dim(1)) {
      throw ShapeError(std::string(who) + ": level " + std::to_string(l) + " width " + std::to_string(t.channels()) +
                       " vs adapter input " + std::to_string(adapters[l].dim(1)));
    }
  }
}

void check_in_extent(std::span<const Coord> coords, const Extent& extent, const char* who) {
  for (const auto& c : coords) {
    if (!extent.contains(c)) {
      throw std::out_of_range(std::string(who) + ": coord " + coord_str(c) + " outside the " +
                              std::to_string(extent.width) + "x" + std::to_string(extent.height) + " target grid");
    }
  }
}

// Adapter output of one level at `cells`, (cells, dim).
Tensor adapt_level(const TokenSet& tokens, const AdapterGeometry& g, const Tensor& weight, std::span<const Coord> cells) {
  if (tokens.size() == 0) return Tensor({cells.size(), weight.dim(2)});
  return sparse_conv(tokens.features, weight, adapter_rulebook(g, tokens.coords, cells));
}

Tensor adapt_all(const EncoderOutput& enc, const std::array<AdapterGeometry, 3>& geometry,
                 const std::array<Tensor, 3>& adapters, std::span<const Coord> cells) {
  return concat({adapt_level(enc.stages[0], geometry[0], adapters[0], cells),
                 adapt_level(enc.stages[1], geometry[1], adapters[1], cells),
                 adapt_level(enc.stages[2], geometry[2], adapters[2], cells)},
                1);
}

}  // namespace

GenerativeDecoder::GenerativeDecoder(const std::array<std::size_t, 3>& level_dims, std::size_t dim, int target_level,
                                     Rng& rng)
    : dim_(dim), target_level_(target_level) {
  if (dim == 0) throw std::invalid_argument("GenerativeDecoder: zero width");
  for (std::size_t l = 0; l < 3; ++l) {
    geometry_[l] = adapter_geometry(static_cast<int>(l), target_level);
    adapters_[l] = uniform_param({geometry_[l].taps(), level_dims[l], dim}, adapter_fan_in(geometry_[l], level_dims[l]), rng);
  }
  fuse_ = SparseConv3::create(3 * dim, dim, rng);
}

Tensor GenerativeDecoder::decode(const EncoderOutput& enc, std::span<const Coord> masked,
                                 const std::array<Extent, 3>& extents) const {
  check_encoder_output(enc, adapters_, "generative_decode");
  const Extent& extent = extents[static_cast<std::size_t>(target_level_)];
  check_in_extent(masked, extent, "generative_decode");
  if (masked.empty()) return Tensor(Shape{0, dim_});

  // Cells whose adapter outputs feed the kernel-3 fusion at some masked cell.
  std::vector<Coord> needed;
  needed.reserve(masked.size() * 9);
  for (const auto& m : masked) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (const Coord c{m.x + dx, m.y + dy}; extent.contains(c)) needed.push_back(c);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  const Tensor adapted = adapt_all(enc, geometry_, adapters_, needed);

  const CoordIndex index = index_coords(needed);
  Rulebook rb(9, masked.size());
  for (std::size_t o = 0; o < masked.size(); ++o) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const auto it = index.find({masked[o].x + kx - 1, masked[o].y + ky - 1});
        if (it != index.end()) rb.taps[static_cast<std::size_t>(ky * 3 + kx)].emplace_back(it->second, static_cast<std::uint32_t>(o));
      }
    }
  }
  return add(sparse_conv(adapted, fuse_.weight, rb), fuse_.bias);
}

ParamList GenerativeDecoder::parameters() const {
  ParamList out;
  for (std::size_t l = 0; l < 3; ++l) out.push_back({"adapter" + std::to_string(l + 1) + ".weight", adapters_[l]});
  append_params(out, "fuse.", fuse_.parameters());
  return out;
}

// --- prepared inference path -------------------------------------------------

namespace {

// Adapter tap index along one axis for a masked cell with the given phase,
// an input at displacement `delta` and fusion offset `d`; -1 when the pair
// does not interact through that fusion offset.
int axis_tap(const AdapterGeometry& g, int phase, int delta, int d) {
  int k = -1;
  switch (g.kind) {
    case AdapterGeometry::Kind::Same: k = delta == d ? 0 : -1; break;
    case AdapterGeometry::Kind::Up: k = phase + d + g.padding - g.stride * delta; break;
    case AdapterGeometry::Kind::Down: k = delta - d * g.stride + g.padding; break;
  }
  return k >= 0 && k < g.kernel ? k : -1;
}

int positive_mod(int v, int m) { return ((v % m) + m) % m; }

// Input coordinate along one axis for masked cell m and displacement delta.
int axis_input(const AdapterGeometry& g, int m, int delta) {
  switch (g.kind) {
    case AdapterGeometry::Kind::Same: return m + delta;
    case AdapterGeometry::Kind::Up: return (m - positive_mod(m, g.stride)) / g.stride + delta;
    case AdapterGeometry::Kind::Down: return m * g.stride + delta;
  }
  return m;
}

}  // namespace

PreparedGenerativeDecoder::PreparedGenerativeDecoder(const GenerativeDecoder& decoder, const std::array<Extent, 3>& extents)
    : decoder_(&decoder), extents_(extents) {
  const std::size_t dim = decoder.dim();
  const auto fuse = decoder.fusion().weight.data();  // (9, 3*dim, dim)
  for (std::size_t l = 0; l < 3; ++l) {
    const AdapterGeometry& g = decoder.geometry(l);
    const auto adapter = decoder.adapter(l).data();  // (taps, C, dim)
    const std::size_t ci = decoder.adapter(l).dim(1);
    Folded& f = folded_[l];
    f.phases = g.kind == AdapterGeometry::Kind::Up ? g.stride : 1;
    // Displacements reachable through some fusion offset.
    int lo = 1 << 20, hi = -(1 << 20);
    for (int phase = 0; phase < f.phases; ++phase)
      for (int delta = -4 * g.kernel; delta <= 4 * g.kernel; ++delta)
        for (int d = -1; d <= 1; ++d)
          if (axis_tap(g, phase, delta, d) >= 0) lo = std::min(lo, delta), hi = std::max(hi, delta);
    f.delta_lo = lo;
    f.delta_count = hi - lo + 1;

    const std::size_t keys = static_cast<std::size_t>(f.phases * f.phases * f.delta_count * f.delta_count);
    f.slot.assign(keys, -1);
    std::vector<double> weights;
    std::vector<double> acc(ci * dim);
    std::size_t key = 0;
    for (int py = 0; py < f.phases; ++py) {
      for (int px = 0; px < f.phases; ++px) {
        for (int ey = 0; ey < f.delta_count; ++ey) {
          for (int ex = 0; ex < f.delta_count; ++ex, ++key) {
            std::fill(acc.begin(), acc.end(), 0.0);
            bool any = false;
            for (int dy = -1; dy <= 1; ++dy) {
              const int ky = axis_tap(g, py, lo + ey, dy);
              if (ky < 0) continue;
              for (int dx = -1; dx <= 1; ++dx) {
                const int kx = axis_tap(g, px, lo + ex, dx);
                if (kx < 0) continue;
                any = true;
                const double* a = adapter.data() + static_cast<std::size_t>(ky * g.kernel + kx) * ci * dim;
                const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
                // Rows of the fusion weight that read this level's block.
                const double* w = fuse.data() + tap * 3 * dim * dim + l * dim * dim;
                kernels::gemm_nn(ci, dim, dim, a, w, acc.data());
              }
            }
            if (!any) continue;
            f.slot[key] = static_cast<std::int32_t>(weights.size() / (ci * dim));
            weights.insert(weights.end(), acc.begin(), acc.end());
          }
        }
      }
    }
    const std::size_t slots = weights.size() / (ci * dim);
    f.weights = Tensor({slots, ci, dim}, std::move(weights));
  }
}

Tensor PreparedGenerativeDecoder::decode(const EncoderOutput& enc, std::span<const Coord> masked) const {
  NoGradGuard no_grad;
  const std::size_t dim = decoder_->dim();
  const Extent& extent = extents_[static_cast<std::size_t>(decoder_->target_level())];
  check_in_extent(masked, extent, "generative_decode");
  for (std::size_t l = 0; l < 3; ++l) {
    if (enc.stages[l].size() > 0 && enc.stages[l].channels() != decoder_->adapter(l).dim(1)) {
      throw ShapeError("generative_decode: level " + std::to_string(l) + " width mismatch");
    }
  }

  // Interior cells have the full 3x3 fusion footprint inside the grid.
  std::vector<Coord> interior, border;
  std::vector<std::uint32_t> interior_row, border_row;
  for (std::size_t r = 0; r < masked.size(); ++r) {
    const Coord& m = masked[r];
    const bool inside = m.x >= 1 && m.y >= 1 && m.x + 1 < extent.width && m.y + 1 < extent.height;
    (inside ? interior : border).push_back(m);
    (inside ? interior_row : border_row).push_back(static_cast<std::uint32_t>(r));
  }

  Tensor out({masked.size(), dim});
  auto o = out.mutable_data();
  if (!interior.empty()) {
    std::vector<double> sum(interior.size() * dim, 0.0);
    for (std::size_t l = 0; l < 3; ++l) {
      const TokenSet& tokens = enc.stages[l];
      if (tokens.size() == 0) continue;
      const AdapterGeometry& g = decoder_->geometry(l);
      const Folded& f = folded_[l];
      const CoordIndex index = index_coords(tokens.coords);
      Rulebook rb(f.weights.dim(0), interior.size());
      for (std::size_t r = 0; r < interior.size(); ++r) {
        const Coord& m = interior[r];
        const int px = f.phases > 1 ? positive_mod(m.x, f.phases) : 0;
        const int py = f.phases > 1 ? positive_mod(m.y, f.phases) : 0;
        for (int ey = 0; ey < f.delta_count; ++ey) {
          for (int ex = 0; ex < f.delta_count; ++ex) {
            const std::size_t key =
                static_cast<std::size_t>(((py * f.phases + px) * f.delta_count + ey) * f.delta_count + ex);
            const std::int32_t slot = f.slot[key];
            if (slot < 0) continue;
            const auto it = index.find({axis_input(g, m.x, f.delta_lo + ex), axis_input(g, m.y, f.delta_lo + ey)});
            if (it != index.end()) rb.taps[static_cast<std::size_t>(slot)].emplace_back(it->second, static_cast<std::uint32_t>(r));
          }
        }
      }
      const Tensor part = sparse_conv(tokens.features, f.weights, rb);
      const auto pd = part.data();
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += pd[i];
    }
    const auto bias = decoder_->fusion().bias.data();
    for (std::size_t r = 0; r < interior.size(); ++r)
      for (std::size_t j = 0; j < dim; ++j) o[interior_row[r] * dim + j] = sum[r * dim + j] + bias[j];
  }
  if (!border.empty()) {
    const Tensor part = decoder_->decode(enc, border, extents_);
    const auto pd = part.data();
    for (std::size_t r = 0; r < border.size(); ++r) std::copy_n(pd.data() + r * dim, dim, o.data() + border_row[r] * dim);
  }
  return out;
}

// --- baseline ----------------------------------------------------------------

Tensor absolute_positions(std::span<const Coord> coords, const Extent& extent) {
  Tensor pos({coords.size(), 2});
  auto p = pos.mutable_data();
  auto norm = [](std::int32_t v, std::int32_t n) { return n > 1 ? 2.0 * v / (n - 1) - 1.0 : 0.0; };
  for (std::size_t i = 0; i < coords.size(); ++i) {
    p[2 * i] = norm(coords[i].x, extent.width);
    p[2 * i + 1] = norm(coords[i].y, extent.height);
  }
  return pos;
}

BaselineDecoder::BaselineDecoder(const std::array<std::size_t, 3>& level_dims, std::size_t dim, int target_level,
                                 int blocks, int region_size, std::size_t heads, std::size_t mlp_ratio, Rng& rng)
    : dim_(dim), target_level_(target_level), region_size_(region_size) {
  if (dim == 0) throw std::invalid_argument("BaselineDecoder: zero width");
  if (blocks < 0) throw std::invalid_argument("BaselineDecoder: negative block count");
  for (std::size_t l = 0; l < 3; ++l) {
    geometry_[l] = adapter_geometry(static_cast<int>(l), target_level);
    adapters_[l] = uniform_param({geometry_[l].taps(), level_dims[l], dim}, adapter_fan_in(geometry_[l], level_dims[l]), rng);
  }
  fuse_w_ = uniform_param({3 * dim, dim}, 3 * dim, rng);
  fuse_b_ = constant_param({dim}, 0.0);
  mask_embedding_ = uniform_param({dim}, dim, rng);
  for (int b = 0; b < blocks; ++b) {
    blocks_.push_back({AttentionParams::create(dim, heads, mlp_ratio, rng), AttentionParams::create(dim, heads, mlp_ratio, rng)});
  }
}

Tensor BaselineDecoder::fuse_visible(const EncoderOutput& enc, std::span<const Coord> visible) const {
  check_encoder_output(enc, adapters_, "baseline_decode");
  if (visible.empty()) return Tensor(Shape{0, dim_});
  return linear(adapt_all(enc, geometry_, adapters_, visible), fuse_w_, fuse_b_);
}

Tensor BaselineDecoder::decode(const EncoderOutput& enc, std::span<const Coord> visible, std::span<const Coord> masked,
                               const Extent& target_extent) const {
  const CoordIndex vis = index_coords(visible);
  for (const auto& m : masked) {
    if (vis.count(m)) throw std::invalid_argument("baseline_decode: coord " + coord_str(m) + " is both visible and masked");
  }
  return decode_fused(fuse_visible(enc, visible), visible, masked, target_extent);
}

Tensor BaselineDecoder::decode_fused(const Tensor& visible_features, std::span<const Coord> visible,
                                     std::span<const Coord> masked, const Extent& target_extent) const {
  check_in_extent(visible, target_extent, "baseline_decode");
  check_in_extent(masked, target_extent, "baseline_decode");
  if (masked.empty()) return Tensor(Shape{0, dim_});
  const std::vector<std::uint32_t> zeros(masked.size(), 0);
  const Tensor mask_rows = gather_rows(reshape(mask_embedding_, {1, dim_}), zeros);
  Tensor x = visible.empty() ? mask_rows : concat({visible_features, mask_rows}, 0);

  std::vector<Coord> coords(visible.begin(), visible.end());
  coords.insert(coords.end(), masked.begin(), masked.end());
  if (!blocks_.empty()) {
    const Tensor pos = absolute_positions(coords, target_extent);
    const WindowAssignment plain = window_partition(coords, region_size_);
    const WindowAssignment shifted = window_partition(region_shift(coords, region_size_), region_size_);
    for (const auto& block : blocks_) {
      x = sparse_regional_attention(x, plain, pos, block[0]);
      x = sparse_regional_attention(x, shifted, pos, block[1]);
    }
  }
  std::vector<std::uint32_t> rows(masked.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::uint32_t>(visible.size() + i);
  return gather_rows(x, rows);
}

ParamList BaselineDecoder::parameters() const {
  ParamList out;
  for (std::size_t l = 0; l < 3; ++l) out.push_back({"adapter" + std::to_string(l + 1) + ".weight", adapters_[l]});
  out.push_back({"fuse.weight", fuse_w_});
  out.push_back({"fuse.bias", fuse_b_});
  out.push_back({"mask_embedding", mask_embedding_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    append_params(out, "block" + std::to_string(b) + ".sra.", blocks_[b][0].parameters());
    append_params(out, "block" + std::to_string(b) + ".sra_shift.", blocks_[b][1].parameters());
  }
  return out;
}

}  // namespace gdmae

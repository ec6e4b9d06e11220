#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gdmae/encoder.hpp"
#include "gdmae/sparse_transformer.hpp"

namespace gdmae {

/// How one encoder level is brought to the target level. Per axis:
///   Same: output c reads input c (kernel 1).
///   Up:   transposed conv, input i feeds output i*stride - padding + k.
///   Down: strided conv, output c reads input c*stride - padding + k.
/// Up and Down use kernel 2*stride and padding stride/2. Inputs outside the
/// source grid and outputs outside the target grid are zero / cropped.
struct AdapterGeometry {
  enum class Kind { Same, Up, Down };
  Kind kind = Kind::Same;
  int stride = 1;
  int kernel = 1;
  int padding = 0;

  std::size_t taps() const { return static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel); }
};

AdapterGeometry adapter_geometry(int source_level, int target_level);

/// Rulebook from `inputs` (source level) onto `outputs` (target level) with
/// tap ky*kernel + kx. Outputs need not be active sites of anything.
Rulebook adapter_rulebook(const AdapterGeometry& g, std::span<const Coord> inputs, std::span<const Coord> outputs);

/// Extents of levels 0, 1, 2 for a grid.
std::array<Extent, 3> level_extents(const GridSpec& spec);

/// Scatter each level to a dense map, adapt to the target level, concat,
/// fuse with a kernel-3 conv, gather at the masked cells. Evaluated lazily:
/// only the adapter outputs in the 3x3 neighbourhoods of the masked cells
/// are computed, which gives the same numbers as the dense maps.
class GenerativeDecoder {
 public:
  GenerativeDecoder() = default;
  GenerativeDecoder(const std::array<std::size_t, 3>& level_dims, std::size_t dim, int target_level, Rng& rng);

  std::size_t dim() const { return dim_; }
  int target_level() const { return target_level_; }
  const AdapterGeometry& geometry(std::size_t level) const { return geometry_[level]; }
  /// (taps, C_level, dim); adapters carry no bias so empty cells stay zero.
  const Tensor& adapter(std::size_t level) const { return adapters_[level]; }
  const SparseConv3& fusion() const { return fuse_; }

  /// (T, dim) features at `masked` (target-level coords inside extents[target]).
  Tensor decode(const EncoderOutput& enc, std::span<const Coord> masked, const std::array<Extent, 3>& extents) const;

  ParamList parameters() const;

 private:
  std::size_t dim_ = 0;
  int target_level_ = 0;
  std::array<AdapterGeometry, 3> geometry_;
  std::array<Tensor, 3> adapters_;
  SparseConv3 fuse_;
};

/// Inference-only form of a GenerativeDecoder. Adapters and fusion are both
/// linear, so for an interior masked cell the contribution of each encoder
/// token depends only on its relative position (and the cell's phase when
/// upsampling). Those composed matrices are precomputed once; cells on the
/// grid border fall back to the lazy path. Results match decode() up to
/// rounding.
class PreparedGenerativeDecoder {
 public:
  PreparedGenerativeDecoder(const GenerativeDecoder& decoder, const std::array<Extent, 3>& extents);

  Tensor decode(const EncoderOutput& enc, std::span<const Coord> masked) const;

 private:
  struct Folded {
    // Per axis: key ranges for phase (Up only) and the input displacement.
    int phases = 1;
    int delta_lo = 0;
    int delta_count = 0;
    std::vector<std::int32_t> slot;  // key -> row of `weights`, -1 if no contribution
    Tensor weights;                  // (slots, C_level, dim)
  };

  const GenerativeDecoder* decoder_;
  std::array<Extent, 3> extents_;
  std::array<Folded, 3> folded_;
};

/// Transformer decoder used for comparison: the same adapters fused by a
/// kernel-1 conv at the visible cells, a shared mask embedding at the masked
/// cells, then `blocks` x (SRA on the plain partition, SRA on the shifted
/// partition) over the union. Positions come from absolute coords.
class BaselineDecoder {
 public:
  BaselineDecoder() = default;
  BaselineDecoder(const std::array<std::size_t, 3>& level_dims, std::size_t dim, int target_level, int blocks,
                  int region_size, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

  std::size_t dim() const { return dim_; }
  int blocks() const { return static_cast<int>(blocks_.size()); }
  int region_size() const { return region_size_; }
  const Tensor& mask_embedding() const { return mask_embedding_; }

  /// Fused kernel-1 features at `visible` (V, dim).
  Tensor fuse_visible(const EncoderOutput& enc, std::span<const Coord> visible) const;
  /// (T, dim) rows for `masked`. Throws if visible and masked overlap.
  Tensor decode(const EncoderOutput& enc, std::span<const Coord> visible, std::span<const Coord> masked,
                const Extent& target_extent) const;
  /// Decode from already fused visible features.
  Tensor decode_fused(const Tensor& visible_features, std::span<const Coord> visible, std::span<const Coord> masked,
                      const Extent& target_extent) const;

  ParamList parameters() const;

 private:
  std::size_t dim_ = 0;
  int target_level_ = 0;
  int region_size_ = 8;
  std::array<AdapterGeometry, 3> geometry_;
  std::array<Tensor, 3> adapters_;
  Tensor fuse_w_, fuse_b_;  // (3*dim, dim), (dim,)
  Tensor mask_embedding_;   // (dim,)
  std::vector<std::array<AttentionParams, 2>> blocks_;
};

/// Absolute coords mapped to [-1, 1] over the extent, as (M, 2).
Tensor absolute_positions(std::span<const Coord> coords, const Extent& extent);

}  // namespace gdmae

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gdmae/params.hpp"
#include "gdmae/pillar_grid.hpp"

namespace gdmae {

/// Non-overlapping square windows over token coordinates.
struct WindowAssignment {
  int region_size = 1;
  std::vector<Coord> window;  // per token: coord div region_size
  std::vector<Coord> offset;  // per token: coord mod region_size
  // Token indices per window, windows in lexicographic id order, tokens in
  // input order within a window.
  std::vector<Coord> group_ids;
  std::vector<std::vector<std::uint32_t>> groups;

  std::size_t size() const { return window.size(); }
};

WindowAssignment window_partition(std::span<const Coord> coords, int region_size);

/// coords + region_size/2 on both axes, for the shifted partition.
/// Throws std::invalid_argument for odd region sizes.
std::vector<Coord> region_shift(std::span<const Coord> coords, int region_size);

/// In-window offsets mapped to [-1, 1] per axis, as an (M, 2) tensor.
Tensor normalized_offsets(const WindowAssignment& assignment);

/// Multi-head self-attention restricted to each group. q, k, v are (M, d);
/// heads must divide d. Output rows follow input rows.
Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          std::span<const std::vector<std::uint32_t>> groups, std::size_t heads);

/// Weights of one pre-norm sparse regional attention layer.
struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 8;
  Tensor ln1_gain, ln1_bias;
  Tensor pos_w1, pos_b1, pos_w2, pos_b2;  // 2 -> dim -> dim
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;  // dim -> ratio*dim -> dim

  static AttentionParams create(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng);
  ParamList parameters() const;
};

/// x + Attn(LN(x) + pos) then + FFN(LN(.)), attention confined to windows.
/// `positions` is the (M, 2) input of the positional MLP.
Tensor sparse_regional_attention(const Tensor& features, const WindowAssignment& assignment,
                                 const Tensor& positions, const AttentionParams& params);
/// Positional input taken from the normalized in-window offsets.
Tensor sparse_regional_attention(const Tensor& features, const WindowAssignment& assignment,
                                 const AttentionParams& params);

/// Input/output row pairs per kernel tap.
struct Rulebook {
  std::size_t num_out = 0;
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> taps;  // (in, out)

  explicit Rulebook(std::size_t num_taps = 0, std::size_t outputs = 0) : num_out(outputs), taps(num_taps) {}
  std::size_t pair_count() const;
};

/// out[o] = sum over taps t and pairs (i, o) of x[i] * weight[t]; weight is
/// (taps, C_in, C_out). No bias.
Tensor sparse_conv(const Tensor& x, const Tensor& weight, const Rulebook& rulebook);

/// 3x3 sparse convolution weights: tap index ky*3 + kx covers offset
/// (kx - 1, ky - 1).
struct SparseConv3 {
  Tensor weight;  // (9, C_in, C_out)
  Tensor bias;    // (C_out,)

  static SparseConv3 create(std::size_t in_channels, std::size_t out_channels, Rng& rng);
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(2); }
  ParamList parameters() const { return {{"weight", weight}, {"bias", bias}}; }
};

/// Stride-2 sparse convolution. Active outputs are {floor(c/2)}; output o
/// sums taps over active inputs at 2o + 1 + k, k in {-1, 0, 1}^2.
TokenSet sparse_conv_downsample(const TokenSet& tokens, const SparseConv3& conv);
Rulebook downsample_rulebook(std::span<const Coord> in, std::span<const Coord> out);
std::vector<Coord> downsample_coords(std::span<const Coord> coords);

/// Submanifold 3x3 convolution: same active sites in and out.
TokenSet submanifold_conv(const TokenSet& tokens, const SparseConv3& conv);
Rulebook submanifold_rulebook(std::span<const Coord> coords);

}  // namespace gdmae

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "gdmae/sparse_transformer.hpp"

namespace gdmae {

struct StageConfig {
  std::size_t dim = 128;
  int layers = 2;
  int region_size = 8;
  bool downsample = false;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 2;
};

/// Stage plan used for pre-training: widths [128, 256, 256], two layers per
/// stage, windows of 8 then 4 pillars.
std::array<StageConfig, 3> default_stage_configs();

struct EncoderOutput {
  std::array<TokenSet, 3> stages;  // levels 0, 1, 2
};

/// One pyramid stage: optional stride-2 SpConv, `layers` x (SRA on the plain
/// partition, SRA on the half-region-shifted partition), then the stage input
/// concatenated with the transformer output and fused by a SubConv.
class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(const StageConfig& cfg, std::size_t in_channels, Rng& rng);

  const StageConfig& config() const { return cfg_; }
  std::size_t in_channels() const { return in_channels_; }
  TokenSet forward(const TokenSet& tokens) const;
  ParamList parameters() const;

 private:
  StageConfig cfg_;
  std::size_t in_channels_ = 0;
  std::optional<SparseConv3> down_;
  std::vector<std::array<AttentionParams, 2>> layers_;
  SparseConv3 fuse_;
};

/// Stage runner over level-0 tokens, producing E1, E2, E3.
TokenSet encode_stage(const TokenSet& tokens, const EncoderStage& stage);

class SptEncoder {
 public:
  SptEncoder() = default;
  SptEncoder(const std::array<StageConfig, 3>& cfgs, std::size_t in_channels, Rng& rng);

  EncoderOutput encode(const TokenSet& tokens) const;
  const std::array<EncoderStage, 3>& stages() const { return stages_; }
  std::array<std::size_t, 3> dims() const;
  ParamList parameters() const;

 private:
  std::array<EncoderStage, 3> stages_;
};

}  // namespace gdmae

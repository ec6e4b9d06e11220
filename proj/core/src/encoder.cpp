#include "gdmae/encoder.hpp"

#include <stdexcept>
#include <string>

#include "gdmae/ops.hpp"

namespace gdmae {

std::array<StageConfig, 3> default_stage_configs() {
  return {StageConfig{128, 2, 8, false, 8, 2}, StageConfig{256, 2, 4, true, 8, 2}, StageConfig{256, 2, 4, true, 8, 2}};
}

EncoderStage::EncoderStage(const StageConfig& cfg, std::size_t in_channels, Rng& rng)
    : cfg_(cfg), in_channels_(in_channels) {
  if (cfg.layers < 0) throw std::invalid_argument("EncoderStage: negative layer count");
  if (!cfg.downsample && in_channels != cfg.dim) {
    throw ShapeError("EncoderStage: stage without downsampling needs input width " + std::to_string(cfg.dim) +
                     ", got " + std::to_string(in_channels));
  }
  if (cfg.downsample) down_ = SparseConv3::create(in_channels, cfg.dim, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    layers_.push_back({AttentionParams::create(cfg.dim, cfg.heads, cfg.mlp_ratio, rng),
                       AttentionParams::create(cfg.dim, cfg.heads, cfg.mlp_ratio, rng)});
  }
  fuse_ = SparseConv3::create(2 * cfg.dim, cfg.dim, rng);
}

TokenSet EncoderStage::forward(const TokenSet& tokens) const {
  if (tokens.size() > 0 && tokens.channels() != in_channels_) {
    throw ShapeError("encode_stage: token width " + std::to_string(tokens.channels()) + " but stage expects " +
                     std::to_string(in_channels_));
  }
  const TokenSet input = down_ ? sparse_conv_downsample(tokens, *down_) : tokens;
  if (input.size() == 0) return TokenSet::empty(cfg_.dim, input.level);

  const WindowAssignment plain = window_partition(input.coords, cfg_.region_size);
  const auto shifted_coords = region_shift(input.coords, cfg_.region_size);
  const WindowAssignment shifted = window_partition(shifted_coords, cfg_.region_size);
  const Tensor plain_pos = normalized_offsets(plain);
  const Tensor shifted_pos = normalized_offsets(shifted);

  Tensor x = input.features;
  for (const auto& layer : layers_) {
    x = sparse_regional_attention(x, plain, plain_pos, layer[0]);
    x = sparse_regional_attention(x, shifted, shifted_pos, layer[1]);
  }
  const TokenSet fused{concat({input.features, x}, 1), input.coords, input.level};
  return submanifold_conv(fused, fuse_);
}

ParamList EncoderStage::parameters() const {
  ParamList out;
  if (down_) append_params(out, "down.", down_->parameters());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    append_params(out, "layer" + std::to_string(l) + ".sra.", layers_[l][0].parameters());
    append_params(out, "layer" + std::to_string(l) + ".sra_shift.", layers_[l][1].parameters());
  }
  append_params(out, "fuse.", fuse_.parameters());
  return out;
}

TokenSet encode_stage(const TokenSet& tokens, const EncoderStage& stage) { return stage.forward(tokens); }

SptEncoder::SptEncoder(const std::array<StageConfig, 3>& cfgs, std::size_t in_channels, Rng& rng) {
  if (cfgs[0].downsample) throw std::invalid_argument("SptEncoder: the first stage cannot downsample");
  std::size_t width = in_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    StageConfig cfg = cfgs[s];
    if (s > 0 && !cfg.downsample) throw std::invalid_argument("SptEncoder: stages 2 and 3 must downsample");
    stages_[s] = EncoderStage(cfg, width, rng);
    width = cfg.dim;
  }
}

EncoderOutput SptEncoder::encode(const TokenSet& tokens) const {
  if (tokens.level != 0) throw std::invalid_argument("SptEncoder::encode: expected level-0 tokens");
  EncoderOutput out;
  out.stages[0] = stages_[0].forward(tokens);
  out.stages[1] = stages_[1].forward(out.stages[0]);
  out.stages[2] = stages_[2].forward(out.stages[1]);
  return out;
}

std::array<std::size_t, 3> SptEncoder::dims() const {
  return {stages_[0].config().dim, stages_[1].config().dim, stages_[2].config().dim};
}

ParamList SptEncoder::parameters() const {
  ParamList out;
  for (std::size_t s = 0; s < 3; ++s) append_params(out, "stage" + std::to_string(s + 1) + ".", stages_[s].parameters());
  return out;
}

}  // namespace gdmae

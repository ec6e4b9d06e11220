#pragma once

#include <cstdint>
#include <vector>

#include "gdmae/config.hpp"
#include "gdmae/decoders.hpp"
#include "gdmae/reconstruction.hpp"

namespace gdmae {

/// Everything one masked-reconstruction pass produced for a scene.
struct ForwardResult {
  Tensor loss;
  Tensor prediction;  // (T, K, 3) in token-local coords
  std::vector<Coord> masked;
  TargetSet targets;
  PointCloud visible;  // points the encoder saw
  std::vector<std::uint32_t> hidden;  // indices of every point in a masked target
};

/// PFE, three-stage encoder, generative decoder at the strategy's target
/// level and the point prediction head.
class GdMaeModel {
 public:
  GdMaeModel(const RunConfig& cfg, std::uint64_t init_seed);

  const GridSpec& grid() const { return grid_; }
  const MaskPlan& plan() const { return plan_; }
  std::size_t k() const { return k_; }
  const PillarFeatureNet& pfe() const { return pfe_; }
  const SptEncoder& encoder() const { return encoder_; }
  const GenerativeDecoder& decoder() const { return decoder_; }
  const PredictionHead& head() const { return head_; }

  /// mask -> encode visible -> decode masked -> predict -> Chamfer. `seed`
  /// drives both the mask and the target sampling.
  ForwardResult forward(const PointCloud& cloud, std::uint64_t seed) const;

  /// Parameters named "pfe.", "encoder.", "decoder.", "head.".
  ParamList parameters() const;

 private:
  GridSpec grid_;
  std::array<Extent, 3> extents_;
  MaskPlan plan_;
  std::size_t k_ = 64;
  PillarFeatureNet pfe_;
  SptEncoder encoder_;
  GenerativeDecoder decoder_;
  PredictionHead head_;
};

}  // namespace gdmae

#include "gdmae/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace gdmae {

GdMaeModel::GdMaeModel(const RunConfig& cfg, std::uint64_t init_seed)
    : grid_(cfg.grid), extents_(level_extents(cfg.grid)), k_(cfg.k_points) {
  cfg.validate();
  plan_.strategy = cfg.strategy();
  plan_.ratio = cfg.mask_ratio;
  Rng rng(init_seed);
  pfe_ = PillarFeatureNet(cfg.model.pfe_hidden, cfg.model.dims[0], cfg.model.use_intensity, rng);
  encoder_ = SptEncoder(cfg.model.stage_configs(), cfg.model.dims[0], rng);
  decoder_ = GenerativeDecoder(cfg.model.dims, cfg.model.decoder_dim, plan_.target_level(), rng);
  head_ = PredictionHead::create(cfg.model.decoder_dim, cfg.k_points, rng);
}

ForwardResult GdMaeModel::forward(const PointCloud& cloud, std::uint64_t seed) const {
  MaskPlan plan = plan_;
  plan.seed = derive_seed(seed, 1);
  const std::uint64_t target_seed = derive_seed(seed, 2);
  const int level = plan.target_level();

  ForwardResult out;
  TokenSet visible;
  if (plan.strategy == MaskStrategy::Point) {
    PointMaskResult pm = point_mask_inputs(cloud, grid_, plan);
    visible = pfe_.forward(pm.visible, voxelize(pm.visible, grid_), grid_);
    out.masked = pm.target_coords;
    out.targets = build_targets(cloud, out.masked, pm.masked_points, level, grid_, k_, target_seed);
    for (const auto& pts : pm.masked_points) out.hidden.insert(out.hidden.end(), pts.begin(), pts.end());
    std::sort(out.hidden.begin(), out.hidden.end());
    out.visible = std::move(pm.visible);
  } else {
    const Voxelization vox = voxelize(cloud, grid_);
    const TokenSet tokens = pfe_.forward(cloud, vox, grid_);
    MaskedTokens mt = plan.strategy == MaskStrategy::Block ? block_mask_inputs(tokens, plan, extents_[2])
                                                           : patch_mask_inputs(tokens, plan, extents_[0]);
    visible = std::move(mt.visible);
    out.masked = std::move(mt.mask.masked);
    out.targets = build_targets(cloud, out.masked, level, grid_, k_, target_seed);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const std::int32_t p = vox.pillar_of_point[i];
      if (p < 0) continue;
      const Coord c = vox.coords[static_cast<std::size_t>(p)];
      if (mt.mask.is_masked(level == 2 ? floor_div(c, kBlockFactor) : c)) {
        out.hidden.push_back(static_cast<std::uint32_t>(i));
        continue;
      }
      out.visible.points.push_back(cloud.points[i]);
      if (cloud.has_intensity()) out.visible.intensity.push_back(cloud.intensity[i]);
    }
  }
  if (out.masked.empty()) throw std::runtime_error("model forward: the scene produced no masked tokens");

  const EncoderOutput enc = encoder_.encode(visible);
  const Tensor features = decoder_.decode(enc, out.masked, extents_);
  out.prediction = head_.predict(features);
  out.loss = chamfer_loss(out.prediction, out.targets);
  return out;
}

ParamList GdMaeModel::parameters() const {
  ParamList out;
  append_params(out, "pfe.", pfe_.parameters());
  append_params(out, "encoder.", encoder_.parameters());
  append_params(out, "decoder.", decoder_.parameters());
  append_params(out, "head.", head_.parameters());
  return out;
}

}  // namespace gdmae

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gdmae/checkpoint.hpp"
#include "gdmae/model.hpp"

namespace gdmae {

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  std::string resume;            // checkpoint to continue from; empty starts fresh
  std::uint64_t stop_after = 0;  // stop once this step is done; 0 runs the whole schedule
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> steps;  // steps run by this call
  std::string metrics_path;
  std::string last_checkpoint;
};

/// Raised when the loss or a gradient stops being finite.
class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per step: draw scenes, augment, mask, encode, decode, Chamfer, backward,
/// AdamW under the one-cycle schedule. Writes <output_dir>/metrics.csv and a
/// checkpoint at every epoch boundary (checkpoint_epoch<E>.gdmae and
/// last.gdmae).
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});

std::string format_metrics_row(const StepRecord& r);
inline constexpr const char* kMetricsHeader = "step,loss,lr,wall_ms";

/// The point cloud used for sample `seed` of a run: a synthetic scene or a
/// file from the dataset directory (before augmentation).
PointCloud load_sample(const RunConfig& cfg, std::uint64_t seed);

struct ExportResult {
  std::string visible_path, predicted_path, ground_truth_path;
  std::size_t visible = 0, predicted = 0, ground_truth = 0;
};

/// Loads a checkpoint, masks and reconstructs scene `scene_seed`, and writes
/// visible, predicted (back in meters) and hidden ground-truth points.
/// `format` is "ply" or "csv".
ExportResult export_reconstruction(const std::string& checkpoint_path, std::uint64_t scene_seed,
                                   const std::string& out_dir, const std::string& format = "ply");

/// Builds the model described by a checkpoint and loads its parameters.
GdMaeModel load_model(const Checkpoint& ckpt, RunConfig* cfg_out = nullptr);

}  // namespace gdmae

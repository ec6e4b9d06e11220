#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "gdmae/encoder.hpp"
#include "gdmae/masking.hpp"
#include "gdmae/optim.hpp"
#include "gdmae/scene.hpp"

namespace gdmae {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::array<std::size_t, 3> dims{128, 256, 256};
  int layers_per_stage = 2;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 2;
  std::array<int, 3> region_sizes{8, 4, 4};
  std::size_t decoder_dim = 128;
  std::size_t pfe_hidden = 64;
  bool use_intensity = true;

  std::array<StageConfig, 3> stage_configs() const;
};

struct ScheduleConfig {
  double warmup_fraction = 0.1;
  double start_div = 25.0;
  double final_div = 100.0;
};

struct OptimizerConfig {
  double lr_max = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string path;                  // directory of point files for "csv"
  SceneSpec scene;                   // template for synthetic scenes; seed is per sample
};

struct RunConfig {
  GridSpec grid{{-25.6, -25.6, -3.0}, {25.6, 25.6, 1.0}, 0.32, 0.32};
  ModelConfig model;
  std::string mask_strategy = "block";
  double mask_ratio = 0.75;
  std::size_t k_points = 64;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  int epochs = 30;
  int steps_per_epoch = 100;
  int batch_size = 1;
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  std::string output_dir = "run";
  bool record_wall_time = true;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  MaskStrategy strategy() const { return parse_mask_strategy(mask_strategy); }
  std::uint64_t total_steps() const {
    return static_cast<std::uint64_t>(epochs) * static_cast<std::uint64_t>(steps_per_epoch);
  }
  OneCycle schedule_policy() const;
};

/// Strict: unknown keys anywhere are errors. Missing keys keep defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);
SceneSpec parse_scene_spec(const std::string& json_text);
std::string scene_spec_to_json(const SceneSpec& spec);

}  // namespace gdmae

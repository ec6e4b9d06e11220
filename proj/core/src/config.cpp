#include "gdmae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gdmae {

using nlohmann::json;

std::array<StageConfig, 3> ModelConfig::stage_configs() const {
  std::array<StageConfig, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s] = StageConfig{dims[s], layers_per_stage, region_sizes[s], s > 0, heads, mlp_ratio};
  }
  return out;
}

OneCycle RunConfig::schedule_policy() const {
  return {optimizer.lr_max, total_steps(), schedule.warmup_fraction, schedule.start_div, schedule.final_div};
}

void RunConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  try {
    grid.validate();
  } catch (const std::exception& e) {
    bad(std::string("grid: ") + e.what());
  }
  for (std::size_t s = 0; s < 3; ++s) {
    if (model.dims[s] == 0) bad("model.dims must be positive");
    if (model.region_sizes[s] <= 0 || model.region_sizes[s] % 2 != 0) bad("model.region_sizes must be positive and even");
    if (model.heads == 0 || model.dims[s] % model.heads != 0) bad("model.heads must divide every stage width");
  }
  if (model.layers_per_stage < 0) bad("model.layers_per_stage must be non-negative");
  if (model.mlp_ratio == 0) bad("model.mlp_ratio must be positive");
  if (model.decoder_dim == 0) bad("model.decoder_dim must be positive");
  if (model.pfe_hidden == 0) bad("model.pfe_hidden must be positive");
  try {
    (void)strategy();
  } catch (const std::exception& e) {
    bad(std::string("mask.strategy: ") + e.what());
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) bad("mask.ratio must lie in (0, 1)");
  if (k_points == 0) bad("k_points must be positive");
  if (!(optimizer.lr_max >= 0.0)) bad("optimizer.lr_max must be non-negative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) bad("optimizer.beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) bad("optimizer.beta2 must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0)) bad("optimizer.weight_decay must be non-negative");
  if (!(optimizer.eps > 0.0)) bad("optimizer.eps must be positive");
  if (!(schedule.warmup_fraction > 0.0 && schedule.warmup_fraction < 1.0)) bad("schedule.warmup_fraction must lie in (0, 1)");
  if (!(schedule.start_div >= 1.0) || !(schedule.final_div >= 1.0)) bad("schedule divisors must be >= 1");
  if (epochs <= 0) bad("epochs must be positive");
  if (steps_per_epoch <= 0) bad("steps_per_epoch must be positive");
  if (batch_size <= 0) bad("batch_size must be positive");
  if (dataset.source != "synthetic" && dataset.source != "csv") bad("dataset.source must be 'synthetic' or 'csv'");
  if (dataset.source == "csv" && dataset.path.empty()) bad("dataset.path is required for csv datasets");
  try {
    dataset.scene.validate();
  } catch (const std::exception& e) {
    bad(std::string("dataset.scene: ") + e.what());
  }
  if (output_dir.empty()) bad("output_dir must not be empty");
}

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config: '" + (path_.empty() ? std::string("<root>") : path_) + "' must be an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown config key '" + qualify(key) + "'");
    }
  }
  Fields(const Fields&) = delete;
  Fields& operator=(const Fields&) = delete;

  template <class T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + qualify(key) + "': " + e.what());
    }
  }
  const json* object(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void read_box_class(const json& j, const std::string& path, BoxClass& c) {
  Fields f(j, path);
  f.get("min_count", c.min_count);
  f.get("max_count", c.max_count);
  f.get("size_min", c.size_min);
  f.get("size_max", c.size_max);
}

void read_scene(const json& j, const std::string& path, SceneSpec& s) {
  Fields f(j, path);
  f.get("ring_radii", s.ring_radii);
  f.get("points_per_ring", s.points_per_ring);
  if (const json* v = f.object("vehicles")) read_box_class(*v, f.qualify("vehicles"), s.vehicles);
  if (const json* p = f.object("pedestrians")) read_box_class(*p, f.qualify("pedestrians"), s.pedestrians);
  f.get("half_extent", s.half_extent);
  f.get("surface_density", s.surface_density);
  f.get("noise_sigma", s.noise_sigma);
  f.get("ground_z", s.ground_z);
  f.get("intensity", s.intensity);
  f.get("seed", s.seed);
}

json box_class_json(const BoxClass& c) {
  return {{"min_count", c.min_count}, {"max_count", c.max_count}, {"size_min", c.size_min}, {"size_max", c.size_max}};
}

json scene_json(const SceneSpec& s) {
  return {{"ring_radii", s.ring_radii},
          {"points_per_ring", s.points_per_ring},
          {"vehicles", box_class_json(s.vehicles)},
          {"pedestrians", box_class_json(s.pedestrians)},
          {"half_extent", s.half_extent},
          {"surface_density", s.surface_density},
          {"noise_sigma", s.noise_sigma},
          {"ground_z", s.ground_z},
          {"intensity", s.intensity},
          {"seed", s.seed}};
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  const json root = parse_text(json_text);
  RunConfig cfg;
  {
    Fields f(root, "");
    if (const json* g = f.object("grid")) {
      Fields gf(*g, "grid");
      gf.get("range_min", cfg.grid.range_min);
      gf.get("range_max", cfg.grid.range_max);
      std::array<double, 2> pillar{cfg.grid.pillar_x, cfg.grid.pillar_y};
      gf.get("pillar_size", pillar);
      cfg.grid.pillar_x = pillar[0];
      cfg.grid.pillar_y = pillar[1];
    }
    if (const json* m = f.object("model")) {
      Fields mf(*m, "model");
      mf.get("dims", cfg.model.dims);
      mf.get("layers_per_stage", cfg.model.layers_per_stage);
      mf.get("heads", cfg.model.heads);
      mf.get("mlp_ratio", cfg.model.mlp_ratio);
      mf.get("region_sizes", cfg.model.region_sizes);
      mf.get("decoder_dim", cfg.model.decoder_dim);
      mf.get("pfe_hidden", cfg.model.pfe_hidden);
      mf.get("use_intensity", cfg.model.use_intensity);
    }
    if (const json* m = f.object("mask")) {
      Fields mf(*m, "mask");
      mf.get("strategy", cfg.mask_strategy);
      mf.get("ratio", cfg.mask_ratio);
    }
    f.get("k_points", cfg.k_points);
    if (const json* o = f.object("optimizer")) {
      Fields of(*o, "optimizer");
      of.get("lr_max", cfg.optimizer.lr_max);
      of.get("beta1", cfg.optimizer.beta1);
      of.get("beta2", cfg.optimizer.beta2);
      of.get("weight_decay", cfg.optimizer.weight_decay);
      of.get("eps", cfg.optimizer.eps);
    }
    if (const json* s = f.object("schedule")) {
      Fields sf(*s, "schedule");
      sf.get("warmup_fraction", cfg.schedule.warmup_fraction);
      sf.get("start_div", cfg.schedule.start_div);
      sf.get("final_div", cfg.schedule.final_div);
    }
    f.get("epochs", cfg.epochs);
    f.get("steps_per_epoch", cfg.steps_per_epoch);
    f.get("batch_size", cfg.batch_size);
    f.get("seed", cfg.seed);
    if (const json* d = f.object("dataset")) {
      Fields df(*d, "dataset");
      df.get("source", cfg.dataset.source);
      df.get("path", cfg.dataset.path);
      if (const json* s = df.object("scene")) read_scene(*s, "dataset.scene", cfg.dataset.scene);
    }
    f.get("output_dir", cfg.output_dir);
    f.get("record_wall_time", cfg.record_wall_time);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string config_to_json(const RunConfig& cfg) {
  const json j = {
      {"grid",
       {{"range_min", cfg.grid.range_min},
        {"range_max", cfg.grid.range_max},
        {"pillar_size", std::array<double, 2>{cfg.grid.pillar_x, cfg.grid.pillar_y}}}},
      {"model",
       {{"dims", cfg.model.dims},
        {"layers_per_stage", cfg.model.layers_per_stage},
        {"heads", cfg.model.heads},
        {"mlp_ratio", cfg.model.mlp_ratio},
        {"region_sizes", cfg.model.region_sizes},
        {"decoder_dim", cfg.model.decoder_dim},
        {"pfe_hidden", cfg.model.pfe_hidden},
        {"use_intensity", cfg.model.use_intensity}}},
      {"mask", {{"strategy", cfg.mask_strategy}, {"ratio", cfg.mask_ratio}}},
      {"k_points", cfg.k_points},
      {"optimizer",
       {{"lr_max", cfg.optimizer.lr_max},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"weight_decay", cfg.optimizer.weight_decay},
        {"eps", cfg.optimizer.eps}}},
      {"schedule",
       {{"warmup_fraction", cfg.schedule.warmup_fraction},
        {"start_div", cfg.schedule.start_div},
        {"final_div", cfg.schedule.final_div}}},
      {"epochs", cfg.epochs},
      {"steps_per_epoch", cfg.steps_per_epoch},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"dataset", {{"source", cfg.dataset.source}, {"path", cfg.dataset.path}, {"scene", scene_json(cfg.dataset.scene)}}},
      {"output_dir", cfg.output_dir},
      {"record_wall_time", cfg.record_wall_time},
  };
  return j.dump(2);
}

SceneSpec parse_scene_spec(const std::string& json_text) {
  const json root = parse_text(json_text);
  SceneSpec spec;
  read_scene(root, "", spec);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

std::string scene_spec_to_json(const SceneSpec& spec) { return scene_json(spec).dump(2); }

}  // namespace gdmae

#include "gdmae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdmae/autograd.hpp"
#include "gdmae/ops.hpp"

namespace gdmae {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitTag = 100;
constexpr std::uint64_t kStreamTag = 200;

std::vector<std::string> dataset_files(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw std::invalid_argument("dataset directory " + dir + " does not exist");
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".csv" || ext == ".ply")) files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("dataset directory " + dir + " holds no .csv or .ply files");
  return files;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Checkpoint make_checkpoint(const RunConfig& cfg, const AdamW& opt, const Rng& rng, std::uint64_t step) {
  Checkpoint ckpt;
  const auto& params = opt.params();
  for (const auto& p : params) {
    ckpt.arrays.push_back(CheckpointArray::from_f64("param/" + p.name, p.tensor.shape(), p.tensor.values()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.arrays.push_back(CheckpointArray::from_f64("adam.m/" + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]));
    ckpt.arrays.push_back(CheckpointArray::from_f64("adam.v/" + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]));
  }
  ckpt.arrays.push_back(CheckpointArray::from_u64("meta.step", {step, opt.steps()}));
  ckpt.arrays.push_back(CheckpointArray::from_bytes("meta.rng", rng_state(rng)));
  ckpt.arrays.push_back(CheckpointArray::from_bytes("meta.config", config_to_json(cfg)));
  return ckpt;
}

void check_array_names(const Checkpoint& ckpt) {
  for (const auto& a : ckpt.arrays) {
    const auto& n = a.name;
    const bool known = n.rfind("param/", 0) == 0 || n.rfind("adam.m/", 0) == 0 || n.rfind("adam.v/", 0) == 0 ||
                       n == "meta.step" || n == "meta.rng" || n == "meta.config";
    if (!known) throw UnknownArrayError("unknown array name '" + n + "' in checkpoint");
  }
}

void restore_moments(const Checkpoint& ckpt, const std::string& prefix, const ParamList& params,
                     std::vector<std::vector<double>>& moments) {
  std::vector<Tensor> views;
  ParamList shadow;
  for (std::size_t i = 0; i < params.size(); ++i) {
    views.emplace_back(params[i].tensor.shape());
    shadow.push_back({params[i].name, views.back()});
  }
  restore_params(ckpt, prefix, shadow);
  for (std::size_t i = 0; i < params.size(); ++i) moments[i] = views[i].values();
}

// Keeps the header and rows up to `step` of an existing metrics file.
void truncate_metrics(const std::string& path, std::uint64_t step) {
  std::vector<std::string> keep{kMetricsHeader};
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::string format_metrics_row(const StepRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.3f", static_cast<unsigned long long>(r.step), r.loss, r.lr, r.wall_ms);
  return buf;
}

PointCloud load_sample(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.source == "csv") {
    const auto files = dataset_files(cfg.dataset.path);
    return read_point_cloud(files[seed % files.size()]);
  }
  SceneSpec spec = cfg.dataset.scene;
  spec.seed = seed;
  return generate_scene(spec);
}

GdMaeModel load_model(const Checkpoint& ckpt, RunConfig* cfg_out) {
  check_array_names(ckpt);
  const RunConfig cfg = parse_config(ckpt.get("meta.config").as_string());
  GdMaeModel model(cfg, 0);
  restore_params(ckpt, "param/", model.parameters());
  if (cfg_out) *cfg_out = cfg;
  return model;
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  TrainResult result;
  result.metrics_path = (fs::path(cfg.output_dir) / "metrics.csv").string();

  GdMaeModel model(cfg, derive_seed(cfg.seed, kInitTag));
  AdamW opt(model.parameters(), {cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps, cfg.optimizer.weight_decay});
  Rng stream(derive_seed(cfg.seed, kStreamTag));
  std::uint64_t start = 0;

  if (!options.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume);
    check_array_names(ckpt);
    restore_params(ckpt, "param/", opt.params());
    restore_moments(ckpt, "adam.m/", opt.params(), opt.first_moments());
    restore_moments(ckpt, "adam.v/", opt.params(), opt.second_moments());
    const auto& meta = ckpt.get("meta.step");
    if (meta.dtype != DType::U64 || meta.u64.size() != 2) throw CheckpointError("checkpoint meta.step is malformed");
    start = meta.u64[0];
    opt.set_steps(meta.u64[1]);
    std::istringstream ss(ckpt.get("meta.rng").as_string());
    ss >> stream;
    if (!ss) throw CheckpointError("checkpoint meta.rng is malformed");
    truncate_metrics(result.metrics_path, start);
  } else {
    truncate_metrics(result.metrics_path, 0);
  }

  const OneCycle schedule = cfg.schedule_policy();
  const std::uint64_t total = cfg.total_steps();
  const std::uint64_t end = options.stop_after ? std::min(options.stop_after, total) : total;
  std::ofstream metrics(result.metrics_path, std::ios::app);

  for (std::uint64_t s = start; s < end; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = schedule.lr(s);
    double loss_sum = 0.0;
    try {
      for (int b = 0; b < cfg.batch_size; ++b) {
        const std::uint64_t sample = stream();
        const PointCloud cloud = augment(load_sample(cfg, derive_seed(sample, 0)), derive_seed(sample, 1));
        const ForwardResult r = model.forward(cloud, derive_seed(sample, 2));
        const double l = r.loss.item();
        if (!std::isfinite(l)) throw NonFiniteError("loss is " + std::to_string(l));
        loss_sum += l;
        backward(scale(r.loss, 1.0 / cfg.batch_size));
      }
    } catch (const NonFiniteError& e) {
      throw TrainingDivergedError("training diverged at step " + std::to_string(s + 1) + " (lr " + std::to_string(lr) +
                                  "): " + e.what());
    }
    opt.step(lr);
    opt.zero_grad();

    StepRecord rec;
    rec.step = s + 1;
    rec.loss = loss_sum / cfg.batch_size;
    rec.lr = lr;
    if (cfg.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    metrics << format_metrics_row(rec) << '\n' << std::flush;
    result.steps.push_back(rec);
    if (options.on_step) options.on_step(rec);

    if ((s + 1) % static_cast<std::uint64_t>(cfg.steps_per_epoch) == 0) {
      const Checkpoint ckpt = make_checkpoint(cfg, opt, stream, s + 1);
      const std::uint64_t epoch = (s + 1) / static_cast<std::uint64_t>(cfg.steps_per_epoch);
      save_checkpoint((fs::path(cfg.output_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".gdmae")).string(), ckpt);
      result.last_checkpoint = (fs::path(cfg.output_dir) / "last.gdmae").string();
      save_checkpoint(result.last_checkpoint, ckpt);
    }
  }
  return result;
}

ExportResult export_reconstruction(const std::string& checkpoint_path, std::uint64_t scene_seed,
                                   const std::string& out_dir, const std::string& format) {
  if (format != "ply" && format != "csv") throw std::invalid_argument("export format must be 'ply' or 'csv'");
  if (!fs::exists(checkpoint_path)) throw CheckpointError("checkpoint " + checkpoint_path + " does not exist");
  RunConfig cfg;
  const GdMaeModel model = load_model(load_checkpoint(checkpoint_path), &cfg);
  const PointCloud cloud = load_sample(cfg, scene_seed);

  NoGradGuard no_grad;
  const ForwardResult r = model.forward(cloud, scene_seed);
  const int level = model.plan().target_level();
  const std::size_t K = model.k();
  const auto pred = r.prediction.data();
  std::vector<Point3> predicted;
  predicted.reserve(r.masked.size() * K);
  for (std::size_t t = 0; t < r.masked.size(); ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* q = pred.data() + (t * K + k) * 3;
      predicted.push_back(from_local({q[0], q[1], q[2]}, r.masked[t], level, model.grid()));
    }
  }
  std::vector<Point3> truth;
  truth.reserve(r.hidden.size());
  for (auto i : r.hidden) truth.push_back(cloud.points[i]);

  fs::create_directories(out_dir);
  ExportResult out;
  auto write = [&](const std::string& stem, const std::vector<Point3>& pts) {
    const std::string path = (fs::path(out_dir) / (stem + "." + format)).string();
    if (format == "ply") write_points_ply(path, pts);
    else write_points_csv(path, pts);
    return path;
  };
  out.visible_path = write("visible", r.visible.points);
  out.predicted_path = write("predicted", predicted);
  out.ground_truth_path = write("ground_truth", truth);
  out.visible = r.visible.size();
  out.predicted = predicted.size();
  out.ground_truth = truth.size();
  return out;
}

}  // namespace gdmae

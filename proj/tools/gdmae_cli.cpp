// gdmae: pre-training driver, reconstruction export, gradient checks,
// decoder benchmark and synthetic data generation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gdmae/bench.hpp"
#include "gdmae/config.hpp"
#include "gdmae/grad_suite.hpp"
#include "gdmae/scene.hpp"
#include "gdmae/trainer.hpp"

namespace {

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_pretrain(const std::string& config_path, const std::string& resume, std::uint64_t stop_after, bool quiet) {
  const gdmae::RunConfig cfg = gdmae::load_config(config_path);
  gdmae::TrainOptions opts;
  opts.resume = resume;
  opts.stop_after = stop_after;
  const std::uint64_t total = cfg.total_steps();
  if (!quiet) {
    opts.on_step = [total](const gdmae::StepRecord& r) {
      std::printf("step %llu/%llu loss %.6f lr %.3e %.1f ms\n", static_cast<unsigned long long>(r.step),
                  static_cast<unsigned long long>(total), r.loss, r.lr, r.wall_ms);
      std::fflush(stdout);
    };
  }
  const auto result = gdmae::train(cfg, opts);
  std::printf("metrics: %s\n", result.metrics_path.c_str());
  if (!result.last_checkpoint.empty()) std::printf("checkpoint: %s\n", result.last_checkpoint.c_str());
  return 0;
}

int run_grad_check(const std::string& module, int seeds, bool verbose) {
  const auto results = gdmae::run_grad_checks(module, seeds);
  int failed = 0;
  std::string last;
  double worst = 0.0;
  std::size_t count = 0;
  auto flush = [&](const std::string& name) {
    if (!name.empty()) std::printf("%-40s %zu seeds  max rel err %.3e\n", name.c_str(), count, worst);
    worst = 0.0, count = 0;
  };
  for (const auto& r : results) {
    const std::string name = r.module + "/" + r.name;
    if (name != last) flush(last), last = name;
    worst = std::max(worst, r.max_rel_error), ++count;
    if (!r.passed) {
      ++failed;
      std::printf("FAIL %s seed %llu: %s\n", name.c_str(), static_cast<unsigned long long>(r.seed),
                  r.error.empty() ? ("rel err " + std::to_string(r.max_rel_error)).c_str() : r.error.c_str());
    } else if (verbose) {
      std::printf("ok   %s seed %llu rel err %.3e\n", name.c_str(), static_cast<unsigned long long>(r.seed), r.max_rel_error);
    }
  }
  flush(last);
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed ? 1 : 0;
}

int run_bench(std::size_t tokens, int reps, std::size_t dim, const std::string& out) {
  gdmae::BenchConfig cfg;
  cfg.token_counts = {tokens};
  cfg.repetitions = reps;
  cfg.decoder_dim = dim;
  const auto report = gdmae::bench_decoders(cfg);
  const std::string csv = report.csv();
  std::cout << csv;
  if (!out.empty()) std::ofstream(out) << csv;
  std::printf("generative decoder faster than baseline at %zu tokens: %s\n", tokens,
              report.generative_faster ? "yes" : "no");
  return report.generative_faster ? 0 : 2;
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir, int count, const std::string& format) {
  gdmae::SceneSpec spec = spec_path.empty() ? gdmae::SceneSpec{} : gdmae::parse_scene_spec(read_text(spec_path));
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    gdmae::SceneSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(i);
    const auto cloud = gdmae::generate_scene(s);
    char name[64];
    std::snprintf(name, sizeof name, "scene_%06d.%s", i, format.c_str());
    const std::string path = (std::filesystem::path(out_dir) / name).string();
    if (format == "ply") gdmae::write_points_ply(path, cloud.points);
    else gdmae::write_points_csv(path, cloud.points);
    std::printf("%s: %zu points\n", path.c_str(), cloud.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked point-cloud pre-training with a generative decoder"};
  app.require_subcommand(1);

  auto* pretrain = app.add_subcommand("pretrain", "run pre-training from a JSON config");
  std::string config_path, resume;
  std::uint64_t stop_after = 0;
  bool quiet = false;
  pretrain->add_option("--config", config_path, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  pretrain->add_option("--stop-after", stop_after, "stop after this step (0 = full schedule)");
  pretrain->add_flag("--quiet", quiet, "no per-step output");

  auto* reconstruct = app.add_subcommand("reconstruct", "export visible / predicted / hidden points of one scene");
  std::string ckpt, out_dir, format = "ply";
  std::uint64_t scene_seed = 0;
  reconstruct->add_option("--ckpt", ckpt, "checkpoint file")->required();
  reconstruct->add_option("--seed", scene_seed, "scene seed")->required();
  reconstruct->add_option("--out", out_dir, "output directory")->required();
  reconstruct->add_option("--format", format, "ply or csv")->check(CLI::IsMember({"ply", "csv"}));

  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");
  std::string module = "all";
  int seeds = 20;
  bool verbose = false;
  grad->add_option("--module", module, "all, ops, pillar-grid, sparse-transformer, encoder, decoders, reconstruction, end-to-end");
  grad->add_option("--seeds", seeds, "random instances per case")->check(CLI::PositiveNumber);
  grad->add_flag("-v,--verbose", verbose, "print every case");

  auto* bench = app.add_subcommand("bench-decoder", "time generative vs baseline decoder");
  std::size_t tokens = 5000, dim = 128;
  int reps = 5;
  std::string bench_out;
  bench->add_option("--tokens", tokens, "occupied pillars in the synthetic scene")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "timed repetitions");
  bench->add_option("--dim", dim, "decoder width");
  bench->add_option("--out", bench_out, "also write the CSV report here");

  auto* gen = app.add_subcommand("gen-data", "write synthetic scenes as point files");
  std::string spec_path, gen_out, gen_format = "csv";
  int count = 1;
  gen->add_option("--spec", spec_path, "SceneSpec JSON file (defaults when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", count, "number of scenes (seeds spec.seed, spec.seed+1, ...)")->check(CLI::PositiveNumber);
  gen->add_option("--format", gen_format, "csv or ply")->check(CLI::IsMember({"ply", "csv"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pretrain) return run_pretrain(config_path, resume, stop_after, quiet);
    if (*reconstruct) {
      const auto r = gdmae::export_reconstruction(ckpt, scene_seed, out_dir, format);
      std::printf("visible: %s (%zu)\npredicted: %s (%zu)\nground truth: %s (%zu)\n", r.visible_path.c_str(), r.visible,
                  r.predicted_path.c_str(), r.predicted, r.ground_truth_path.c_str(), r.ground_truth);
      return 0;
    }
    if (*grad) return run_grad_check(module, seeds, verbose);
    if (*bench) return run_bench(tokens, reps, dim, bench_out);
    if (*gen) return run_gen_data(spec_path, gen_out, count, gen_format);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

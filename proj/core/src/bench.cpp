#include "gdmae/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

#include "gdmae/autograd.hpp"
#include "gdmae/masking.hpp"

namespace gdmae {

BenchScene make_bench_scene(std::size_t tokens, const std::array<std::size_t, 3>& dims, double mask_ratio,
                            std::uint64_t seed) {
  if (tokens == 0) throw std::invalid_argument("make_bench_scene: need at least one token");
  const auto side = static_cast<std::int32_t>(std::ceil(std::sqrt(static_cast<double>(tokens) / 0.06))) + 2;
  Rng rng(seed);
  std::set<Coord> occupied;
  auto put = [&](std::int32_t x, std::int32_t y) {
    if (x >= 0 && y >= 0 && x < side && y < side && occupied.size() < tokens) occupied.insert({x, y});
  };
  // Alternate ring arcs around the grid center with rectangular blobs.
  const double cx = 0.5 * side, cy = 0.5 * side;
  for (int round = 0; occupied.size() < tokens; ++round) {
    if (round % 2 == 0) {
      const double r = uniform(rng, 2.0, 0.5 * side);
      const double a0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double span = uniform(rng, 0.3, 2.0 * std::numbers::pi);
      for (double a = a0; a < a0 + span; a += 0.5 / r) {
        put(static_cast<std::int32_t>(cx + r * std::cos(a)), static_cast<std::int32_t>(cy + r * std::sin(a)));
      }
    } else {
      const auto x0 = static_cast<std::int32_t>(uniform_index(rng, static_cast<std::uint64_t>(side)));
      const auto y0 = static_cast<std::int32_t>(uniform_index(rng, static_cast<std::uint64_t>(side)));
      const auto w = 2 + static_cast<std::int32_t>(uniform_index(rng, 7));
      const auto h = 2 + static_cast<std::int32_t>(uniform_index(rng, 7));
      for (std::int32_t y = y0; y < y0 + h; ++y)
        for (std::int32_t x = x0; x < x0 + w; ++x) put(x, y);
    }
  }
  const std::vector<Coord> coords(occupied.begin(), occupied.end());

  BenchScene scene;
  scene.extents[0] = {side, side};
  for (int l = 1; l < 3; ++l) {
    const std::int32_t s = (side + (1 << l) - 1) >> l;
    scene.extents[static_cast<std::size_t>(l)] = {s, s};
  }
  const MaskMap mask = sample_mask(coords, mask_ratio, derive_seed(seed, 1), 0, scene.extents[0]);
  scene.visible = mask.visible;
  scene.masked = mask.masked;

  auto random_tokens = [&](std::vector<Coord> at, std::size_t channels, int level) {
    std::vector<double> v(at.size() * channels);
    for (auto& x : v) x = uniform(rng, -1.0, 1.0);
    return TokenSet{Tensor({at.size(), channels}, std::move(v)), std::move(at), level};
  };
  const auto c1 = downsample_coords(scene.visible);
  const auto c2 = downsample_coords(c1);
  scene.enc.stages[0] = random_tokens(scene.visible, dims[0], 0);
  scene.enc.stages[1] = random_tokens(c1, dims[1], 1);
  scene.enc.stages[2] = random_tokens(c2, dims[2], 2);
  return scene;
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("percentile: no samples");
  std::sort(samples.begin(), samples.end());
  // Linear interpolation between closest ranks.
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

std::string BenchReport::csv() const {
  std::string out = "decoder,tokens,median_ms,p90_ms\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.3f,%.3f\n", r.decoder.c_str(), r.tokens, r.median_ms, r.p90_ms);
    out += buf;
  }
  return out;
}

namespace {

template <class F>
BenchRow time_it(const std::string& name, std::size_t tokens, int reps, F&& f) {
  std::vector<double> ms;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return {name, tokens, percentile(ms, 0.5), percentile(ms, 0.9)};
}

}  // namespace

BenchReport bench_decoders(const BenchConfig& cfg) {
  if (cfg.repetitions < 1) throw std::invalid_argument("need ≥1 repetition");
  if (cfg.token_counts.empty()) throw std::invalid_argument("bench_decoders: no scene sizes given");
  NoGradGuard no_grad;
  Rng rng(derive_seed(cfg.seed, 7));
  const GenerativeDecoder gd(cfg.dims, cfg.decoder_dim, 0, rng);
  const BaselineDecoder base(cfg.dims, cfg.decoder_dim, 0, cfg.baseline_blocks, cfg.region_size, cfg.heads, 2, rng);

  BenchReport report;
  std::size_t largest = 0;
  double gd_ms = 0.0, base_ms = 0.0;
  for (std::size_t tokens : cfg.token_counts) {
    const BenchScene scene = make_bench_scene(tokens, cfg.dims, cfg.mask_ratio, derive_seed(cfg.seed, tokens));
    // Weight folding depends only on parameters and grid size; done once.
    const PreparedGenerativeDecoder prepared(gd, scene.extents);
    auto g = time_it("generative", tokens, cfg.repetitions, [&] { (void)prepared.decode(scene.enc, scene.masked); });
    auto b = time_it("baseline", tokens, cfg.repetitions,
                     [&] { (void)base.decode(scene.enc, scene.visible, scene.masked, scene.extents[0]); });
    report.rows.push_back(g);
    if (cfg.include_lazy) {
      report.rows.push_back(time_it("generative_lazy", tokens, cfg.repetitions,
                                    [&] { (void)gd.decode(scene.enc, scene.masked, scene.extents); }));
    }
    report.rows.push_back(b);
    if (tokens >= largest) largest = tokens, gd_ms = g.median_ms, base_ms = b.median_ms;
  }
  report.generative_faster = gd_ms < base_ms;
  return report;
}

}  // namespace gdmae

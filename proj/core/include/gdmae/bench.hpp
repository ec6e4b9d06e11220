#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gdmae/decoders.hpp"

namespace gdmae {

/// Encoder outputs and masked cells of a synthetic patch-masked scene with
/// `tokens` occupied level-0 pillars (rings and blobs, ~6% occupancy).
/// Features are random; decoder cost does not depend on their values.
struct BenchScene {
  std::array<Extent, 3> extents;
  EncoderOutput enc;
  std::vector<Coord> visible;  // level-0 cells seen by the encoder
  std::vector<Coord> masked;
};

BenchScene make_bench_scene(std::size_t tokens, const std::array<std::size_t, 3>& dims, double mask_ratio,
                            std::uint64_t seed);

struct BenchConfig {
  std::vector<std::size_t> token_counts{5000};
  int repetitions = 5;
  std::array<std::size_t, 3> dims{128, 256, 256};
  std::size_t decoder_dim = 128;
  int baseline_blocks = 1;
  int region_size = 8;
  std::size_t heads = 8;
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;
  bool include_lazy = true;  // also time the unprepared generative path
};

struct BenchRow {
  std::string decoder;
  std::size_t tokens = 0;
  double median_ms = 0.0;
  double p90_ms = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  /// Prepared generative median < baseline median at the largest scene.
  bool generative_faster = false;

  std::string csv() const;  // header decoder,tokens,median_ms,p90_ms
};

/// Times both decoders at matched widths. Throws std::invalid_argument with
/// "need ≥1 repetition" when repetitions < 1.
BenchReport bench_decoders(const BenchConfig& cfg);

double percentile(std::vector<double> samples, double q);

}  // namespace gdmae

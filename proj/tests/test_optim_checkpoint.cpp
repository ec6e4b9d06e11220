#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gdmae/autograd.hpp"
#include "gdmae/checkpoint.hpp"
#include "gdmae/ops.hpp"
#include "gdmae/optim.hpp"
#include "support/oracles.hpp"

using namespace gdmae;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gdmae_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

Checkpoint sample_checkpoint(Rng& rng) {
  Checkpoint c;
  c.arrays.push_back(CheckpointArray::from_f64("w", {2, 3}, oracle::random_tensor({2, 3}, rng).values()));
  c.arrays.push_back(CheckpointArray::from_f64("b", {3}, {-0.0, 1e-300, std::nextafter(1.0, 2.0)}));
  c.arrays.push_back(CheckpointArray::from_u64("meta.step", {123456789012345ull}));
  c.arrays.push_back(CheckpointArray::from_bytes("meta.config", "{\"a\": 1}"));
  return c;
}

}  // namespace

TEST_SUITE("optim-checkpoint") {

TEST_CASE("AdamW matches a hand-written update over three steps") {
  Tensor w({3}, {0.5, -1.0, 2.0});
  w.set_requires_grad();
  AdamWConfig cfg{0.9, 0.99, 1e-8, 0.1};
  AdamW opt({{"w", w}}, cfg);
  std::vector<double> ref = w.values(), m(3, 0.0), v(3, 0.0);
  const double lr = 0.01;
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    backward(sum(mul(w, w)));  // grad = 2w
    std::vector<double> g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * ref[i];
    opt.step(lr);
    for (std::size_t i = 0; i < 3; ++i) {
      ref[i] *= 1.0 - lr * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t)), vh = v[i] / (1 - std::pow(cfg.beta2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.at(i) == doctest::Approx(ref[i]).epsilon(1e-14));
  }
  CHECK(opt.steps() == 3);
}

TEST_CASE("AdamW with zero learning rate leaves parameters untouched") {
  Tensor w({2}, {1.0, 2.0});
  w.set_requires_grad();
  AdamW opt({{"w", w}}, {});
  backward(sum(w));
  opt.step(0.0);
  CHECK(w.values() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("one-cycle: start, peak at warm-up end, final, monotone") {
  const OneCycle s{3e-3, 1000, 0.1, 25.0, 100.0};
  CHECK(s.warmup_steps() == 100);
  CHECK(s.lr(0) == doctest::Approx(3e-3 / 25).epsilon(1e-14));
  CHECK(s.lr(100) == 3e-3);
  CHECK(s.lr(999) == doctest::Approx(3e-3 / 100).epsilon(1e-14));
  for (std::uint64_t i = 0; i < 100; ++i) CHECK(s.lr(i) <= s.lr(i + 1));
  for (std::uint64_t i = 100; i < 999; ++i) CHECK(s.lr(i) >= s.lr(i + 1));
  CHECK_THROWS(OneCycle{1.0, 0}.warmup_steps());
}

TEST_CASE("checkpoint encode/decode is bit exact") {
  Rng rng(1);
  const Checkpoint c = sample_checkpoint(rng);
  const Checkpoint d = decode_checkpoint(encode_checkpoint(c));
  REQUIRE(d.arrays.size() == c.arrays.size());
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    CHECK(d.arrays[i].name == c.arrays[i].name);
    CHECK(d.arrays[i].dtype == c.arrays[i].dtype);
    CHECK(d.arrays[i].dims == c.arrays[i].dims);
    CHECK(std::memcmp(d.arrays[i].f64.data(), c.arrays[i].f64.data(), c.arrays[i].f64.size() * 8) == 0);
    CHECK(d.arrays[i].u64 == c.arrays[i].u64);
    CHECK(d.arrays[i].u8 == c.arrays[i].u8);
  }
  CHECK(std::signbit(d.get("b").f64[0]));
  CHECK(d.get("meta.config").as_string() == "{\"a\": 1}");
  CHECK(encode_checkpoint(d) == encode_checkpoint(c));
}

TEST_CASE("checkpoint file round trip") {
  Rng rng(2);
  const auto dir = scratch("ckpt");
  const Checkpoint c = sample_checkpoint(rng);
  save_checkpoint((dir / "a.gdmae").string(), c);
  CHECK(encode_checkpoint(load_checkpoint((dir / "a.gdmae").string())) == encode_checkpoint(c));
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.gdmae").string()), CheckpointError);
}

TEST_CASE("corrupt, truncated, wrong-version and unknown arrays raise distinct errors") {
  Rng rng(3);
  const auto bytes = encode_checkpoint(sample_checkpoint(rng));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), NotACheckpointError);
  CHECK_THROWS_WITH(decode_checkpoint(bad_magic), doctest::Contains("not a checkpoint"));

  auto version = bytes;
  version[sizeof(kCheckpointMagic)] = kCheckpointVersion + 1;
  CHECK_THROWS_AS(decode_checkpoint(version), VersionMismatchError);

  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    if (cut < sizeof(kCheckpointMagic))
      CHECK_THROWS_AS(decode_checkpoint(shorter), CheckpointError);
    else
      CHECK_THROWS_AS(decode_checkpoint(shorter), TruncatedCheckpointError);
  }

  Tensor w({2, 3});
  Checkpoint extra;
  extra.arrays.push_back(CheckpointArray::from_f64("model.w", {2, 3}, std::vector<double>(6, 1.0)));
  extra.arrays.push_back(CheckpointArray::from_f64("model.ghost", {1}, {0.0}));
  CHECK_THROWS_AS(restore_params(extra, "model.", {{"w", w}}), UnknownArrayError);

  Checkpoint ok;
  ok.arrays.push_back(CheckpointArray::from_f64("model.w", {2, 3}, std::vector<double>(6, 1.5)));
  restore_params(ok, "model.", {{"w", w}});
  CHECK(w.values() == std::vector<double>(6, 1.5));
  Tensor v({1});
  CHECK_THROWS_AS(restore_params(ok, "model.", {{"w", w}, {"v", v}}), CheckpointError);
}

}  // TEST_SUITE

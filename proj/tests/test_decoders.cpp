#include <map>
#include <set>

#include "doctest.h"
#include "gdmae/bench.hpp"
#include "gdmae/decoders.hpp"
#include "gdmae/grad_suite.hpp"
#include "support/oracles.hpp"

using namespace gdmae;

namespace {

struct Toy {
  std::array<Extent, 3> extents;
  EncoderOutput enc;
};

Toy random_toy(Rng& rng, const std::array<std::size_t, 3>& dims, std::size_t max_side = 12) {
  Toy t;
  const Extent e0{2 + static_cast<std::int32_t>(uniform_index(rng, max_side - 1)),
                  2 + static_cast<std::int32_t>(uniform_index(rng, max_side - 1))};
  t.extents = {e0, Extent{(e0.width + 1) / 2, (e0.height + 1) / 2}, Extent{(e0.width + 3) / 4, (e0.height + 3) / 4}};
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& e = t.extents[l];
    t.enc.stages[l] = oracle::random_tokens(uniform_index(rng, e.cells() / 2 + 1), dims[l], e, static_cast<int>(l), rng);
    if (t.enc.stages[l].size() == 0) t.enc.stages[l] = TokenSet::empty(dims[l], static_cast<int>(l));
  }
  return t;
}

std::vector<Coord> cells_not_in(const std::vector<Coord>& taken, const Extent& e, std::size_t n, Rng& rng) {
  std::vector<Coord> free;
  for (std::int32_t y = 0; y < e.height; ++y)
    for (std::int32_t x = 0; x < e.width; ++x)
      if (!std::binary_search(taken.begin(), taken.end(), Coord{x, y})) free.push_back({x, y});
  std::shuffle(free.begin(), free.end(), rng);
  free.resize(std::min(n, free.size()));
  std::sort(free.begin(), free.end());
  return free;
}

GenerativeDecoder random_gd(const std::array<std::size_t, 3>& dims, std::size_t dim, int target, Rng& rng) {
  GenerativeDecoder d(dims, dim, target, rng);
  oracle::randomize(d.fusion().bias, rng);
  return d;
}

std::map<std::string, Tensor> by_name(const ParamList& ps) {
  std::map<std::string, Tensor> m;
  for (const auto& p : ps) m[p.name] = p.tensor;
  return m;
}

AttentionParams attention_from(const std::map<std::string, Tensor>& m, const std::string& prefix, std::size_t dim,
                               std::size_t heads) {
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  auto g = [&](const char* n) { return m.at(prefix + n); };
  p.ln1_gain = g("ln1.gain"), p.ln1_bias = g("ln1.bias");
  p.pos_w1 = g("pos.w1"), p.pos_b1 = g("pos.b1"), p.pos_w2 = g("pos.w2"), p.pos_b2 = g("pos.b2");
  p.wq = g("q.w"), p.bq = g("q.b"), p.wk = g("k.w"), p.bk = g("k.b");
  p.wv = g("v.w"), p.bv = g("v.b"), p.wo = g("out.w"), p.bo = g("out.b");
  p.ln2_gain = g("ln2.gain"), p.ln2_bias = g("ln2.bias");
  p.ff_w1 = g("ff.w1"), p.ff_b1 = g("ff.b1"), p.ff_w2 = g("ff.w2"), p.ff_b2 = g("ff.b2");
  return p;
}

// Baseline decoder recomputed from loops: dense adapters read at the
// visible cells, linear fusion, mask embedding rows, then plain and shifted
// attention with absolute positions over visible + masked.
oracle::Rows baseline_reference(const BaselineDecoder& dec, const Toy& toy, int target,
                                const std::vector<Coord>& visible, const std::vector<Coord>& masked,
                                std::size_t heads) {
  const auto m = by_name(dec.parameters());
  const auto te = toy.extents[static_cast<std::size_t>(target)];
  const std::size_t dim = dec.dim();
  std::vector<oracle::Dense> maps;
  for (std::size_t l = 0; l < 3; ++l) {
    maps.push_back(oracle::adapt_dense(adapter_geometry(static_cast<int>(l), target),
                                       m.at("adapter" + std::to_string(l + 1) + ".weight"), toy.enc.stages[l],
                                       toy.extents[l], te));
  }
  oracle::Rows x;
  for (const auto& v : visible) {
    std::vector<double> cat;
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t c = 0; c < dim; ++c) cat.push_back(maps[l].get(c, v.y, v.x));
    x.push_back(oracle::affine(cat, m.at("fuse.weight"), m.at("fuse.bias")));
  }
  const auto emb = m.at("mask_embedding").values();
  for (std::size_t i = 0; i < masked.size(); ++i) x.push_back(emb);
  std::vector<Coord> coords = visible;
  coords.insert(coords.end(), masked.begin(), masked.end());
  oracle::Rows pos;
  auto norm = [](std::int32_t v, std::int32_t n) { return n > 1 ? 2.0 * v / (n - 1) - 1.0 : 0.0; };
  for (const auto& c : coords) pos.push_back({norm(c.x, te.width), norm(c.y, te.height)});
  const int r = dec.region_size();
  for (int b = 0; b < dec.blocks(); ++b) {
    const std::string pre = "block" + std::to_string(b);
    x = oracle::attention_layer(x, pos, oracle::window_key(coords, r, 0), attention_from(m, pre + ".sra.", dim, heads));
    x = oracle::attention_layer(x, pos, oracle::window_key(coords, r, r / 2),
                                attention_from(m, pre + ".sra_shift.", dim, heads));
  }
  return oracle::Rows(x.begin() + static_cast<std::ptrdiff_t>(visible.size()), x.end());
}

}  // namespace

TEST_SUITE("decoders") {

TEST_CASE("adapter geometry per level pair") {
  CHECK(adapter_geometry(1, 1).kind == AdapterGeometry::Kind::Same);
  const auto up = adapter_geometry(2, 0);
  CHECK(up.kind == AdapterGeometry::Kind::Up);
  CHECK(up.stride == 4);
  CHECK(up.kernel == 8);
  CHECK(up.padding == 2);
  const auto down = adapter_geometry(0, 1);
  CHECK(down.kind == AdapterGeometry::Kind::Down);
  CHECK(down.kernel == 4);
  CHECK(down.padding == 1);
  CHECK_THROWS(adapter_geometry(3, 0));
}

TEST_CASE("masked cell with nothing in its footprint decodes to the fusion bias") {
  Rng rng(1);
  const std::array<std::size_t, 3> dims{3, 4, 5};
  const GenerativeDecoder d = random_gd(dims, 6, 0, rng);
  const std::array<Extent, 3> ext{Extent{12, 12}, Extent{6, 6}, Extent{3, 3}};
  EncoderOutput enc;
  enc.stages[0] = TokenSet{oracle::random_tensor({1, 3}, rng), {{0, 0}}, 0};
  enc.stages[1] = TokenSet{oracle::random_tensor({1, 4}, rng), {{0, 0}}, 1};
  enc.stages[2] = TokenSet{oracle::random_tensor({1, 5}, rng), {{0, 0}}, 2};
  const std::vector<Coord> far{{11, 11}};
  const Tensor out = d.decode(enc, far, ext);
  CHECK(out.values() == d.fusion().bias.values());
  CHECK(PreparedGenerativeDecoder(d, ext).decode(enc, far).values() == d.fusion().bias.values());
}

TEST_CASE("a masked cell 4-adjacent to a visible token differs from the bias") {
  Rng rng(2);
  const std::array<std::size_t, 3> dims{3, 4, 5};
  const GenerativeDecoder d = random_gd(dims, 6, 0, rng);
  const std::array<Extent, 3> ext{Extent{12, 12}, Extent{6, 6}, Extent{3, 3}};
  EncoderOutput enc;
  enc.stages[0] = TokenSet{oracle::random_tensor({1, 3}, rng), {{5, 5}}, 0};
  enc.stages[1] = TokenSet::empty(4, 1);
  enc.stages[2] = TokenSet::empty(5, 2);
  const std::vector<Coord> next{{6, 5}};
  const Tensor out = d.decode(enc, next, ext);
  for (std::size_t c = 0; c < 6; ++c) CHECK(out.at(0, c) != d.fusion().bias.at(c));
}

TEST_CASE("6x6 toy scene against a hand-unrolled dense computation") {
  Rng rng(3);
  const std::array<std::size_t, 3> dims{2, 3, 3};
  const std::array<Extent, 3> ext{Extent{6, 6}, Extent{3, 3}, Extent{2, 2}};
  for (int target : {0, 2}) {
    const GenerativeDecoder d = random_gd(dims, 4, target, rng);
    EncoderOutput enc;
    enc.stages[0] = TokenSet{oracle::random_tensor({4, 2}, rng), {{0, 0}, {1, 3}, {4, 2}, {5, 5}}, 0};
    enc.stages[1] = TokenSet{oracle::random_tensor({3, 3}, rng), {{0, 0}, {0, 1}, {2, 1}}, 1};
    enc.stages[2] = TokenSet{oracle::random_tensor({2, 3}, rng), {{0, 0}, {1, 0}}, 2};
    const std::vector<Coord> masked = target == 0 ? std::vector<Coord>{{0, 1}, {2, 2}, {3, 5}, {5, 0}}
                                                  : std::vector<Coord>{{0, 1}, {1, 1}};
    const Tensor out = d.decode(enc, masked, ext);
    CHECK(oracle::max_abs_diff(out, oracle::generative_decode(d, enc, masked, ext)) < 1e-10);
  }
}

TEST_CASE("generative decode matches the dense reference on random toy scenes") {
  Rng rng(4);
  const std::array<std::size_t, 3> dims{3, 4, 4};
  for (int trial = 0; trial < 60; ++trial) {
    const int target = trial % 3;
    const Toy toy = random_toy(rng, dims);
    const GenerativeDecoder d = random_gd(dims, 5, target, rng);
    const auto te = toy.extents[static_cast<std::size_t>(target)];
    const auto masked = oracle::random_coords(1 + uniform_index(rng, te.cells()), te, rng);
    const auto ref = oracle::generative_decode(d, toy.enc, masked, toy.extents);
    CHECK(oracle::max_abs_diff(d.decode(toy.enc, masked, toy.extents), ref) < 1e-10);
    CHECK(oracle::max_abs_diff(PreparedGenerativeDecoder(d, toy.extents).decode(toy.enc, masked), ref) < 1e-10);
  }
}

TEST_CASE("prepared decoder agrees with the lazy path on larger grids") {
  Rng rng(5);
  const std::array<std::size_t, 3> dims{4, 6, 6};
  for (int trial = 0; trial < 6; ++trial) {
    const int target = trial % 3;
    const Toy toy = random_toy(rng, dims, 40);
    const GenerativeDecoder d = random_gd(dims, 8, target, rng);
    const auto te = toy.extents[static_cast<std::size_t>(target)];
    const auto masked = oracle::random_coords(te.cells() / 2 + 1, te, rng);
    const Tensor lazy = d.decode(toy.enc, masked, toy.extents);
    CHECK(oracle::max_abs_diff(PreparedGenerativeDecoder(d, toy.extents).decode(toy.enc, masked), oracle::rows_of(lazy)) <
          1e-10);
  }
}

TEST_CASE("masked coords outside the target extent are rejected") {
  Rng rng(6);
  const std::array<std::size_t, 3> dims{2, 2, 2};
  const GenerativeDecoder d = random_gd(dims, 2, 0, rng);
  const std::array<Extent, 3> ext{Extent{4, 4}, Extent{2, 2}, Extent{1, 1}};
  EncoderOutput enc;
  for (std::size_t l = 0; l < 3; ++l) enc.stages[l] = TokenSet::empty(2, static_cast<int>(l));
  const std::vector<Coord> bad{{4, 0}};
  CHECK_THROWS(d.decode(enc, bad, ext));
}

TEST_CASE("baseline with zero blocks returns the mask embedding") {
  Rng rng(7);
  const std::array<std::size_t, 3> dims{3, 3, 3};
  const BaselineDecoder b(dims, 4, 0, 0, 4, 2, 2, rng);
  const Toy toy = random_toy(rng, dims);
  const auto masked = cells_not_in(toy.enc.stages[0].coords, toy.extents[0], 3, rng);
  const Tensor out = b.decode(toy.enc, toy.enc.stages[0].coords, masked, toy.extents[0]);
  for (std::size_t i = 0; i < masked.size(); ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i, c) == b.mask_embedding().at(c));
}

TEST_CASE("baseline singleton window: one block in closed form") {
  Rng rng(8);
  const std::array<std::size_t, 3> dims{3, 3, 3};
  const BaselineDecoder b(dims, 4, 0, 1, 2, 2, 2, rng);
  for (const auto& p : b.parameters()) oracle::randomize(p.tensor, rng, -0.5, 0.5);
  Toy toy;
  toy.extents = {Extent{8, 8}, Extent{4, 4}, Extent{2, 2}};
  for (std::size_t l = 0; l < 3; ++l) toy.enc.stages[l] = TokenSet::empty(3, static_cast<int>(l));
  const std::vector<Coord> masked{{5, 5}};
  const Tensor out = b.decode(toy.enc, {}, masked, toy.extents[0]);
  CHECK(oracle::max_abs_diff(out, baseline_reference(b, toy, 0, {}, masked, 2)) < 1e-12);
}

TEST_CASE("baseline decoder matches dense attention on random toy scenes") {
  Rng rng(9);
  const std::array<std::size_t, 3> dims{3, 4, 4};
  for (int trial = 0; trial < 50; ++trial) {
    const int target = trial % 2 == 0 ? 0 : 2;
    const Toy toy = random_toy(rng, dims);
    const BaselineDecoder b(dims, 4, target, 1, 4, 2, 2, rng);
    for (const auto& p : b.parameters()) oracle::randomize(p.tensor, rng, -0.5, 0.5);
    const auto te = toy.extents[static_cast<std::size_t>(target)];
    const auto& visible = toy.enc.stages[static_cast<std::size_t>(target)].coords;
    const auto masked = cells_not_in(visible, te, 1 + uniform_index(rng, 6), rng);
    if (masked.empty()) continue;
    const Tensor out = b.decode(toy.enc, visible, masked, te);
    CHECK(oracle::max_abs_diff(out, baseline_reference(b, toy, target, visible, masked, 2)) < 1e-10);
  }
}

TEST_CASE("baseline rejects overlapping visible and masked cells") {
  Rng rng(10);
  const std::array<std::size_t, 3> dims{3, 3, 3};
  const BaselineDecoder b(dims, 4, 0, 1, 4, 2, 2, rng);
  Toy toy = random_toy(rng, dims);
  toy.enc.stages[0] = TokenSet{oracle::random_tensor({1, 3}, rng), {{1, 1}}, 0};
  const std::vector<Coord> both{{1, 1}};
  CHECK_THROWS(b.decode(toy.enc, both, both, toy.extents[0]));
}

TEST_CASE("benchmark: 1-token scene completes, zero repetitions is an error") {
  BenchConfig cfg;
  cfg.token_counts = {1};
  cfg.repetitions = 2;
  cfg.dims = {8, 8, 8};
  cfg.decoder_dim = 8;
  cfg.heads = 2;
  const auto report = bench_decoders(cfg);
  CHECK(report.rows.size() == 3);
  CHECK(report.csv().rfind("decoder,tokens,median_ms,p90_ms\n", 0) == 0);
  cfg.repetitions = 0;
  CHECK_THROWS_WITH(bench_decoders(cfg), "need ≥1 repetition");
}

TEST_CASE("bench scenes have the requested token count and a consistent pyramid") {
  const auto s = make_bench_scene(500, {4, 4, 4}, 0.75, 3);
  CHECK(s.visible.size() + s.masked.size() == 500);
  CHECK(s.masked.size() == 375);
  CHECK(s.enc.stages[1].coords == downsample_coords(s.visible));
  CHECK(percentile({3.0, 1.0, 2.0}, 0.5) == 2.0);
}

TEST_CASE("decoder gradient suite") {
  for (const auto& r : run_grad_checks("decoders", 3)) {
    INFO(r.name << " seed " << r.seed << " " << r.error);
    CHECK(r.passed);
  }
}

}  // TEST_SUITE

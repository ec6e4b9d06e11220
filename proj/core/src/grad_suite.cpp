#include "gdmae/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "gdmae/decoders.hpp"
#include "gdmae/model.hpp"
#include "gdmae/ops.hpp"
#include "gdmae/reconstruction.hpp"

namespace gdmae {

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(std::move(s), std::move(v));
}

Tensor random_param(Shape s, Rng& rng) { return random_tensor(std::move(s), rng).set_requires_grad(); }

// Values bounded away from zero, for kinked ops.
Tensor away_from_zero(Shape s, Rng& rng) {
  Tensor t = random_tensor(std::move(s), rng);
  for (auto& x : t.mutable_data()) x = x < 0 ? x - 0.05 : x + 0.05;
  return t.set_requires_grad();
}

// Scalar probe sum(out * R) with a fixed random R, so every output entry
// carries a distinct weight. R is scaled by 1/sqrt(n) to keep the probe O(1),
// which keeps the round-off of the central difference well below the
// relative-error floor for parameters whose true gradient is zero.
struct Probe {
  std::vector<double> weights;
  Rng rng;
  explicit Probe(std::uint64_t seed) : rng(seed) {}
  Tensor operator()(const Tensor& out) {
    if (weights.size() != out.numel()) {
      weights.resize(out.numel());
      for (auto& w : weights) w = uniform(rng, -1.0, 1.0) / std::sqrt(static_cast<double>(weights.size()));
    }
    return sum(mul(out, Tensor(out.shape(), weights)));
  }
};

std::vector<Coord> random_coords(std::size_t n, const Extent& e, Rng& rng) {
  std::vector<std::uint32_t> cells(e.cells());
  std::iota(cells.begin(), cells.end(), 0u);
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(std::min(n, cells.size()));
  std::vector<Coord> out;
  for (auto c : cells) out.push_back({static_cast<std::int32_t>(c % static_cast<std::uint32_t>(e.width)),
                                      static_cast<std::int32_t>(c / static_cast<std::uint32_t>(e.width))});
  std::sort(out.begin(), out.end());
  return out;
}

TokenSet random_tokens(std::size_t n, std::size_t channels, const Extent& e, int level, Rng& rng) {
  auto coords = random_coords(n, e, rng);
  Tensor f = random_param({coords.size(), channels}, rng);
  return {f, std::move(coords), level};
}

ParamList named(std::initializer_list<std::pair<const char*, Tensor>> items) {
  ParamList out;
  for (const auto& [n, t] : items) out.push_back({n, t});
  return out;
}

ParamList with_params(ParamList a, const ParamList& b, const std::string& prefix = "") {
  append_params(a, prefix, b);
  return a;
}

// A case builds its instance from a seed and returns (loss function, params).
using Case = std::function<std::pair<std::function<Tensor()>, ParamList>(std::uint64_t seed)>;

struct NamedCase {
  std::string module;
  std::string name;
  Case build;
  std::size_t max_entries = 0;  // overrides the sampling option when non-zero
};

// Zero-initialised downsampling biases let a coarse token built from few
// inputs reach LayerNorm with almost no spread, where the 1/sigma^3
// curvature swamps the O(h^2) central-difference error.
void randomize_down_biases(const std::vector<NamedTensor>& params, Rng& rng) {
  for (const auto& p : params) {
    if (!p.name.ends_with("down.bias")) continue;
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v = uniform(rng, -1.0, 1.0);
  }
}

RunConfig tiny_model_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.grid = GridSpec{{-2.0, -2.0, -2.0}, {2.0, 2.0, 2.0}, 0.5, 0.5};
  cfg.model.dims = {8, 8, 8};
  cfg.model.layers_per_stage = 1;
  cfg.model.heads = 2;
  cfg.model.region_sizes = {4, 2, 2};
  cfg.model.decoder_dim = 4;
  cfg.model.pfe_hidden = 4;
  cfg.k_points = 3;
  const char* strategies[] = {"patch", "block", "point"};
  cfg.mask_strategy = strategies[seed % 3];
  cfg.mask_ratio = 0.5;
  return cfg;
}

PointCloud random_cloud(std::size_t n, const GridSpec& g, Rng& rng) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({uniform(rng, g.range_min[0], g.range_max[0]), uniform(rng, g.range_min[1], g.range_max[1]),
                        uniform(rng, g.range_min[2], g.range_max[2])});
    c.intensity.push_back(uniform(rng, 0.0, 1.0));
  }
  return c;
}

std::vector<NamedCase> all_cases() {
  std::vector<NamedCase> cases;
  auto add_case = [&](const char* module, const char* name, Case c, std::size_t max_entries = 0) {
    cases.push_back({module, name, std::move(c), max_entries});
  };

  // ---- ops ----
  add_case("ops", "add", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng), bias = random_param({4}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(add(add(a, b), bias)); }),
                     named({{"a", a}, {"b", b}, {"bias", bias}})};
  });
  add_case("ops", "sub_mul_scale", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_param({2, 5}, rng), b = random_param({2, 5}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(scale(mul(sub(a, b), a), 1.7)); }),
                     named({{"a", a}, {"b", b}})};
  });
  add_case("ops", "matmul_linear", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({3, 5}, rng), w = random_param({5, 4}, rng), b = random_param({4}, rng),
           m = random_param({4, 2}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(matmul(linear(x, w, b), m)); }),
                     named({{"x", x}, {"w", w}, {"b", b}, {"m", m}})};
  });
  add_case("ops", "reshape_sum_mean", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({2, 6}, rng), y = random_param({3, 4}, rng);
    return std::pair{std::function<Tensor()>([=] { return add(mean(mul(reshape(x, {3, 4}), y)), scale(sum(mul(x, x)), 0.3)); }),
                     named({{"x", x}, {"y", y}})};
  });
  add_case("ops", "concat", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_param({2, 3}, rng), b = random_param({1, 3}, rng), c = random_param({3, 2}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(concat({concat({a, b}, 0), c}, 1)); }),
                     named({{"a", a}, {"b", b}, {"c", c}})};
  });
  add_case("ops", "relu_gelu", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = away_from_zero({3, 4}, rng), y = random_param({3, 4}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(add(relu(x), gelu(scale(y, 2.0)))); }),
                     named({{"x", x}, {"y", y}})};
  });
  add_case("ops", "layer_norm", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({3, 5}, rng), g = random_param({5}, rng), b = random_param({5}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(layer_norm(x, g, b)); }),
                     named({{"x", x}, {"gamma", g}, {"beta", b}})};
  });
  add_case("ops", "softmax", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({3, 4}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(add(softmax(x, 1), softmax(x, 0))); }),
                     named({{"x", x}})};
  });
  add_case("ops", "conv2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({2, 5, 6}, rng), w = random_param({3, 2, 3, 3}, rng), b = random_param({3}, rng);
    const std::size_t stride = 1 + s % 2;
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(conv2d(x, w, b, stride, 1)); }),
                     named({{"x", x}, {"w", w}, {"b", b}})};
  });
  add_case("ops", "conv_transpose2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({2, 3, 4}, rng), w = random_param({2, 3, 4, 4}, rng), b = random_param({3}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(conv_transpose2d(x, w, b, 2, 1)); }),
                     named({{"x", x}, {"w", w}, {"b", b}})};
  });
  add_case("ops", "max_over_axis", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({3, 4, 5}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(max_over_axis(x, s % 3)); }), named({{"x", x}})};
  });
  add_case("ops", "segment_max", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({7, 3}, rng);
    const std::vector<std::uint32_t> seg{0, 2, 1, 0, 2, 2, 1};
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(segment_max(x, seg, 3)); }), named({{"x", x}})};
  });
  add_case("ops", "gather_scatter_rows", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_param({4, 3}, rng);
    const std::vector<std::uint32_t> g{3, 0, 3, 1}, sc{1, 1, 0, 2};
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(scatter_rows_add(gather_rows(x, g), sc, 3)); }),
                     named({{"x", x}})};
  });

  // ---- pillar-grid ----
  add_case("pillar-grid", "scatter_gather_dense", [](std::uint64_t s) {
    Rng rng(s);
    const Extent e{5, 4};
    TokenSet t = random_tokens(6, 3, e, 0, rng);
    const auto where = random_coords(7, e, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(gather_from_dense(scatter_to_dense(t, e), where)); }),
                     named({{"features", t.features}})};
  });
  add_case("pillar-grid", "pillar_feature_net", [](std::uint64_t s) {
    Rng rng(s);
    const GridSpec g{{0.0, 0.0, -1.0}, {2.0, 2.0, 1.0}, 0.5, 0.5};
    const PointCloud cloud = random_cloud(30, g, rng);
    const auto pfe = std::make_shared<PillarFeatureNet>(5, 4, s % 2 == 0, rng);
    const Voxelization vox = voxelize(cloud, g);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(pfe->forward(cloud, vox, g).features); }),
                     pfe->parameters()};
  });

  // ---- sparse-transformer ----
  add_case("sparse-transformer", "windowed_attention", [](std::uint64_t s) {
    Rng rng(s);
    const Extent e{6, 6};
    const auto coords = random_coords(10, e, rng);
    const auto wa = window_partition(coords, 3);
    Tensor q = random_param({coords.size(), 4}, rng), k = random_param({coords.size(), 4}, rng),
           v = random_param({coords.size(), 4}, rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(windowed_attention(q, k, v, wa.groups, 2)); }),
                     named({{"q", q}, {"k", k}, {"v", v}})};
  });
  add_case("sparse-transformer", "sparse_regional_attention", [](std::uint64_t s) {
    Rng rng(s);
    const Extent e{6, 6};
    TokenSet t = random_tokens(9, 4, e, 0, rng);
    const auto p = std::make_shared<AttentionParams>(AttentionParams::create(4, 2, 2, rng));
    const auto wa = window_partition(region_shift(t.coords, 4), 4);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] { return (*probe)(sparse_regional_attention(t.features, wa, *p)); }),
                     with_params(named({{"x", t.features}}), p->parameters())};
  });
  add_case("sparse-transformer", "sparse_convs", [](std::uint64_t s) {
    Rng rng(s);
    const Extent e{7, 6};
    TokenSet t = random_tokens(12, 3, e, 0, rng);
    const auto sub = std::make_shared<SparseConv3>(SparseConv3::create(3, 2, rng));
    const auto down = std::make_shared<SparseConv3>(SparseConv3::create(2, 3, rng));
    for (auto* c : {sub.get(), down.get()})
      for (auto& b : c->bias.mutable_data()) b = uniform(rng, -1.0, 1.0);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] {
                       return (*probe)(sparse_conv_downsample(submanifold_conv(t, *sub), *down).features);
                     }),
                     with_params(with_params(named({{"x", t.features}}), sub->parameters(), "sub."),
                                 down->parameters(), "down.")};
  });

  // ---- encoder ----
  add_case("encoder", "spt_encoder", [](std::uint64_t s) {
    Rng rng(s);
    const Extent e{8, 8};
    // Width 8: with 4 channels LayerNorm rows are often nearly constant and
    // the O(h^2) truncation of the central difference exceeds the tolerance.
    TokenSet t = random_tokens(14, 8, e, 0, rng);
    std::array<StageConfig, 3> cfgs{StageConfig{8, 1, 4, false, 2, 2}, StageConfig{8, 1, 2, true, 2, 2},
                                    StageConfig{8, 1, 2, true, 2, 2}};
    const auto enc = std::make_shared<SptEncoder>(cfgs, 8, rng);
    randomize_down_biases(enc->parameters(), rng);
    auto probe = std::make_shared<Probe>(s);
    return std::pair{std::function<Tensor()>([=] {
                       const EncoderOutput o = enc->encode(t);
                       return (*probe)(concat({o.stages[0].features, o.stages[1].features, o.stages[2].features}, 0));
                     }),
                     with_params(named({{"x", t.features}}), enc->parameters())};
  }, 4);

  // ---- decoders ----
  auto decoder_inputs = [](Rng& rng, const std::array<Extent, 3>& ext, std::size_t c) {
    EncoderOutput enc;
    for (int l = 0; l < 3; ++l) enc.stages[static_cast<std::size_t>(l)] = random_tokens(6 - l, c, ext[static_cast<std::size_t>(l)], l, rng);
    return enc;
  };
  add_case("decoders", "generative_decode", [decoder_inputs](std::uint64_t s) {
    Rng rng(s);
    const std::array<Extent, 3> ext{Extent{7, 6}, Extent{4, 3}, Extent{2, 2}};
    const int target = s % 2 == 0 ? 0 : 2;
    EncoderOutput enc = decoder_inputs(rng, ext, 3);
    const auto masked = random_coords(5, ext[static_cast<std::size_t>(target)], rng);
    const auto gd = std::make_shared<GenerativeDecoder>(std::array<std::size_t, 3>{3, 3, 3}, 4, target, rng);
    Tensor bias = gd->fusion().bias;
    for (auto& b : bias.mutable_data()) b = uniform(rng, -1.0, 1.0);
    auto probe = std::make_shared<Probe>(s);
    ParamList params = gd->parameters();
    for (int l = 0; l < 3; ++l) params.push_back({"E" + std::to_string(l + 1), enc.stages[static_cast<std::size_t>(l)].features});
    return std::pair{std::function<Tensor()>([=] { return (*probe)(gd->decode(enc, masked, ext)); }), params};
  });
  add_case("decoders", "baseline_decode", [decoder_inputs](std::uint64_t s) {
    Rng rng(s);
    const std::array<Extent, 3> ext{Extent{7, 6}, Extent{4, 3}, Extent{2, 2}};
    EncoderOutput enc = decoder_inputs(rng, ext, 3);
    auto cells = random_coords(9, ext[0], rng);
    const std::vector<Coord> visible(cells.begin(), cells.begin() + 4), masked(cells.begin() + 4, cells.end());
    const auto bd = std::make_shared<BaselineDecoder>(std::array<std::size_t, 3>{3, 3, 3}, 4, 0, 1, 4, 2, 2, rng);
    auto probe = std::make_shared<Probe>(s);
    ParamList params = bd->parameters();
    for (int l = 0; l < 3; ++l) params.push_back({"E" + std::to_string(l + 1), enc.stages[static_cast<std::size_t>(l)].features});
    return std::pair{std::function<Tensor()>([=] { return (*probe)(bd->decode(enc, visible, masked, ext[0])); }), params};
  });

  // ---- reconstruction ----
  add_case("reconstruction", "chamfer_head", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t T = 3, K = 4, D = 5;
    TargetSet tg;
    tg.tokens = T, tg.k = K;
    tg.points.assign(T * K * 3, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      tg.valid_counts.push_back(static_cast<std::uint32_t>(1 + uniform_index(rng, K)));
      for (std::size_t j = 0; j < tg.valid_counts.back(); ++j)
        for (int c = 0; c < 3; ++c) tg.points[(t * K + j) * 3 + static_cast<std::size_t>(c)] = uniform(rng, -1.0, 1.0);
    }
    tg.source.resize(T);
    Tensor e = random_param({T, D}, rng);
    const auto head = std::make_shared<PredictionHead>(PredictionHead::create(D, K, rng));
    return std::pair{std::function<Tensor()>([=] { return chamfer_loss(head->predict(e), tg); }),
                     with_params(named({{"features", e}}), head->parameters())};
  });

  // ---- end-to-end ----
  add_case("end-to-end", "tiny_model", [](std::uint64_t s) {
    const RunConfig cfg = tiny_model_config(s);
    const auto model = std::make_shared<GdMaeModel>(cfg, derive_seed(s, 5));
    Rng rng(derive_seed(s, 6));
    const PointCloud cloud = random_cloud(60, cfg.grid, rng);
    // A fresh head predicts every point near the cell center, so Chamfer
    // nearest-neighbour choices sit close to ties where finite differences
    // straddle a kink. Spreading the head output keeps the instance tie-free.
    for (const auto& p : model->parameters()) {
      if (p.name.rfind("head.", 0) != 0) continue;
      Tensor t = p.tensor;
      for (auto& v : t.mutable_data()) v = uniform(rng, -1.0, 1.0);
    }
    randomize_down_biases(model->parameters(), rng);
    return std::pair{std::function<Tensor()>([=] { return model->forward(cloud, s).loss; }), model->parameters()};
  }, 2);
  return cases;
}

}  // namespace

const std::vector<std::string>& grad_check_modules() {
  static const std::vector<std::string> names{"ops", "pillar-grid", "sparse-transformer", "encoder",
                                              "decoders", "reconstruction", "end-to-end"};
  return names;
}

std::vector<GradCaseResult> run_grad_checks(const std::string& module, int seeds, std::uint64_t base_seed,
                                            const GradCheckOptions& options) {
  const auto& mods = grad_check_modules();
  if (module != "all" && std::find(mods.begin(), mods.end(), module) == mods.end()) {
    std::string list;
    for (const auto& m : mods) list += (list.empty() ? "" : ", ") + m;
    throw std::invalid_argument("unknown grad-check module '" + module + "' (expected all, " + list + ")");
  }
  if (seeds < 1) throw std::invalid_argument("grad-check needs at least one seed");
  std::vector<GradCaseResult> results;
  for (const auto& c : all_cases()) {
    if (module != "all" && c.module != module) continue;
    for (int i = 0; i < seeds; ++i) {
      GradCaseResult r;
      r.module = c.module;
      r.name = c.name;
      r.seed = base_seed + static_cast<std::uint64_t>(i);
      try {
        auto [f, params] = c.build(r.seed);
        GradCheckOptions opt = options;
        if (c.max_entries && !opt.max_entries_per_param) opt.max_entries_per_param = c.max_entries;
        opt.sample_seed = derive_seed(r.seed, 11);
        const GradCheckReport rep = finite_diff_grad_check(f, params, opt);
        r.max_rel_error = rep.max_rel_error;
        r.passed = rep.passed;
      } catch (const std::exception& e) {
        r.error = e.what();
        r.passed = false;
      }
      results.push_back(std::move(r));
    }
  }
  return results;
}

}  // namespace gdmae

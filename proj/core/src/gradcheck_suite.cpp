#include "stvod/gradcheck_suite.hpp"

#include <cmath>
#include <random>

#include "stvod/matching.hpp"
#include "stvod/pipeline.hpp"

namespace stvod {
namespace {

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return uniform(std::move(shape), lo, hi, rng);
}

// Values with |x| in [0.2, 1] so kinks at zero stay out of reach.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor t = rand_tensor(std::move(shape), rng, 0.2, 1.0);
  for (auto& v : t.storage()) {
    if (unit_uniform(rng) < 0.5) v = -v;
  }
  return t;
}

// Pixel coordinates whose fractional part stays in [0.2, 0.8].
Tensor fractional_points(Shape shape, double limit, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) {
    v = std::floor(unit_uniform(rng) * limit) + 0.2 + 0.6 * unit_uniform(rng) - 1.0;
  }
  return t;
}

// Contracts y with fixed random weights so every output coordinate matters.
Var probe(const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Var::constant(rand_tensor(y.shape(), rng))));
}

SuiteCheck unary(const std::string& name, Var (*op)(const Var&), Tensor input) {
  return {name, [name, op, input](const GradCheckOptions& o) {
            Var x = Var::leaf(input);
            return grad_check(name, [&] { return probe(op(x), 11); }, {{"x", x}}, o);
          }};
}

SuiteCheck binary(const std::string& name, Var (*op)(const Var&, const Var&), Tensor a, Tensor b) {
  return {name, [name, op, a, b](const GradCheckOptions& o) {
            Var x = Var::leaf(a), y = Var::leaf(b);
            return grad_check(name, [&] { return probe(op(x, y), 12); }, {{"a", x}, {"b", y}}, o);
          }};
}

std::vector<NamedLeaf> params_with(ParameterStore& store, const std::vector<std::string>& prefixes) {
  std::vector<NamedLeaf> out;
  for (auto& p : store.all()) {
    for (const auto& prefix : prefixes) {
      if (p.name.rfind(prefix, 0) == 0) {
        out.emplace_back(p.name, p.var);
        break;
      }
    }
  }
  return out;
}

// Moves the zero-initialized sampling projections and box layer off zero so
// their gradients are exercised away from the initial point.
void perturb_all(ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : store.all()) {
    for (auto& v : p.var.mutable_value().storage()) v += 0.05 * (2.0 * unit_uniform(rng) - 1.0);
  }
}

Clip toy_clip(std::size_t frames, std::uint64_t seed) {
  DataConfig d;
  d.frame_size = 16;
  d.clip_length = frames;
  d.current_index = frames / 2;
  d.min_objects = 1;
  d.max_objects = 2;
  d.min_object_size = 5;
  d.max_object_size = 9;
  d.max_speed = 1.0;
  d.max_wobble = 0.5;
  return generate_clip(d, seed, 0.0);
}

}  // namespace

ModelConfig toy_model_config() {
  ModelConfig m;
  m.dim = 8;
  m.heads = 2;
  m.points = 2;
  m.encoder_layers = 1;
  m.decoder_layers = 2;
  m.queries = 4;
  m.ffn_dim = 16;
  m.backbone_widths = {4, 8};
  m.norm_groups = 2;
  m.reference_frames = 2;
  m.tqe_layers = 2;
  m.tqe_schedule = QuerySelectionSchedule::checked({6, 3});
  m.tdte_layers = 1;
  m.tdtd_layers = 1;
  return m;
}

std::vector<SuiteCheck> op_checks() {
  std::mt19937_64 rng(2024);
  std::vector<SuiteCheck> checks;
  const Shape s{3, 4};
  checks.push_back(binary("add", add, rand_tensor(s, rng), rand_tensor(s, rng)));
  checks.push_back(binary("sub", sub, rand_tensor(s, rng), rand_tensor(s, rng)));
  checks.push_back(binary("mul", mul, rand_tensor(s, rng), rand_tensor(s, rng)));
  checks.push_back(binary("div", div, rand_tensor(s, rng), rand_tensor(s, rng, 0.5, 1.5)));
  {
    Tensor a = rand_tensor(s, rng), b = away_from_zero(s, rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += a[i];
    checks.push_back(binary("minimum", minimum, a, b));
    checks.push_back(binary("maximum", maximum, a, b));
  }
  checks.push_back(unary("neg", neg, rand_tensor(s, rng)));
  checks.push_back(unary("relu", relu, away_from_zero(s, rng)));
  checks.push_back(unary("sigmoid", sigmoid, rand_tensor(s, rng, -3, 3)));
  checks.push_back(unary("exp", exp, rand_tensor(s, rng)));
  checks.push_back(unary("log", log, rand_tensor(s, rng, 0.5, 2.0)));
  checks.push_back(unary("abs", abs, away_from_zero(s, rng)));
  checks.push_back(unary("square", square, rand_tensor(s, rng)));
  checks.push_back(unary("transpose", transpose, rand_tensor(s, rng)));
  checks.push_back(unary("sum", sum, rand_tensor(s, rng)));
  checks.push_back(unary("mean", mean, rand_tensor(s, rng)));
  checks.push_back(binary("matmul", matmul, rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng)));

  auto leaf_check = [&](const std::string& name, std::vector<NamedLeaf> leaves,
                        std::function<Var()> f) {
    checks.push_back({name, [name, leaves, f](const GradCheckOptions& o) {
                        return grad_check(name, f, leaves, o);
                      }});
  };
  {
    Var a = Var::leaf(rand_tensor(s, rng));
    leaf_check("scale", {{"x", a}}, [a] { return probe(scale(a, -1.7), 13); });
    Var b = Var::leaf(rand_tensor(s, rng));
    leaf_check("add_scalar", {{"x", b}}, [b] { return probe(add_scalar(b, 0.3), 13); });
    Var c = Var::leaf(rand_tensor(s, rng)), d = Var::leaf(rand_tensor(s, rng)),
        e = Var::leaf(rand_tensor(s, rng));
    leaf_check("add_n", {{"a", c}, {"b", d}, {"c", e}},
               [c, d, e] { return probe(add_n({c, d, e, c}), 13); });
  }
  {
    Var x = Var::leaf(rand_tensor({5, 4}, rng)), w = Var::leaf(rand_tensor({4, 3}, rng)),
        b = Var::leaf(rand_tensor({3}, rng));
    leaf_check("linear", {{"x", x}, {"w", w}, {"b", b}}, [x, w, b] { return probe(linear(x, w, b), 14); });
  }
  for (std::size_t axis : {0, 1}) {
    Var x = Var::leaf(rand_tensor({3, 5}, rng, -2, 2));
    leaf_check("softmax_axis" + std::to_string(axis), {{"x", x}},
               [x, axis] { return probe(softmax(x, axis), 15); });
  }
  {
    Var x = Var::leaf(rand_tensor({4, 6}, rng, -2, 2)), g = Var::leaf(rand_tensor({6}, rng, 0.5, 1.5)),
        b = Var::leaf(rand_tensor({6}, rng));
    leaf_check("layer_norm", {{"x", x}, {"gain", g}, {"bias", b}},
               [x, g, b] { return probe(layer_norm(x, g, b), 16); });
  }
  {
    Var x = Var::leaf(rand_tensor({4, 3, 3}, rng, -2, 2)), g = Var::leaf(rand_tensor({4}, rng, 0.5, 1.5)),
        b = Var::leaf(rand_tensor({4}, rng));
    leaf_check("group_norm", {{"x", x}, {"gain", g}, {"bias", b}},
               [x, g, b] { return probe(group_norm(x, g, b, 2), 17); });
  }
  {
    Var x = Var::leaf(rand_tensor({2, 5, 6}, rng)), w = Var::leaf(rand_tensor({3, 2, 3, 3}, rng)),
        b = Var::leaf(rand_tensor({3}, rng));
    leaf_check("conv2d", {{"x", x}, {"weight", w}, {"bias", b}},
               [x, w, b] { return probe(conv2d(x, w, b, 2, 1), 18); });
  }
  {
    Var x = Var::leaf(rand_tensor({3, 4}, rng));
    leaf_check("reshape", {{"x", x}}, [x] { return probe(reshape(x, {2, 6}), 19); });
    Var a = Var::leaf(rand_tensor({3, 2}, rng)), b = Var::leaf(rand_tensor({3, 3}, rng));
    leaf_check("concat", {{"a", a}, {"b", b}}, [a, b] { return probe(concat({a, b, a}, 1), 19); });
    Var y = Var::leaf(rand_tensor({4, 5}, rng));
    leaf_check("slice", {{"x", y}}, [y] { return probe(slice(y, 1, 1, 3), 19); });
    Var z = Var::leaf(rand_tensor({4, 3}, rng));
    leaf_check("gather_rows", {{"x", z}}, [z] { return probe(gather_rows(z, {2, 0, 2, 3}), 19); });
    Var m = Var::leaf(rand_tensor({3, 2, 4}, rng));
    leaf_check("to_tokens", {{"map", m}}, [m] { return probe(to_tokens(m), 20); });
    Var t = Var::leaf(rand_tensor({8, 3}, rng));
    leaf_check("from_tokens", {{"tokens", t}}, [t] { return probe(from_tokens(t, 2, 4), 20); });
  }
  {
    Var map = Var::leaf(rand_tensor({3, 4, 5}, rng));
    Var point = Var::leaf(Tensor(Shape{2}, {2.3, 1.6}));
    leaf_check("bilinear_sample", {{"map", map}, {"point", point}},
               [map, point] { return probe(bilinear_sample(map, point), 21); });
    Var edge = Var::leaf(Tensor(Shape{2}, {-0.4, 3.3}));
    leaf_check("bilinear_sample_border", {{"map", map}, {"point", edge}},
               [map, edge] { return probe(bilinear_sample(map, edge), 21); });
  }
  {
    // Two maps, two heads, two points: locations [Nq, M*L*K*2], weights [Nq, M*L*K].
    const std::size_t nq = 3, heads = 2, points = 2, frames = 2, c = 4;
    std::vector<FeatureTokens> maps;
    std::vector<NamedLeaf> leaves;
    for (std::size_t l = 0; l < frames; ++l) {
      const std::size_t h = 3 + l, w = 4;
      Var tokens = Var::leaf(rand_tensor({h * w, c}, rng));
      maps.push_back(FeatureTokens{tokens, h, w});
      leaves.emplace_back("values" + std::to_string(l), tokens);
    }
    Var loc = Var::leaf(fractional_points({nq, heads * frames * points * 2}, 4.0, rng));
    Var wts = Var::leaf(rand_tensor({nq, heads * frames * points}, rng, 0.1, 1.0));
    leaves.emplace_back("locations", loc);
    leaves.emplace_back("weights", wts);
    leaf_check("deformable_gather", leaves, [maps, loc, wts] {
      return probe(deformable_gather(maps, loc, wts, 2, 2), 22);
    });
    Var refs = Var::leaf(rand_tensor({nq, 2}, rng, 0.1, 0.9));
    const std::vector<std::pair<std::size_t, std::size_t>> sizes{{3, 4}, {4, 4}};
    leaf_check("reference_grid", {{"references", refs}}, [refs, sizes] {
      return probe(reference_grid(refs, 2, 2, sizes), 23);
    });
  }
  {
    Var logits = Var::leaf(rand_tensor({4, 3}, rng, -3, 3));
    Tensor targets(Shape{4, 3}, 0.0);
    targets[1] = 1.0;
    targets[9] = 1.0;
    leaf_check("focal_loss", {{"logits", logits}}, [logits, targets] {
      return sigmoid_focal_loss(logits, targets, 0.25, 2.0);
    });
  }
  {
    // Partially overlapping pairs and one disjoint pair.
    Var a = Var::leaf(Tensor(Shape{3, 4}, {0.40, 0.50, 0.30, 0.20, 0.30, 0.35, 0.25, 0.30,
                                           0.20, 0.20, 0.10, 0.15}));
    Var b = Var::leaf(Tensor(Shape{3, 4}, {0.47, 0.53, 0.20, 0.25, 0.36, 0.30, 0.20, 0.22,
                                           0.70, 0.65, 0.20, 0.10}));
    leaf_check("giou_rows", {{"a", a}, {"b", b}}, [a, b] { return probe(generalized_iou_rows(a, b), 24); });
  }
  return checks;
}

std::vector<SuiteCheck> composite_checks(const RunConfig& config) {
  std::vector<SuiteCheck> checks;
  const LossConfig loss = config.loss;

  checks.push_back({"multi_head_attention", [](const GradCheckOptions& o) {
                      ParameterStore store;
                      std::mt19937_64 rng(31);
                      auto mha = MultiHeadAttention::create(store, "mha", 8, 2, rng);
                      Var q = Var::leaf(rand_tensor({3, 8}, rng));
                      Var kv = Var::leaf(rand_tensor({5, 8}, rng));
                      auto leaves = params_with(store, {"mha"});
                      leaves.emplace_back("queries", q);
                      leaves.emplace_back("keys_values", kv);
                      return grad_check("multi_head_attention",
                                        [&] { return probe(multi_head_attention(q, kv, kv, mha), 32); },
                                        leaves, o);
                    }});

  auto deformable = [](std::size_t frames) {
    return [frames](const GradCheckOptions& o) {
      ParameterStore store;
      std::mt19937_64 rng(40 + frames);
      auto attn = DeformableAttention::create(store, "attn", 8, 2, 2, frames, rng);
      perturb_all(store, 41);
      std::vector<FeatureTokens> maps;
      std::vector<NamedLeaf> leaves = params_with(store, {"attn"});
      for (std::size_t l = 0; l < frames; ++l) {
        Var t = Var::leaf(rand_tensor({4 * 5, 8}, rng));
        maps.push_back(FeatureTokens{t, 4, 5});
        leaves.emplace_back("map" + std::to_string(l), t);
      }
      Var q = Var::leaf(rand_tensor({3, 8}, rng));
      Var refs = Var::leaf(rand_tensor({3, 2}, rng, 0.2, 0.8));
      leaves.emplace_back("queries", q);
      leaves.emplace_back("references", refs);
      const std::string label = frames == 1 ? "deformable_attention" : "temporal_deformable_attention";
      return grad_check(label, [&] { return probe(temporal_deformable_attention(q, refs, maps, attn), 42); },
                        leaves, o);
    };
  };
  checks.push_back({"deformable_attention", deformable(1)});
  checks.push_back({"temporal_deformable_attention", deformable(3)});

  checks.push_back({"encoder_decoder_layers", [](const GradCheckOptions& o) {
                      ParameterStore store;
                      std::mt19937_64 rng(50);
                      EncoderLayer enc{DeformableAttention::create(store, "enc.attn", 8, 2, 2, 1, rng),
                                       LayerNorm::create(store, "enc.norm", 8),
                                       FeedForward::create(store, "enc.ffn", 8, 16, rng)};
                      DecoderLayer dec{MultiHeadAttention::create(store, "dec.self", 8, 2, rng),
                                       LayerNorm::create(store, "dec.self_norm", 8),
                                       DeformableAttention::create(store, "dec.cross", 8, 2, 2, 1, rng),
                                       LayerNorm::create(store, "dec.cross_norm", 8),
                                       FeedForward::create(store, "dec.ffn", 8, 16, rng)};
                      perturb_all(store, 51);
                      Var features = Var::leaf(rand_tensor({8, 3, 4}, rng));
                      Var content = Var::leaf(rand_tensor({3, 8}, rng));
                      Var position = Var::leaf(rand_tensor({3, 8}, rng));
                      Var refs = Var::leaf(rand_tensor({3, 2}, rng, 0.2, 0.8));
                      const Tensor pos = sine_positional_embedding(3, 4, 8);
                      auto leaves = params_with(store, {"enc", "dec"});
                      leaves.emplace_back("features", features);
                      leaves.emplace_back("query_content", content);
                      leaves.emplace_back("references", refs);
                      return grad_check("encoder_decoder_layers", [&] {
                        MemoryEncoding mem = spatial_encoder(features, pos, {enc});
                        QuerySet qs{content, position, refs, 0};
                        return probe(decoder_layer_forward(qs, mem, dec).content, 52);
                      }, leaves, o);
                    }});

  checks.push_back({"spatial_detector", [loss](const GradCheckOptions& o) {
                      RunConfig rc;
                      rc.model = toy_model_config();
                      rc.loss = loss;
                      Model model(rc.model, 60);
                      perturb_all(model.store, 61);
                      const Clip clip = toy_clip(rc.model.clip_frames(), 62);
                      const Frame frame{clip.frames[0], 0};
                      const auto& gts = clip.annotations[0];
                      const LossWeights w = LossWeights::from(loss);
                      std::vector<Assignment> frozen;
                      {
                        NoGradGuard guard;
                        for (const auto& p : model.net->spatial().forward(frame).predictions) {
                          frozen.push_back(detection_loss(p.logits, p.boxes, gts, w).assignment);
                        }
                      }
                      auto leaves = params_with(model.store, spatial_prefixes());
                      GradCheckOptions sub = o;
                      if (!sub.max_coords_per_tensor) sub.max_coords_per_tensor = 6;
                      return grad_check("spatial_detector", [&] {
                        const SpatialOutput out = model.net->spatial().forward(frame);
                        std::vector<Var> terms;
                        for (std::size_t i = 0; i < out.predictions.size(); ++i) {
                          const auto& p = out.predictions[i];
                          terms.push_back(detection_loss(p.logits, p.boxes, gts, w, &frozen[i]).total);
                        }
                        return add_n(terms);
                      }, leaves, sub);
                    }});

  checks.push_back({"tqe_tdtd", [loss](const GradCheckOptions& o) {
                      RunConfig rc;
                      rc.model = toy_model_config();
                      rc.loss = loss;
                      Model model(rc.model, 70);
                      perturb_all(model.store, 71);
                      const Clip clip = toy_clip(rc.model.clip_frames(), 72);
                      const auto frames = clip_frames(clip);
                      const std::size_t cur = clip.current_index;
                      const auto& gts = clip.annotations[cur];
                      const LossWeights w = LossWeights::from(loss);
                      // Spatial outputs are fixed inputs here; the temporal part is checked.
                      std::vector<SpatialOutput> spatial;
                      std::vector<Assignment> frozen;
                      {
                        NoGradGuard guard;
                        for (const auto& f : frames) spatial.push_back(model.net->spatial().forward(f));
                        const ClipOutput out = model.net->forward_from_spatial(spatial, cur);
                        for (const auto& p : out.temporal_predictions) {
                          frozen.push_back(detection_loss(p.logits, p.boxes, gts, w).assignment);
                        }
                      }
                      auto leaves = params_with(model.store, {"temporal.", "heads."});
                      GradCheckOptions sub = o;
                      if (!sub.max_coords_per_tensor) sub.max_coords_per_tensor = 8;
                      return grad_check("tqe_tdtd", [&] {
                        const ClipOutput out = model.net->forward_from_spatial(spatial, cur);
                        std::vector<Var> terms;
                        for (std::size_t i = 0; i < out.temporal_predictions.size(); ++i) {
                          const auto& p = out.temporal_predictions[i];
                          terms.push_back(detection_loss(p.logits, p.boxes, gts, w, &frozen[i]).total);
                        }
                        Tensor targets(out.score_logits.shape(), 0.0);
                        targets[0] = 1.0;
                        terms.push_back(sigmoid_focal_loss(out.score_logits, targets, w.focal_alpha,
                                                           w.focal_gamma));
                        return add_n(terms);
                      }, leaves, sub);
                    }});

  checks.push_back({"detection_loss", [loss](const GradCheckOptions& o) {
                      std::mt19937_64 rng(80);
                      const LossWeights w = LossWeights::from(loss);
                      Var logits = Var::leaf(rand_tensor({5, 4}, rng, -2, 2));
                      Var raw = Var::leaf(rand_tensor({5, 4}, rng, -1, 1));
                      const std::vector<GroundTruthBox> gts{{1, BoxCS{0.4, 0.5, 0.3, 0.2}},
                                                            {3, BoxCS{0.7, 0.3, 0.2, 0.25}}};
                      Assignment frozen;
                      {
                        NoGradGuard guard;
                        frozen = detection_loss(logits, sigmoid(raw), gts, w).assignment;
                      }
                      return grad_check("detection_loss", [&] {
                        return detection_loss(logits, sigmoid(raw), gts, w, &frozen).total;
                      }, {{"logits", logits}, {"box_logits", raw}}, o);
                    }});
  return checks;
}

std::vector<GradCheckReport> run_checks(const std::vector<SuiteCheck>& checks,
                                        const GradCheckOptions& options) {
  std::vector<GradCheckReport> reports;
  for (const auto& c : checks) {
    reports.push_back(c.run(options));
    reports.back().label = c.name;
  }
  return reports;
}

}  // namespace stvod

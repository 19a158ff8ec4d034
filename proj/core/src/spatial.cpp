#include "stvod/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stvod {
namespace {

Tensor to_token_layout(const Tensor& chw) {
  const std::size_t c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
  Tensor out(Shape{hw, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) out[i * c + ch] = chw[ch * hw + i];
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double Detection::score() const {
  double best = 0.0;
  for (double v : class_logits.data()) best = std::max(best, stable_sigmoid(v));
  return best;
}

std::size_t Detection::label() const {
  const auto d = class_logits.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::vector<Detection> to_detections(const HeadOutput& out) {
  const std::size_t n = out.logits.dim(0), k = out.logits.dim(1);
  std::vector<Detection> dets;
  dets.reserve(n);
  for (std::size_t q = 0; q < n; ++q) {
    Tensor logits(Shape{k});
    for (std::size_t j = 0; j < k; ++j) logits[j] = out.logits.value()[q * k + j];
    const auto& b = out.boxes.value();
    dets.push_back(Detection{std::move(logits),
                             BoxCS{b[q * 4], b[q * 4 + 1], b[q * 4 + 2], b[q * 4 + 3]}, q});
  }
  return dets;
}

Backbone Backbone::create(ParameterStore& store, const std::string& prefix,
                          const ModelConfig& config, std::mt19937_64& rng) {
  Backbone b;
  b.norm_groups = config.norm_groups;
  std::size_t in = 3;
  for (std::size_t s = 0; s < config.backbone_widths.size(); ++s) {
    const std::size_t out = config.backbone_widths[s];
    Backbone::Stage stage;
    for (std::size_t j = 0; j < config.backbone_stage_convs; ++j) {
      const std::string p = prefix + ".stage" + std::to_string(s) + ".conv" + std::to_string(j);
      Conv c;
      c.weight = store.add(p + ".weight", xavier_uniform({out, in, 3, 3}, in * 9, out * 9, rng));
      c.bias = store.add(p + ".bias", Tensor(Shape{out}, 0.0));
      c.norm_gain = store.add(p + ".norm.gain", Tensor(Shape{out}, 1.0));
      c.norm_bias = store.add(p + ".norm.bias", Tensor(Shape{out}, 0.0));
      stage.push_back(c);
      in = out;
    }
    b.stages.push_back(std::move(stage));
  }
  // The input projection trains with the transformer, outside the backbone group.
  const std::string p = "spatial.input_proj";
  b.proj_weight =
      store.add(p + ".weight", xavier_uniform({config.dim, in, 1, 1}, in, config.dim, rng));
  b.proj_bias = store.add(p + ".bias", Tensor(Shape{config.dim}, 0.0));
  b.proj_gain = store.add(p + ".norm.gain", Tensor(Shape{config.dim}, 1.0));
  b.proj_norm_bias = store.add(p + ".norm.bias", Tensor(Shape{config.dim}, 0.0));
  return b;
}

Var backbone_forward(const Var& pixels, const Backbone& b) {
  const auto& s = pixels.shape();
  if (s.size() != 3 || s[0] != 3) {
    throw ShapeError("backbone expects [3,H,W] pixels, got " + shape_to_string(s));
  }
  if (s[1] < b.stride() || s[2] < b.stride()) {
    throw ShapeError("frame " + shape_to_string(s) + " smaller than backbone stride " +
                     std::to_string(b.stride()));
  }
  Var x = pixels;
  for (const auto& stage : b.stages) {
    for (std::size_t j = 0; j < stage.size(); ++j) {
      const auto& c = stage[j];
      x = relu(group_norm(conv2d(x, c.weight, c.bias, j == 0 ? 2 : 1, 1), c.norm_gain,
                          c.norm_bias, b.norm_groups));
    }
  }
  x = conv2d(x, b.proj_weight, b.proj_bias, 1, 0);
  return group_norm(x, b.proj_gain, b.proj_norm_bias, b.norm_groups);
}

Var backbone_forward(const Frame& frame, const Backbone& b) {
  for (double v : frame.pixels.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("frame pixels must lie in [0,1]");
  }
  return backbone_forward(Var::constant(frame.pixels), b);
}

Tensor grid_references(std::size_t height, std::size_t width) {
  Tensor refs(Shape{height * width, 2});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      refs[(y * width + x) * 2] = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      refs[(y * width + x) * 2 + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
    }
  }
  return refs;
}

Var encoder_layer_forward(const FeatureTokens& x, const Var& positional, const Var& references,
                          const EncoderLayer& layer) {
  Var attended = deformable_attention(add(x.tokens, positional), references, x, layer.attn);
  Var y = layer.norm(add(x.tokens, attended));
  return transformer_ffn(y, layer.ffn);
}

MemoryEncoding spatial_encoder(const Var& features, const Tensor& positional,
                               const std::vector<EncoderLayer>& layers, std::size_t frame) {
  if (features.value().rank() != 3 || positional.shape() != features.shape()) {
    throw ShapeError("spatial encoder: features " + shape_to_string(features.shape()) +
                     " and positional " + shape_to_string(positional.shape()) + " must agree");
  }
  const std::size_t h = features.dim(1), w = features.dim(2);
  Tensor pos_tokens = to_token_layout(positional);
  FeatureTokens x{to_tokens(features), h, w};
  if (!layers.empty()) {
    Var pos = Var::constant(pos_tokens);
    Var refs = Var::constant(grid_references(h, w));
    for (const auto& layer : layers) x.tokens = encoder_layer_forward(x, pos, refs, layer);
  }
  return MemoryEncoding{x, std::move(pos_tokens), frame};
}

QuerySet decoder_layer_forward(const QuerySet& queries, const MemoryEncoding& memory,
                               const DecoderLayer& layer) {
  Var q = add(queries.content, queries.position);
  Var t = layer.self_norm(
      add(queries.content, multi_head_attention(q, q, queries.content, layer.self_attn)));
  Var cross = deformable_attention(add(t, queries.position), queries.references, memory.memory,
                                   layer.cross_attn);
  t = layer.cross_norm(add(t, cross));
  t = transformer_ffn(t, layer.ffn);
  return QuerySet{t, queries.position, queries.references, queries.frame};
}

std::vector<QuerySet> spatial_decoder(const QuerySet& initial, const MemoryEncoding& memory,
                                      const std::vector<DecoderLayer>& layers) {
  if (initial.size() == 0) throw std::invalid_argument("spatial decoder needs at least one query");
  std::vector<QuerySet> out;
  QuerySet cur = initial;
  for (const auto& layer : layers) {
    cur = decoder_layer_forward(cur, memory, layer);
    out.push_back(cur);
  }
  return out;
}

PredictionHeads PredictionHeads::create(ParameterStore& store, const std::string& prefix,
                                        const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t c = config.dim, k = config.num_classes;
  PredictionHeads h;
  h.relative_to_reference = config.box_relative_to_reference;
  h.class_weight = store.add(prefix + ".class.weight", xavier_uniform({c, k}, c, k, rng));
  // Prior probability 0.01 for every class at initialization.
  h.class_bias = store.add(prefix + ".class.bias", Tensor(Shape{k}, -std::log((1 - 0.01) / 0.01)));
  h.box_w1 = store.add(prefix + ".box.w1", xavier_uniform({c, c}, c, c, rng));
  h.box_b1 = store.add(prefix + ".box.b1", Tensor(Shape{c}, 0.0));
  h.box_w2 = store.add(prefix + ".box.w2", xavier_uniform({c, c}, c, c, rng));
  h.box_b2 = store.add(prefix + ".box.b2", Tensor(Shape{c}, 0.0));
  h.box_w3 = store.add(prefix + ".box.w3", Tensor(Shape{c, 4}, 0.0));
  h.box_b3 = store.add(prefix + ".box.b3", Tensor(Shape{4}, 0.0));
  return h;
}

HeadOutput predict_heads(const QuerySet& queries, const PredictionHeads& h) {
  Var logits = linear(queries.content, h.class_weight, h.class_bias);
  Var hidden = relu(linear(queries.content, h.box_w1, h.box_b1));
  hidden = relu(linear(hidden, h.box_w2, h.box_b2));
  Var raw = linear(hidden, h.box_w3, h.box_b3);
  if (h.relative_to_reference) {
    const std::size_t n = queries.size();
    Var r = queries.references;
    Var inv = log(div(r, add_scalar(neg(r), 1.0)));
    raw = add(raw, concat({inv, Var::constant(Tensor(Shape{n, 2}, 0.0))}, 1));
  }
  return HeadOutput{logits, sigmoid(raw)};
}

SpatialDetector::SpatialDetector(ParameterStore& store, const ModelConfig& config,
                                 std::mt19937_64& rng)
    : config_(config) {
  const std::size_t c = config.dim;
  backbone_ = Backbone::create(store, "spatial.backbone", config, rng);
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    const std::string p = "spatial.encoder." + std::to_string(i);
    EncoderLayer layer{DeformableAttention::create(store, p + ".attn", c, config.heads,
                                                   config.points, 1, rng),
                       LayerNorm::create(store, p + ".norm", c),
                       FeedForward::create(store, p + ".ffn", c, config.hidden_dim(), rng)};
    encoder_.push_back(std::move(layer));
  }
  const double unit = std::sqrt(3.0);
  query_content_ = store.add("spatial.decoder.query_content",
                             uniform({config.queries, c}, -unit, unit, rng));
  query_position_ = store.add("spatial.decoder.query_position",
                              uniform({config.queries, c}, -unit, unit, rng));
  reference_weight_ =
      store.add("spatial.decoder.reference.weight", xavier_uniform({c, 2}, c, 2, rng));
  reference_bias_ = store.add("spatial.decoder.reference.bias", Tensor(Shape{2}, 0.0));
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    const std::string p = "spatial.decoder." + std::to_string(i);
    DecoderLayer layer{
        MultiHeadAttention::create(store, p + ".self_attn", c, config.heads, rng),
        LayerNorm::create(store, p + ".self_norm", c),
        DeformableAttention::create(store, p + ".cross_attn", c, config.heads, config.points, 1,
                                    rng),
        LayerNorm::create(store, p + ".cross_norm", c),
        FeedForward::create(store, p + ".ffn", c, config.hidden_dim(), rng)};
    decoder_.push_back(std::move(layer));
  }
  heads_ = PredictionHeads::create(store, "heads", config, rng);
}

Tensor SpatialDetector::positional(std::size_t height, std::size_t width) const {
  return sine_positional_embedding(height, width, config_.dim);
}

QuerySet SpatialDetector::initial_queries(std::size_t frame) const {
  Var refs = sigmoid(linear(query_position_, reference_weight_, reference_bias_));
  return QuerySet{query_content_, query_position_, refs, frame};
}

SpatialOutput SpatialDetector::forward(const Frame& frame) const {
  Var features = backbone_forward(frame, backbone_);
  Tensor pos = positional(features.dim(1), features.dim(2));
  SpatialOutput out;
  out.memory = spatial_encoder(features, pos, encoder_, frame.index);
  out.layers = spatial_decoder(initial_queries(frame.index), out.memory, decoder_);
  for (const auto& q : out.layers) out.predictions.push_back(predict_heads(q, heads_));
  return out;
}

}  // namespace stvod

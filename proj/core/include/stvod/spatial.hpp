#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stvod/attention.hpp"
#include "stvod/boxes.hpp"
#include "stvod/config.hpp"
#include "stvod/parameters.hpp"

namespace stvod {

/// RGB image [3, H0, W0] with values in [0,1], at time position `index`.
struct Frame {
  Tensor pixels;
  std::size_t index = 0;

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
};

/// Encoder output of one frame, kept in token layout [H*W, C].
struct MemoryEncoding {
  FeatureTokens memory;
  Tensor positional;  // [H*W, C]
  std::size_t frame = 0;

  Var features() const { return from_tokens(memory.tokens, memory.height, memory.width); }
};

/// A set of object queries: content [N,C], positional embedding [N,C] and
/// normalized reference points [N,2].
struct QuerySet {
  Var content;
  Var position;
  Var references;
  std::size_t frame = 0;

  std::size_t size() const { return content.dim(0); }
};

/// Raw head outputs for a query set: class logits [N, classes] and
/// sigmoid boxes [N,4] in (cx, cy, w, h) order.
struct HeadOutput {
  Var logits;
  Var boxes;
};

struct Detection {
  Tensor class_logits;
  BoxCS box;
  std::size_t query = 0;

  /// Max class sigmoid.
  double score() const;
  std::size_t label() const;
};

std::vector<Detection> to_detections(const HeadOutput& out);

struct Backbone {
  struct Conv {
    Var weight, bias;
    Var norm_gain, norm_bias;
  };
  /// First conv of a stage has stride 2, the rest stride 1.
  using Stage = std::vector<Conv>;
  std::vector<Stage> stages;
  Var proj_weight, proj_bias, proj_gain, proj_norm_bias;
  std::size_t norm_groups = 4;

  static Backbone create(ParameterStore& store, const std::string& prefix,
                         const ModelConfig& config, std::mt19937_64& rng);
  std::size_t stride() const { return std::size_t{1} << stages.size(); }
};

/// Conv stages (3x3, group norm, relu; each stage halves the resolution
/// once) then a 1x1
/// projection to the model width: [3,H0,W0] -> [C, H0/stride, W0/stride].
Var backbone_forward(const Frame& frame, const Backbone& backbone);
Var backbone_forward(const Var& pixels, const Backbone& backbone);

struct EncoderLayer {
  DeformableAttention attn;
  LayerNorm norm;
  FeedForward ffn;
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  LayerNorm self_norm;
  DeformableAttention cross_attn;
  LayerNorm cross_norm;
  FeedForward ffn;
};

/// Normalized centers of every cell of an H x W grid, [H*W, 2].
Tensor grid_references(std::size_t height, std::size_t width);

/// Self-attention encoder block stack; each position queries around its own
/// normalized location.
MemoryEncoding spatial_encoder(const Var& features, const Tensor& positional,
                               const std::vector<EncoderLayer>& layers, std::size_t frame = 0);

/// One encoder layer: LN(x + attn(x + pos, own position, x)), then FFN.
Var encoder_layer_forward(const FeatureTokens& x, const Var& positional, const Var& references,
                          const EncoderLayer& layer);

/// One decoder layer over a query set; references are left unchanged.
QuerySet decoder_layer_forward(const QuerySet& queries, const MemoryEncoding& memory,
                               const DecoderLayer& layer);

/// Runs every decoder layer; element i is the output of layer i.
std::vector<QuerySet> spatial_decoder(const QuerySet& initial, const MemoryEncoding& memory,
                                      const std::vector<DecoderLayer>& layers);

struct PredictionHeads {
  Var class_weight, class_bias;
  Var box_w1, box_b1, box_w2, box_b2, box_w3, box_b3;
  bool relative_to_reference = false;

  static PredictionHeads create(ParameterStore& store, const std::string& prefix,
                                const ModelConfig& config, std::mt19937_64& rng);
};

HeadOutput predict_heads(const QuerySet& queries, const PredictionHeads& heads);

struct SpatialOutput {
  MemoryEncoding memory;
  std::vector<QuerySet> layers;
  std::vector<HeadOutput> predictions;  // one per decoder layer
};

/// Backbone, encoder, decoder and heads for single frames.
class SpatialDetector {
 public:
  SpatialDetector(ParameterStore& store, const ModelConfig& config, std::mt19937_64& rng);

  SpatialOutput forward(const Frame& frame) const;
  QuerySet initial_queries(std::size_t frame = 0) const;

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const std::vector<EncoderLayer>& encoder() const { return encoder_; }
  const std::vector<DecoderLayer>& decoder() const { return decoder_; }
  const PredictionHeads& heads() const { return heads_; }
  /// Positional embedding for an H x W feature grid in token layout.
  Tensor positional(std::size_t height, std::size_t width) const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  PredictionHeads heads_;
  Var query_content_;
  Var query_position_;
  Var reference_weight_;
  Var reference_bias_;
};

}  // namespace stvod

#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "stvod/autodiff.hpp"
#include "stvod/parameters.hpp"

namespace stvod {

/// Normalized image coordinate; (0,0) is the top-left corner, (1,1) the
/// bottom-right one.
struct ReferencePoint {
  double x = 0.5;
  double y = 0.5;

  /// Throws std::invalid_argument outside [0,1]^2.
  static ReferencePoint checked(double x, double y);
};

/// A feature map flattened to one token per position: tokens[H*W, C],
/// row-major over (y, x).
struct FeatureTokens {
  Var tokens;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// 2-D sinusoidal embedding [C,H,W]. The first C/2 channels encode the row,
/// the rest the column; each (sin, cos) pair shares one frequency. Positions
/// are i/H * 2pi, so (0,0) maps to sin=0, cos=1 everywhere.
Tensor sine_positional_embedding(std::size_t height, std::size_t width, std::size_t channels,
                                 double temperature = 10000.0);

/// [C,H,W] -> [H*W, C].
Var to_tokens(const Var& map);
/// [H*W, C] -> [C,H,W].
Var from_tokens(const Var& tokens, std::size_t height, std::size_t width);

/// Bilinear read of map[C,H,W] at point[2] = (x, y) in pixel coordinates,
/// where integer coordinates are pixel centers. Neighbors outside the map
/// contribute zero.
Var bilinear_sample(const Var& map, const Var& point);

/// Standard multi-head attention, y = x * W convention for every projection.
/// Head m owns columns [m*Cv, (m+1)*Cv) of the query, key and value
/// projections and the matching rows of the output projection.
struct MultiHeadAttention {
  std::size_t heads = 0;
  std::size_t dim = 0;
  Var query_proj;
  Var key_proj;
  Var value_proj;
  Var out_proj;

  static MultiHeadAttention create(ParameterStore& store, const std::string& prefix,
                                   std::size_t dim, std::size_t heads, std::mt19937_64& rng);

  /// Attention weights [heads, Nq, Nk]; each row sums to one.
  Tensor weights(const Var& queries, const Var& keys) const;
};

Var multi_head_attention(const Var& queries, const Var& keys, const Var& values,
                         const MultiHeadAttention& params);

/// Deformable attention over `frames` feature maps. With frames == 1 this is
/// the single-map form; otherwise the weight logits of each head are
/// normalized jointly over all frames*points samples.
struct DeformableAttention {
  std::size_t heads = 0;
  std::size_t points = 0;
  std::size_t frames = 1;
  std::size_t dim = 0;
  Var value_proj;
  /// One projection of 3*M*L*K channels: 2MLK offsets then MLK weight logits.
  Var sampling_proj;
  Var sampling_bias;
  Var out_proj;

  static DeformableAttention create(ParameterStore& store, const std::string& prefix,
                                    std::size_t dim, std::size_t heads, std::size_t points,
                                    std::size_t frames, std::mt19937_64& rng);

  std::size_t samples_per_head() const { return frames * points; }
  std::size_t offset_channels() const { return 2 * heads * frames * points; }
  std::size_t logit_channels() const { return heads * frames * points; }
};

/// Sampling locations (pixel units of each target map) and normalized weights.
struct SamplingPlan {
  Var locations;  // [Nq, M*L*K*2], index ((m*L + l)*K + k)*2 + {0:x, 1:y}
  Var weights;    // [Nq, M*L*K], softmax over (l,k) per head
};

SamplingPlan deformable_sampling_plan(const Var& queries, const Var& references,
                                      std::span<const FeatureTokens> maps,
                                      const DeformableAttention& params);

/// Broadcasts normalized references [Nq,2] to pixel-space sampling origins
/// [Nq, M*L*K*2]: x * W_l - 0.5, y * H_l - 0.5.
Var reference_grid(const Var& references, std::size_t heads, std::size_t points,
                   std::span<const std::pair<std::size_t, std::size_t>> sizes);

/// Weighted bilinear gather: for head m, sum_{l,k} w * V_l(loc) over the
/// head's channel slice. values[l] is [H_l*W_l, C].
Var deformable_gather(std::span<const FeatureTokens> values, const Var& locations,
                      const Var& weights, std::size_t heads, std::size_t points);

/// Single-map deformable attention; requires params.frames == 1.
Var deformable_attention(const Var& queries, const Var& references, const FeatureTokens& map,
                         const DeformableAttention& params);

/// Deformable attention sampling K points in each of the L maps.
Var temporal_deformable_attention(const Var& queries, const Var& references,
                                  std::span<const FeatureTokens> maps,
                                  const DeformableAttention& params);

struct LayerNorm {
  Var gain;
  Var bias;
  static LayerNorm create(ParameterStore& store, const std::string& prefix, std::size_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gain, bias); }
};

/// Post-norm feed-forward block: LN(x + W2 relu(W1 x + b1) + b2).
struct FeedForward {
  Var w1, b1, w2, b2;
  LayerNorm norm;
  static FeedForward create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                            std::size_t hidden, std::mt19937_64& rng);
};

Var transformer_ffn(const Var& x, const FeedForward& params);

}  // namespace stvod

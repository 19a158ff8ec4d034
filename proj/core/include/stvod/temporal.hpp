#pragma once

#include <random>
#include <span>
#include <vector>

#include "stvod/spatial.hpp"

namespace stvod {

/// Per-frame memories after temporal fusion, in input frame order.
struct FusedMemory {
  std::vector<FeatureTokens> frames;
};

/// Queries gathered from every reference frame. `keys` is the content plus
/// the frame embedding (equal to `content` when embeddings are off).
struct ReferencePool {
  Var content;
  Var keys;
  std::vector<std::size_t> frame;
  std::vector<std::size_t> query;

  std::size_t size() const { return frame.size(); }
};

struct TdteLayer {
  DeformableAttention attn;  // frames == clip length
  LayerNorm norm;
  FeedForward ffn;
};

/// Fuses the L frame memories: every position of every frame queries at its
/// own normalized location across all frames, then passes through an FFN.
/// `frame_embedding` ([L, C]) is added to the queries when defined.
FusedMemory tdte(std::span<const MemoryEncoding> memories, const std::vector<TdteLayer>& layers,
                 const Var& frame_embedding);

struct ScoringHead {
  Var w1, b1, w2, b2;
  static ScoringHead create(ParameterStore& store, const std::string& prefix,
                            const ModelConfig& config, std::mt19937_64& rng);
};

/// Class logits of the scoring FFN for each pooled query, [P, classes].
Var tqe_logits(const Var& content, const ScoringHead& head);
/// Confidence per query: max over classes of sigmoid(logit).
std::vector<double> tqe_score(const Var& content, const ScoringHead& head);
std::vector<double> confidences_from_logits(const Tensor& logits);

/// Indices of the k most confident pool entries, most confident first. Ties
/// go to the lower (frame, query) pair. Throws std::invalid_argument when
/// k exceeds the pool.
std::vector<std::size_t> tqe_select(std::span<const double> confidences,
                                    std::span<const std::size_t> frame,
                                    std::span<const std::size_t> query, std::size_t k);

struct TqeLayer {
  MultiHeadAttention self_attn;
  LayerNorm self_norm;
  MultiHeadAttention cross_attn;
  LayerNorm cross_norm;
  FeedForward ffn;
};

struct SelectedQueries {
  Var content;
  Var keys;
};

/// Self-attention over the current queries, cross-attention into the selected
/// reference queries (skipped when `selected` is null), then FFN.
QuerySet tqe_layer(const QuerySet& current, const SelectedQueries* selected,
                   const TqeLayer& layer);

/// Coarse-to-fine temporal query encoder. Layer i keeps the top
/// schedule.keep[i] entries of the scored pool.
QuerySet tqe(const QuerySet& current, const ReferencePool& pool,
             const QuerySelectionSchedule& schedule, const std::vector<TqeLayer>& layers,
             std::span<const double> confidences);

/// Temporal decoder layers (self-attention, deformable cross-attention into
/// the current frame's fused memory, FFN); element i is layer i's output.
std::vector<QuerySet> tdtd(const QuerySet& temporal_queries, const MemoryEncoding& fused_current,
                           const std::vector<DecoderLayer>& layers);

struct ClipOutput {
  std::vector<SpatialOutput> spatial;
  std::size_t current = 0;
  FusedMemory fused;
  ReferencePool pool;
  Var score_logits;  // undefined without TQE layers
  std::vector<double> confidences;
  QuerySet temporal_queries;
  /// Heads on every TDTD layer; heads on the temporal queries when there are
  /// no TDTD layers.
  std::vector<HeadOutput> temporal_predictions;

  const HeadOutput& final_prediction() const { return temporal_predictions.back(); }
};

/// Spatial detector plus the temporal transformer.
class TransVOD {
 public:
  TransVOD(ParameterStore& store, const ModelConfig& config, std::mt19937_64& rng);

  /// `frames` in temporal order; `current` indexes the frame to detect.
  ClipOutput forward(std::span<const Frame> frames, std::size_t current) const;
  /// Same as forward but reuses already-computed spatial outputs.
  ClipOutput forward_from_spatial(std::vector<SpatialOutput> spatial, std::size_t current) const;

  const SpatialDetector& spatial() const { return spatial_; }
  const ModelConfig& config() const { return config_; }
  const std::vector<TdteLayer>& tdte_layers() const { return tdte_; }
  const std::vector<TqeLayer>& tqe_layers() const { return tqe_; }
  const std::vector<DecoderLayer>& tdtd_layers() const { return tdtd_; }
  const ScoringHead& scoring() const { return scoring_; }
  const Var& frame_embedding() const { return frame_embedding_; }

 private:
  ModelConfig config_;
  SpatialDetector spatial_;
  Var frame_embedding_;
  std::vector<TdteLayer> tdte_;
  ScoringHead scoring_;
  std::vector<TqeLayer> tqe_;
  std::vector<DecoderLayer> tdtd_;
};

/// Adds row `index` of `table` [F,C] to every row of x [N,C].
Var add_table_row(const Var& x, const Var& table, std::size_t index);

}  // namespace stvod

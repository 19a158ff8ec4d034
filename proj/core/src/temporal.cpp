#include "stvod/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stvod {

Var add_table_row(const Var& x, const Var& table, std::size_t index) {
  if (table.value().rank() != 2 || index >= table.dim(0) || x.value().rank() != 2 ||
      x.dim(1) != table.dim(1)) {
    throw ShapeError("add_table_row: x " + shape_to_string(x.shape()) + ", table " +
                     shape_to_string(table.shape()) + ", row " + std::to_string(index));
  }
  Var ones = Var::constant(Tensor(Shape{x.dim(0), 1}, 1.0));
  return add(x, matmul(ones, slice(table, 0, index, 1)));
}

FusedMemory tdte(std::span<const MemoryEncoding> memories, const std::vector<TdteLayer>& layers,
                 const Var& frame_embedding) {
  FusedMemory fused;
  for (const auto& m : memories) fused.frames.push_back(m.memory);
  if (layers.empty()) return fused;

  std::vector<Var> positional;
  std::vector<Var> refs;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (const auto& m : memories) {
    positional.push_back(Var::constant(m.positional));
    refs.push_back(Var::constant(grid_references(m.memory.height, m.memory.width)));
    offsets.push_back(rows);
    rows += m.memory.height * m.memory.width;
  }
  Var all_refs = concat(refs, 0);

  for (const auto& layer : layers) {
    if (layer.attn.frames != fused.frames.size()) {
      throw ShapeError("tdte layer expects " + std::to_string(layer.attn.frames) + " frames, got " +
                       std::to_string(fused.frames.size()));
    }
    std::vector<Var> queries, tokens;
    for (std::size_t f = 0; f < fused.frames.size(); ++f) {
      Var q = add(fused.frames[f].tokens, positional[f]);
      if (frame_embedding.defined()) q = add_table_row(q, frame_embedding, f);
      queries.push_back(q);
      tokens.push_back(fused.frames[f].tokens);
    }
    Var attended =
        temporal_deformable_attention(concat(queries, 0), all_refs, fused.frames, layer.attn);
    Var y = transformer_ffn(layer.norm(add(concat(tokens, 0), attended)), layer.ffn);
    for (std::size_t f = 0; f < fused.frames.size(); ++f) {
      const std::size_t n = fused.frames[f].height * fused.frames[f].width;
      fused.frames[f].tokens = slice(y, 0, offsets[f], n);
    }
  }
  return fused;
}

ScoringHead ScoringHead::create(ParameterStore& store, const std::string& prefix,
                                const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t c = config.dim, k = config.num_classes;
  ScoringHead h;
  h.w1 = store.add(prefix + ".w1", xavier_uniform({c, c}, c, c, rng));
  h.b1 = store.add(prefix + ".b1", Tensor(Shape{c}, 0.0));
  h.w2 = store.add(prefix + ".w2", xavier_uniform({c, k}, c, k, rng));
  h.b2 = store.add(prefix + ".b2", Tensor(Shape{k}, -std::log((1 - 0.01) / 0.01)));
  return h;
}

Var tqe_logits(const Var& content, const ScoringHead& head) {
  return linear(relu(linear(content, head.w1, head.b1)), head.w2, head.b2);
}

std::vector<double> confidences_from_logits(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) best = std::max(best, logits[i * k + j]);
    // sigmoid is monotone, so max of sigmoids is sigmoid of the max.
    out[i] = best >= 0 ? 1.0 / (1.0 + std::exp(-best)) : std::exp(best) / (1.0 + std::exp(best));
  }
  return out;
}

std::vector<double> tqe_score(const Var& content, const ScoringHead& head) {
  return confidences_from_logits(tqe_logits(content, head).value());
}

std::vector<std::size_t> tqe_select(std::span<const double> confidences,
                                    std::span<const std::size_t> frame,
                                    std::span<const std::size_t> query, std::size_t k) {
  const std::size_t n = confidences.size();
  if (frame.size() != n || query.size() != n) {
    throw std::invalid_argument("tqe_select: confidence, frame and query lists differ in length");
  }
  if (k > n) {
    throw std::invalid_argument("tqe_select: k=" + std::to_string(k) + " exceeds pool of " +
                                std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (confidences[a] != confidences[b]) return confidences[a] > confidences[b];
                      if (frame[a] != frame[b]) return frame[a] < frame[b];
                      return query[a] < query[b];
                    });
  order.resize(k);
  return order;
}

QuerySet tqe_layer(const QuerySet& current, const SelectedQueries* selected,
                   const TqeLayer& layer) {
  Var q = add(current.content, current.position);
  Var t = layer.self_norm(
      add(current.content, multi_head_attention(q, q, current.content, layer.self_attn)));
  if (selected != nullptr && selected->content.defined() && selected->content.dim(0) > 0) {
    Var cross = multi_head_attention(add(t, current.position), selected->keys, selected->content,
                                     layer.cross_attn);
    t = layer.cross_norm(add(t, cross));
  }
  t = transformer_ffn(t, layer.ffn);
  return QuerySet{t, current.position, current.references, current.frame};
}

QuerySet tqe(const QuerySet& current, const ReferencePool& pool,
             const QuerySelectionSchedule& schedule, const std::vector<TqeLayer>& layers,
             std::span<const double> confidences) {
  if (layers.empty()) return current;
  if (schedule.keep.size() != layers.size()) {
    throw std::invalid_argument("tqe: schedule has " + std::to_string(schedule.keep.size()) +
                                " entries for " + std::to_string(layers.size()) + " layers");
  }
  QuerySet cur = current;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (pool.size() == 0) {
      cur = tqe_layer(cur, nullptr, layers[i]);
      continue;
    }
    auto picked = tqe_select(confidences, pool.frame, pool.query, schedule.keep[i]);
    SelectedQueries sel{gather_rows(pool.content, picked), gather_rows(pool.keys, picked)};
    cur = tqe_layer(cur, &sel, layers[i]);
  }
  return cur;
}

std::vector<QuerySet> tdtd(const QuerySet& temporal_queries, const MemoryEncoding& fused_current,
                           const std::vector<DecoderLayer>& layers) {
  std::vector<QuerySet> out;
  QuerySet cur = temporal_queries;
  for (const auto& layer : layers) {
    cur = decoder_layer_forward(cur, fused_current, layer);
    out.push_back(cur);
  }
  return out;
}

TransVOD::TransVOD(ParameterStore& store, const ModelConfig& config, std::mt19937_64& rng)
    : config_(config), spatial_(store, config, rng) {
  const std::size_t c = config.dim, frames = config.clip_frames();
  if (config.frame_embedding) {
    frame_embedding_ =
        store.add("temporal.frame_embed", uniform({frames, c}, -0.5, 0.5, rng));
  }
  for (std::size_t i = 0; i < config.tdte_layers; ++i) {
    const std::string p = "temporal.tdte." + std::to_string(i);
    tdte_.push_back(TdteLayer{
        DeformableAttention::create(store, p + ".attn", c, config.heads, config.points, frames,
                                    rng),
        LayerNorm::create(store, p + ".norm", c),
        FeedForward::create(store, p + ".ffn", c, config.hidden_dim(), rng)});
  }
  if (config.tqe_layers > 0) scoring_ = ScoringHead::create(store, "temporal.tqe.score", config, rng);
  for (std::size_t i = 0; i < config.tqe_layers; ++i) {
    const std::string p = "temporal.tqe." + std::to_string(i);
    tqe_.push_back(TqeLayer{MultiHeadAttention::create(store, p + ".self_attn", c, config.heads, rng),
                            LayerNorm::create(store, p + ".self_norm", c),
                            MultiHeadAttention::create(store, p + ".cross_attn", c, config.heads, rng),
                            LayerNorm::create(store, p + ".cross_norm", c),
                            FeedForward::create(store, p + ".ffn", c, config.hidden_dim(), rng)});
  }
  for (std::size_t i = 0; i < config.tdtd_layers; ++i) {
    const std::string p = "temporal.tdtd." + std::to_string(i);
    tdtd_.push_back(DecoderLayer{
        MultiHeadAttention::create(store, p + ".self_attn", c, config.heads, rng),
        LayerNorm::create(store, p + ".self_norm", c),
        DeformableAttention::create(store, p + ".cross_attn", c, config.heads, config.points, 1,
                                    rng),
        LayerNorm::create(store, p + ".cross_norm", c),
        FeedForward::create(store, p + ".ffn", c, config.hidden_dim(), rng)});
  }
}

ClipOutput TransVOD::forward(std::span<const Frame> frames, std::size_t current) const {
  std::vector<SpatialOutput> spatial;
  spatial.reserve(frames.size());
  for (const auto& f : frames) spatial.push_back(spatial_.forward(f));
  return forward_from_spatial(std::move(spatial), current);
}

ClipOutput TransVOD::forward_from_spatial(std::vector<SpatialOutput> spatial,
                                          std::size_t current) const {
  if (spatial.size() != config_.clip_frames()) {
    throw std::invalid_argument("clip has " + std::to_string(spatial.size()) +
                                " frames, model expects " + std::to_string(config_.clip_frames()));
  }
  if (current >= spatial.size()) {
    throw std::invalid_argument("current frame index " + std::to_string(current) +
                                " outside the clip");
  }
  ClipOutput out;
  out.current = current;
  out.spatial = std::move(spatial);

  std::vector<MemoryEncoding> memories;
  for (const auto& s : out.spatial) memories.push_back(s.memory);
  out.fused = tdte(memories, tdte_, frame_embedding_);

  std::vector<Var> contents, keys;
  for (std::size_t f = 0; f < out.spatial.size(); ++f) {
    if (f == current) continue;
    Var content = out.spatial[f].layers.back().content;
    contents.push_back(content);
    keys.push_back(frame_embedding_.defined() ? add_table_row(content, frame_embedding_, f)
                                              : content);
    for (std::size_t q = 0; q < content.dim(0); ++q) {
      out.pool.frame.push_back(f);
      out.pool.query.push_back(q);
    }
  }
  // A single-frame clip has no reference queries; the pool stays undefined.
  if (!contents.empty()) {
    out.pool.content = concat(contents, 0);
    out.pool.keys = concat(keys, 0);
  }

  const QuerySet& current_queries = out.spatial[current].layers.back();
  if (!tqe_.empty() && !contents.empty()) {
    out.score_logits = tqe_logits(out.pool.content, scoring_);
    out.confidences = confidences_from_logits(out.score_logits.value());
  }
  out.temporal_queries =
      tqe(current_queries, out.pool, config_.tqe_schedule, tqe_, out.confidences);

  MemoryEncoding fused_current{out.fused.frames[current], out.spatial[current].memory.positional,
                               current};
  auto decoded = tdtd(out.temporal_queries, fused_current, tdtd_);
  const auto& heads = spatial_.heads();
  if (decoded.empty()) {
    out.temporal_predictions.push_back(predict_heads(out.temporal_queries, heads));
  } else {
    for (const auto& q : decoded) out.temporal_predictions.push_back(predict_heads(q, heads));
  }
  return out;
}

}  // namespace stvod

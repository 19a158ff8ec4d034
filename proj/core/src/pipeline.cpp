#include "stvod/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace stvod {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

fs::path split_dir(const fs::path& data, const std::string& split) {
  if (fs::is_directory(data / split / "clips")) return data / split;
  if (fs::is_directory(data / "clips")) return data;
  throw DataError("no dataset found at " + data.string() + " (expected " + split +
                  "/clips or clips/)");
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

void check_finite(const Var& loss, const std::string& where) {
  if (!std::isfinite(loss.value().item())) throw NumericalError("non-finite loss at " + where);
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  net = std::make_unique<TransVOD>(store, config, rng);
}

std::vector<std::string> spatial_prefixes() { return {"spatial.", "heads."}; }
std::vector<std::string> temporal_prefixes() { return {"temporal."}; }

std::vector<Frame> clip_frames(const Clip& clip) {
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < clip.frames.size(); ++i) frames.push_back(Frame{clip.frames[i], i});
  return frames;
}

LossReport spatial_loss(const SpatialOutput& out, const std::vector<GroundTruthBox>& gts,
                        const RunConfig& config, Assignment* final_assignment) {
  const LossWeights w = LossWeights::from(config.loss);
  LossReport report;
  std::vector<Var> terms;
  const std::size_t n = out.predictions.size();
  for (std::size_t i = config.loss.aux ? 0 : n - 1; i < n; ++i) {
    const auto& p = out.predictions[i];
    LossTerms t = detection_loss(p.logits, p.boxes, gts, w);
    terms.push_back(t.total);
    if (i + 1 == n) {
      report.cls = t.cls;
      report.l1 = t.l1;
      report.giou = t.giou;
      if (final_assignment) *final_assignment = t.assignment;
    }
  }
  report.total = add_n(terms);
  report.spatial = report.total.value().item();
  return report;
}

LossReport clip_loss(const ClipOutput& out, const Clip& clip, const RunConfig& config,
                     bool include_spatial) {
  const LossWeights w = LossWeights::from(config.loss);
  LossReport report;
  std::vector<Var> terms;

  std::vector<Assignment> spatial_assignments(out.spatial.size());
  std::vector<Var> spatial_terms;
  for (std::size_t f = 0; f < out.spatial.size(); ++f) {
    // Reference-frame matchings are needed for the scoring loss either way.
    if (!include_spatial && f == out.current) continue;
    LossReport s = spatial_loss(out.spatial[f], clip.annotations[f], config, &spatial_assignments[f]);
    spatial_terms.push_back(s.total);
  }
  if (include_spatial && config.loss.spatial_weight > 0) {
    Var mean_spatial = scale(add_n(spatial_terms), 1.0 / static_cast<double>(spatial_terms.size()));
    report.spatial = mean_spatial.value().item();
    terms.push_back(scale(mean_spatial, config.loss.spatial_weight));
  }

  const auto& gts = clip.annotations[out.current];
  const std::size_t n = out.temporal_predictions.size();
  std::vector<Var> temporal_terms;
  for (std::size_t i = config.loss.aux ? 0 : n - 1; i < n; ++i) {
    const auto& p = out.temporal_predictions[i];
    LossTerms t = detection_loss(p.logits, p.boxes, gts, w);
    temporal_terms.push_back(t.total);
    if (i + 1 == n) {
      report.cls = t.cls;
      report.l1 = t.l1;
      report.giou = t.giou;
    }
  }
  Var temporal = add_n(temporal_terms);
  report.temporal = temporal.value().item();
  terms.push_back(scale(temporal, config.loss.temporal_weight));

  if (out.score_logits.defined() && config.loss.score_weight > 0) {
    const std::size_t k = out.score_logits.dim(1);
    Tensor targets(out.score_logits.shape(), 0.0);
    std::size_t ref_gts = 0;
    for (std::size_t row = 0; row < out.pool.size(); ++row) {
      const std::size_t f = out.pool.frame[row], q = out.pool.query[row];
      for (const auto& [pred, g] : spatial_assignments[f].pairs) {
        if (pred == q) targets[row * k + clip.annotations[f][g].class_id] = 1.0;
      }
    }
    for (std::size_t f = 0; f < out.spatial.size(); ++f) {
      if (f != out.current) ref_gts += clip.annotations[f].size();
    }
    Var score = scale(sigmoid_focal_loss(out.score_logits, targets, w.focal_alpha, w.focal_gamma),
                      1.0 / static_cast<double>(std::max<std::size_t>(1, ref_gts)));
    report.score = score.value().item();
    terms.push_back(scale(score, config.loss.score_weight));
  }
  report.total = add_n(terms);
  return report;
}

void warm_start_temporal(ParameterStore& store, const ModelConfig& config) {
  const std::string src = "spatial.decoder." + std::to_string(config.decoder_layers - 1) + ".";
  auto copy = [&](const std::string& dst_prefix, const std::vector<std::string>& blocks) {
    for (const auto& p : store.all()) {
      if (p.name.rfind(src, 0) != 0) continue;
      const std::string rest = p.name.substr(src.size());
      const bool wanted = std::any_of(blocks.begin(), blocks.end(), [&](const std::string& b) {
        return rest.rfind(b, 0) == 0;
      });
      if (!wanted) continue;
      Parameter& dst = store.get(dst_prefix + rest);
      if (dst.var.shape() != p.var.shape()) {
        throw ShapeError("warm start: " + dst.name + " " + shape_to_string(dst.var.shape()) +
                         " vs " + p.name + " " + shape_to_string(p.var.shape()));
      }
      dst.var.mutable_value() = p.var.value();
    }
  };
  for (std::size_t i = 0; i < config.tdtd_layers; ++i) {
    copy("temporal.tdtd." + std::to_string(i) + ".", {""});
  }
  for (std::size_t i = 0; i < config.tqe_layers; ++i) {
    copy("temporal.tqe." + std::to_string(i) + ".", {"self_attn.", "self_norm.", "ffn."});
  }
}

TrainSummary train(Model& model, const RunConfig& config, const std::vector<Clip>& clips,
                   const TrainOptions& options) {
  config.validate();
  if (clips.empty()) throw DataError("training set is empty");
  for (const auto& c : clips) {
    if (c.frames.size() != config.model.clip_frames()) {
      throw DataError("clip with " + std::to_string(c.frames.size()) + " frames; model expects " +
                      std::to_string(config.model.clip_frames()));
    }
  }
  const bool run_spatial = options.stage == "spatial" || options.stage == "both";
  const bool run_temporal = options.stage == "temporal" || options.stage == "both";
  if (!run_spatial && !run_temporal) {
    throw ConfigError("unknown stage '" + options.stage + "' (spatial, temporal or both)");
  }
  const std::string hash = model_hash(config.model);
  // Temporal weights are worth keeping only when they were trained.
  bool temporal_trained = false;
  if (!options.init.empty()) {
    load_checkpoint(options.init, model.store, hash);
    temporal_trained = read_checkpoint_info(options.init).stage != "spatial";
  }

  std::ofstream log_file;
  if (!options.out.empty()) {
    fs::create_directories(options.out);
    log_file.open(options.out / "train_log.jsonl");
  }
  auto emit = [&](const json& record) {
    if (log_file.is_open()) log_file << record.dump() << "\n";
    if (options.on_log) options.on_log(record);
  };
  auto record_of = [&](const std::string& stage, std::size_t epoch, std::size_t step,
                       const LossReport& r, const AdamW& opt, double grad_norm) {
    return json{{"stage", stage},          {"epoch", epoch},
                {"step", step},            {"loss", r.total.value().item()},
                {"cls", r.cls},            {"l1", r.l1},
                {"giou", r.giou},          {"spatial", r.spatial},
                {"temporal", r.temporal},  {"score", r.score},
                {"grad_norm", grad_norm},  {"lr", opt.groups().back().lr},
                {"lr_backbone", opt.groups().front().lr}, {"seed", config.seed}};
  };

  TrainSummary summary;
  std::mt19937_64 order_rng(config.seed ^ 0x5eedULL);
  std::size_t global_step = 0;

  if (run_spatial) {
    for (const auto& prefix : spatial_prefixes()) model.store.set_trainable(prefix, true);
    AdamW opt = make_optimizer(model.store, config.optim, spatial_prefixes());
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t c = 0; c < clips.size(); ++c) {
      if (config.train.spatial_frames == "current") {
        items.emplace_back(c, clips[c].current_index);
      } else {
        for (std::size_t f = 0; f < clips[c].frames.size(); ++f) items.emplace_back(c, f);
      }
    }
    for (std::size_t epoch = 0; epoch < config.train.spatial_epochs; ++epoch) {
      if (epoch == config.train.spatial_decay_epoch && epoch > 0) opt.scale_lr(config.optim.decay_factor);
      for (std::size_t idx : shuffled(items.size(), order_rng)) {
        const auto [c, f] = items[idx];
        model.store.zero_grad();
        SpatialOutput out = model.net->spatial().forward(Frame{clips[c].frames[f], f});
        LossReport r = spatial_loss(out, clips[c].annotations[f], config);
        check_finite(r.total, "spatial step " + std::to_string(summary.spatial_steps));
        backward(r.total);
        const double norm = opt.step();
        if (summary.spatial_steps % std::max<std::size_t>(1, config.train.log_every) == 0) {
          emit(record_of("spatial", epoch, summary.spatial_steps, r, opt, norm));
        }
        summary.last_loss = r.total.value().item();
        ++summary.spatial_steps;
        ++global_step;
      }
    }
    summary.stage = "spatial";
    if (!options.out.empty()) {
      save_checkpoint(options.out / "checkpoint_spatial", model.store, config, global_step, "spatial");
    }
  }

  if (run_temporal) {
    if (config.train.temporal_warm_start && !temporal_trained) {
      warm_start_temporal(model.store, config.model);
    }
    std::vector<std::string> prefixes = temporal_prefixes();
    for (const auto& prefix : spatial_prefixes()) {
      model.store.set_trainable(prefix, !options.freeze_spatial);
      if (!options.freeze_spatial) prefixes.push_back(prefix);
    }
    AdamW opt = make_optimizer(model.store, config.optim, prefixes);
    for (std::size_t epoch = 0; epoch < config.train.temporal_epochs; ++epoch) {
      if (epoch == config.train.temporal_decay_epoch && epoch > 0) opt.scale_lr(config.optim.decay_factor);
      for (std::size_t c : shuffled(clips.size(), order_rng)) {
        model.store.zero_grad();
        const auto frames = clip_frames(clips[c]);
        ClipOutput out = model.net->forward(frames, clips[c].current_index);
        LossReport r = clip_loss(out, clips[c], config, !options.freeze_spatial);
        check_finite(r.total, "temporal step " + std::to_string(summary.temporal_steps));
        backward(r.total);
        const double norm = opt.step();
        if (summary.temporal_steps % std::max<std::size_t>(1, config.train.log_every) == 0) {
          emit(record_of("temporal", epoch, summary.temporal_steps, r, opt, norm));
        }
        summary.last_loss = r.total.value().item();
        ++summary.temporal_steps;
        ++global_step;
      }
    }
    for (const auto& prefix : spatial_prefixes()) model.store.set_trainable(prefix, true);
    summary.stage = "temporal";
  }
  if (!options.out.empty()) {
    save_checkpoint(options.out / "checkpoint", model.store, config, global_step, summary.stage);
  }
  return summary;
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "spatial") return EvalMode::spatial;
  if (name == "temporal") return EvalMode::temporal;
  throw ConfigError("unknown eval mode '" + name + "' (spatial or temporal)");
}

std::vector<ScoredBox> head_detections(const HeadOutput& out) {
  std::vector<ScoredBox> boxes;
  for (const auto& d : to_detections(out)) boxes.push_back(ScoredBox{d.label(), d.score(), d.box});
  return boxes;
}

Evaluation evaluate(const Model& model, const std::vector<Clip>& clips, EvalMode mode) {
  NoGradGuard guard;
  Evaluation ev;
  std::vector<std::vector<ScoredBox>> dets;
  std::vector<std::vector<GroundTruthBox>> gts;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const auto& clip = clips[c];
    const std::size_t cur = clip.current_index;
    HeadOutput head;
    if (mode == EvalMode::spatial) {
      head = model.net->spatial().forward(Frame{clip.frames[cur], cur}).predictions.back();
    } else {
      head = model.net->forward(clip_frames(clip), cur).final_prediction();
    }
    ev.detections.push_back(ClipDetections{c, cur, head_detections(head)});
    dets.push_back(ev.detections.back().boxes);
    gts.push_back(clip.annotations[cur]);
  }
  ev.result = evaluate_map(dets, gts, model.net->config().num_classes);
  return ev;
}

std::array<double, 3> class_color(std::size_t class_id) {
  static const std::array<std::array<double, 3>, 6> palette{{{1.0, 0.2, 0.2},
                                                             {0.2, 1.0, 0.2},
                                                             {0.3, 0.5, 1.0},
                                                             {1.0, 1.0, 0.2},
                                                             {1.0, 0.3, 1.0},
                                                             {0.2, 1.0, 1.0}}};
  return palette[class_id % palette.size()];
}

Tensor draw_boxes(const Tensor& frame, const std::vector<ScoredBox>& boxes) {
  Tensor out = frame;
  const long h = static_cast<long>(frame.dim(1)), w = static_cast<long>(frame.dim(2));
  for (const auto& b : boxes) {
    const BoxCorners c = box_cs_to_corners(b.box);
    const long x0 = std::clamp(std::lround(c.x1 * static_cast<double>(w)), 0L, w - 1);
    const long x1 = std::clamp(std::lround(c.x2 * static_cast<double>(w)) - 1, 0L, w - 1);
    const long y0 = std::clamp(std::lround(c.y1 * static_cast<double>(h)), 0L, h - 1);
    const long y1 = std::clamp(std::lround(c.y2 * static_cast<double>(h)) - 1, 0L, h - 1);
    const auto color = class_color(b.class_id);
    auto put = [&](long y, long x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out[(ch * static_cast<std::size_t>(h) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(w) +
            static_cast<std::size_t>(x)] = color[ch];
      }
    };
    for (long x = x0; x <= x1; ++x) {
      put(y0, x);
      put(y1, x);
    }
    for (long y = y0; y <= y1; ++y) {
      put(y, x0);
      put(y, x1);
    }
  }
  return out;
}

std::uint64_t clip_seed(const RunConfig& config, bool validation, std::size_t index) {
  return (config.seed << 32) + (validation ? config.data.val_seed_offset : 0) + index;
}

std::vector<Clip> generate_split(const RunConfig& config, bool validation) {
  const std::size_t n = validation ? config.data.val_clips : config.data.train_clips;
  const double p = validation ? config.data.val_degradation_prob : config.data.degradation_prob;
  std::vector<Clip> clips;
  for (std::size_t i = 0; i < n; ++i) clips.push_back(generate_clip(config.data, clip_seed(config, validation, i), p));
  return clips;
}

void run_generate(const RunConfig& config, const fs::path& out) {
  config.validate();
  if (config.data.train_clips > config.data.val_seed_offset) {
    throw ConfigError("data.train_clips exceeds data.val_seed_offset; splits would overlap");
  }
  write_dataset(out / "train", generate_split(config, false));
  write_dataset(out / "val", generate_split(config, true));
  std::ofstream(out / "config.txt") << to_text(config);
  write_json(out / "run.json", json{{"command", "generate"},
                                    {"seed", config.seed},
                                    {"train_clips", config.data.train_clips},
                                    {"val_clips", config.data.val_clips},
                                    {"outputs", {"train/clips", "val/clips", "config.txt"}}});
}

TrainSummary run_train(const RunConfig& config, const fs::path& data, const fs::path& out,
                       const std::string& stage, bool freeze_spatial, const fs::path& init) {
  config.validate();
  const fs::path train_dir = split_dir(data, "train");
  const auto clips = read_dataset(train_dir, config.train.max_train_clips);
  Model model(config.model, config.seed);
  TrainOptions options;
  options.stage = stage;
  options.freeze_spatial = freeze_spatial || config.train.freeze_spatial;
  options.out = out;
  options.init = init;
  fs::path warm = init;
  if (stage == "temporal" && init.empty()) {
    if (!fs::exists(out / "checkpoint_spatial" / "manifest.json")) {
      throw ConfigError("stage 'temporal' needs a spatial checkpoint: pass --init or run the "
                        "spatial stage into the same --out first");
    }
    options.init = warm = out / "checkpoint_spatial";
  }
  const auto start = std::chrono::steady_clock::now();
  TrainSummary summary = train(model, config, clips, options);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(out / "run.json", json{{"command", "train"},
                                    {"stage", stage},
                                    {"seed", config.seed},
                                    {"config_hash", model_hash(config.model)},
                                    {"data", train_dir.string()},
                                    {"clips", clips.size()},
                                    {"init", warm.string()},
                                    {"spatial_steps", summary.spatial_steps},
                                    {"temporal_steps", summary.temporal_steps},
                                    {"last_loss", summary.last_loss},
                                    {"seconds", seconds},
                                    {"outputs", {"train_log.jsonl", "checkpoint"}}});
  return summary;
}

Evaluation run_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
                    const EvalOptions& options) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  RunConfig config = info.config;
  if (!options.config.empty()) {
    const RunConfig requested = load_config(options.config.string());
    if (model_hash(requested.model) != info.config_hash) {
      throw ConfigError("config " + options.config.string() + " describes model " +
                        model_hash(requested.model) + " but checkpoint " + checkpoint.string() +
                        " holds model " + info.config_hash + "; refusing to evaluate");
    }
  }
  Model model(config.model, config.seed);
  load_checkpoint(checkpoint, model.store, model_hash(config.model));
  std::string mode = options.mode;
  if (mode == "auto") mode = info.stage == "temporal" ? "temporal" : "spatial";
  const fs::path dir = split_dir(data, options.split);
  const auto clips = read_dataset(dir);
  Evaluation ev = evaluate(model, clips, parse_eval_mode(mode));

  fs::create_directories(out);
  if (options.overlays) fs::create_directories(out / "overlays");
  std::ofstream det(out / "detections.jsonl");
  const auto ids = list_clips(dir);
  for (const auto& cd : ev.detections) {
    std::vector<ScoredBox> drawn;
    for (const auto& b : cd.boxes) {
      const bool draw = b.score >= options.overlay_threshold;
      if (draw) drawn.push_back(b);
      det << json{{"clip", ids[cd.clip].filename().string()},
                  {"frame", cd.frame},
                  {"class_id", b.class_id},
                  {"score", b.score},
                  {"cx", b.box.cx},
                  {"cy", b.box.cy},
                  {"w", b.box.w},
                  {"h", b.box.h},
                  {"drawn", options.overlays && draw}}
                 .dump()
          << "\n";
    }
    if (options.overlays) {
      write_ppm(out / "overlays" / (ids[cd.clip].filename().string() + ".ppm"),
                draw_boxes(clips[cd.clip].frames[cd.frame], drawn));
    }
  }
  json ap = json::array();
  for (const auto& a : ev.result.ap) ap.push_back(a ? json(*a) : json(nullptr));
  const json metrics{{"map", ev.result.map ? json(*ev.result.map) : json(nullptr)},
                     {"ap", ap},
                     {"true_positives", ev.result.true_positives},
                     {"false_positives", ev.result.false_positives},
                     {"false_negatives", ev.result.false_negatives},
                     {"mode", mode},
                     {"clips", clips.size()}};
  write_json(out / "metrics.json", metrics);
  write_json(out / "run.json", json{{"command", "eval"},
                                    {"checkpoint", checkpoint.string()},
                                    {"config_hash", info.config_hash},
                                    {"data", dir.string()},
                                    {"seed", config.seed},
                                    {"metrics", metrics},
                                    {"outputs", {"metrics.json", "detections.jsonl"}}});
  return ev;
}

}  // namespace stvod

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "stvod/checkpoint.hpp"
#include "stvod/dataset_io.hpp"
#include "stvod/evaluation.hpp"
#include "stvod/matching.hpp"
#include "stvod/optimizer.hpp"
#include "stvod/temporal.hpp"

namespace stvod {

/// Parameters plus the network built over them; parameter initialization is
/// a pure function of (model config, seed).
struct Model {
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ParameterStore store;
  std::unique_ptr<TransVOD> net;
};

/// Parameter name prefixes trained by the spatial stage.
std::vector<std::string> spatial_prefixes();
/// Everything else (temporal modules).
std::vector<std::string> temporal_prefixes();

std::vector<Frame> clip_frames(const Clip& clip);

struct LossReport {
  Var total;
  double cls = 0, l1 = 0, giou = 0;  // final prediction of the supervised output
  double spatial = 0, temporal = 0, score = 0;
};

/// Set loss over every decoder layer (only the last without aux loss).
/// `final_assignment` receives the matching of the last layer.
LossReport spatial_loss(const SpatialOutput& out, const std::vector<GroundTruthBox>& gts,
                        const RunConfig& config, Assignment* final_assignment = nullptr);

/// Joint temporal objective: averaged spatial loss over the clip frames,
/// temporal decoder loss on the current frame and the query-scoring loss on
/// reference frames, each with its configured weight.
LossReport clip_loss(const ClipOutput& out, const Clip& clip, const RunConfig& config,
                     bool include_spatial = true);

/// Copies the last spatial decoder layer into every temporal decoder layer
/// and its self-attention, norm and FFN into every query-enhancement layer.
void warm_start_temporal(ParameterStore& store, const ModelConfig& config);

struct TrainOptions {
  std::string stage = "both";  // spatial | temporal | both
  bool freeze_spatial = false;
  std::filesystem::path out;   // empty: no files written
  std::filesystem::path init;  // checkpoint to warm-start from
  /// Receives each JSONL log record.
  std::function<void(const nlohmann::json&)> on_log;
};

struct TrainSummary {
  std::size_t spatial_steps = 0;
  std::size_t temporal_steps = 0;
  double last_loss = 0.0;
  std::string stage;
};

/// Stage 1 trains the spatial detector on single frames; stage 2 trains the
/// whole model on clips (spatial part warm-started). Writes train_log.jsonl
/// and checkpoints under options.out when set.
TrainSummary train(Model& model, const RunConfig& config, const std::vector<Clip>& clips,
                   const TrainOptions& options);

enum class EvalMode { spatial, temporal };
EvalMode parse_eval_mode(const std::string& name);

struct ClipDetections {
  std::size_t clip = 0;
  std::size_t frame = 0;
  std::vector<ScoredBox> boxes;
};

struct Evaluation {
  EvalResult result;
  std::vector<ClipDetections> detections;
};

/// One detection per query on each clip's current frame: argmax class, score
/// = max class sigmoid. No suppression or linking.
std::vector<ScoredBox> head_detections(const HeadOutput& out);
Evaluation evaluate(const Model& model, const std::vector<Clip>& clips, EvalMode mode);

/// Draws one-pixel outlines of `boxes` into a copy of `frame`.
Tensor draw_boxes(const Tensor& frame, const std::vector<ScoredBox>& boxes);
std::array<double, 3> class_color(std::size_t class_id);

// CLI-level operations; each writes run.json under its output directory.
void run_generate(const RunConfig& config, const std::filesystem::path& out);
TrainSummary run_train(const RunConfig& config, const std::filesystem::path& data,
                       const std::filesystem::path& out, const std::string& stage,
                       bool freeze_spatial, const std::filesystem::path& init = {});
struct EvalOptions {
  bool overlays = false;
  double overlay_threshold = 0.5;
  std::string mode = "auto";  // auto | spatial | temporal
  std::string split = "val";
  /// When set, its model section must hash to the checkpoint's.
  std::filesystem::path config;
};
Evaluation run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                    const std::filesystem::path& out, const EvalOptions& options);

/// Clip seed for index i of a split; train and val ranges are disjoint.
std::uint64_t clip_seed(const RunConfig& config, bool validation, std::size_t index);
std::vector<Clip> generate_split(const RunConfig& config, bool validation);

}  // namespace stvod

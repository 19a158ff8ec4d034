#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stvod {

/// Invalid or unreadable configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-layer top-k keep counts for temporal query selection; must be
/// non-increasing and positive.
struct QuerySelectionSchedule {
  std::vector<std::size_t> keep;

  /// Throws ConfigError when empty, non-positive or increasing.
  static QuerySelectionSchedule checked(std::vector<std::size_t> keep);
  void validate(std::size_t pool_size) const;
};

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t queries = 30;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  std::size_t num_classes = 4;
  std::vector<std::size_t> backbone_widths{16, 32, 64};
  /// 3x3 convs per backbone stage (the first one strided).
  std::size_t backbone_stage_convs = 1;
  std::size_t norm_groups = 4;
  std::size_t tqe_layers = 3;
  std::size_t tdte_layers = 1;
  std::size_t tdtd_layers = 1;
  QuerySelectionSchedule tqe_schedule{{16, 10, 6}};
  std::size_t reference_frames = 4;
  bool frame_embedding = true;
  /// Box centers regressed relative to the query reference point.
  bool box_relative_to_reference = false;

  std::size_t hidden_dim() const { return ffn_dim ? ffn_dim : 4 * dim; }
  std::size_t stride() const { return std::size_t{1} << backbone_widths.size(); }
  std::size_t clip_frames() const { return reference_frames + 1; }
};

struct LossConfig {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double spatial_weight = 1.0;
  double temporal_weight = 1.0;
  double score_weight = 1.0;
  bool aux = true;
};

struct OptimConfig {
  double lr = 2e-4;
  double lr_backbone = 2e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.1;
  double decay_factor = 0.1;
};

struct TrainConfig {
  std::size_t spatial_epochs = 10;
  std::size_t spatial_decay_epoch = 8;
  std::size_t temporal_epochs = 10;
  std::size_t temporal_decay_epoch = 8;
  /// "current" trains the spatial stage on current frames only, "all" on
  /// every frame of every clip.
  std::string spatial_frames = "all";
  bool freeze_spatial = false;
  /// Starting the temporal stage from spatial-only weights copies the last
  /// spatial decoder layer into the temporal decoder layers (and its shared
  /// sub-blocks into the query-enhancement layers) instead of random init.
  bool temporal_warm_start = true;
  std::size_t log_every = 1;
  std::size_t max_train_clips = 0;  // 0 means all
};

struct DataConfig {
  std::size_t frame_size = 64;
  std::size_t clip_length = 5;
  std::size_t current_index = 2;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double min_object_size = 10.0;
  double max_object_size = 22.0;
  double max_speed = 2.5;
  /// Peak sideways displacement of sinusoidal trajectories, in pixels.
  double max_wobble = 2.0;
  /// Comma-separated subset of motion_blur, occlusion, defocus.
  std::string degradation_kinds = "motion_blur,occlusion,defocus";
  double blur_length = 9.0;
  double defocus_radius = 3.0;
  double occlusion_min_fraction = 0.4;
  double occlusion_max_fraction = 0.6;
  double degradation_prob = 0.5;
  double val_degradation_prob = 0.5;
  std::size_t train_clips = 200;
  std::size_t val_clips = 50;
  std::uint64_t val_seed_offset = 1'000'000;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;

  /// Cross-field checks (C % M == 0, schedule shape, frame counts).
  void validate() const;
};

/// Parses `key = value` lines with dotted keys; '#' starts a comment.
/// Unknown keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Applies one override (same syntax as a config line).
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);
/// FNV-1a hash over the model section, which fixes parameter shapes.
std::string model_hash(const ModelConfig& model);

/// Reads STVOD_SEED when set.
void apply_env_overrides(RunConfig& config);

}  // namespace stvod

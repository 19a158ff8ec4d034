#include "stvod/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace stvod {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size() || x < 0) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(key, member)                                                  \
  {key, Field{[](RunConfig& c, const std::string& v) { c.member = to_size(v); }, \
              [](const RunConfig& c) { return std::to_string(c.member); }}}
#define DOUBLE_FIELD(key, member)                                                  \
  {key, Field{[](RunConfig& c, const std::string& v) { c.member = to_double(v); }, \
              [](const RunConfig& c) { return fmt_double(c.member); }}}
#define BOOL_FIELD(key, member)                                                  \
  {key, Field{[](RunConfig& c, const std::string& v) { c.member = to_bool(v); }, \
              [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", Field{[](RunConfig& c, const std::string& v) { c.seed = to_size(v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }}},
      SIZE_FIELD("model.dim", model.dim),
      SIZE_FIELD("model.heads", model.heads),
      SIZE_FIELD("model.points", model.points),
      SIZE_FIELD("model.encoder_layers", model.encoder_layers),
      SIZE_FIELD("model.decoder_layers", model.decoder_layers),
      SIZE_FIELD("model.queries", model.queries),
      SIZE_FIELD("model.ffn_dim", model.ffn_dim),
      SIZE_FIELD("model.num_classes", model.num_classes),
      {"model.backbone_widths",
       Field{[](RunConfig& c, const std::string& v) { c.model.backbone_widths = to_list(v); },
             [](const RunConfig& c) { return fmt_list(c.model.backbone_widths); }}},
      SIZE_FIELD("model.backbone_stage_convs", model.backbone_stage_convs),
      SIZE_FIELD("model.norm_groups", model.norm_groups),
      SIZE_FIELD("model.tqe_layers", model.tqe_layers),
      SIZE_FIELD("model.tdte_layers", model.tdte_layers),
      SIZE_FIELD("model.tdtd_layers", model.tdtd_layers),
      {"model.tqe_schedule",
       Field{[](RunConfig& c, const std::string& v) {
               c.model.tqe_schedule = QuerySelectionSchedule::checked(to_list(v));
             },
             [](const RunConfig& c) { return fmt_list(c.model.tqe_schedule.keep); }}},
      SIZE_FIELD("model.reference_frames", model.reference_frames),
      BOOL_FIELD("model.frame_embedding", model.frame_embedding),
      BOOL_FIELD("model.box_relative_to_reference", model.box_relative_to_reference),
      DOUBLE_FIELD("loss.cls", loss.cls),
      DOUBLE_FIELD("loss.l1", loss.l1),
      DOUBLE_FIELD("loss.giou", loss.giou),
      DOUBLE_FIELD("loss.focal_alpha", loss.focal_alpha),
      DOUBLE_FIELD("loss.focal_gamma", loss.focal_gamma),
      DOUBLE_FIELD("loss.spatial_weight", loss.spatial_weight),
      DOUBLE_FIELD("loss.temporal_weight", loss.temporal_weight),
      DOUBLE_FIELD("loss.score_weight", loss.score_weight),
      BOOL_FIELD("loss.aux", loss.aux),
      DOUBLE_FIELD("optim.lr", optim.lr),
      DOUBLE_FIELD("optim.lr_backbone", optim.lr_backbone),
      DOUBLE_FIELD("optim.weight_decay", optim.weight_decay),
      DOUBLE_FIELD("optim.beta1", optim.beta1),
      DOUBLE_FIELD("optim.beta2", optim.beta2),
      DOUBLE_FIELD("optim.eps", optim.eps),
      DOUBLE_FIELD("optim.clip_norm", optim.clip_norm),
      DOUBLE_FIELD("optim.decay_factor", optim.decay_factor),
      SIZE_FIELD("train.spatial_epochs", train.spatial_epochs),
      SIZE_FIELD("train.spatial_decay_epoch", train.spatial_decay_epoch),
      SIZE_FIELD("train.temporal_epochs", train.temporal_epochs),
      SIZE_FIELD("train.temporal_decay_epoch", train.temporal_decay_epoch),
      {"train.spatial_frames",
       Field{[](RunConfig& c, const std::string& v) {
               if (v != "current" && v != "all") {
                 throw ConfigError("train.spatial_frames must be 'current' or 'all'");
               }
               c.train.spatial_frames = v;
             },
             [](const RunConfig& c) { return c.train.spatial_frames; }}},
      BOOL_FIELD("train.freeze_spatial", train.freeze_spatial),
      BOOL_FIELD("train.temporal_warm_start", train.temporal_warm_start),
      SIZE_FIELD("train.log_every", train.log_every),
      SIZE_FIELD("train.max_train_clips", train.max_train_clips),
      SIZE_FIELD("data.frame_size", data.frame_size),
      SIZE_FIELD("data.clip_length", data.clip_length),
      SIZE_FIELD("data.current_index", data.current_index),
      SIZE_FIELD("data.min_objects", data.min_objects),
      SIZE_FIELD("data.max_objects", data.max_objects),
      DOUBLE_FIELD("data.min_object_size", data.min_object_size),
      DOUBLE_FIELD("data.max_object_size", data.max_object_size),
      DOUBLE_FIELD("data.max_speed", data.max_speed),
      DOUBLE_FIELD("data.max_wobble", data.max_wobble),
      {"data.degradation_kinds",
       Field{[](RunConfig& c, const std::string& v) { c.data.degradation_kinds = v; },
             [](const RunConfig& c) { return c.data.degradation_kinds; }}},
      DOUBLE_FIELD("data.blur_length", data.blur_length),
      DOUBLE_FIELD("data.defocus_radius", data.defocus_radius),
      DOUBLE_FIELD("data.occlusion_min_fraction", data.occlusion_min_fraction),
      DOUBLE_FIELD("data.occlusion_max_fraction", data.occlusion_max_fraction),
      DOUBLE_FIELD("data.degradation_prob", data.degradation_prob),
      DOUBLE_FIELD("data.val_degradation_prob", data.val_degradation_prob),
      SIZE_FIELD("data.train_clips", data.train_clips),
      SIZE_FIELD("data.val_clips", data.val_clips),
      SIZE_FIELD("data.val_seed_offset", data.val_seed_offset),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

QuerySelectionSchedule QuerySelectionSchedule::checked(std::vector<std::size_t> keep) {
  QuerySelectionSchedule s{std::move(keep)};
  if (s.keep.empty()) throw ConfigError("query selection schedule is empty");
  for (std::size_t i = 0; i < s.keep.size(); ++i) {
    if (s.keep[i] == 0) throw ConfigError("query selection schedule entries must be positive");
    if (i > 0 && s.keep[i] > s.keep[i - 1]) {
      throw ConfigError("query selection schedule must be non-increasing, got " +
                        fmt_list(s.keep));
    }
  }
  return s;
}

void QuerySelectionSchedule::validate(std::size_t pool_size) const {
  checked(keep);
  if (keep.front() > pool_size) {
    throw ConfigError("query selection keeps " + std::to_string(keep.front()) +
                      " but only " + std::to_string(pool_size) + " reference queries exist");
  }
}

void RunConfig::validate() const {
  const auto& m = model;
  if (m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0) {
    throw ConfigError("model.dim must be divisible by model.heads");
  }
  if (m.dim % 4 != 0) throw ConfigError("model.dim must be divisible by 4");
  if (m.points == 0 || m.queries == 0 || m.num_classes == 0) {
    throw ConfigError("model.points, model.queries and model.num_classes must be positive");
  }
  if (m.decoder_layers == 0) throw ConfigError("model.decoder_layers must be at least 1");
  if (m.backbone_widths.empty()) throw ConfigError("model.backbone_widths is empty");
  if (m.backbone_stage_convs == 0) throw ConfigError("model.backbone_stage_convs must be >= 1");
  for (auto w : m.backbone_widths) {
    if (w == 0 || m.norm_groups == 0 || w % m.norm_groups != 0) {
      throw ConfigError("backbone widths must be divisible by model.norm_groups");
    }
  }
  if (m.dim % m.norm_groups != 0) throw ConfigError("model.dim must be divisible by norm_groups");
  if (m.reference_frames < 1) throw ConfigError("model.reference_frames must be at least 1");
  if (m.tqe_layers > 0) {
    if (m.tqe_schedule.keep.size() != m.tqe_layers) {
      throw ConfigError("model.tqe_schedule needs one entry per TQE layer");
    }
    m.tqe_schedule.validate(m.queries * m.reference_frames);
  }
  if (data.clip_length != m.clip_frames()) {
    throw ConfigError("data.clip_length must equal model.reference_frames + 1");
  }
  if (data.current_index >= data.clip_length) {
    throw ConfigError("data.current_index must lie inside the clip");
  }
  if (data.frame_size < m.stride()) throw ConfigError("data.frame_size smaller than stride");
  if (data.min_objects > data.max_objects) throw ConfigError("data.min_objects > max_objects");
  if (data.max_objects == 0 || data.clip_length == 0) {
    throw ConfigError("clips need at least one object and one frame");
  }
  if (data.min_object_size < 3 || data.max_object_size < data.min_object_size ||
      data.max_object_size + 4 > static_cast<double>(data.frame_size)) {
    throw ConfigError("object sizes must satisfy 3 <= min <= max <= frame_size - 4");
  }
  if (data.occlusion_min_fraction < 0 || data.occlusion_max_fraction > 0.6 ||
      data.occlusion_min_fraction > data.occlusion_max_fraction) {
    throw ConfigError("occlusion fractions must satisfy 0 <= min <= max <= 0.6");
  }
  for (double p : {data.degradation_prob, data.val_degradation_prob}) {
    if (p < 0 || p > 1) throw ConfigError("degradation probabilities must lie in [0,1]");
  }
  if (loss.focal_alpha <= 0.0 || loss.focal_alpha >= 1.0 || loss.focal_gamma < 0.0) {
    throw ConfigError("focal alpha must lie in (0,1) and gamma be nonnegative");
  }
  if (loss.cls < 0 || loss.l1 < 0 || loss.giou < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

std::string model_hash(const ModelConfig& model) {
  RunConfig tmp;
  tmp.model = model;
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, field] : fields()) {
    if (name.rfind("model.", 0) != 0) continue;
    for (char ch : name + "=" + field.get(tmp) + ";") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void apply_env_overrides(RunConfig& config) {
  if (const char* s = std::getenv("STVOD_SEED"); s && *s) {
    try {
      config.seed = to_size(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("STVOD_SEED: ") + e.what());
    }
  }
}

}  // namespace stvod

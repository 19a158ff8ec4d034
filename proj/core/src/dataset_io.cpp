#include "stvod/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

namespace stvod {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(std::size_t i) {
  std::ostringstream out;
  out << "frame_" << std::setw(4) << std::setfill('0') << i << ".ppm";
  return out.str();
}

// Next header token of a PPM stream, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in, const fs::path& path) {
  std::string token;
  while (true) {
    const int c = in.get();
    if (c == EOF) throw DataError(path.string() + ": truncated PPM header");
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
}

std::size_t ppm_number(std::istream& in, const fs::path& path) {
  const std::string t = ppm_token(in, path);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(c); })) {
    throw DataError(path.string() + ": bad PPM header field '" + t + "'");
  }
  return std::stoul(t);
}

}  // namespace

std::string clip_id(std::size_t index) {
  std::ostringstream out;
  out << std::setw(4) << std::setfill('0') << index;
  return out.str();
}

void write_ppm(const fs::path& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw ShapeError("PPM frames must be [3,H,W], got " + shape_to_string(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(frame[(c * h + y) * w + x], 0.0, 1.0);
        bytes[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (ppm_token(in, path) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = ppm_number(in, path);
  const std::size_t h = ppm_number(in, path);
  const std::size_t maxval = ppm_number(in, path);
  if (w == 0 || h == 0) throw DataError(path.string() + ": empty image");
  if (maxval != 255) throw DataError(path.string() + ": only maxval 255 is supported");
  std::vector<unsigned char> bytes(3 * h * w);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  Tensor frame(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        frame[(c * h + y) * w + x] = static_cast<double>(bytes[(y * w + x) * 3 + c]) / 255.0;
      }
    }
  }
  return frame;
}

void write_clip(const fs::path& dir, const Clip& clip) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clip.frames.size(); ++i) write_ppm(dir / frame_name(i), clip.frames[i]);
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw DataError("cannot write " + (dir / "annotations.jsonl").string());
  for (std::size_t i = 0; i < clip.annotations.size(); ++i) {
    json objects = json::array();
    for (const auto& g : clip.annotations[i]) {
      objects.push_back({{"class_id", g.class_id},
                         {"cx", g.box.cx},
                         {"cy", g.box.cy},
                         {"w", g.box.w},
                         {"h", g.box.h}});
    }
    ann << json{{"frame", i}, {"objects", objects}}.dump() << "\n";
  }
  json tags = json::array();
  for (auto d : clip.degradations) tags.push_back(degradation_name(d));
  const json meta{{"seed", clip.seed},
                  {"current_index", clip.current_index},
                  {"frames", clip.frames.size()},
                  {"degradations", tags}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

std::vector<GroundTruthBox> parse_annotation_line(const std::string& line, std::size_t line_no,
                                                  std::size_t expected_frame) {
  const std::string where = "annotations.jsonl line " + std::to_string(line_no) + ": ";
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  try {
    if (record.at("frame").get<std::size_t>() != expected_frame) {
      throw DataError(where + "expected frame " + std::to_string(expected_frame));
    }
    std::vector<GroundTruthBox> boxes;
    for (const auto& o : record.at("objects")) {
      GroundTruthBox g{o.at("class_id").get<std::size_t>(),
                       BoxCS{o.at("cx").get<double>(), o.at("cy").get<double>(),
                             o.at("w").get<double>(), o.at("h").get<double>()}};
      if (!g.box.valid()) throw DataError(where + "box outside (0,1): " + to_string(g.box));
      boxes.push_back(g);
    }
    return boxes;
  } catch (const json::exception& e) {
    throw DataError(where + "bad record (" + e.what() + ")");
  }
}

Clip read_clip(const fs::path& dir) {
  Clip clip;
  json meta;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("missing " + (dir / "meta.json").string());
    try {
      meta = json::parse(in);
      clip.seed = meta.at("seed").get<std::uint64_t>();
      clip.current_index = meta.at("current_index").get<std::size_t>();
      for (const auto& t : meta.at("degradations")) {
        clip.degradations.push_back(parse_degradation(t.get<std::string>()));
      }
    } catch (const std::exception& e) {
      throw DataError((dir / "meta.json").string() + ": " + e.what());
    }
  }
  const std::size_t frames = meta.at("frames").get<std::size_t>();
  for (std::size_t i = 0; i < frames; ++i) clip.frames.push_back(read_ppm(dir / frame_name(i)));

  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw DataError("missing " + (dir / "annotations.jsonl").string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (clip.annotations.size() == frames) {
      throw DataError("annotations.jsonl line " + std::to_string(line_no) + ": more records than frames");
    }
    clip.annotations.push_back(parse_annotation_line(line, line_no, clip.annotations.size()));
  }
  if (clip.annotations.size() != frames) {
    throw DataError("annotations.jsonl line " + std::to_string(line_no + 1) + ": missing record for frame " +
                    std::to_string(clip.annotations.size()) + " of " + std::to_string(frames));
  }
  if (clip.degradations.size() != frames || clip.current_index >= frames) {
    throw DataError((dir / "meta.json").string() + ": inconsistent frame count or current index");
  }
  return clip;
}

void write_dataset(const fs::path& root, const std::vector<Clip>& clips) {
  for (std::size_t i = 0; i < clips.size(); ++i) write_clip(root / "clips" / clip_id(i), clips[i]);
}

std::vector<fs::path> list_clips(const fs::path& root) {
  const fs::path dir = root / "clips";
  if (!fs::is_directory(dir)) throw DataError("dataset has no clips directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("dataset is empty: " + dir.string());
  return out;
}

std::vector<Clip> read_dataset(const fs::path& root, std::size_t limit) {
  auto dirs = list_clips(root);
  if (limit && dirs.size() > limit) dirs.resize(limit);
  std::vector<Clip> clips;
  clips.reserve(dirs.size());
  for (const auto& d : dirs) clips.push_back(read_clip(d));
  return clips;
}

}  // namespace stvod

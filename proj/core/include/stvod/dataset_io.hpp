#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "stvod/synthetic.hpp"

namespace stvod {

/// Unreadable or malformed dataset files; messages name the file and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6, maxval 255) from a [3,H,W] tensor in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& frame);
Tensor read_ppm(const std::filesystem::path& path);

/// Directory layout: frame_NNNN.ppm, annotations.jsonl, meta.json.
void write_clip(const std::filesystem::path& dir, const Clip& clip);
Clip read_clip(const std::filesystem::path& dir);

std::vector<GroundTruthBox> parse_annotation_line(const std::string& line, std::size_t line_no,
                                                  std::size_t expected_frame);

/// Writes clips under root/clips/<id> with zero-padded ids.
void write_dataset(const std::filesystem::path& root, const std::vector<Clip>& clips);
/// Clip directories under root/clips, sorted by name. Throws DataError when
/// the directory is missing or empty.
std::vector<std::filesystem::path> list_clips(const std::filesystem::path& root);
std::vector<Clip> read_dataset(const std::filesystem::path& root, std::size_t limit = 0);

std::string clip_id(std::size_t index);

}  // namespace stvod

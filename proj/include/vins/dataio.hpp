#pragma once

// Frames, boxes, tracks and the synthetic sprite dataset.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vins/rng.hpp"
#include "vins/tensor.hpp"

namespace vins {

/// RGB frame, pixels stored (3, H, W) with values in [0, 1].
struct Frame {
  Tensor pixels;
  int index = 0;

  Frame() = default;
  Frame(Tensor px, int idx) : pixels(std::move(px)), index(idx) {}
  static Frame filled(int height, int width, double value, int index = 0);

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
  double& at(int c, int y, int x) { return pixels.at(c, y, x); }
  double at(int c, int y, int x) const { return pixels.at(c, y, x); }
  /// Throws ValidationError unless shape is (3, H>=8, W>=8) and values lie in [0, 1].
  void validate() const;
};

struct FrameSequence {
  std::vector<Frame> frames;
  double fps = 10.0;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  const Frame& operator[](std::size_t i) const { return frames[i]; }
  Frame& operator[](std::size_t i) { return frames[i]; }
  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
  void validate() const;
};

struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  bool intersects_frame(int height, int width) const {
    return x < width && y < height && right() > 0.0 && bottom() > 0.0;
  }
  bool inside_frame(int height, int width) const {
    return x >= 0.0 && y >= 0.0 && right() <= width && bottom() <= height;
  }
  bool contains_point(double px, double py) const {
    return px >= x && px <= right() && py >= y && py <= bottom();
  }
  static BoundingBox centered(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }
  /// Grows each side by `frac` of the corresponding extent.
  BoundingBox with_margin(double frac) const {
    return {x - frac * w, y - frac * h, w * (1.0 + 2.0 * frac), h * (1.0 + 2.0 * frac)};
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Track {
  int object_id = 0;
  std::map<int, BoundingBox> boxes;  // frame index -> box

  friend bool operator==(const Track&, const Track&) = default;
};

/// Size of the object/region patches every network operates on.
struct PatchSpec {
  int height = 128;
  int width = 64;

  double aspect() const { return static_cast<double>(width) / height; }
  void validate() const;
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// Dense binary array; 1 marks membership.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Per-frame object labels; 0 is background, otherwise the object id.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  BinaryMask mask_of(int object_id) const;
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// One annotated video: the handle every sampling routine works from.
struct VideoData {
  std::string name;
  FrameSequence video;
  std::vector<Track> tracks;
  BoundingBox roi;
  std::vector<LabelMap> labels;  // empty when no ground-truth masks exist

  const Track* find_track(int object_id) const;
  bool has_masks() const { return !labels.empty(); }
  /// Median height over every annotated box.
  double median_object_height() const;
};

struct Dataset {
  std::vector<VideoData> videos;
};

// --- annotations ----------------------------------------------------------

/// Parses `frame,id,x,y,w,h[,...]` lines. Blank lines and lines starting
/// with '#' are skipped; extra columns are ignored.
std::vector<Track> parse_annotations(std::istream& in);
std::vector<Track> load_annotations(const std::filesystem::path& path);
void write_annotations(std::ostream& out, std::span<const Track> tracks);
void save_annotations(const std::filesystem::path& path, std::span<const Track> tracks);

// --- resampling -----------------------------------------------------------

/// Bilinear sample of `src` (C, H, W) over `box`, producing (C, out_h, out_w).
/// Output pixel centres map linearly onto the box; samples outside the
/// source replicate the nearest edge pixel.
Tensor resample_bilinear(const Tensor& src, const BoundingBox& box, int out_h, int out_w);

Frame crop_patch(const Frame& frame, const BoundingBox& box, const PatchSpec& spec);

/// Nearest-neighbour crop of a mask; locations outside the mask read 0.
BinaryMask crop_mask(const BinaryMask& mask, const BoundingBox& box, const PatchSpec& spec);

// --- placement and trajectories ------------------------------------------

/// Random placement box with centre inside `roi`, height uniform in
/// [0.5, 1.5] * median_height and the patch aspect ratio.
BoundingBox sample_placement(const FrameSequence& scene, const BoundingBox& roi, double median_height,
                             const PatchSpec& spec, Rng& rng);
BoundingBox sample_placement(const FrameSequence& scene, const BoundingBox& roi, double median_height,
                             const PatchSpec& spec, std::uint64_t seed);

/// Scales a trajectory by s = target_height / traj[0].h, moving its first
/// centre to (anchor_cx, anchor_cy). Box sizes and per-step displacements
/// are both multiplied by s.
std::vector<BoundingBox> scale_trajectory(std::span<const BoundingBox> traj, double target_height,
                                          double anchor_cx, double anchor_cy);

// --- synthetic sprites ----------------------------------------------------

struct SpriteConfig {
  int n_videos = 8;
  int n_frames = 32;
  int frame_height = 96;
  int frame_width = 128;
  int n_objects = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Textured drifting backgrounds with walking-figure sprites on
/// linear-plus-sinusoid paths. Pixel values are multiples of 1/255 so the
/// dataset survives an 8-bit PNG round trip exactly.
Dataset generate_sprite_dataset(const SpriteConfig& config);

// --- on-disk layout -------------------------------------------------------

void write_png(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, int height, int width,
                    std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_gray_png(const std::filesystem::path& path, int& height, int& width);

std::string frame_filename(int index);

void save_frames(const std::filesystem::path& dir, const FrameSequence& seq);
FrameSequence load_frames(const std::filesystem::path& dir, double fps = 10.0);

/// Writes `dir/manifest.ini` plus one sub-directory per video holding
/// frames/, labels/ and gt.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

std::string format_box(const BoundingBox& b);
BoundingBox parse_box(const std::string& text);

}  // namespace vins

#pragma once

// Inserting an object track from one video into another.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vins/dataio.hpp"
#include "vins/models.hpp"
#include "vins/pairing.hpp"
#include "vins/rng.hpp"

namespace vins {

struct InsertionRequest {
  const VideoData* source = nullptr;
  int object_id = 0;
  const FrameSequence* target = nullptr;
  /// Region in the target at frame_start; later regions follow the source
  /// object's trajectory scaled to this height.
  BoundingBox placement;
  int frame_start = 0;
  int frame_end = 0;  // exclusive
  /// Target region the trajectory may move in; whole frame when absent.
  std::optional<BoundingBox> roi;
  bool static_placement = false;
  int feather_px = 2;
  MaskCoverage coverage;
  double object_margin = 0.1;
  bool allow_untrained = false;

  void validate() const;
};

struct CompositeResult {
  FrameSequence video;  // full target frames, composited
  std::vector<BoundingBox> per_frame_regions;
  FrameSequence patches;  // rendered v_A

  // Network inputs, kept for evaluation.
  std::vector<Frame> objects;  // u_A
  std::vector<Frame> regions;  // r_B
  std::vector<std::optional<BinaryMask>> object_masks;
  BinaryMask mask;

  bool truncated = false;
  std::string warning;
};

/// Regions of the target the insertion moves through, one per requested
/// frame; stops early where the region leaves the frame or its centre
/// leaves the ROI.
std::vector<BoundingBox> insertion_regions(const InsertionRequest& request, bool* truncated = nullptr);

/// Regions and network inputs of a request, without rendered patches.
CompositeResult prepare_insertion(const InsertionRequest& request, const PatchSpec& spec);
/// Composites one patch per prepared region into the target frames.
void finish_insertion(CompositeResult& result, const InsertionRequest& request, std::vector<Frame> patches);

/// Throws ValidationError when the bundle has step 0 and the request does
/// not allow untrained bundles.
CompositeResult render_insertion(const ModelBundle& bundle, const InsertionRequest& request);

/// `count` requests of `length` frames: an ordered pair of distinct videos,
/// an object of the first present over the whole range and a placement in
/// the second's ROI with the patch aspect ratio, redrawn a bounded number of
/// times to keep clear of the second video's own objects. Static placements.
std::vector<InsertionRequest> sample_insertion_requests(const Dataset& data, int count, int length, const PatchSpec& patch,
                                                        Rng& rng);

/// Pixel rectangle a region covers: rounded edges, half-open.
struct PixelRect {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
};
PixelRect region_pixels(const BoundingBox& region);

/// Bilinear resize of `patch` onto the region, blended with
/// alpha = min(1, (d + 1) / (feather_px + 1)) where d is the pixel's
/// distance in pixels to the region border. feather_px = 0 pastes hard.
Frame composite_full_frame(const Frame& scene, const Frame& patch, const BoundingBox& region, int feather_px = 2);

/// `dir/frames`, `dir/patches` and `dir/manifest.ini` with one region per frame.
void save_insertion(const std::filesystem::path& dir, const CompositeResult& result);
/// Regions recorded by save_insertion.
std::vector<BoundingBox> load_insertion_regions(const std::filesystem::path& dir);

}  // namespace vins

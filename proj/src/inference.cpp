#include "vins/inference.hpp"

#include <algorithm>
#include <cmath>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vins/autograd.hpp"
#include "vins/error.hpp"
#include "vins/losses.hpp"

namespace vins {

namespace fs = std::filesystem;

void InsertionRequest::validate() const {
  if (source == nullptr) throw ValidationError("insertion: no source video");
  if (source->video.empty()) throw ValidationError("insertion: source video has no frames");
  const Track* track = source->find_track(object_id);
  if (track == nullptr) throw ValidationError("insertion: object " + std::to_string(object_id) + " not in source");
  if (target == nullptr || target->empty()) throw ValidationError("insertion: target video has no frames");
  target->validate();
  if (frame_start < 0 || frame_end <= frame_start) throw ValidationError("insertion: empty frame range");
  if (static_cast<std::size_t>(frame_end) > source->video.size() ||
      static_cast<std::size_t>(frame_end) > target->size()) {
    throw ValidationError("insertion: frame range exceeds a video");
  }
  if (!track->boxes.count(frame_start)) {
    throw ValidationError("insertion: object " + std::to_string(object_id) + " absent at frame " +
                          std::to_string(frame_start));
  }
  if (!(placement.w > 0.0 && placement.h > 0.0)) throw ValidationError("insertion: empty placement");
  if (!placement.intersects_frame(target->height(), target->width())) {
    throw ValidationError("insertion: placement " + format_box(placement) + " misses the target frames");
  }
  if (feather_px < 0) throw ValidationError("insertion: negative feather");
  if (roi && !(roi->w > 0.0 && roi->h > 0.0)) throw ValidationError("insertion: empty roi");
}

std::vector<BoundingBox> insertion_regions(const InsertionRequest& request, bool* truncated) {
  request.validate();
  const Track& track = *request.source->find_track(request.object_id);
  const BoundingBox roi =
      request.roi.value_or(BoundingBox{0.0, 0.0, double(request.target->width()), double(request.target->height())});

  std::vector<BoundingBox> traj;
  for (int t = request.frame_start; t < request.frame_end; ++t) {
    auto it = track.boxes.find(t);
    if (it == track.boxes.end()) break;
    traj.push_back(it->second);
  }
  const BoundingBox& p = request.placement;
  std::vector<BoundingBox> path;
  if (request.static_placement) {
    path.assign(traj.size(), p);
  } else {
    for (const auto& b : scale_trajectory(traj, p.h, p.cx(), p.cy())) {
      path.push_back(BoundingBox::centered(b.cx(), b.cy(), p.w, p.h));
    }
  }
  std::vector<BoundingBox> out;
  for (const auto& b : path) {
    if (!b.inside_frame(request.target->height(), request.target->width())) break;
    if (!roi.contains_point(b.cx(), b.cy())) break;
    out.push_back(b);
  }
  if (truncated) *truncated = out.size() < static_cast<std::size_t>(request.frame_end - request.frame_start);
  return out;
}

CompositeResult prepare_insertion(const InsertionRequest& request, const PatchSpec& spec) {
  bool truncated = false;
  const auto path = insertion_regions(request, &truncated);
  const VideoData& src = *request.source;
  const Track& track = *src.find_track(request.object_id);

  CompositeResult res;
  res.mask = make_mask(spec, request.coverage);
  res.truncated = truncated;
  if (truncated) {
    res.warning = "insertion truncated after " + std::to_string(path.size()) + " of " +
                  std::to_string(request.frame_end - request.frame_start) + " frames";
  }
  res.video.fps = request.target->fps;
  res.patches.fps = request.target->fps;
  res.per_frame_regions = path;
  for (std::size_t k = 0; k < path.size(); ++k) {
    const int t = request.frame_start + static_cast<int>(k);
    const BoundingBox box = object_crop_box(track.boxes.at(t), request.object_margin);
    Frame u = crop_patch(src.video[static_cast<std::size_t>(t)], box, spec);
    Frame r = crop_patch((*request.target)[static_cast<std::size_t>(t)], path[k], spec);
    u.index = r.index = t;
    if (src.has_masks()) {
      res.object_masks.push_back(crop_mask(src.labels[static_cast<std::size_t>(t)].mask_of(request.object_id), box, spec));
    } else {
      res.object_masks.push_back(std::nullopt);
    }
    res.objects.push_back(std::move(u));
    res.regions.push_back(std::move(r));
  }
  return res;
}

void finish_insertion(CompositeResult& result, const InsertionRequest& request, std::vector<Frame> patches) {
  if (patches.size() != result.per_frame_regions.size()) throw ValidationError("finish_insertion: one patch per region");
  result.video.frames.clear();
  result.patches.frames.clear();
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto t = static_cast<std::size_t>(request.frame_start) + k;
    const Frame& scene = (*request.target)[t];
    patches[k].index = scene.index;
    result.video.frames.push_back(composite_full_frame(scene, patches[k], result.per_frame_regions[k], request.feather_px));
    result.video.frames.back().index = scene.index;
    result.patches.frames.push_back(std::move(patches[k]));
  }
}

CompositeResult render_insertion(const ModelBundle& bundle, const InsertionRequest& request) {
  if (bundle.step == 0 && !request.allow_untrained) {
    throw ValidationError("insertion: bundle has not been trained (step 0)");
  }
  CompositeResult res = prepare_insertion(request, bundle.gen.patch);
  std::vector<Frame> inputs;
  for (std::size_t k = 0; k < res.objects.size(); ++k) inputs.push_back(blend(res.objects[k], res.regions[k], res.mask));
  std::vector<Frame> patches;
  {
    ag::NoGradGuard ng;
    for (const auto& g : rollout(bundle, inputs)) patches.push_back(var_frame(g.output));
  }
  finish_insertion(res, request, std::move(patches));
  return res;
}

constexpr int kPlacementAttempts = 50;

std::vector<InsertionRequest> sample_insertion_requests(const Dataset& data, int count, int length, const PatchSpec& patch,
                                                        Rng& rng) {
  if (data.videos.size() < 2) throw ValidationError("insertion sampling needs two videos");
  if (count < 0 || length < 1) throw ValidationError("insertion sampling: bad count or length");
  const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.uniform() * double(n)) % n; };
  std::vector<InsertionRequest> out;
  for (int i = 0; i < count; ++i) {
    const std::size_t a = pick(data.videos.size());
    std::size_t b = pick(data.videos.size() - 1);
    if (b >= a) ++b;
    const VideoData& src = data.videos[a];
    const VideoData& dst = data.videos[b];
    const int frames = static_cast<int>(std::min(src.video.size(), dst.video.size()));
    // Every (track, start) whose boxes cover the range.
    std::vector<std::pair<int, int>> options;
    for (const auto& t : src.tracks) {
      for (int s = 0; s + length <= frames; ++s) {
        bool ok = true;
        for (int k = 0; k < length && ok; ++k) ok = t.boxes.count(s + k) > 0;
        if (ok) options.emplace_back(t.object_id, s);
      }
    }
    if (options.empty()) throw ValidationError("video '" + src.name + "' has no track covering " + std::to_string(length) + " frames");
    const auto [object_id, start] = options[pick(options.size())];
    InsertionRequest r;
    r.source = &src;
    r.object_id = object_id;
    r.target = &dst.video;
    // Prefer a placement clear of the target's own objects over the range.
    const auto overlaps_scene = [&](const BoundingBox& box) {
      for (const auto& t : dst.tracks) {
        for (int k = start; k < start + length; ++k) {
          const auto it = t.boxes.find(k);
          if (it == t.boxes.end()) continue;
          const BoundingBox& o = it->second;
          if (box.x < o.right() && o.x < box.right() && box.y < o.bottom() && o.y < box.bottom()) return true;
        }
      }
      return false;
    };
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      r.placement = sample_placement(dst.video, dst.roi, dst.median_object_height(), patch, rng);
      // Keep the whole region on screen.
      r.placement.x = std::clamp(r.placement.x, 0.0, std::max(0.0, dst.video.width() - r.placement.w));
      r.placement.y = std::clamp(r.placement.y, 0.0, std::max(0.0, dst.video.height() - r.placement.h));
      if (!overlaps_scene(r.placement)) break;
    }
    r.static_placement = true;
    r.frame_start = start;
    r.frame_end = start + length;
    out.push_back(std::move(r));
  }
  return out;
}

PixelRect region_pixels(const BoundingBox& region) {
  return {static_cast<int>(std::lround(region.y)), static_cast<int>(std::lround(region.x)),
          static_cast<int>(std::lround(region.bottom())), static_cast<int>(std::lround(region.right()))};
}

Frame composite_full_frame(const Frame& scene, const Frame& patch, const BoundingBox& region, int feather_px) {
  scene.validate();
  patch.validate();
  if (feather_px < 0) throw ValidationError("composite: negative feather");
  if (!region.inside_frame(scene.height(), scene.width())) {
    throw ValidationError("composite: region " + format_box(region) + " outside the scene");
  }
  const PixelRect rect = region_pixels(region);
  if (rect.height() < 1 || rect.width() < 1) throw ValidationError("composite: region covers no pixels");

  const Tensor resized = resample_bilinear(
      patch.pixels, {0.0, 0.0, double(patch.width()), double(patch.height())}, rect.height(), rect.width());
  Frame out = scene;
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      const int d = std::min({x - rect.x0, rect.x1 - 1 - x, y - rect.y0, rect.y1 - 1 - y});
      const double alpha = feather_px == 0 ? 1.0 : std::min(1.0, double(d + 1) / (feather_px + 1));
      for (int c = 0; c < 3; ++c) {
        const double p = resized.at(c, y - rect.y0, x - rect.x0);
        const double s = scene.at(c, y, x);
        out.at(c, y, x) = alpha == 1.0 ? p : s + alpha * (p - s);
      }
    }
  }
  return out;
}

void save_insertion(const fs::path& dir, const CompositeResult& result) {
  namespace pt = boost::property_tree;
  fs::create_directories(dir);
  save_frames(dir / "frames", result.video);
  save_frames(dir / "patches", result.patches);
  pt::ptree tree;
  tree.put("insertion.frames", result.video.size());
  tree.put("insertion.truncated", result.truncated ? "true" : "false");
  if (!result.warning.empty()) tree.put("insertion.warning", result.warning);
  pt::ptree regions;
  for (std::size_t k = 0; k < result.per_frame_regions.size(); ++k) {
    regions.put("frame" + std::to_string(result.video[k].index), format_box(result.per_frame_regions[k]));
  }
  tree.add_child("regions", regions);
  pt::write_ini((dir / "manifest.ini").string(), tree);
}

std::vector<BoundingBox> load_insertion_regions(const fs::path& dir) {
  namespace pt = boost::property_tree;
  const fs::path manifest = dir / "manifest.ini";
  if (!fs::exists(manifest)) throw IoError("no manifest.ini in '" + dir.string() + "'");
  pt::ptree tree;
  try {
    pt::read_ini(manifest.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }
  std::vector<BoundingBox> out;
  if (auto regions = tree.get_child_optional("regions")) {
    for (const auto& [name, value] : *regions) out.push_back(parse_box(value.data()));
  }
  return out;
}

}  // namespace vins

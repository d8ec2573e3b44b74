#include "vins/pairing.hpp"

#include <algorithm>
#include <cmath>

#include "vins/error.hpp"

namespace vins {

BinaryMask make_mask(const PatchSpec& spec, const MaskCoverage& coverage) {
  spec.validate();
  if (!(coverage.frac_w > 0.0 && coverage.frac_w < 1.0 && coverage.frac_h > 0.0 && coverage.frac_h < 1.0)) {
    throw ValidationError("mask fractions must lie in (0, 1)");
  }
  const int w = static_cast<int>(std::lround(coverage.frac_w * spec.width));
  const int h = static_cast<int>(std::lround(coverage.frac_h * spec.height));
  if (w < 1 || h < 1 || (w >= spec.width && h >= spec.height)) {
    throw ValidationError("mask must contain both ones and zeros");
  }
  BinaryMask m(spec.height, spec.width);
  const int y0 = (spec.height - h) / 2;
  const int x0 = (spec.width - w) / 2;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) m.at(y, x) = 1;
  return m;
}

Frame blend(const Frame& u, const Frame& r, const BinaryMask& m) {
  if (!u.pixels.same_shape(r.pixels) || u.pixels.ndim() != 3) {
    throw ValidationError("blend: u " + shape_string(u.pixels.shape()) + " vs r " + shape_string(r.pixels.shape()));
  }
  if (m.height != u.height() || m.width != u.width()) throw ValidationError("blend: mask size mismatch");
  Tensor out(u.pixels.shape());
  const int C = u.pixels.dim(0);
  const std::size_t plane = static_cast<std::size_t>(m.height) * m.width;
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      const double half = m.values[i] ? 0.5 : 0.0;
      out[k] = u.pixels[k] * half + r.pixels[k] * (1.0 - half);
    }
  return Frame(std::move(out), r.index);
}

const char* pair_kind_name(PairKind kind) {
  switch (kind) {
    case PairKind::FakeA: return "fakeA";
    case PairKind::FakeB: return "fakeB";
    case PairKind::Real: return "real";
  }
  return "?";
}

void TrainingBatch::validate() const {
  const Shape s = real.input.pixels.shape();
  for (const BlendedPair* p : {&real, &fake_a, &fake_b}) {
    if (p->input.pixels.shape() != s) throw ValidationError("batch: inconsistent patch sizes");
    if (p->target.has_value() == (p->kind == PairKind::Real)) {
      throw ValidationError("batch: target must be present exactly for fake pairs");
    }
    if (p->target && p->target->pixels.shape() != s) throw ValidationError("batch: target size mismatch");
  }
  if (real.kind != PairKind::Real || fake_a.kind != PairKind::FakeA || fake_b.kind != PairKind::FakeB) {
    throw ValidationError("batch: pair kinds out of place");
  }
  if (mask.height != s[1] || mask.width != s[2]) throw ValidationError("batch: mask size mismatch");
}

namespace {

const BlendedPair& pick(const TrainingBatch& b, PairKind kind) {
  switch (kind) {
    case PairKind::FakeA: return b.fake_a;
    case PairKind::FakeB: return b.fake_b;
    default: return b.real;
  }
}

}  // namespace

std::vector<Frame> SequenceBatch::inputs(PairKind kind) const {
  std::vector<Frame> out;
  for (const auto& s : steps) out.push_back(pick(s, kind).input);
  return out;
}

std::vector<Frame> SequenceBatch::targets(PairKind kind) const {
  if (kind == PairKind::Real) throw ValidationError("real pairs have no targets");
  std::vector<Frame> out;
  for (const auto& s : steps) out.push_back(*pick(s, kind).target);
  return out;
}

BoundingBox object_crop_box(const BoundingBox& annotation, double margin) {
  return annotation.with_margin(margin);
}

namespace {

struct ObjectCrop {
  Frame patch;
  std::optional<BinaryMask> mask;
  BoundingBox box;
};

ObjectCrop crop_object(const VideoData& v, const Track& t, int frame, const BatchOptions& o) {
  ObjectCrop c;
  c.box = object_crop_box(t.boxes.at(frame), o.object_margin);
  const Frame& f = v.video[static_cast<std::size_t>(frame)];
  c.patch = crop_patch(f, c.box, o.patch);
  if (v.has_masks()) c.mask = crop_mask(v.labels[static_cast<std::size_t>(frame)].mask_of(t.object_id), c.box, o.patch);
  return c;
}

struct TrackPick {
  const Track* track;
  int start;
};

// Uniform over (track, start) pairs with `length` consecutive annotated
// frames that exist in the video.
TrackPick pick_track(const VideoData& v, int length, Rng& rng) {
  std::vector<TrackPick> options;
  const int n = static_cast<int>(v.video.size());
  for (const auto& t : v.tracks) {
    for (const auto& [f, box] : t.boxes) {
      if (f + length > n) continue;
      bool ok = true;
      for (int k = 1; k < length && ok; ++k) ok = t.boxes.count(f + k) > 0;
      if (ok) options.push_back({&t, f});
    }
  }
  if (options.empty()) {
    throw ValidationError("video '" + v.name + "' has no track spanning " + std::to_string(length) + " frames");
  }
  return options[rng.index(options.size())];
}

void check_video(const VideoData& v) {
  if (v.video.empty()) throw ValidationError("video '" + v.name + "' has no frames");
  if (v.tracks.empty()) throw ValidationError("video '" + v.name + "' has no tracks");
}

// Keeps a trajectory box's centre inside the roi so every crop overlaps the frame.
BoundingBox clamp_center(const BoundingBox& b, const BoundingBox& roi) {
  return BoundingBox::centered(std::clamp(b.cx(), roi.x, roi.right()), std::clamp(b.cy(), roi.y, roi.bottom()),
                               b.w, b.h);
}

TrainingBatch assemble(ObjectCrop a, ObjectCrop b, Frame r_a, Frame r_b, const BoundingBox& region_a,
                       const BoundingBox& region_b, const BinaryMask& m) {
  TrainingBatch batch;
  batch.mask = m;
  batch.real = {blend(a.patch, r_b, m), std::nullopt, PairKind::Real};
  batch.fake_a = {blend(b.patch, r_a, m), b.patch, PairKind::FakeA};
  batch.fake_b = {blend(b.patch, r_b, m), b.patch, PairKind::FakeB};
  batch.src.u_a = std::move(a.patch);
  batch.src.u_b = std::move(b.patch);
  batch.src.r_a = std::move(r_a);
  batch.src.r_b = std::move(r_b);
  batch.src.object_mask_a = std::move(a.mask);
  batch.src.object_mask_b = std::move(b.mask);
  batch.src.box_a = a.box;
  batch.src.box_b = b.box;
  batch.src.region_a = region_a;
  batch.src.region_b = region_b;
  return batch;
}

}  // namespace

TrainingBatch make_training_batch(const VideoData& video_a, const VideoData& video_b,
                                  const BoundingBox& placement, std::uint64_t seed,
                                  const BatchOptions& options) {
  check_video(video_a);
  check_video(video_b);
  const BinaryMask m = make_mask(options.patch, options.coverage);
  Rng rng(seed);
  const TrackPick pa = pick_track(video_a, 1, rng);
  const TrackPick pb = pick_track(video_b, 1, rng);
  const BoundingBox region_a =
      sample_placement(video_a.video, video_a.roi, video_a.median_object_height(), options.patch, rng);
  ObjectCrop ua = crop_object(video_a, *pa.track, pa.start, options);
  ObjectCrop ub = crop_object(video_b, *pb.track, pb.start, options);
  // Regions come from the same frame as the object of that video.
  Frame ra = crop_patch(video_a.video[static_cast<std::size_t>(pa.start)], region_a, options.patch);
  Frame rb = crop_patch(video_b.video[static_cast<std::size_t>(pb.start)], placement, options.patch);
  return assemble(std::move(ua), std::move(ub), std::move(ra), std::move(rb), region_a, placement, m);
}

TrainingBatch sample_training_batch(const VideoData& video_a, const VideoData& video_b, Rng& rng,
                                    const BatchOptions& options) {
  check_video(video_b);
  const BoundingBox placement =
      sample_placement(video_b.video, video_b.roi, video_b.median_object_height(), options.patch, rng);
  return make_training_batch(video_a, video_b, placement, rng.next_u64(), options);
}

SequenceBatch sample_sequence_batch(const VideoData& video_a, const VideoData& video_b, int length, Rng& rng,
                                    const BatchOptions& options) {
  if (length < 1) throw ValidationError("sequence length must be positive");
  check_video(video_a);
  check_video(video_b);
  const BinaryMask m = make_mask(options.patch, options.coverage);
  const TrackPick pa = pick_track(video_a, length, rng);
  const TrackPick pb = pick_track(video_b, length, rng);

  auto region_path = [&](const VideoData& v, const TrackPick& p) {
    const BoundingBox start = sample_placement(v.video, v.roi, v.median_object_height(), options.patch, rng);
    std::vector<BoundingBox> traj;
    for (int k = 0; k < length; ++k) traj.push_back(p.track->boxes.at(p.start + k));
    auto path = scale_trajectory(traj, start.h, start.cx(), start.cy());
    for (auto& b : path) b = clamp_center(BoundingBox::centered(b.cx(), b.cy(), start.w, start.h), v.roi);
    return path;
  };
  // r_A follows the movement of an object of A, r_B one of B.
  const auto path_a = region_path(video_a, pa);
  const auto path_b = region_path(video_b, pb);

  SequenceBatch seq;
  for (int k = 0; k < length; ++k) {
    const int fa = pa.start + k, fb = pb.start + k;
    ObjectCrop ua = crop_object(video_a, *pa.track, fa, options);
    ObjectCrop ub = crop_object(video_b, *pb.track, fb, options);
    Frame ra = crop_patch(video_a.video[static_cast<std::size_t>(fa)], path_a[k], options.patch);
    Frame rb = crop_patch(video_b.video[static_cast<std::size_t>(fb)], path_b[k], options.patch);
    seq.steps.push_back(assemble(std::move(ua), std::move(ub), std::move(ra), std::move(rb), path_a[k], path_b[k], m));
  }
  return seq;
}

}  // namespace vins

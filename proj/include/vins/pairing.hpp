#pragma once

// Blending operator and the fake/real training pairs built from it.

#include <optional>
#include <vector>

#include "vins/dataio.hpp"

namespace vins {

struct MaskCoverage {
  double frac_w = 0.5;
  double frac_h = 0.75;
};

/// Ones in a centred rectangle of round(frac_w*W) x round(frac_h*H).
BinaryMask make_mask(const PatchSpec& spec, const MaskCoverage& coverage = {});

/// u * m/2 + r * (1 - m/2), per channel.
Frame blend(const Frame& u, const Frame& r, const BinaryMask& m);

enum class PairKind { FakeA, FakeB, Real };

const char* pair_kind_name(PairKind kind);

struct BlendedPair {
  Frame input;
  std::optional<Frame> target;  // present for fake pairs only
  PairKind kind = PairKind::Real;
};

/// The four crops a batch is made from, kept for the baseline objectives
/// and for evaluation. Object masks are present when the source video has
/// ground-truth labels.
struct PairSources {
  Frame u_a, u_b, r_a, r_b;
  std::optional<BinaryMask> object_mask_a, object_mask_b;
  BoundingBox box_a, box_b;        // source boxes of u_a, u_b (with margin)
  BoundingBox region_a, region_b;  // crop boxes of r_a, r_b
};

struct TrainingBatch {
  PairSources src;
  BlendedPair real;    // u_A + r_B
  BlendedPair fake_a;  // u_B + r_A -> u_B
  BlendedPair fake_b;  // u_B + r_B -> u_B
  BinaryMask mask;

  void validate() const;
};

/// One TrainingBatch per time step; the mask is shared.
struct SequenceBatch {
  std::vector<TrainingBatch> steps;

  std::size_t length() const { return steps.size(); }
  std::vector<Frame> inputs(PairKind kind) const;
  std::vector<Frame> targets(PairKind kind) const;
};

struct BatchOptions {
  PatchSpec patch;
  MaskCoverage coverage;
  double object_margin = 0.1;
};

/// Builds one batch. `placement` is the region cropped from `video_b` as
/// r_B; every other choice (object tracks and frames, the r_A region) is
/// drawn from `seed`.
TrainingBatch make_training_batch(const VideoData& video_a, const VideoData& video_b,
                                  const BoundingBox& placement, std::uint64_t seed,
                                  const BatchOptions& options = {});

/// Same, with the placement in B also sampled.
TrainingBatch sample_training_batch(const VideoData& video_a, const VideoData& video_b, Rng& rng,
                                    const BatchOptions& options = {});

/// Length-`length` sequences: objects follow their own tracks, regions
/// follow an object trajectory of the same video scaled and anchored at a
/// sampled placement.
SequenceBatch sample_sequence_batch(const VideoData& video_a, const VideoData& video_b, int length,
                                    Rng& rng, const BatchOptions& options = {});

/// Object crop box: the annotation box grown by `margin` per side.
BoundingBox object_crop_box(const BoundingBox& annotation, double margin);

}  // namespace vins

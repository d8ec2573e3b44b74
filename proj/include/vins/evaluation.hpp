#pragma once

// Object insertion score, detector recall and the non-learned composites.

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vins/dataio.hpp"
#include "vins/inference.hpp"
#include "vins/models.hpp"

namespace vins {

/// 1 where ||v - u|| < ||v - r|| over the colour channels; ties are 0.
BinaryMask delta_mask(const Frame& v, const Frame& u, const Frame& r);

struct OISReport {
  double precision = 0.0;
  double recall = 0.0;
  double ois = 0.0;
};

/// P = |s_a & s_delta| / |s_delta|, R = |s_a & s_delta| / |s_a|, OIS their F1.
/// Empty denominators give 0, as does P + R = 0.
OISReport ois_score(const BinaryMask& s_a, const BinaryMask& s_delta);

/// 2PR / (P + R), 0 when P + R = 0.
double f1(double precision, double recall);

double iou(const BoundingBox& a, const BoundingBox& b);

/// Mean over the frames of one insertion; needs object masks.
OISReport insertion_ois(const CompositeResult& result);

// --- detection ---------------------------------------------------------------

struct Detection {
  BoundingBox box;
  double score = 0.0;
};

/// Everything known about one inserted frame. Only `frame` is visible to a
/// real detector; the rest serves the oracles.
struct DetectionInput {
  const Frame* frame = nullptr;  // full composited scene
  const Frame* patch = nullptr;  // rendered v_A
  const Frame* object = nullptr;
  const Frame* region = nullptr;
  BoundingBox placement;
  BoundingBox truth;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const DetectionInput& in) const = 0;
  /// Detections scoring below this are ignored.
  virtual double score_threshold() const { return 0.5; }
};

/// Returns the ground-truth box.
class EchoOracleDetector : public Detector {
 public:
  std::vector<Detection> detect(const DetectionInput& in) const override;
};

/// Box around the largest 4-connected component of the delta mask
/// (pixels nearer the object than the background), mapped into the frame.
/// Score is the component's share of the object mask area.
class DeltaMaskDetector : public Detector {
 public:
  std::vector<Detection> detect(const DetectionInput& in) const override;
  double score_threshold() const override { return 0.25; }
};

/// Small fully convolutional objectness net trained on sprite frames with
/// ground-truth labels. Detections are boxes of connected components of
/// the thresholded objectness map.
class TinyConvDetector : public Detector {
 public:
  struct Config {
    int channels = 8;
    int iters = 1500;
    double lr = 5e-3;
    double threshold = 0.5;
    int min_pixels = 12;
    std::uint64_t seed = 1;
  };

  TinyConvDetector();
  explicit TinyConvDetector(Config cfg);
  /// Trains on every labelled frame of `data`, one frame per step.
  void train(const Dataset& data);
  /// Per-pixel object probability, (1, H, W).
  Tensor objectness(const Frame& frame) const;
  std::vector<Detection> detect_frame(const Frame& frame) const;
  std::vector<Detection> detect(const DetectionInput& in) const override { return detect_frame(*in.frame); }

 private:
  Config cfg_;
  ParamSet params_;
};

/// Inserted object box in frame coordinates: the object mask's extent when
/// present, the blend mask's otherwise, mapped through the placement region.
BoundingBox inserted_object_box(const CompositeResult& result, std::size_t frame);

struct RecallReport {
  int matched = 0;
  int total = 0;
  double recall() const { return total ? double(matched) / total : 0.0; }
};

/// Fraction of inserted frames with a detection above the detector's score
/// cutoff overlapping the inserted box by at least iou_threshold.
RecallReport detector_recall(std::span<const CompositeResult> results, const Detector& detector,
                             double iou_threshold = 0.5);

// --- non-learned composites ---------------------------------------------------

/// u on the mask, r elsewhere.
Frame copy_paste_baseline(const Frame& u, const Frame& r, const BinaryMask& s_a);

struct PoissonOptions {
  int max_iterations = 5000;
  double tolerance = 1e-6;
};

/// Seamless cloning: per channel, solves the 5-point Laplacian system
/// lap(out) = lap(u) on the mask with out = r off the mask, by conjugate
/// gradients. Values are not clamped. Throws ValidationError when the mask
/// is empty or touches the border and ConvergenceError when the max-norm
/// residual stays at or above the tolerance.
Frame poisson_blend(const Frame& u, const Frame& r, const BinaryMask& s_a, const PoissonOptions& options = {});

/// Max-norm residual of the Poisson system for `out`, over mask pixels and channels.
double poisson_residual(const Frame& out, const Frame& u, const BinaryMask& s_a);

Frame clamp_frame(Frame f);

enum class CompositeMethod { CopyPaste, Poisson };

const char* composite_method_name(CompositeMethod m);
CompositeMethod parse_composite_method(const std::string& s);

/// The request rendered by a non-learned composite with the object's
/// ground-truth mask. For Poisson the mask's outermost ring is cleared so it
/// stays off the patch border, and the result is clamped to [0, 1].
CompositeResult render_nonlearned(const InsertionRequest& request, const PatchSpec& spec, CompositeMethod method);

// --- reports -------------------------------------------------------------------

struct OISRecord {
  std::string name;
  OISReport report;
};

/// One `name P R OIS` line per record, then a `mean` line.
void write_ois_report(std::ostream& out, std::span<const OISRecord> records);
OISReport mean_report(std::span<const OISRecord> records);

}  // namespace vins

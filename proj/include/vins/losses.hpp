#pragma once

// Adversarial, reconstruction and baseline objectives.
//
// Graph-building functions return LossTerms: named raw components with
// their weights, so the same code feeds both the optimiser (total()) and
// the numeric LossReport.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vins/autograd.hpp"
#include "vins/models.hpp"
#include "vins/pairing.hpp"

namespace vins {

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;  // raw, unweighted values
  std::map<std::string, double> weights;

  double weighted_sum() const;
  double component(const std::string& name) const;
};

class LossTerms {
 public:
  void add(const std::string& name, double weight, ag::Var value);
  void append(const LossTerms& other);
  /// Weighted sum as a graph node.
  ag::Var total() const;
  LossReport report() const;
  bool empty() const { return terms_.empty(); }

 private:
  struct Term {
    std::string name;
    double weight;
    ag::Var value;
  };
  std::vector<Term> terms_;
};

enum class Role { Discriminator, Generator };

// --- scalar forms -------------------------------------------------------------

/// Discriminator: -log s for a real target, -log(1-s) otherwise.
/// Generator: non-saturating -log s.
double adversarial_term(double score, bool target_is_real, Role role);

/// Mean absolute difference.
double reconstruction_loss(const Frame& output, const Frame& target);

struct EmbeddingScores {
  double fake_a = 0.5;
  double fake_b = 0.5;
  double real = 0.5;
};

/// D_E role labels fake pairs 1 and the real pair 0; the generator role
/// is -log D_E(e_real).
double embedding_adversarial(const EmbeddingScores& scores, Role role);

// --- graph forms ----------------------------------------------------------------

/// -log sigmoid(l) when target_real, else -log(1 - sigmoid(l)).
ag::Var adversarial_from_logit(const ag::Var& logit, bool target_real);
ag::Var l1_loss(const ag::Var& a, const ag::Var& b);
/// x * m broadcast over channels; m is a constant.
ag::Var apply_mask(const ag::Var& x, const BinaryMask& m);
ag::Var apply_inverse_mask(const ag::Var& x, const BinaryMask& m);

// --- feature extractors -------------------------------------------------------

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// One or more feature maps of a (3,H,W) input.
  virtual std::vector<ag::Var> features(const ag::Var& x) const = 0;
};

/// Returns the input itself as the only layer.
class IdentityExtractor : public FeatureExtractor {
 public:
  std::vector<ag::Var> features(const ag::Var& x) const override { return {x}; }
};

/// Fixed, randomly initialised two-stage conv stack (relu outputs of both stages).
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 1234, int channels = 16);
  std::vector<ag::Var> features(const ag::Var& x) const override;

 private:
  ag::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Sum over layers of ||phi(a) - phi(b)||^2 / (C H W). With a mask both
/// inputs are multiplied by it first.
ag::Var perceptual_graph(const ag::Var& a, const ag::Var& b, const FeatureExtractor& extractor,
                         const BinaryMask* mask = nullptr);
double perceptual_distance(const Frame& a, const Frame& b, const FeatureExtractor& extractor,
                           const BinaryMask* mask = nullptr);

// --- method objectives ------------------------------------------------------------

/// Generator outputs and embeddings for the three pairs of one batch.
struct PairForward {
  ag::Var out_fake_a, out_fake_b, out_real;
  ag::Var emb_fake_a, emb_fake_b, emb_real;
};

PairForward forward_pairs(const ModelBundle& bundle, const TrainingBatch& batch);

/// Generator-side terms: adv_DI_{fakeA,fakeB,real}, adv_DE_real,
/// recon_{fakeA,fakeB}. Fake-pair terms carry weight lambda_fake.
/// Embeddings used as D_I conditioning are detached.
LossTerms image_generator_terms(const ModelBundle& bundle, const TrainingBatch& batch, const PairForward& fwd,
                                double lambda_fake);

/// Discriminator-side terms on detached generator results.
LossTerms image_discriminator_terms(const ModelBundle& bundle, const TrainingBatch& batch, const PairForward& fwd,
                                    double lambda_fake);

struct ObjectiveReports {
  LossReport g_loss;
  LossReport d_losses;
};

/// Numeric evaluation of both sides (no graph).
ObjectiveReports image_objective(const ModelBundle& bundle, const TrainingBatch& batch, double lambda_fake);

/// Autoregressive generator results for the three input sequences.
struct SequenceForward {
  std::vector<ag::Var> out_fake_a, out_fake_b, out_real;
  std::vector<ag::Var> emb_fake_a, emb_fake_b, emb_real;
};

/// Maps the history frames before each step; used for noise injection.
using HistoryTransform = std::function<std::vector<Frame>(std::vector<Frame>)>;

/// Rolls the generator over `inputs`. History frames are detached copies
/// of earlier outputs, bootstrapped at t=0 by one generator pass on the
/// first input with that input as history.
std::vector<GeneratorGraph> rollout(const ModelBundle& bundle, std::span<const Frame> inputs,
                                    const HistoryTransform& transform = {});

SequenceForward forward_sequences(const ModelBundle& bundle, const SequenceBatch& seq,
                                  const HistoryTransform& transform = {});

/// Per-sequence frame choices for the D_I terms, drawn once per step.
struct FramePicks {
  int fake_a = 0, fake_b = 0, real = 0;
};

FramePicks pick_frames(int length, Rng& rng);

LossTerms video_generator_terms(const ModelBundle& bundle, const SequenceBatch& seq, const SequenceForward& fwd,
                                const FramePicks& picks, double lambda_fake);
LossTerms video_discriminator_terms(const ModelBundle& bundle, const SequenceBatch& seq, const SequenceForward& fwd,
                                    const FramePicks& picks, double lambda_fake);

ObjectiveReports video_objective(const ModelBundle& bundle, const SequenceBatch& seq, double lambda_fake, Rng& rng);

// --- baselines -----------------------------------------------------------------

enum class BaselineKind { AdvOnly, Pixel, Perceptual, Cycle };

const char* baseline_name(BaselineKind kind);
BaselineKind parse_baseline(const std::string& s);

/// Maps a blended input to an output frame.
using GeneratorFn = std::function<ag::Var(const ag::Var& blended)>;

GeneratorFn generator_fn(const ModelBundle& bundle);

struct BaselineTerms {
  LossTerms g;
  LossTerms d;
};

/// Every baseline shares the unconditional adversarial pair: D sees u_B as
/// real and G(u_A+r_B) as fake. Cycle needs `aux`, the second mapping F with
/// its own discriminator.
BaselineTerms baseline_terms(BaselineKind kind, const ModelBundle& bundle, const ModelBundle* aux,
                             const TrainingBatch& batch, const FeatureExtractor* extractor = nullptr);

/// The four content terms of the cycle objective for arbitrary generators.
LossTerms cycle_content_terms(const GeneratorFn& g, const GeneratorFn& f, const TrainingBatch& batch);

ObjectiveReports baseline_objective(BaselineKind kind, const ModelBundle& bundle, const ModelBundle* aux,
                                    const TrainingBatch& batch, const FeatureExtractor* extractor = nullptr);

}  // namespace vins

#pragma once

// Optimisation loop for the image and video stages and the baselines.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vins/losses.hpp"
#include "vins/models.hpp"
#include "vins/pairing.hpp"
#include "vins/rng.hpp"

namespace vins {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 1;
  double lambda_fake = 0.1;
  double noise_std = 0.01;
  int iters = 1000;
  std::uint64_t seed = 1;
  /// Video stage only; 0 means history_len + video_window.
  int sequence_length = 0;

  void validate() const;
};

/// Adam over a fixed list of named parameter sets.
class Adam {
 public:
  struct Moments {
    Tensor m, v;
  };

  /// One update from the accumulated gradients of every parameter in
  /// `groups`; parameters without a gradient count as zero-gradient.
  void step(std::span<const std::pair<std::string, ParamSet*>> groups, const TrainConfig& cfg);

  std::int64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void save(CheckpointData& out, const std::string& prefix) const;
  void load(const CheckpointData& in, const std::string& prefix);

  friend bool operator==(const Adam& a, const Adam& b);

 private:
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainState {
  ModelBundle bundle;
  /// Second mapping F with its discriminator; cycle baseline only.
  std::optional<ModelBundle> aux;
  Adam g_opt, d_opt;
  Rng rng;

  std::int64_t step() const { return bundle.step; }
};

TrainState make_train_state(ModelBundle bundle, std::uint64_t seed);

struct StepReport {
  std::int64_t step = 0;
  LossReport g;
  LossReport d;
};

/// clamp(in + noise_std * z, 0, 1) with z standard normal per pixel.
std::vector<Frame> inject_history_noise(std::vector<Frame> frames, double noise_std, Rng& rng);

/// One discriminator update (D_I, D_E) on the current generator outputs,
/// then one generator update. Losses are averaged over the batches.
StepReport train_step_image(TrainState& state, std::span<const TrainingBatch> batches, const TrainConfig& cfg);
StepReport train_step_image(TrainState& state, const TrainingBatch& batch, const TrainConfig& cfg);

/// Autoregressive rollout with noisy history, then D (D_I, D_E, D_V) and G updates.
StepReport train_step_video(TrainState& state, std::span<const SequenceBatch> batches, const TrainConfig& cfg);
StepReport train_step_video(TrainState& state, const SequenceBatch& batch, const TrainConfig& cfg);

StepReport train_step_baseline(TrainState& state, BaselineKind kind, std::span<const TrainingBatch> batches,
                               const TrainConfig& cfg, const FeatureExtractor* extractor = nullptr);
StepReport train_step_baseline(TrainState& state, BaselineKind kind, const TrainingBatch& batch,
                               const TrainConfig& cfg, const FeatureExtractor* extractor = nullptr);

// --- sampling from a dataset -----------------------------------------------------

/// Picks an ordered pair of distinct videos and samples a batch from them.
TrainingBatch draw_batch(const Dataset& data, Rng& rng, const BatchOptions& options);
SequenceBatch draw_sequence(const Dataset& data, int length, Rng& rng, const BatchOptions& options);

int effective_sequence_length(const TrainConfig& cfg, const ModelBundle& bundle);

// --- loops ------------------------------------------------------------------------

using StepCallback = std::function<void(const StepReport&)>;

/// Runs until state.step() reaches cfg.iters.
void train_image(TrainState& state, const Dataset& data, const TrainConfig& cfg, const BatchOptions& options,
                 const StepCallback& on_step = {});
void train_video(TrainState& state, const Dataset& data, const TrainConfig& cfg, const BatchOptions& options,
                 const StepCallback& on_step = {});
void train_baseline(TrainState& state, BaselineKind kind, const Dataset& data, const TrainConfig& cfg,
                    const BatchOptions& options, const StepCallback& on_step = {});

/// `step=<n> g.total=<x> g.<name>=<x> ... d.total=<x> d.<name>=<x> ...`
std::string format_log_line(const StepReport& r);

// --- checkpoints --------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Throws CheckpointError unless the stored bundle configs equal the given ones.
TrainState load_checkpoint(const std::filesystem::path& path, const GeneratorConfig& gen, const DiscConfig& disc);

}  // namespace vins

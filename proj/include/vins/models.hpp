#pragma once

// Generators, discriminators and their parameter containers.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vins/autograd.hpp"
#include "vins/dataio.hpp"

namespace vins {

struct GeneratorConfig {
  int base_filters = 64;
  int n_levels = 4;
  PatchSpec patch;
  int history_len = 2;
  std::vector<double> history_weights{0.5, 0.5};

  /// Channel count of the bottleneck, which is also the embedding length.
  int embedding_dim() const { return base_filters << (n_levels - 1); }
  int channels(int level) const { return base_filters << level; }
  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

/// What D_I sees besides the image.
enum class DiscConditioning {
  Embedding,  // tiled generator embedding of the blended input
  Image,      // the blended input itself
  None,       // unconditional
};

struct DiscConfig {
  int base_filters = 64;
  int embedding_hidden = 64;
  int video_window = 6;
  DiscConditioning conditioning = DiscConditioning::Embedding;
  bool video = true;  // whether D_V parameters exist

  void validate() const;
  friend bool operator==(const DiscConfig&, const DiscConfig&) = default;
};

const char* conditioning_name(DiscConditioning c);
DiscConditioning parse_conditioning(const std::string& s);

/// Named trainable tensors in insertion order.
class ParamSet {
 public:
  ag::Var& add(const std::string& name, Tensor init);
  const ag::Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  void set_requires_grad(bool on);
  void zero_grad();
  /// Deep copy with fresh graph leaves.
  ParamSet clone() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct ModelBundle {
  GeneratorConfig gen;
  DiscConfig disc;
  ParamSet g, d_i, d_e, d_v;
  std::int64_t step = 0;

  ModelBundle clone() const;
  /// Throws ValidationError unless every parameter has the shape the configs imply.
  void validate() const;
};

/// Fresh bundle with DCGAN-style N(0, 0.02) weights and zero biases.
ModelBundle make_bundle(const GeneratorConfig& gen, const DiscConfig& disc, std::uint64_t seed);

/// Video bundle whose generator starts from a trained image generator:
/// every weight slice the two architectures share is copied, the
/// history-path slices and all of D_V are fresh. Discriminators D_I and D_E
/// are copied too.
ModelBundle stage_video_bundle(const ModelBundle& image_bundle, const GeneratorConfig& video_gen,
                               std::uint64_t seed);

// --- graph-level forward passes --------------------------------------------

struct GeneratorGraph {
  ag::Var output;     // (3, H, W) in (0, 1)
  ag::Var embedding;  // (E)
};

/// Encoder features of one input, shallowest level first.
std::vector<ag::Var> encode(const ParamSet& g, const GeneratorConfig& cfg, const ag::Var& x);

/// history.size() must equal cfg.history_len.
GeneratorGraph generator_forward(const ParamSet& g, const GeneratorConfig& cfg, const ag::Var& blended,
                                 std::span<const ag::Var> history);

/// `cond` is the embedding (E), the blended image (3,H,W), or undefined,
/// matching cfg.conditioning. Returns the pre-sigmoid logit.
ag::Var image_disc_logit(const ParamSet& d, const DiscConfig& cfg, const ag::Var& image, const ag::Var& cond);

ag::Var embedding_disc_logit(const ParamSet& d, const ag::Var& embedding);

/// clip: (3, T, H, W) with T = cfg.video_window; cond: (E, T) per-frame
/// embeddings, or undefined when unconditional.
ag::Var video_disc_logit(const ParamSet& d, const DiscConfig& cfg, const ag::Var& clip, const ag::Var& cond);

/// Sum_n w[n] * f[n]; graph version.
ag::Var combine_history(std::span<const ag::Var> features, std::span<const double> weights);

// --- frame-level wrappers (no graph) ---------------------------------------

struct GeneratorResult {
  Frame output;
  Tensor embedding;
};

GeneratorResult forward_generator_image(const ModelBundle& bundle, const Frame& blended);
GeneratorResult forward_generator_video(const ModelBundle& bundle, const Frame& blended,
                                        std::span<const Frame> history);

Tensor combine_history_features(std::span<const Tensor> features, std::span<const double> weights);

/// (E) -> (E, h, w).
Tensor tile_embedding(const Tensor& e, int h, int w);

/// `conditioning` is a tiled embedding (E,H,W) for Embedding mode, the
/// blended image (3,H,W) for Image mode, and ignored for None.
double score_image_disc(const ModelBundle& bundle, const Frame& image, const Tensor& conditioning);
double score_embedding_disc(const ModelBundle& bundle, const Tensor& embedding);
/// `conditioning` holds one tiled embedding (E,H,W) per frame.
double score_video_disc(const ModelBundle& bundle, const FrameSequence& clip, std::span<const Tensor> conditioning);

ag::Var frame_var(const Frame& f);
Frame var_frame(const ag::Var& v, int index = 0);

// --- checkpoints -------------------------------------------------------------

/// Generic container: magic, version, config text, step, named arrays and
/// string metadata.
struct CheckpointData {
  std::string config;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> arrays;
  std::map<std::string, std::string> meta;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Canonical key=value text of both configs.
std::string config_text(const GeneratorConfig& gen, const DiscConfig& disc);
void parse_config_text(const std::string& text, GeneratorConfig& gen, DiscConfig& disc);

CheckpointData bundle_checkpoint(const ModelBundle& bundle);
/// Rebuilds a bundle from checkpoint data, checking every array shape.
ModelBundle bundle_from_checkpoint(const CheckpointData& data);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);
/// Throws CheckpointError when the stored configs differ from the expected ones.
ModelBundle load_bundle(const std::filesystem::path& path, const GeneratorConfig& gen, const DiscConfig& disc);

}  // namespace vins

#include "vins/models.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vins/error.hpp"

namespace vins {

using ag::Var;

// --- configs ---------------------------------------------------------------

void GeneratorConfig::validate() const {
  patch.validate();
  if (base_filters < 8) throw ValidationError("generator base_filters must be >= 8");
  if (n_levels < 2 || n_levels > 8) throw ValidationError("generator n_levels must be in [2, 8]");
  const int f = 1 << n_levels;
  if (patch.height % f || patch.width % f || patch.height / f < 2 || patch.width / f < 2) {
    throw ValidationError("patch " + std::to_string(patch.height) + "x" + std::to_string(patch.width) +
                          " must be divisible by 2^n_levels with a bottleneck of at least 2x2");
  }
  if (history_len < 0) throw ValidationError("history_len must be >= 0");
  if (static_cast<int>(history_weights.size()) != history_len) {
    throw ValidationError("history_weights must have history_len entries");
  }
  for (double w : history_weights) {
    if (!(w >= 0.0)) throw ValidationError("history weights must be non-negative");
  }
}

void DiscConfig::validate() const {
  if (base_filters < 1) throw ValidationError("discriminator base_filters must be positive");
  if (embedding_hidden < 1) throw ValidationError("embedding_hidden must be positive");
  if (video_window < 1) throw ValidationError("video_window must be positive");
}

const char* conditioning_name(DiscConditioning c) {
  switch (c) {
    case DiscConditioning::Embedding: return "embedding";
    case DiscConditioning::Image: return "image";
    case DiscConditioning::None: return "none";
  }
  return "?";
}

DiscConditioning parse_conditioning(const std::string& s) {
  if (s == "embedding") return DiscConditioning::Embedding;
  if (s == "image") return DiscConditioning::Image;
  if (s == "none") return DiscConditioning::None;
  throw ValidationError("unknown conditioning '" + s + "'");
}

// --- ParamSet ----------------------------------------------------------------

Var& ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, ag::parameter(std::move(init)));
  return entries_.back().second;
}

const Var& ParamSet::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.size();
  return n;
}

void ParamSet::set_requires_grad(bool on) {
  for (auto& [name, v] : entries_) {
    Var copy = v;
    copy.set_requires_grad(on);
  }
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : entries_) {
    Var copy = v;
    copy.zero_grad();
  }
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, v] : entries_) {
    Var& p = out.add(name, v.value());
    p.set_requires_grad(v.requires_grad());
  }
  return out;
}

// --- construction ------------------------------------------------------------

namespace {

struct Spec {
  std::string name;
  Shape shape;
  bool bias;
};

std::vector<Spec> generator_specs(const GeneratorConfig& cfg) {
  std::vector<Spec> s;
  const int L = cfg.n_levels;
  const int h = cfg.history_len > 0 ? 1 : 0;
  for (int l = 0; l < L; ++l) {
    const int in = l == 0 ? 3 : cfg.channels(l - 1);
    s.push_back({"enc" + std::to_string(l) + ".w", {cfg.channels(l), in, 4, 4}, false});
    s.push_back({"enc" + std::to_string(l) + ".b", {cfg.channels(l)}, true});
  }
  for (int l = L - 1; l >= 0; --l) {
    const int ci = l == L - 1 ? cfg.channels(l) * (1 + h) : cfg.channels(l) * (2 + h);
    const int co = l == 0 ? 3 : cfg.channels(l - 1);
    s.push_back({"dec" + std::to_string(l) + ".w", {ci, co, 4, 4}, false});
    s.push_back({"dec" + std::to_string(l) + ".b", {co}, true});
  }
  return s;
}

std::vector<Spec> image_disc_specs(const DiscConfig& cfg, int E) {
  const int d = cfg.base_filters;
  std::vector<Spec> s{{"l0.w", {d, 3, 4, 4}, false}};
  if (cfg.conditioning == DiscConditioning::Embedding) s.push_back({"l0.we", {d, E, 4, 4}, false});
  if (cfg.conditioning == DiscConditioning::Image) s.push_back({"l0.wc", {d, 3, 4, 4}, false});
  s.push_back({"l0.b", {d}, true});
  s.push_back({"l1.w", {2 * d, d, 4, 4}, false});
  s.push_back({"l1.b", {2 * d}, true});
  s.push_back({"l2.w", {4 * d, 2 * d, 4, 4}, false});
  s.push_back({"l2.b", {4 * d}, true});
  s.push_back({"out.w", {1, 4 * d, 3, 3}, false});
  s.push_back({"out.b", {1}, true});
  return s;
}

std::vector<Spec> embedding_disc_specs(const DiscConfig& cfg, int E) {
  return {{"fc1.w", {cfg.embedding_hidden, E}, false},
          {"fc1.b", {cfg.embedding_hidden}, true},
          {"fc2.w", {1, cfg.embedding_hidden}, false},
          {"fc2.b", {1}, true}};
}

std::vector<Spec> video_disc_specs(const DiscConfig& cfg, int E) {
  const int d = cfg.base_filters;
  std::vector<Spec> s{{"l0.w", {d, 3, 3, 4, 4}, false}};
  if (cfg.conditioning == DiscConditioning::Embedding) s.push_back({"l0.we", {d, E, 3, 4, 4}, false});
  if (cfg.conditioning == DiscConditioning::Image) s.push_back({"l0.wc", {d, 3, 3, 4, 4}, false});
  s.push_back({"l0.b", {d}, true});
  s.push_back({"l1.w", {2 * d, d, 3, 4, 4}, false});
  s.push_back({"l1.b", {2 * d}, true});
  s.push_back({"l2.w", {4 * d, 2 * d, 3, 4, 4}, false});
  s.push_back({"l2.b", {4 * d}, true});
  s.push_back({"out.w", {1, 4 * d, 1, 3, 3}, false});
  s.push_back({"out.b", {1}, true});
  return s;
}

Tensor init_tensor(const Spec& s, Rng& rng) {
  Tensor t(s.shape);
  if (!s.bias) {
    for (double& v : t.values()) v = 0.02 * rng.normal();
  }
  return t;
}

ParamSet build(const std::vector<Spec>& specs, Rng& rng) {
  ParamSet p;
  for (const auto& s : specs) p.add(s.name, init_tensor(s, rng));
  return p;
}

void check_shapes(const ParamSet& p, const std::vector<Spec>& specs, const char* what) {
  if (p.size() != specs.size()) throw ValidationError(std::string(what) + ": parameter count mismatch");
  for (const auto& s : specs) {
    if (!p.contains(s.name) || p[s.name].shape() != s.shape) {
      throw ValidationError(std::string(what) + ": parameter '" + s.name + "' missing or mis-shaped");
    }
  }
}

}  // namespace

ModelBundle make_bundle(const GeneratorConfig& gen, const DiscConfig& disc, std::uint64_t seed) {
  gen.validate();
  disc.validate();
  ModelBundle b;
  b.gen = gen;
  b.disc = disc;
  Rng rng(seed);
  const int E = gen.embedding_dim();
  b.g = build(generator_specs(gen), rng);
  b.d_i = build(image_disc_specs(disc, E), rng);
  b.d_e = build(embedding_disc_specs(disc, E), rng);
  if (disc.video) b.d_v = build(video_disc_specs(disc, E), rng);
  return b;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b;
  b.gen = gen;
  b.disc = disc;
  b.g = g.clone();
  b.d_i = d_i.clone();
  b.d_e = d_e.clone();
  b.d_v = d_v.clone();
  b.step = step;
  return b;
}

void ModelBundle::validate() const {
  gen.validate();
  disc.validate();
  const int E = gen.embedding_dim();
  check_shapes(g, generator_specs(gen), "generator");
  check_shapes(d_i, image_disc_specs(disc, E), "image discriminator");
  check_shapes(d_e, embedding_disc_specs(disc, E), "embedding discriminator");
  if (disc.video) {
    check_shapes(d_v, video_disc_specs(disc, E), "video discriminator");
  } else if (d_v.size() != 0) {
    throw ValidationError("video discriminator present but disabled");
  }
  if (step < 0) throw ValidationError("negative step");
}

ModelBundle stage_video_bundle(const ModelBundle& image_bundle, const GeneratorConfig& video_gen,
                               std::uint64_t seed) {
  image_bundle.validate();
  video_gen.validate();
  const GeneratorConfig& ig = image_bundle.gen;
  if (ig.base_filters != video_gen.base_filters || ig.n_levels != video_gen.n_levels || !(ig.patch == video_gen.patch)) {
    throw ValidationError("video generator must share base_filters, n_levels and patch with the image generator");
  }
  DiscConfig disc = image_bundle.disc;
  disc.video = true;
  ModelBundle b = make_bundle(video_gen, disc, seed);
  for (const auto& [name, v] : image_bundle.g.entries()) {
    Tensor& dst = Var(b.g[name]).mutable_value();
    const Tensor& src = v.value();
    // Decoder weights are (Ci, Co, k, k): the image generator's input
    // channels form a leading contiguous block.
    if (src.size() > dst.size()) throw ValidationError("cannot stage parameter '" + name + "'");
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  }
  b.d_i = image_bundle.d_i.clone();
  b.d_e = image_bundle.d_e.clone();
  b.step = 0;
  return b;
}

// --- forward passes ----------------------------------------------------------

namespace {

const ag::ConvOpts kDown = ag::conv2d_opts(2, 1);

}  // namespace

std::vector<Var> encode(const ParamSet& g, const GeneratorConfig& cfg, const Var& x) {
  std::vector<Var> f;
  Var h = x;
  for (int l = 0; l < cfg.n_levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    h = ag::conv(h, g[p + ".w"], g[p + ".b"], kDown);
    if (l > 0 && l < cfg.n_levels - 1) h = ag::instance_norm(h);
    h = ag::leaky_relu(h, 0.2);
    f.push_back(h);
  }
  return f;
}

Var combine_history(std::span<const Var> features, std::span<const double> weights) {
  if (features.empty() || features.size() != weights.size()) {
    throw ValidationError("combine_history: need equally many features and weights (>= 1)");
  }
  return ag::weighted_sum(features, weights);
}

GeneratorGraph generator_forward(const ParamSet& g, const GeneratorConfig& cfg, const Var& blended,
                                 std::span<const Var> history) {
  const Shape want{3, cfg.patch.height, cfg.patch.width};
  if (blended.shape() != want) {
    throw ValidationError("generator input " + shape_string(blended.shape()) + ", expected " + shape_string(want));
  }
  if (static_cast<int>(history.size()) != cfg.history_len) {
    throw ValidationError("generator expects " + std::to_string(cfg.history_len) + " history frames, got " +
                          std::to_string(history.size()));
  }
  const int L = cfg.n_levels;
  const std::vector<Var> f = encode(g, cfg, blended);
  std::vector<Var> fused;
  if (!history.empty()) {
    std::vector<std::vector<Var>> hf;
    for (const Var& h : history) {
      if (h.shape() != want) throw ValidationError("history frame " + shape_string(h.shape()) + ", expected " + shape_string(want));
      hf.push_back(encode(g, cfg, h));
    }
    for (int l = 0; l < L; ++l) {
      std::vector<Var> level;
      for (const auto& e : hf) level.push_back(e[static_cast<std::size_t>(l)]);
      fused.push_back(combine_history(level, cfg.history_weights));
    }
  }
  GeneratorGraph out;
  out.embedding = ag::channel_mean(f.back());
  Var d = f.back();
  if (!fused.empty()) {
    const Var parts[] = {d, fused.back()};
    d = ag::concat(parts);
  }
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    Var y = ag::conv_transpose(d, g[p + ".w"], g[p + ".b"], kDown);
    if (l == 0) {
      out.output = ag::sigmoid(y);
      break;
    }
    y = ag::relu(ag::instance_norm(y));
    std::vector<Var> parts{y, f[static_cast<std::size_t>(l - 1)]};
    if (!fused.empty()) parts.push_back(fused[static_cast<std::size_t>(l - 1)]);
    d = ag::concat(parts);
  }
  return out;
}

namespace {

// First discriminator layer; `cond_is_map` selects an explicit conditioning
// map instead of the fused tiled form.
Var disc_first_layer(const ParamSet& d, const DiscConfig& cfg, const Var& x, const Var& cond,
                     const ag::ConvOpts& opts, bool cond_is_map) {
  Var h = ag::conv(x, d["l0.w"], d["l0.b"], opts);
  switch (cfg.conditioning) {
    case DiscConditioning::None: break;
    case DiscConditioning::Image:
      if (!cond.defined() || cond.shape() != x.shape()) throw ValidationError("image conditioning must match the input shape");
      h = ag::add(h, ag::conv(cond, d["l0.wc"], Var(), opts));
      break;
    case DiscConditioning::Embedding: {
      if (!cond.defined()) throw ValidationError("embedding conditioning missing");
      const Var& we = d["l0.we"];
      if (cond.shape()[0] != we.shape()[1]) {
        throw ValidationError("embedding length " + std::to_string(cond.shape()[0]) + ", expected " +
                              std::to_string(we.shape()[1]));
      }
      if (cond_is_map) {
        h = ag::add(h, ag::conv(cond, we, Var(), opts));
      } else {
        std::vector<int> spatial(x.shape().begin() + 1, x.shape().end());
        h = ag::add(h, ag::tiled_conv(cond, we, spatial, opts));
      }
      break;
    }
  }
  return ag::leaky_relu(h, 0.2);
}

Var image_disc_impl(const ParamSet& d, const DiscConfig& cfg, const Var& image, const Var& cond, bool cond_is_map) {
  if (image.shape().size() != 3 || image.shape()[0] != 3) {
    throw ValidationError("image discriminator input must be (3,H,W), got " + shape_string(image.shape()));
  }
  Var h = disc_first_layer(d, cfg, image, cond, kDown, cond_is_map);
  h = ag::leaky_relu(ag::instance_norm(ag::conv(h, d["l1.w"], d["l1.b"], kDown)), 0.2);
  h = ag::leaky_relu(ag::instance_norm(ag::conv(h, d["l2.w"], d["l2.b"], kDown)), 0.2);
  h = ag::conv(h, d["out.w"], d["out.b"], ag::conv2d_opts(1, 1));
  return ag::mean(h);
}

const ag::ConvOpts kVideoFirst{{1, 2, 2}, {1, 1, 1}};
const ag::ConvOpts kVideoDown{{2, 2, 2}, {1, 1, 1}};
const ag::ConvOpts kVideoOut{{1, 1, 1}, {0, 1, 1}};

Var video_disc_impl(const ParamSet& d, const DiscConfig& cfg, const Var& clip, const Var& cond, bool cond_is_map) {
  const Shape& s = clip.shape();
  if (s.size() != 4 || s[0] != 3) throw ValidationError("video discriminator input must be (3,T,H,W)");
  if (s[1] != cfg.video_window) {
    throw ValidationError("video discriminator expects " + std::to_string(cfg.video_window) + " frames, got " +
                          std::to_string(s[1]));
  }
  if (d.size() == 0) throw ValidationError("bundle has no video discriminator");
  Var h = disc_first_layer(d, cfg, clip, cond, kVideoFirst, cond_is_map);
  h = ag::leaky_relu(ag::instance_norm(ag::conv(h, d["l1.w"], d["l1.b"], kVideoDown)), 0.2);
  h = ag::leaky_relu(ag::instance_norm(ag::conv(h, d["l2.w"], d["l2.b"], kVideoDown)), 0.2);
  h = ag::conv(h, d["out.w"], d["out.b"], kVideoOut);
  return ag::mean(h);
}

}  // namespace

Var image_disc_logit(const ParamSet& d, const DiscConfig& cfg, const Var& image, const Var& cond) {
  if (cfg.conditioning == DiscConditioning::Embedding && cond.defined() && cond.shape().size() != 1) {
    throw ValidationError("embedding conditioning must be a vector");
  }
  return image_disc_impl(d, cfg, image, cond, false);
}

Var embedding_disc_logit(const ParamSet& d, const Var& embedding) {
  const Var& w1 = d["fc1.w"];
  if (embedding.shape() != Shape{w1.shape()[1]}) {
    throw ValidationError("embedding discriminator expects length " + std::to_string(w1.shape()[1]) + ", got " +
                          shape_string(embedding.shape()));
  }
  Var h = ag::leaky_relu(ag::linear(embedding, w1, d["fc1.b"]), 0.2);
  return ag::reshape(ag::linear(h, d["fc2.w"], d["fc2.b"]), {1});
}

Var video_disc_logit(const ParamSet& d, const DiscConfig& cfg, const Var& clip, const Var& cond) {
  if (cfg.conditioning == DiscConditioning::Embedding && cond.defined() && cond.shape().size() != 2) {
    throw ValidationError("video embedding conditioning must be (E,T)");
  }
  return video_disc_impl(d, cfg, clip, cond, false);
}

// --- frame-level wrappers -----------------------------------------------------

Var frame_var(const Frame& f) { return ag::constant(f.pixels); }

Frame var_frame(const Var& v, int index) { return Frame(v.value(), index); }

GeneratorResult forward_generator_image(const ModelBundle& bundle, const Frame& blended) {
  if (bundle.gen.history_len != 0) {
    throw ValidationError("image forward needs a generator without history (history_len = 0)");
  }
  return forward_generator_video(bundle, blended, {});
}

GeneratorResult forward_generator_video(const ModelBundle& bundle, const Frame& blended, std::span<const Frame> history) {
  ag::NoGradGuard ng;
  std::vector<Var> hist;
  for (const auto& h : history) hist.push_back(frame_var(h));
  const GeneratorGraph g = generator_forward(bundle.g, bundle.gen, frame_var(blended), hist);
  return {var_frame(g.output, blended.index), g.embedding.value()};
}

Tensor combine_history_features(std::span<const Tensor> features, std::span<const double> weights) {
  if (features.empty() || features.size() != weights.size()) {
    throw ValidationError("combine_history_features: need equally many features and weights (>= 1)");
  }
  ag::NoGradGuard ng;
  std::vector<Var> vs;
  for (const auto& f : features) vs.push_back(ag::constant(f));
  return combine_history(vs, weights).value();
}

Tensor tile_embedding(const Tensor& e, int h, int w) {
  if (e.ndim() != 1) throw ValidationError("tile_embedding expects a vector");
  if (h < 1 || w < 1) throw ValidationError("tile_embedding: h and w must be >= 1");
  ag::NoGradGuard ng;
  return ag::tile(ag::constant(e), h, w).value();
}

double score_image_disc(const ModelBundle& bundle, const Frame& image, const Tensor& conditioning) {
  ag::NoGradGuard ng;
  Var cond;
  if (bundle.disc.conditioning != DiscConditioning::None) {
    const Shape want{conditioning.ndim() > 0 ? conditioning.dim(0) : 0, image.height(), image.width()};
    if (conditioning.ndim() != 3 || conditioning.shape() != want) {
      throw ValidationError("conditioning must be (C,H,W) matching the image, got " + shape_string(conditioning.shape()));
    }
    cond = ag::constant(conditioning);
  }
  return ag::sigmoid(image_disc_impl(bundle.d_i, bundle.disc, frame_var(image), cond, true)).item();
}

double score_embedding_disc(const ModelBundle& bundle, const Tensor& embedding) {
  ag::NoGradGuard ng;
  return ag::sigmoid(embedding_disc_logit(bundle.d_e, ag::constant(embedding))).item();
}

double score_video_disc(const ModelBundle& bundle, const FrameSequence& clip, std::span<const Tensor> conditioning) {
  ag::NoGradGuard ng;
  std::vector<Var> frames;
  for (const auto& f : clip.frames) frames.push_back(frame_var(f));
  if (frames.empty()) throw ValidationError("empty clip");
  const Var x = ag::stack_time(frames);
  Var cond;
  if (bundle.disc.conditioning != DiscConditioning::None) {
    if (conditioning.size() != clip.size()) throw ValidationError("need one conditioning map per clip frame");
    std::vector<Var> maps;
    for (const auto& c : conditioning) maps.push_back(ag::constant(c));
    cond = ag::stack_time(maps);
  }
  return ag::sigmoid(video_disc_impl(bundle.d_v, bundle.disc, x, cond, true)).item();
}

// --- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'I', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw CheckpointError("checkpoint string length corrupt");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw CheckpointError("checkpoint truncated");
  return s;
}

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put_string(out, data.config);
  put<std::int64_t>(out, data.step);
  put<std::uint64_t>(out, data.meta.size());
  for (const auto& [k, v] : data.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint64_t>(out, data.arrays.size());
  for (const auto& [name, t] : data.arrays) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  out.write(kMagic, sizeof kMagic);
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic header)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  data.config = get_string(in);
  data.step = get<std::int64_t>(in);
  const auto n_meta = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(in);
    data.meta[k] = get_string(in);
  }
  const auto n_arrays = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    std::string name = get_string(in);
    const auto nd = get<std::uint32_t>(in);
    if (nd > 8) throw CheckpointError("array '" + name + "' has a corrupt rank");
    Shape shape;
    for (std::uint32_t k = 0; k < nd; ++k) {
      const auto d = get<std::int32_t>(in);
      if (d < 0) throw CheckpointError("array '" + name + "' has a negative extent");
      shape.push_back(d);
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint truncated in array '" + name + "'");
    data.arrays.emplace_back(std::move(name), std::move(t));
  }
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError("checkpoint trailer missing");
  return data;
}

std::string config_text(const GeneratorConfig& gen, const DiscConfig& disc) {
  std::ostringstream s;
  s << "gen.base_filters=" << gen.base_filters << '\n'
    << "gen.n_levels=" << gen.n_levels << '\n'
    << "gen.patch_height=" << gen.patch.height << '\n'
    << "gen.patch_width=" << gen.patch.width << '\n'
    << "gen.history_len=" << gen.history_len << '\n'
    << "gen.history_weights=";
  for (std::size_t i = 0; i < gen.history_weights.size(); ++i) s << (i ? "," : "") << num(gen.history_weights[i]);
  s << '\n'
    << "disc.base_filters=" << disc.base_filters << '\n'
    << "disc.embedding_hidden=" << disc.embedding_hidden << '\n'
    << "disc.video_window=" << disc.video_window << '\n'
    << "disc.conditioning=" << conditioning_name(disc.conditioning) << '\n'
    << "disc.video=" << (disc.video ? 1 : 0) << '\n';
  return s.str();
}

void parse_config_text(const std::string& text, GeneratorConfig& gen, DiscConfig& disc) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("corrupt config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw CheckpointError("config block lacks '" + k + "'");
    return it->second;
  };
  auto as_int = [&](const std::string& k) { return std::stoi(need(k)); };
  try {
    gen.base_filters = as_int("gen.base_filters");
    gen.n_levels = as_int("gen.n_levels");
    gen.patch.height = as_int("gen.patch_height");
    gen.patch.width = as_int("gen.patch_width");
    gen.history_len = as_int("gen.history_len");
    gen.history_weights.clear();
    std::istringstream ws(need("gen.history_weights"));
    std::string w;
    while (std::getline(ws, w, ',')) {
      if (!w.empty()) gen.history_weights.push_back(std::stod(w));
    }
    disc.base_filters = as_int("disc.base_filters");
    disc.embedding_hidden = as_int("disc.embedding_hidden");
    disc.video_window = as_int("disc.video_window");
    disc.conditioning = parse_conditioning(need("disc.conditioning"));
    disc.video = as_int("disc.video") != 0;
  } catch (const std::logic_error& e) {
    throw CheckpointError(std::string("corrupt config block: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("corrupt config block: ") + e.what());
  }
}

CheckpointData bundle_checkpoint(const ModelBundle& bundle) {
  CheckpointData data;
  data.config = config_text(bundle.gen, bundle.disc);
  data.step = bundle.step;
  auto add = [&](const char* prefix, const ParamSet& p) {
    for (const auto& [name, v] : p.entries()) data.arrays.emplace_back(std::string(prefix) + name, v.value());
  };
  add("g/", bundle.g);
  add("d_i/", bundle.d_i);
  add("d_e/", bundle.d_e);
  add("d_v/", bundle.d_v);
  return data;
}

ModelBundle bundle_from_checkpoint(const CheckpointData& data) {
  GeneratorConfig gen;
  DiscConfig disc;
  parse_config_text(data.config, gen, disc);
  ModelBundle b;
  try {
    b = make_bundle(gen, disc, 0);
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  std::map<std::string, const Tensor*> arrays;
  for (const auto& [name, t] : data.arrays) arrays[name] = &t;
  auto fill = [&](const char* prefix, ParamSet& p) {
    for (const auto& [name, v] : p.entries()) {
      const auto it = arrays.find(std::string(prefix) + name);
      if (it == arrays.end()) throw CheckpointError("checkpoint lacks parameter '" + std::string(prefix) + name + "'");
      if (it->second->shape() != v.shape()) {
        throw CheckpointError("parameter '" + std::string(prefix) + name + "' has shape " +
                              shape_string(it->second->shape()) + ", expected " + shape_string(v.shape()));
      }
      Var(v).mutable_value() = *it->second;
    }
  };
  fill("g/", b.g);
  fill("d_i/", b.d_i);
  fill("d_e/", b.d_e);
  fill("d_v/", b.d_v);
  b.step = data.step;
  return b;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  write_checkpoint(path, bundle_checkpoint(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from_checkpoint(read_checkpoint(path)); }

ModelBundle load_bundle(const std::filesystem::path& path, const GeneratorConfig& gen, const DiscConfig& disc) {
  const CheckpointData data = read_checkpoint(path);
  const std::string want = config_text(gen, disc);
  if (data.config != want) {
    throw CheckpointError("checkpoint config mismatch:\nstored:\n" + data.config + "expected:\n" + want);
  }
  return bundle_from_checkpoint(data);
}

}  // namespace vins

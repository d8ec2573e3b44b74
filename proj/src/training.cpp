#include "vins/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vins/error.hpp"

namespace vins {

using ag::Var;

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lambda_fake >= 0.0)) throw ValidationError("lambda_fake must be >= 0");
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be >= 0");
  if (iters < 0) throw ValidationError("iters must be >= 0");
  if (sequence_length < 0) throw ValidationError("sequence_length must be >= 0");
}

// --- Adam ---------------------------------------------------------------------------

void Adam::step(std::span<const std::pair<std::string, ParamSet*>> groups, const TrainConfig& cfg) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (const auto& [prefix, params] : groups) {
    for (const auto& [name, p] : params->entries()) {
      Var v = p;
      Tensor& value = v.mutable_value();
      auto [it, fresh] = moments_.try_emplace(prefix + "/" + name);
      Moments& mo = it->second;
      if (fresh) {
        mo.m = Tensor(value.shape());
        mo.v = Tensor(value.shape());
      }
      const Tensor& g = p.grad();
      const bool has_grad = !g.empty();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gi = has_grad ? g[i] : 0.0;
        mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * gi;
        mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * gi * gi;
        value[i] -= cfg.lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg.adam_eps);
      }
    }
  }
}

void Adam::save(CheckpointData& out, const std::string& prefix) const {
  out.meta[prefix + "t"] = std::to_string(t_);
  for (const auto& [key, mo] : moments_) {
    out.arrays.emplace_back(prefix + "m/" + key, mo.m);
    out.arrays.emplace_back(prefix + "v/" + key, mo.v);
  }
}

void Adam::load(const CheckpointData& in, const std::string& prefix) {
  const auto t = in.meta.find(prefix + "t");
  if (t == in.meta.end()) throw CheckpointError("checkpoint lacks optimiser state '" + prefix + "'");
  t_ = std::stoll(t->second);
  moments_.clear();
  const std::string pm = prefix + "m/", pv = prefix + "v/";
  for (const auto& [name, tensor] : in.arrays) {
    if (name.starts_with(pm)) moments_[name.substr(pm.size())].m = tensor;
    if (name.starts_with(pv)) moments_[name.substr(pv.size())].v = tensor;
  }
  for (const auto& [key, mo] : moments_) {
    if (mo.m.empty() || !mo.m.same_shape(mo.v)) throw CheckpointError("incomplete optimiser moments for '" + key + "'");
  }
}

bool operator==(const Adam& a, const Adam& b) {
  if (a.t_ != b.t_ || a.moments_.size() != b.moments_.size()) return false;
  for (const auto& [key, mo] : a.moments_) {
    const auto it = b.moments_.find(key);
    if (it == b.moments_.end()) return false;
    const auto eq = [](const Tensor& x, const Tensor& y) { return std::ranges::equal(x.values(), y.values()); };
    if (!eq(mo.m, it->second.m) || !eq(mo.v, it->second.v)) return false;
  }
  return true;
}

TrainState make_train_state(ModelBundle bundle, std::uint64_t seed) {
  bundle.validate();
  return TrainState{std::move(bundle), std::nullopt, {}, {}, Rng(seed)};
}

// --- noise ---------------------------------------------------------------------------

std::vector<Frame> inject_history_noise(std::vector<Frame> frames, double noise_std, Rng& rng) {
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be >= 0");
  if (noise_std == 0.0) return frames;
  for (Frame& f : frames) {
    for (double& v : f.pixels.values()) v = std::clamp(v + noise_std * rng.normal(), 0.0, 1.0);
  }
  return frames;
}

// --- step helpers ----------------------------------------------------------------------

namespace {

using Groups = std::vector<std::pair<std::string, ParamSet*>>;

void set_trainable(const Groups& groups, bool on) {
  for (const auto& [_, p] : groups) p->set_requires_grad(on);
}

void zero_grads(const Groups& groups) {
  for (const auto& [_, p] : groups) p->zero_grad();
}

Groups concat(Groups a, const Groups& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

LossReport average(std::span<const LossReport> rs) {
  LossReport out;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    out.total += r.total / n;
    for (const auto& [name, v] : r.components) out.components[name] += v / n;
    out.weights.insert(r.weights.begin(), r.weights.end());
  }
  return out;
}

void check_finite(const LossReport& r, const char* side) {
  for (const auto& [name, v] : r.components) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(side) + "." + name, v);
  }
  if (!std::isfinite(r.total)) throw NonFiniteError(std::string(side) + ".total", r.total);
}

// Averages a batch of LossTerms into one graph total and one report.
struct Combined {
  Var total;
  LossReport report;
};

Combined combine(const std::vector<LossTerms>& terms) {
  std::vector<LossReport> reports;
  Var acc;
  for (const auto& t : terms) {
    reports.push_back(t.report());
    const Var v = t.total();
    acc = acc.defined() ? ag::add(acc, v) : v;
  }
  return {ag::scale(acc, 1.0 / static_cast<double>(terms.size())), average(reports)};
}

// D update, then G update with D frozen.
template <class DTerms, class GTerms>
StepReport alternate(TrainState& state, const TrainConfig& cfg, const Groups& g_groups, const Groups& d_groups,
                     DTerms&& d_terms, GTerms&& g_terms) {
  const Groups all = concat(g_groups, d_groups);
  zero_grads(all);
  StepReport rep;

  Combined d = d_terms();
  check_finite(d.report, "d");
  ag::backward(d.total);
  state.d_opt.step(d_groups, cfg);
  zero_grads(all);

  set_trainable(d_groups, false);
  try {
    Combined g = g_terms();
    check_finite(g.report, "g");
    ag::backward(g.total);
    rep.g = std::move(g.report);
  } catch (...) {
    set_trainable(d_groups, true);
    zero_grads(all);
    throw;
  }
  set_trainable(d_groups, true);
  state.g_opt.step(g_groups, cfg);
  zero_grads(all);

  rep.d = std::move(d.report);
  rep.step = ++state.bundle.step;
  return rep;
}

Groups generator_groups(TrainState& s) {
  Groups g{{"g", &s.bundle.g}};
  if (s.aux) g.emplace_back("aux.g", &s.aux->g);
  return g;
}

template <class T>
void require_nonempty(std::span<const T> xs) {
  if (xs.empty()) throw ValidationError("training step needs at least one batch");
}

}  // namespace

StepReport train_step_image(TrainState& state, std::span<const TrainingBatch> batches, const TrainConfig& cfg) {
  cfg.validate();
  require_nonempty<std::decay_t<decltype(batches[0])>>(batches);
  ModelBundle& b = state.bundle;
  const Groups g_groups = generator_groups(state);
  const Groups d_groups{{"d_i", &b.d_i}, {"d_e", &b.d_e}};
  set_trainable(concat(g_groups, d_groups), true);

  // One generator pass serves both updates: the D terms only see detached
  // outputs and the G terms are built after the D update.
  std::vector<PairForward> fwd;
  for (const auto& batch : batches) fwd.push_back(forward_pairs(b, batch));
  return alternate(
      state, cfg, g_groups, d_groups,
      [&] {
        std::vector<LossTerms> t;
        for (std::size_t i = 0; i < batches.size(); ++i)
          t.push_back(image_discriminator_terms(b, batches[i], fwd[i], cfg.lambda_fake));
        return combine(t);
      },
      [&] {
        std::vector<LossTerms> t;
        for (std::size_t i = 0; i < batches.size(); ++i)
          t.push_back(image_generator_terms(b, batches[i], fwd[i], cfg.lambda_fake));
        return combine(t);
      });
}

StepReport train_step_image(TrainState& state, const TrainingBatch& batch, const TrainConfig& cfg) {
  return train_step_image(state, std::span<const TrainingBatch>(&batch, 1), cfg);
}

StepReport train_step_video(TrainState& state, std::span<const SequenceBatch> batches, const TrainConfig& cfg) {
  cfg.validate();
  require_nonempty<std::decay_t<decltype(batches[0])>>(batches);
  ModelBundle& b = state.bundle;
  if (!b.disc.video) throw ValidationError("video training needs a bundle with a video discriminator");
  for (const auto& s : batches) {
    if (static_cast<int>(s.length()) < b.disc.video_window) {
      throw ValidationError("sequence length " + std::to_string(s.length()) + " is shorter than the video window");
    }
  }
  const Groups g_groups = generator_groups(state);
  const Groups d_groups{{"d_i", &b.d_i}, {"d_e", &b.d_e}, {"d_v", &b.d_v}};
  set_trainable(concat(g_groups, d_groups), true);

  const HistoryTransform noise = [&](std::vector<Frame> h) {
    return inject_history_noise(std::move(h), cfg.noise_std, state.rng);
  };
  std::vector<FramePicks> picks;
  std::vector<SequenceForward> fwd;
  for (const auto& s : batches) {
    picks.push_back(pick_frames(static_cast<int>(s.length()), state.rng));
    fwd.push_back(forward_sequences(b, s, noise));
  }
  return alternate(
      state, cfg, g_groups, d_groups,
      [&] {
        std::vector<LossTerms> t;
        for (std::size_t i = 0; i < batches.size(); ++i)
          t.push_back(video_discriminator_terms(b, batches[i], fwd[i], picks[i], cfg.lambda_fake));
        return combine(t);
      },
      [&] {
        std::vector<LossTerms> t;
        for (std::size_t i = 0; i < batches.size(); ++i)
          t.push_back(video_generator_terms(b, batches[i], fwd[i], picks[i], cfg.lambda_fake));
        return combine(t);
      });
}

StepReport train_step_video(TrainState& state, const SequenceBatch& batch, const TrainConfig& cfg) {
  return train_step_video(state, std::span<const SequenceBatch>(&batch, 1), cfg);
}

StepReport train_step_baseline(TrainState& state, BaselineKind kind, std::span<const TrainingBatch> batches,
                               const TrainConfig& cfg, const FeatureExtractor* extractor) {
  cfg.validate();
  require_nonempty<std::decay_t<decltype(batches[0])>>(batches);
  if (kind == BaselineKind::Cycle && !state.aux) throw ValidationError("cycle baseline needs an aux bundle in the state");
  ModelBundle& b = state.bundle;
  const ModelBundle* aux = state.aux ? &*state.aux : nullptr;
  const Groups g_groups = generator_groups(state);
  Groups d_groups{{"d_i", &b.d_i}};
  if (state.aux) d_groups.emplace_back("aux.d_i", &state.aux->d_i);
  set_trainable(concat(g_groups, d_groups), true);

  // Baseline terms build G and D together, so each side gets its own pass.
  auto side = [&](bool disc) {
    std::vector<LossTerms> t;
    for (const auto& batch : batches) {
      BaselineTerms bt = baseline_terms(kind, b, aux, batch, extractor);
      t.push_back(std::move(disc ? bt.d : bt.g));
    }
    return combine(t);
  };
  return alternate(
      state, cfg, g_groups, d_groups,
      [&] {
        set_trainable(g_groups, false);
        Combined c = side(true);
        set_trainable(g_groups, true);
        return c;
      },
      [&] { return side(false); });
}

StepReport train_step_baseline(TrainState& state, BaselineKind kind, const TrainingBatch& batch,
                               const TrainConfig& cfg, const FeatureExtractor* extractor) {
  return train_step_baseline(state, kind, std::span<const TrainingBatch>(&batch, 1), cfg, extractor);
}

// --- sampling ----------------------------------------------------------------------------

namespace {

std::pair<const VideoData*, const VideoData*> pick_videos(const Dataset& data, Rng& rng) {
  const std::size_t n = data.videos.size();
  if (n < 2) throw ValidationError("training needs at least two videos");
  const std::size_t a = rng.index(n);
  std::size_t b = rng.index(n - 1);
  if (b >= a) ++b;
  return {&data.videos[a], &data.videos[b]};
}

}  // namespace

TrainingBatch draw_batch(const Dataset& data, Rng& rng, const BatchOptions& options) {
  const auto [a, b] = pick_videos(data, rng);
  return sample_training_batch(*a, *b, rng, options);
}

SequenceBatch draw_sequence(const Dataset& data, int length, Rng& rng, const BatchOptions& options) {
  const auto [a, b] = pick_videos(data, rng);
  return sample_sequence_batch(*a, *b, length, rng, options);
}

int effective_sequence_length(const TrainConfig& cfg, const ModelBundle& bundle) {
  const int len = cfg.sequence_length > 0 ? cfg.sequence_length : bundle.gen.history_len + bundle.disc.video_window;
  if (len < bundle.disc.video_window) {
    throw ValidationError("sequence_length " + std::to_string(len) + " is shorter than the video window");
  }
  return len;
}

// --- loops ---------------------------------------------------------------------------------

namespace {

void check_patch(const ModelBundle& b, const BatchOptions& options) {
  if (!(b.gen.patch == options.patch)) {
    throw ValidationError("batch patch size differs from the generator patch size");
  }
}

}  // namespace

void train_image(TrainState& state, const Dataset& data, const TrainConfig& cfg, const BatchOptions& options,
                 const StepCallback& on_step) {
  cfg.validate();
  check_patch(state.bundle, options);
  while (state.step() < cfg.iters) {
    std::vector<TrainingBatch> batches;
    for (int i = 0; i < cfg.batch_size; ++i) batches.push_back(draw_batch(data, state.rng, options));
    const StepReport r = train_step_image(state, batches, cfg);
    if (on_step) on_step(r);
  }
}

void train_video(TrainState& state, const Dataset& data, const TrainConfig& cfg, const BatchOptions& options,
                 const StepCallback& on_step) {
  cfg.validate();
  check_patch(state.bundle, options);
  const int len = effective_sequence_length(cfg, state.bundle);
  while (state.step() < cfg.iters) {
    std::vector<SequenceBatch> batches;
    for (int i = 0; i < cfg.batch_size; ++i) batches.push_back(draw_sequence(data, len, state.rng, options));
    const StepReport r = train_step_video(state, batches, cfg);
    if (on_step) on_step(r);
  }
}

void train_baseline(TrainState& state, BaselineKind kind, const Dataset& data, const TrainConfig& cfg,
                    const BatchOptions& options, const StepCallback& on_step) {
  cfg.validate();
  check_patch(state.bundle, options);
  while (state.step() < cfg.iters) {
    std::vector<TrainingBatch> batches;
    for (int i = 0; i < cfg.batch_size; ++i) batches.push_back(draw_batch(data, state.rng, options));
    const StepReport r = train_step_baseline(state, kind, batches, cfg);
    if (on_step) on_step(r);
  }
}

std::string format_log_line(const StepReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "step=" << r.step;
  for (const auto& [side, rep] : {std::pair{"g", &r.g}, std::pair{"d", &r.d}}) {
    os << ' ' << side << ".total=" << rep->total;
    for (const auto& [name, v] : rep->components) os << ' ' << side << '.' << name << '=' << v;
  }
  return os.str();
}

// --- checkpoints -------------------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  CheckpointData data = bundle_checkpoint(state.bundle);
  data.meta["kind"] = "train-state";
  data.meta["rng"] = state.rng.state();
  state.g_opt.save(data, "opt_g/");
  state.d_opt.save(data, "opt_d/");
  if (state.aux) {
    const CheckpointData aux = bundle_checkpoint(*state.aux);
    data.meta["aux_config"] = aux.config;
    data.meta["aux_step"] = std::to_string(aux.step);
    for (const auto& [name, t] : aux.arrays) data.arrays.emplace_back("aux/" + name, t);
  }
  write_checkpoint(path, data);
}

namespace {

TrainState state_from(const CheckpointData& data) {
  const auto kind = data.meta.find("kind");
  if (kind == data.meta.end() || kind->second != "train-state") {
    throw CheckpointError("checkpoint holds model weights only, not a training state");
  }
  TrainState s{bundle_from_checkpoint(data), std::nullopt, {}, {}, Rng()};
  s.rng.set_state(data.meta.at("rng"));
  s.g_opt.load(data, "opt_g/");
  s.d_opt.load(data, "opt_d/");
  if (const auto aux = data.meta.find("aux_config"); aux != data.meta.end()) {
    CheckpointData a;
    a.config = aux->second;
    a.step = std::stoll(data.meta.at("aux_step"));
    for (const auto& [name, t] : data.arrays) {
      if (name.starts_with("aux/")) a.arrays.emplace_back(name.substr(4), t);
    }
    s.aux = bundle_from_checkpoint(a);
  }
  return s;
}

}  // namespace

TrainState load_checkpoint(const std::filesystem::path& path) { return state_from(read_checkpoint(path)); }

TrainState load_checkpoint(const std::filesystem::path& path, const GeneratorConfig& gen, const DiscConfig& disc) {
  const CheckpointData data = read_checkpoint(path);
  const std::string want = config_text(gen, disc);
  if (data.config != want) {
    throw CheckpointError("checkpoint config mismatch:\nstored:\n" + data.config + "expected:\n" + want);
  }
  return state_from(data);
}

}  // namespace vins

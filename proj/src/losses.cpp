#include "vins/losses.hpp"

#include <cmath>

#include "vins/error.hpp"

namespace vins {

using ag::Var;

// --- reports -------------------------------------------------------------------

double LossReport::weighted_sum() const {
  double s = 0.0;
  for (const auto& [name, v] : components) s += weights.at(name) * v;
  return s;
}

double LossReport::component(const std::string& name) const {
  const auto it = components.find(name);
  if (it == components.end()) throw ValidationError("no loss component '" + name + "'");
  return it->second;
}

void LossTerms::add(const std::string& name, double weight, Var value) {
  if (value.size() != 1) throw ValidationError("loss term '" + name + "' is not a scalar");
  for (const auto& t : terms_) {
    if (t.name == name) throw ValidationError("duplicate loss term '" + name + "'");
  }
  terms_.push_back({name, weight, std::move(value)});
}

Var LossTerms::total() const {
  if (terms_.empty()) throw ValidationError("empty loss");
  Var acc = ag::scale(terms_[0].value, terms_[0].weight);
  for (std::size_t i = 1; i < terms_.size(); ++i) acc = ag::add(acc, ag::scale(terms_[i].value, terms_[i].weight));
  return acc;
}

void LossTerms::append(const LossTerms& other) {
  for (const auto& t : other.terms_) add(t.name, t.weight, t.value);
}

LossReport LossTerms::report() const {
  LossReport r;
  for (const auto& t : terms_) {
    const double v = t.value.item();
    r.components[t.name] = v;
    r.weights[t.name] = t.weight;
    r.total += t.weight * v;
  }
  return r;
}

// --- scalar forms ----------------------------------------------------------------

namespace {

void check_score(double s) {
  if (!(s > 0.0 && s < 1.0)) throw ValidationError("score must lie in (0, 1), got " + std::to_string(s));
}

}  // namespace

double adversarial_term(double score, bool target_is_real, Role role) {
  check_score(score);
  if (role == Role::Generator || target_is_real) return -std::log(score);
  return -std::log1p(-score);
}

double reconstruction_loss(const Frame& output, const Frame& target) {
  if (!output.pixels.same_shape(target.pixels)) {
    throw ValidationError("reconstruction_loss: shape mismatch " + shape_string(output.pixels.shape()) + " vs " +
                          shape_string(target.pixels.shape()));
  }
  if (output.pixels.empty()) throw ValidationError("reconstruction_loss: empty frames");
  double s = 0.0;
  for (std::size_t i = 0; i < output.pixels.size(); ++i) s += std::abs(output.pixels[i] - target.pixels[i]);
  return s / static_cast<double>(output.pixels.size());
}

double embedding_adversarial(const EmbeddingScores& s, Role role) {
  check_score(s.fake_a);
  check_score(s.fake_b);
  check_score(s.real);
  if (role == Role::Generator) return -std::log(s.real);
  return -std::log(s.fake_a) - std::log(s.fake_b) - std::log1p(-s.real);
}

// --- graph forms ------------------------------------------------------------------

Var adversarial_from_logit(const Var& logit, bool target_real) {
  return ag::reshape(ag::softplus(target_real ? ag::scale(logit, -1.0) : logit), {1});
}

Var l1_loss(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("l1_loss: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  return ag::reshape(ag::mean(ag::abs(ag::sub(a, b))), {1});
}

namespace {

Var mask_tensor(const Shape& s, const BinaryMask& m, bool inverse) {
  if (s.size() != 3 || s[1] != m.height || s[2] != m.width) {
    throw ValidationError("mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                          " does not fit " + shape_string(s));
  }
  Tensor t(s);
  const std::size_t plane = m.values.size();
  for (int c = 0; c < s[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] = (m.values[i] != 0) != inverse ? 1.0 : 0.0;
  return ag::constant(std::move(t));
}

}  // namespace

Var apply_mask(const Var& x, const BinaryMask& m) { return ag::mul(x, mask_tensor(x.shape(), m, false)); }

Var apply_inverse_mask(const Var& x, const BinaryMask& m) { return ag::mul(x, mask_tensor(x.shape(), m, true)); }

// --- extractors --------------------------------------------------------------------

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int channels) {
  Rng rng(seed);
  auto he = [&](Shape s) {
    Tensor t(s);
    const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
    for (double& v : t.values()) v = rng.normal() * std::sqrt(2.0 / fan_in);
    return ag::constant(std::move(t));
  };
  w1_ = he({channels, 3, 3, 3});
  b1_ = ag::constant(Tensor({channels}));
  w2_ = he({channels, channels, 3, 3});
  b2_ = ag::constant(Tensor({channels}));
  w3_ = he({2 * channels, channels, 3, 3});
  b3_ = ag::constant(Tensor({2 * channels}));
}

std::vector<Var> RandomConvExtractor::features(const Var& x) const {
  const Var h1 = ag::relu(ag::conv(x, w1_, b1_, ag::conv2d_opts(1, 1)));
  const Var h2 = ag::relu(ag::conv(h1, w2_, b2_, ag::conv2d_opts(2, 1)));
  const Var h3 = ag::relu(ag::conv(h2, w3_, b3_, ag::conv2d_opts(2, 1)));
  return {h2, h3};
}

Var perceptual_graph(const Var& a, const Var& b, const FeatureExtractor& extractor, const BinaryMask* mask) {
  if (a.shape() != b.shape()) {
    throw ValidationError("perceptual: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Var am = mask ? apply_mask(a, *mask) : a;
  const Var bm = mask ? apply_mask(b, *mask) : b;
  const auto fa = extractor.features(am);
  const auto fb = extractor.features(bm);
  if (fa.empty() || fa.size() != fb.size()) throw ValidationError("perceptual: extractor layer mismatch");
  Var acc;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    if (fa[l].shape() != fb[l].shape() || fa[l].shape().size() != 3) {
      throw ValidationError("perceptual: layer " + std::to_string(l) + " must be (C,H,W) on both inputs");
    }
    const Var d = ag::mean(ag::square(ag::sub(fa[l], fb[l])));
    acc = acc.defined() ? ag::add(acc, d) : d;
  }
  return ag::reshape(acc, {1});
}

double perceptual_distance(const Frame& a, const Frame& b, const FeatureExtractor& extractor, const BinaryMask* mask) {
  ag::NoGradGuard ng;
  return perceptual_graph(frame_var(a), frame_var(b), extractor, mask).item();
}

// --- image objective -----------------------------------------------------------------

namespace {

Var image_logit(const ModelBundle& b, const Var& image, const Var& emb, const Var& blended) {
  switch (b.disc.conditioning) {
    case DiscConditioning::Embedding: return image_disc_logit(b.d_i, b.disc, image, ag::detach(emb));
    case DiscConditioning::Image: return image_disc_logit(b.d_i, b.disc, image, blended);
    case DiscConditioning::None: break;
  }
  return image_disc_logit(b.d_i, b.disc, image, Var());
}

GeneratorGraph run_generator(const ModelBundle& b, const Frame& input) {
  if (b.gen.history_len != 0) {
    // An image batch on a video generator: history is the input itself.
    std::vector<Var> h(static_cast<std::size_t>(b.gen.history_len), frame_var(input));
    return generator_forward(b.g, b.gen, frame_var(input), h);
  }
  return generator_forward(b.g, b.gen, frame_var(input), {});
}

}  // namespace

PairForward forward_pairs(const ModelBundle& bundle, const TrainingBatch& batch) {
  batch.validate();
  const auto fa = run_generator(bundle, batch.fake_a.input);
  const auto fb = run_generator(bundle, batch.fake_b.input);
  const auto re = run_generator(bundle, batch.real.input);
  return {fa.output, fb.output, re.output, fa.embedding, fb.embedding, re.embedding};
}

LossTerms image_generator_terms(const ModelBundle& b, const TrainingBatch& batch, const PairForward& f, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda_fake must be >= 0");
  LossTerms t;
  const Var in_fa = frame_var(batch.fake_a.input), in_fb = frame_var(batch.fake_b.input), in_re = frame_var(batch.real.input);
  t.add("adv_DI_fakeA", lambda, adversarial_from_logit(image_logit(b, f.out_fake_a, f.emb_fake_a, in_fa), true));
  t.add("adv_DI_fakeB", lambda, adversarial_from_logit(image_logit(b, f.out_fake_b, f.emb_fake_b, in_fb), true));
  t.add("adv_DI_real", 1.0, adversarial_from_logit(image_logit(b, f.out_real, f.emb_real, in_re), true));
  t.add("adv_DE_real", 1.0, adversarial_from_logit(embedding_disc_logit(b.d_e, f.emb_real), true));
  t.add("recon_fakeA", lambda, l1_loss(f.out_fake_a, frame_var(*batch.fake_a.target)));
  t.add("recon_fakeB", lambda, l1_loss(f.out_fake_b, frame_var(*batch.fake_b.target)));
  return t;
}

LossTerms image_discriminator_terms(const ModelBundle& b, const TrainingBatch& batch, const PairForward& f,
                                    double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda_fake must be >= 0");
  LossTerms t;
  const Var in_fa = frame_var(batch.fake_a.input), in_fb = frame_var(batch.fake_b.input), in_re = frame_var(batch.real.input);
  const Var u_b = frame_var(batch.src.u_b);
  t.add("adv_DI_fakeA_pos", lambda, adversarial_from_logit(image_logit(b, u_b, f.emb_fake_a, in_fa), true));
  t.add("adv_DI_fakeB_pos", lambda, adversarial_from_logit(image_logit(b, u_b, f.emb_fake_b, in_fb), true));
  t.add("adv_DI_fakeA_neg", lambda,
        adversarial_from_logit(image_logit(b, ag::detach(f.out_fake_a), f.emb_fake_a, in_fa), false));
  t.add("adv_DI_fakeB_neg", lambda,
        adversarial_from_logit(image_logit(b, ag::detach(f.out_fake_b), f.emb_fake_b, in_fb), false));
  t.add("adv_DI_real_neg", 1.0, adversarial_from_logit(image_logit(b, ag::detach(f.out_real), f.emb_real, in_re), false));
  t.add("adv_DE_fakeA", lambda, adversarial_from_logit(embedding_disc_logit(b.d_e, ag::detach(f.emb_fake_a)), true));
  t.add("adv_DE_fakeB", lambda, adversarial_from_logit(embedding_disc_logit(b.d_e, ag::detach(f.emb_fake_b)), true));
  t.add("adv_DE_real", 1.0, adversarial_from_logit(embedding_disc_logit(b.d_e, ag::detach(f.emb_real)), false));
  return t;
}

ObjectiveReports image_objective(const ModelBundle& bundle, const TrainingBatch& batch, double lambda_fake) {
  ag::NoGradGuard ng;
  const PairForward f = forward_pairs(bundle, batch);
  return {image_generator_terms(bundle, batch, f, lambda_fake).report(),
          image_discriminator_terms(bundle, batch, f, lambda_fake).report()};
}

// --- video objective -------------------------------------------------------------------

std::vector<GeneratorGraph> rollout(const ModelBundle& bundle, std::span<const Frame> inputs,
                                    const HistoryTransform& transform) {
  const int N = bundle.gen.history_len;
  std::vector<GeneratorGraph> out;
  if (inputs.empty()) return out;
  std::vector<Frame> past;  // most recent last
  if (N > 0) {
    Frame boot;
    {
      ag::NoGradGuard ng;
      std::vector<Var> h(static_cast<std::size_t>(N), frame_var(inputs[0]));
      boot = var_frame(generator_forward(bundle.g, bundle.gen, frame_var(inputs[0]), h).output, inputs[0].index);
    }
    past.assign(static_cast<std::size_t>(N), boot);
  }
  for (const Frame& x : inputs) {
    std::vector<Frame> hist(past.end() - N, past.end());
    if (transform && N > 0) hist = transform(std::move(hist));
    std::vector<Var> hv;
    for (const auto& h : hist) hv.push_back(frame_var(h));
    out.push_back(generator_forward(bundle.g, bundle.gen, frame_var(x), hv));
    if (N > 0) past.push_back(var_frame(out.back().output, x.index));
  }
  return out;
}

SequenceForward forward_sequences(const ModelBundle& bundle, const SequenceBatch& seq, const HistoryTransform& transform) {
  SequenceForward f;
  auto run = [&](PairKind kind, std::vector<Var>& outs, std::vector<Var>& embs) {
    const auto inputs = seq.inputs(kind);
    for (auto& g : rollout(bundle, inputs, transform)) {
      outs.push_back(g.output);
      embs.push_back(g.embedding);
    }
  };
  run(PairKind::FakeA, f.out_fake_a, f.emb_fake_a);
  run(PairKind::FakeB, f.out_fake_b, f.emb_fake_b);
  run(PairKind::Real, f.out_real, f.emb_real);
  return f;
}

FramePicks pick_frames(int length, Rng& rng) {
  if (length < 1) throw ValidationError("pick_frames: empty sequence");
  const auto n = static_cast<std::size_t>(length);
  FramePicks p;
  p.fake_a = static_cast<int>(rng.index(n));
  p.fake_b = static_cast<int>(rng.index(n));
  p.real = static_cast<int>(rng.index(n));
  return p;
}

namespace {

Var mean_of(const std::vector<Var>& xs) {
  Var acc = xs.at(0);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ag::add(acc, xs[i]);
  return ag::scale(acc, 1.0 / static_cast<double>(xs.size()));
}

// (E) vectors -> (E, T).
Var stack_embeddings(std::span<const Var> es) {
  std::vector<Var> cols;
  for (const auto& e : es) cols.push_back(ag::reshape(e, {e.shape()[0], 1, 1}));
  const Var s = ag::stack_time(cols);
  return ag::reshape(s, {s.shape()[0], s.shape()[1]});
}

struct VideoCtx {
  const ModelBundle& b;
  int window;
  int windows;
};

VideoCtx video_ctx(const ModelBundle& b, const SequenceBatch& seq) {
  const int T = static_cast<int>(seq.length());
  const int W = b.disc.video_window;
  if (!b.disc.video) throw ValidationError("bundle has no video discriminator");
  if (T < W) {
    throw ValidationError("sequence length " + std::to_string(T) + " is shorter than the video window " + std::to_string(W));
  }
  return {b, W, T / W};
}

// Mean D_V adversarial loss over non-overlapping windows.
Var video_adv(const VideoCtx& c, const std::vector<Var>& frames, const std::vector<Var>& embs,
              const std::vector<Frame>& blended, bool target_real, bool detach_frames) {
  std::vector<Var> per;
  for (int k = 0; k < c.windows; ++k) {
    const auto lo = static_cast<std::size_t>(k * c.window);
    std::vector<Var> fr, em, bl;
    for (std::size_t t = lo; t < lo + static_cast<std::size_t>(c.window); ++t) {
      fr.push_back(detach_frames ? ag::detach(frames[t]) : frames[t]);
      em.push_back(ag::detach(embs[t]));
      bl.push_back(frame_var(blended[t]));
    }
    Var cond;
    if (c.b.disc.conditioning == DiscConditioning::Embedding) cond = stack_embeddings(em);
    if (c.b.disc.conditioning == DiscConditioning::Image) cond = ag::stack_time(bl);
    per.push_back(adversarial_from_logit(video_disc_logit(c.b.d_v, c.b.disc, ag::stack_time(fr), cond), target_real));
  }
  return mean_of(per);
}

std::vector<Var> frame_vars(const std::vector<Frame>& fs) {
  std::vector<Var> out;
  for (const auto& f : fs) out.push_back(frame_var(f));
  return out;
}

}  // namespace

LossTerms video_generator_terms(const ModelBundle& b, const SequenceBatch& seq, const SequenceForward& f,
                                const FramePicks& p, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda_fake must be >= 0");
  const VideoCtx c = video_ctx(b, seq);
  const auto in_fa = seq.inputs(PairKind::FakeA), in_fb = seq.inputs(PairKind::FakeB), in_re = seq.inputs(PairKind::Real);
  auto di = [&](const std::vector<Var>& outs, const std::vector<Var>& embs, const std::vector<Frame>& in, int t) {
    const auto i = static_cast<std::size_t>(t);
    return adversarial_from_logit(image_logit(b, outs.at(i), embs.at(i), frame_var(in.at(i))), true);
  };
  LossTerms t;
  t.add("adv_DI_fakeA", lambda, di(f.out_fake_a, f.emb_fake_a, in_fa, p.fake_a));
  t.add("adv_DI_fakeB", lambda, di(f.out_fake_b, f.emb_fake_b, in_fb, p.fake_b));
  t.add("adv_DI_real", 1.0, di(f.out_real, f.emb_real, in_re, p.real));
  t.add("adv_DV_fakeA", lambda, video_adv(c, f.out_fake_a, f.emb_fake_a, in_fa, true, false));
  t.add("adv_DV_fakeB", lambda, video_adv(c, f.out_fake_b, f.emb_fake_b, in_fb, true, false));
  t.add("adv_DV_real", 1.0, video_adv(c, f.out_real, f.emb_real, in_re, true, false));
  std::vector<Var> de;
  for (const auto& e : f.emb_real) de.push_back(adversarial_from_logit(embedding_disc_logit(b.d_e, e), true));
  t.add("adv_DE_real", 1.0, mean_of(de));
  const auto tg_a = frame_vars(seq.targets(PairKind::FakeA)), tg_b = frame_vars(seq.targets(PairKind::FakeB));
  std::vector<Var> ra, rb;
  for (std::size_t i = 0; i < seq.length(); ++i) {
    ra.push_back(l1_loss(f.out_fake_a[i], tg_a[i]));
    rb.push_back(l1_loss(f.out_fake_b[i], tg_b[i]));
  }
  t.add("recon_fakeA", lambda, mean_of(ra));
  t.add("recon_fakeB", lambda, mean_of(rb));
  return t;
}

LossTerms video_discriminator_terms(const ModelBundle& b, const SequenceBatch& seq, const SequenceForward& f,
                                    const FramePicks& p, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda_fake must be >= 0");
  const VideoCtx c = video_ctx(b, seq);
  const auto in_fa = seq.inputs(PairKind::FakeA), in_fb = seq.inputs(PairKind::FakeB), in_re = seq.inputs(PairKind::Real);
  // Both fake pairs target u_B.
  const auto u_b = frame_vars(seq.targets(PairKind::FakeB));
  const auto u_b_a = frame_vars(seq.targets(PairKind::FakeA));
  auto di = [&](const Var& image, const std::vector<Var>& embs, const std::vector<Frame>& in, int t, bool real) {
    const auto i = static_cast<std::size_t>(t);
    return adversarial_from_logit(image_logit(b, image, embs.at(i), frame_var(in.at(i))), real);
  };
  const auto fa = static_cast<std::size_t>(p.fake_a), fb = static_cast<std::size_t>(p.fake_b),
             re = static_cast<std::size_t>(p.real);
  LossTerms t;
  t.add("adv_DI_fakeA_pos", lambda, di(u_b_a.at(fa), f.emb_fake_a, in_fa, p.fake_a, true));
  t.add("adv_DI_fakeB_pos", lambda, di(u_b.at(fb), f.emb_fake_b, in_fb, p.fake_b, true));
  t.add("adv_DI_fakeA_neg", lambda, di(ag::detach(f.out_fake_a.at(fa)), f.emb_fake_a, in_fa, p.fake_a, false));
  t.add("adv_DI_fakeB_neg", lambda, di(ag::detach(f.out_fake_b.at(fb)), f.emb_fake_b, in_fb, p.fake_b, false));
  t.add("adv_DI_real_neg", 1.0, di(ag::detach(f.out_real.at(re)), f.emb_real, in_re, p.real, false));
  t.add("adv_DV_fakeA_pos", lambda, video_adv(c, u_b_a, f.emb_fake_a, in_fa, true, true));
  t.add("adv_DV_fakeB_pos", lambda, video_adv(c, u_b, f.emb_fake_b, in_fb, true, true));
  t.add("adv_DV_fakeA_neg", lambda, video_adv(c, f.out_fake_a, f.emb_fake_a, in_fa, false, true));
  t.add("adv_DV_fakeB_neg", lambda, video_adv(c, f.out_fake_b, f.emb_fake_b, in_fb, false, true));
  t.add("adv_DV_real_neg", 1.0, video_adv(c, f.out_real, f.emb_real, in_re, false, true));
  auto de = [&](const std::vector<Var>& embs, bool real) {
    std::vector<Var> per;
    for (const auto& e : embs) per.push_back(adversarial_from_logit(embedding_disc_logit(b.d_e, ag::detach(e)), real));
    return mean_of(per);
  };
  t.add("adv_DE_fakeA", lambda, de(f.emb_fake_a, true));
  t.add("adv_DE_fakeB", lambda, de(f.emb_fake_b, true));
  t.add("adv_DE_real", 1.0, de(f.emb_real, false));
  return t;
}

ObjectiveReports video_objective(const ModelBundle& bundle, const SequenceBatch& seq, double lambda_fake, Rng& rng) {
  ag::NoGradGuard ng;
  video_ctx(bundle, seq);
  const FramePicks p = pick_frames(static_cast<int>(seq.length()), rng);
  const SequenceForward f = forward_sequences(bundle, seq);
  return {video_generator_terms(bundle, seq, f, p, lambda_fake).report(),
          video_discriminator_terms(bundle, seq, f, p, lambda_fake).report()};
}

// --- baselines -----------------------------------------------------------------------------

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::AdvOnly: return "adv_only";
    case BaselineKind::Pixel: return "pixel";
    case BaselineKind::Perceptual: return "perceptual";
    case BaselineKind::Cycle: return "cycle";
  }
  return "?";
}

BaselineKind parse_baseline(const std::string& s) {
  for (auto k : {BaselineKind::AdvOnly, BaselineKind::Pixel, BaselineKind::Perceptual, BaselineKind::Cycle}) {
    if (s == baseline_name(k)) return k;
  }
  throw ValidationError("unknown baseline '" + s + "'");
}

GeneratorFn generator_fn(const ModelBundle& bundle) {
  return [&bundle](const Var& blended) {
    std::vector<Var> h(static_cast<std::size_t>(bundle.gen.history_len), blended);
    return generator_forward(bundle.g, bundle.gen, blended, h).output;
  };
}

namespace {

Var blend_var(const Var& u, const Var& r, const BinaryMask& m) {
  // u * m/2 + r * (1 - m/2)
  const Var half_u = ag::scale(apply_mask(u, m), 0.5);
  const Var r_keep = ag::sub(r, ag::scale(apply_mask(r, m), 0.5));
  return ag::add(half_u, r_keep);
}

Var uncond_logit(const ModelBundle& b, const Var& image) { return image_disc_logit(b.d_i, b.disc, image, Var()); }

void require_unconditional(const ModelBundle& b) {
  if (b.disc.conditioning != DiscConditioning::None) {
    throw ValidationError("baseline discriminators must be unconditional");
  }
}

}  // namespace

LossTerms cycle_content_terms(const GeneratorFn& g, const GeneratorFn& f, const TrainingBatch& batch) {
  const BinaryMask& m = batch.mask;
  const Var u_a = frame_var(batch.src.u_a), u_b = frame_var(batch.src.u_b);
  const Var r_a = frame_var(batch.src.r_a), r_b = frame_var(batch.src.r_b);
  const Var g_ab = g(blend_var(u_a, r_b, m));  // G(u_A, r_B)
  const Var f_ba = f(blend_var(u_b, r_a, m));  // F(u_B, r_A)
  LossTerms t;
  t.add("cycle_A", 1.0, l1_loss(f(blend_var(g_ab, apply_inverse_mask(u_a, m), m)), u_a));
  t.add("cycle_B", 1.0, l1_loss(g(blend_var(f_ba, apply_inverse_mask(u_b, m), m)), u_b));
  t.add("background_G", 1.0, l1_loss(apply_inverse_mask(g_ab, m), apply_inverse_mask(r_b, m)));
  t.add("background_F", 1.0, l1_loss(apply_inverse_mask(f_ba, m), apply_inverse_mask(r_a, m)));
  return t;
}

BaselineTerms baseline_terms(BaselineKind kind, const ModelBundle& bundle, const ModelBundle* aux,
                             const TrainingBatch& batch, const FeatureExtractor* extractor) {
  batch.validate();
  require_unconditional(bundle);
  const GeneratorFn G = generator_fn(bundle);
  const Var u_a = frame_var(batch.src.u_a), u_b = frame_var(batch.src.u_b);
  const Var v_a = G(frame_var(batch.real.input));
  BaselineTerms out;
  out.d.add("adv_real_pos", 1.0, adversarial_from_logit(uncond_logit(bundle, u_b), true));
  out.d.add("adv_fake_neg", 1.0, adversarial_from_logit(uncond_logit(bundle, ag::detach(v_a)), false));
  out.g.add("adv", 1.0, adversarial_from_logit(uncond_logit(bundle, v_a), true));
  switch (kind) {
    case BaselineKind::AdvOnly: break;
    case BaselineKind::Pixel:
      out.g.add("pixel", 1.0, l1_loss(apply_mask(u_a, batch.mask), apply_mask(v_a, batch.mask)));
      break;
    case BaselineKind::Perceptual: {
      static const RandomConvExtractor fallback;
      out.g.add("perceptual", 1.0, perceptual_graph(u_a, v_a, extractor ? *extractor : fallback, &batch.mask));
      break;
    }
    case BaselineKind::Cycle: {
      if (!aux) throw ValidationError("cycle baseline needs the second generator bundle");
      require_unconditional(*aux);
      const GeneratorFn F = generator_fn(*aux);
      const Var r_a = frame_var(batch.src.r_a);
      const Var v_b = F(blend_var(u_b, r_a, batch.mask));
      out.d.add("adv_F_real_pos", 1.0, adversarial_from_logit(uncond_logit(*aux, u_a), true));
      out.d.add("adv_F_fake_neg", 1.0, adversarial_from_logit(uncond_logit(*aux, ag::detach(v_b)), false));
      out.g.add("adv_F", 1.0, adversarial_from_logit(uncond_logit(*aux, v_b), true));
      out.g.append(cycle_content_terms(G, F, batch));
      break;
    }
  }
  return out;
}

ObjectiveReports baseline_objective(BaselineKind kind, const ModelBundle& bundle, const ModelBundle* aux,
                                    const TrainingBatch& batch, const FeatureExtractor* extractor) {
  ag::NoGradGuard ng;
  const BaselineTerms t = baseline_terms(kind, bundle, aux, batch, extractor);
  return {t.g.report(), t.d.report()};
}

}  // namespace vins

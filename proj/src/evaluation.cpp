#include "vins/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include "vins/autograd.hpp"
#include "vins/error.hpp"
#include "vins/rng.hpp"
#include "vins/training.hpp"

namespace vins {

namespace {

void same_shape(const Frame& a, const Frame& b, const char* what) {
  if (a.pixels.shape() != b.pixels.shape()) throw ValidationError(std::string(what) + ": frame shapes differ");
}

void mask_fits(const BinaryMask& m, const Frame& f, const char* what) {
  if (m.height != f.height() || m.width != f.width()) throw ValidationError(std::string(what) + ": mask shape differs");
}

struct Component {
  int y0, x0, y1, x1;  // inclusive
  int pixels = 0;
  double sum = 0.0;
};

// 4-connected components of m, in scan order of their first pixel.
std::vector<Component> components(const BinaryMask& m, const Tensor* weights = nullptr) {
  std::vector<int> label(m.values.size(), -1);
  std::vector<Component> out;
  std::vector<int> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const int start = y * m.width + x;
      if (!m.values[start] || label[start] >= 0) continue;
      Component c{y, x, y, x};
      const int id = static_cast<int>(out.size());
      label[start] = id;
      stack.assign(1, start);
      while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        const int py = i / m.width, px = i % m.width;
        c.y0 = std::min(c.y0, py);
        c.y1 = std::max(c.y1, py);
        c.x0 = std::min(c.x0, px);
        c.x1 = std::max(c.x1, px);
        ++c.pixels;
        if (weights) c.sum += weights->values()[static_cast<std::size_t>(i)];
        const int ny[4] = {py - 1, py + 1, py, py};
        const int nx[4] = {px, px, px - 1, px + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= m.height || nx[k] < 0 || nx[k] >= m.width) continue;
          const int j = ny[k] * m.width + nx[k];
          if (m.values[j] && label[j] < 0) {
            label[j] = id;
            stack.push_back(j);
          }
        }
      }
      out.push_back(c);
    }
  }
  return out;
}

// Pixel box (inclusive) in an h x w patch, mapped through the placement.
BoundingBox patch_to_frame(const Component& c, int h, int w, const BoundingBox& placement) {
  const double sx = placement.w / w, sy = placement.h / h;
  return {placement.x + c.x0 * sx, placement.y + c.y0 * sy, (c.x1 - c.x0 + 1) * sx, (c.y1 - c.y0 + 1) * sy};
}

}  // namespace

BinaryMask delta_mask(const Frame& v, const Frame& u, const Frame& r) {
  same_shape(v, u, "delta_mask");
  same_shape(v, r, "delta_mask");
  BinaryMask m(v.height(), v.width());
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      double du = 0.0, dr = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double a = v.at(c, y, x) - u.at(c, y, x);
        const double b = v.at(c, y, x) - r.at(c, y, x);
        du += a * a;
        dr += b * b;
      }
      m.at(y, x) = du < dr ? 1 : 0;
    }
  }
  return m;
}

double f1(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

OISReport ois_score(const BinaryMask& s_a, const BinaryMask& s_delta) {
  if (s_a.height != s_delta.height || s_a.width != s_delta.width) throw ValidationError("ois_score: mask shapes differ");
  std::size_t both = 0, na = 0, nd = 0;
  for (std::size_t i = 0; i < s_a.values.size(); ++i) {
    const bool a = s_a.values[i] != 0, d = s_delta.values[i] != 0;
    na += a;
    nd += d;
    both += a && d;
  }
  OISReport r;
  r.precision = nd ? double(both) / nd : 0.0;
  r.recall = na ? double(both) / na : 0.0;
  r.ois = f1(r.precision, r.recall);
  return r;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

OISReport insertion_ois(const CompositeResult& result) {
  if (result.patches.empty()) throw ValidationError("insertion_ois: no frames");
  OISReport mean;
  for (std::size_t k = 0; k < result.patches.size(); ++k) {
    if (k >= result.object_masks.size() || !result.object_masks[k]) {
      throw ValidationError("insertion_ois: frame " + std::to_string(k) + " has no object mask");
    }
    const auto r = ois_score(*result.object_masks[k],
                             delta_mask(result.patches[k], result.objects[k], result.regions[k]));
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.ois += r.ois;
  }
  const double n = static_cast<double>(result.patches.size());
  mean.precision /= n;
  mean.recall /= n;
  mean.ois /= n;
  return mean;
}

// --- detectors -------------------------------------------------------------------

std::vector<Detection> EchoOracleDetector::detect(const DetectionInput& in) const { return {{in.truth, 1.0}}; }

std::vector<Detection> DeltaMaskDetector::detect(const DetectionInput& in) const {
  if (!in.patch || !in.object || !in.region) throw ValidationError("DeltaMaskDetector needs patch, object and region");
  const BinaryMask m = delta_mask(*in.patch, *in.object, *in.region);
  const auto comps = components(m);
  if (comps.empty()) return {};
  const auto best = std::ranges::max_element(comps, {}, &Component::pixels);
  const int h = m.height, w = m.width;
  const BoundingBox box = patch_to_frame(*best, h, w, in.placement);
  const double truth_px = in.truth.area() * (double(h) * w) / in.placement.area();
  return {{box, truth_px > 0.0 ? std::min(1.0, best->pixels / truth_px) : 0.0}};
}

TinyConvDetector::TinyConvDetector() : TinyConvDetector(Config{}) {}

TinyConvDetector::TinyConvDetector(Config cfg) : cfg_(cfg) {
  Rng rng(cfg_.seed);
  const int c = cfg_.channels;
  auto he = [&](const std::string& name, Shape shape, int fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values()) v = sd * rng.normal();
    params_.add(name, std::move(t));
  };
  he("c1.w", {c, 3, 3, 3}, 27);
  params_.add("c1.b", Tensor({c}));
  he("c2.w", {2 * c, c, 3, 3}, 9 * c);
  params_.add("c2.b", Tensor({2 * c}));
  he("c3.w", {2 * c, 2 * c, 3, 3}, 18 * c);
  params_.add("c3.b", Tensor({2 * c}));
  he("c4.w", {1, 2 * c, 1, 1}, 2 * c);
  params_.add("c4.b", Tensor({1}));
}

namespace {

ag::Var objectness_logit(const ParamSet& p, const Frame& f) {
  using namespace ag;
  Var h = relu(conv(frame_var(f), p["c1.w"], p["c1.b"], conv2d_opts(1, 1)));
  h = relu(conv(h, p["c2.w"], p["c2.b"], conv2d_opts(2, 1)));
  h = relu(conv(h, p["c3.w"], p["c3.b"], conv2d_opts(1, 1)));
  return conv(h, p["c4.w"], p["c4.b"], conv2d_opts(1, 0));
}

}  // namespace

void TinyConvDetector::train(const Dataset& data) {
  struct Sample {
    const Frame* frame;
    Tensor pos, neg;  // (1, H/2, W/2) indicator maps, each normalised to sum 1
  };
  std::vector<Sample> samples;
  for (const auto& v : data.videos) {
    for (std::size_t i = 0; i < v.labels.size(); ++i) {
      const Frame& f = v.video[i];
      const int h = (f.height() + 1) / 2, w = (f.width() + 1) / 2;
      Tensor pos({1, h, w}), neg({1, h, w});
      double np = 0.0, nn = 0.0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const bool obj = v.labels[i].at(2 * y, 2 * x) != 0;
          (obj ? pos : neg).at(0, y, x) = 1.0;
          (obj ? np : nn) += 1.0;
        }
      }
      if (np == 0.0 || nn == 0.0) continue;
      for (auto& x : pos.values()) x /= np;
      for (auto& x : neg.values()) x /= nn;
      samples.push_back({&f, std::move(pos), std::move(neg)});
    }
  }
  if (samples.empty()) throw ValidationError("TinyConvDetector::train: no labelled frames");

  TrainConfig opt_cfg;
  opt_cfg.lr = cfg_.lr;
  opt_cfg.beta1 = 0.9;
  Adam adam;
  Rng rng(cfg_.seed + 1);
  params_.set_requires_grad(true);
  const std::pair<std::string, ParamSet*> groups[] = {{"det", &params_}};
  for (int it = 0; it < cfg_.iters; ++it) {
    const auto& s = samples[static_cast<std::size_t>(rng.uniform() * samples.size()) % samples.size()];
    using namespace ag;
    const Var z = objectness_logit(params_, *s.frame);
    // Class-balanced logistic loss: mean over object pixels plus mean over background.
    const Var pos_loss = sum(mul(constant(s.pos), softplus(scale(z, -1.0))));
    const Var neg_loss = sum(mul(constant(s.neg), softplus(z)));
    backward(add(pos_loss, neg_loss));
    adam.step(groups, opt_cfg);
    params_.zero_grad();
  }
  params_.set_requires_grad(false);
}

Tensor TinyConvDetector::objectness(const Frame& frame) const {
  ag::NoGradGuard ng;
  const Tensor z = objectness_logit(params_, frame).value();
  Tensor out({1, frame.height(), frame.width()});
  const int h = z.dim(1), w = z.dim(2);
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      const double v = z.at(0, std::min(y / 2, h - 1), std::min(x / 2, w - 1));
      out.at(0, y, x) = 1.0 / (1.0 + std::exp(-v));
    }
  }
  return out;
}

std::vector<Detection> TinyConvDetector::detect_frame(const Frame& frame) const {
  const Tensor p = objectness(frame);
  BinaryMask m(frame.height(), frame.width());
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = p.values()[i] >= cfg_.threshold ? 1 : 0;
  std::vector<Detection> out;
  for (const auto& c : components(m, &p)) {
    if (c.pixels < cfg_.min_pixels) continue;
    out.push_back({{double(c.x0), double(c.y0), double(c.x1 - c.x0 + 1), double(c.y1 - c.y0 + 1)}, c.sum / c.pixels});
  }
  return out;
}

BoundingBox inserted_object_box(const CompositeResult& result, std::size_t frame) {
  const BoundingBox& placement = result.per_frame_regions.at(frame);
  const BinaryMask& m = frame < result.object_masks.size() && result.object_masks[frame]
                            ? *result.object_masks[frame]
                            : result.mask;
  Component c{m.height, m.width, -1, -1};
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      c.y0 = std::min(c.y0, y);
      c.y1 = std::max(c.y1, y);
      c.x0 = std::min(c.x0, x);
      c.x1 = std::max(c.x1, x);
    }
  }
  if (c.y1 < 0) return {placement.x, placement.y, 0.0, 0.0};
  return patch_to_frame(c, m.height, m.width, placement);
}

RecallReport detector_recall(std::span<const CompositeResult> results, const Detector& detector, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ValidationError("detector_recall: threshold outside (0,1]");
  RecallReport rep;
  int frame_no = 0;
  for (const auto& res : results) {
    for (std::size_t k = 0; k < res.video.size(); ++k, ++frame_no) {
      DetectionInput in;
      in.frame = &res.video[k];
      in.patch = &res.patches[k];
      in.object = k < res.objects.size() ? &res.objects[k] : nullptr;
      in.region = k < res.regions.size() ? &res.regions[k] : nullptr;
      in.placement = res.per_frame_regions[k];
      in.truth = inserted_object_box(res, k);
      std::vector<Detection> dets;
      try {
        dets = detector.detect(in);
      } catch (const std::exception& e) {
        throw Error("detector failed on frame " + std::to_string(frame_no) + ": " + e.what());
      }
      ++rep.total;
      for (const auto& d : dets) {
        if (d.score >= detector.score_threshold() && iou(d.box, in.truth) >= iou_threshold) {
          ++rep.matched;
          break;
        }
      }
    }
  }
  return rep;
}

// --- composites -------------------------------------------------------------------

Frame copy_paste_baseline(const Frame& u, const Frame& r, const BinaryMask& s_a) {
  same_shape(u, r, "copy_paste");
  mask_fits(s_a, u, "copy_paste");
  Frame out = r;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < u.height(); ++y) {
      for (int x = 0; x < u.width(); ++x) {
        if (s_a.at(y, x)) out.at(c, y, x) = u.at(c, y, x);
      }
    }
  }
  return out;
}

namespace {

void check_poisson_mask(const BinaryMask& m) {
  bool any = false;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      any = true;
      if (y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1) {
        throw ValidationError("poisson_blend: mask touches the patch border");
      }
    }
  }
  if (!any) throw ValidationError("poisson_blend: empty mask");
}

constexpr int kDy[4] = {-1, 1, 0, 0};
constexpr int kDx[4] = {0, 0, -1, 1};

}  // namespace

double poisson_residual(const Frame& out, const Frame& u, const BinaryMask& s_a) {
  same_shape(out, u, "poisson_residual");
  mask_fits(s_a, u, "poisson_residual");
  double worst = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 1; y + 1 < u.height(); ++y) {
      for (int x = 1; x + 1 < u.width(); ++x) {
        if (!s_a.at(y, x)) continue;
        double lo = 4.0 * out.at(c, y, x), lu = 4.0 * u.at(c, y, x);
        for (int k = 0; k < 4; ++k) {
          lo -= out.at(c, y + kDy[k], x + kDx[k]);
          lu -= u.at(c, y + kDy[k], x + kDx[k]);
        }
        worst = std::max(worst, std::abs(lo - lu));
      }
    }
  }
  return worst;
}

Frame poisson_blend(const Frame& u, const Frame& r, const BinaryMask& s_a, const PoissonOptions& options) {
  same_shape(u, r, "poisson_blend");
  mask_fits(s_a, u, "poisson_blend");
  check_poisson_mask(s_a);
  const int h = u.height(), w = u.width();
  std::vector<int> index(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::pair<int, int>> cells;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (s_a.at(y, x)) {
        index[static_cast<std::size_t>(y) * w + x] = static_cast<int>(cells.size());
        cells.emplace_back(y, x);
      }
    }
  }
  const int n = static_cast<int>(cells.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    const auto [y, x] = cells[static_cast<std::size_t>(i)];
    trip.emplace_back(i, i, 4.0);
    for (int k = 0; k < 4; ++k) {
      const int j = index[static_cast<std::size_t>(y + kDy[k]) * w + (x + kDx[k])];
      if (j >= 0) trip.emplace_back(i, j, -1.0);
    }
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setMaxIterations(options.max_iterations);
  // Relative tolerance well below what the max-norm check needs.
  cg.setTolerance(1e-14);
  cg.compute(A);

  Frame out = r;
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
      const auto [y, x] = cells[static_cast<std::size_t>(i)];
      double rhs = 4.0 * u.at(c, y, x);
      for (int k = 0; k < 4; ++k) {
        const int yy = y + kDy[k], xx = x + kDx[k];
        rhs -= u.at(c, yy, xx);
        if (!s_a.at(yy, xx)) rhs += r.at(c, yy, xx);
      }
      b[i] = rhs;
    }
    const Eigen::VectorXd sol = cg.solve(b);
    for (int i = 0; i < n; ++i) {
      const auto [y, x] = cells[static_cast<std::size_t>(i)];
      out.at(c, y, x) = sol[i];
    }
  }
  const double res = poisson_residual(out, u, s_a);
  if (!(res < options.tolerance)) throw ConvergenceError("poisson_blend did not converge", res);
  return out;
}

Frame clamp_frame(Frame f) {
  for (auto& v : f.pixels.values()) v = std::clamp(v, 0.0, 1.0);
  return f;
}

const char* composite_method_name(CompositeMethod m) {
  return m == CompositeMethod::CopyPaste ? "copy_paste" : "poisson";
}

CompositeMethod parse_composite_method(const std::string& s) {
  if (s == "copy_paste") return CompositeMethod::CopyPaste;
  if (s == "poisson") return CompositeMethod::Poisson;
  throw ValidationError("unknown composite method '" + s + "'");
}

CompositeResult render_nonlearned(const InsertionRequest& request, const PatchSpec& spec, CompositeMethod method) {
  CompositeResult res = prepare_insertion(request, spec);
  std::vector<Frame> patches;
  for (std::size_t k = 0; k < res.objects.size(); ++k) {
    if (!res.object_masks[k]) throw ValidationError("non-learned composite needs object masks");
    const Frame& u = res.objects[k];
    const Frame& r = res.regions[k];
    BinaryMask m = *res.object_masks[k];
    if (method == CompositeMethod::CopyPaste) {
      patches.push_back(copy_paste_baseline(u, r, m));
      continue;
    }
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        if (y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1) m.at(y, x) = 0;
      }
    }
    patches.push_back(m.count() ? clamp_frame(poisson_blend(u, r, m)) : r);
  }
  finish_insertion(res, request, std::move(patches));
  return res;
}

// --- reports -----------------------------------------------------------------------

OISReport mean_report(std::span<const OISRecord> records) {
  OISReport m;
  if (records.empty()) return m;
  for (const auto& r : records) {
    m.precision += r.report.precision;
    m.recall += r.report.recall;
    m.ois += r.report.ois;
  }
  const double n = static_cast<double>(records.size());
  m.precision /= n;
  m.recall /= n;
  m.ois /= n;
  return m;
}

void write_ois_report(std::ostream& out, std::span<const OISRecord> records) {
  auto line = [&](const std::string& name, const OISReport& r) {
    out << name << " P=" << r.precision << " R=" << r.recall << " OIS=" << r.ois << '\n';
  };
  for (const auto& r : records) line(r.name, r.report);
  line("mean", mean_report(records));
}

}  // namespace vins

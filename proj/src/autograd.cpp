#include "vins/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "vins/error.hpp"

namespace vins::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.ptr());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

bool wants(const std::shared_ptr<Node>& p) { return p && p->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(std::move(y), {a}, [dfdx](Node& self) {
    auto& p = self.parents[0];
    Tensor& g = p->grad_buffer();
    const Tensor& x = p->value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

// Convolution geometry with the batch dimension dropped and 2-D treated as depth 1.
struct Geometry {
  int channels = 0;
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
  std::array<int, 3> out{1, 1, 1};

  int kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  int rows() const { return channels * kernel_volume(); }
  int out_volume() const { return out[0] * out[1] * out[2]; }
  int in_volume() const { return in[0] * in[1] * in[2]; }
};

std::array<int, 3> spatial_of(const Shape& s) {
  if (s.size() == 3) return {1, s[1], s[2]};
  if (s.size() == 4) return {s[1], s[2], s[3]};
  throw ValidationError("conv input must be (C,H,W) or (C,D,H,W), got " + shape_string(s));
}

std::array<int, 3> kernel_of(const Shape& w, std::size_t input_rank) {
  if (w.size() != input_rank + 1) {
    throw ValidationError("conv weight rank " + std::to_string(w.size()) +
                          " does not match input rank " + std::to_string(input_rank));
  }
  if (input_rank == 3) return {1, w[2], w[3]};
  return {w[2], w[3], w[4]};
}

Shape make_shape(int c, const std::array<int, 3>& sp, std::size_t rank) {
  if (rank == 3) return {c, sp[1], sp[2]};
  return {c, sp[0], sp[1], sp[2]};
}

void im2col(const double* src, const Geometry& g, double* cols) {
  const int P = g.out_volume();
  const auto [kd, kh, kw] = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = src + static_cast<std::size_t>(c) * g.in_volume();
    for (int kz = 0; kz < kd; ++kz)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const std::size_t row = ((static_cast<std::size_t>(c) * kd + kz) * kh + ky) * kw + kx;
          double* dst = cols + row * P;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              double* d = dst + (static_cast<std::size_t>(oz) * g.out[1] + oy) * g.out[2];
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
                std::fill(d, d + g.out[2], 0.0);
                continue;
              }
              const double* s = plane + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
              for (int ox = 0; ox < g.out[2]; ++ox) {
                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                d[ox] = (ix >= 0 && ix < g.in[2]) ? s[ix] : 0.0;
              }
            }
          }
        }
  }
}

void col2im(const double* cols, const Geometry& g, double* dst) {
  const int P = g.out_volume();
  const auto [kd, kh, kw] = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    double* plane = dst + static_cast<std::size_t>(c) * g.in_volume();
    for (int kz = 0; kz < kd; ++kz)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const std::size_t row = ((static_cast<std::size_t>(c) * kd + kz) * kh + ky) * kw + kx;
          const double* src = cols + row * P;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            if (iz < 0 || iz >= g.in[0]) continue;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iy < 0 || iy >= g.in[1]) continue;
              const double* s = src + (static_cast<std::size_t>(oz) * g.out[1] + oy) * g.out[2];
              double* d = plane + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
              for (int ox = 0; ox < g.out[2]; ++ox) {
                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                if (ix >= 0 && ix < g.in[2]) d[ix] += s[ox];
              }
            }
          }
        }
  }
}

int conv_out_extent(int in, int k, int s, int p) {
  const int span = in + 2 * p - k;
  if (span < 0) throw ValidationError("conv kernel larger than padded input");
  return span / s + 1;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

double Var::item() const {
  if (node_->value.size() != 1) {
    throw ValidationError("item() on tensor of shape " + shape_string(node_->value.shape()));
  }
  return node_->value[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(std::move(node));
}

Var parameter(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& v) { return constant(v.value()); }

void backward(const Var& root) {
  if (root.size() != 1) throw ValidationError("backward() needs a one-element root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants(p)) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    if (wants(self.parents[0])) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      Tensor& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants(pb)) {
      Tensor& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a.value();
  for (double& v : y.values()) v *= s;
  return make_result(std::move(y), {a}, [s](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y = a.value();
  for (double& v : y.values()) v += s;
  return make_result(std::move(y), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor({1}, s), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (double& v : g.values()) v += gs;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ValidationError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var channel_mean(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ValidationError("channel_mean needs rank >= 2");
  const int C = s[0];
  const std::size_t inner = a.size() / static_cast<std::size_t>(C);
  Tensor y({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    const double* p = a.value().data() + c * inner;
    for (std::size_t i = 0; i < inner; ++i) acc += p[i];
    y[c] = acc / static_cast<double>(inner);
  }
  return make_result(std::move(y), {a}, [C, inner](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < C; ++c) {
      const double gc = self.grad[c] / static_cast<double>(inner);
      double* p = g.data() + c * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += gc;
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_result(std::move(y), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat of nothing");
  Shape out_shape = parts[0].shape();
  if (out_shape.empty()) throw ValidationError("concat of rank-0 tensors");
  int total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out_shape.size() || !std::equal(s.begin() + 1, s.end(), out_shape.begin() + 1)) {
      throw ValidationError("concat: incompatible shapes " + shape_string(out_shape) + " and " +
                            shape_string(s));
    }
    total += s[0];
  }
  out_shape[0] = total;
  Tensor y(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().data(), p.value().data() + p.size(), y.data() + offset);
    offset += p.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(y), inputs, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!wants(p)) continue;
      Tensor& g = p->grad_buffer();
      const double* src = self.grad.data() + offsets[k];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  });
}

Var stack_time(std::span<const Var> frames) {
  if (frames.empty()) throw ValidationError("stack_time of no frames");
  const Shape s = frames[0].shape();
  if (s.size() != 3) throw ValidationError("stack_time expects (C,H,W) frames");
  for (const auto& f : frames) {
    if (f.shape() != s) throw ValidationError("stack_time: frames differ in shape");
  }
  const int C = s[0];
  const int T = static_cast<int>(frames.size());
  const std::size_t hw = static_cast<std::size_t>(s[1]) * s[2];
  Tensor y({C, T, s[1], s[2]});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c)
      std::copy_n(frames[t].value().data() + c * hw, hw, y.data() + (static_cast<std::size_t>(c) * T + t) * hw);
  std::vector<Var> inputs(frames.begin(), frames.end());
  return make_result(std::move(y), inputs, [C, T, hw](Node& self) {
    for (int t = 0; t < T; ++t) {
      auto& p = self.parents[t];
      if (!wants(p)) continue;
      Tensor& g = p->grad_buffer();
      for (int c = 0; c < C; ++c) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(c) * T + t) * hw;
        double* dst = g.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
      }
    }
  });
}

Var tile(const Var& e, int h, int w) {
  if (e.shape().size() != 1) throw ValidationError("tile expects a vector");
  if (h < 1 || w < 1) throw ValidationError("tile extent must be >= 1");
  const int E = e.shape()[0];
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor y({E, h, w});
  for (int c = 0; c < E; ++c) std::fill_n(y.data() + c * hw, hw, e.value()[c]);
  return make_result(std::move(y), {e}, [E, hw](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < E; ++c) {
      double acc = 0.0;
      const double* src = self.grad.data() + c * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      g[c] += acc;
    }
  });
}

Var weighted_sum(std::span<const Var> parts, std::span<const double> weights) {
  if (parts.empty() || parts.size() != weights.size()) {
    throw ValidationError("weighted_sum: need equal, non-zero counts of parts and weights");
  }
  const Shape s = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != s) throw ValidationError("weighted_sum: parts differ in shape");
  }
  Tensor y(s);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double wk = weights[k];
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += wk * v[i];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return make_result(std::move(y), inputs, [wv](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!wants(p)) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += wv[k] * self.grad[i];
    }
  });
}

Var conv(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t rank = xs.size();
  Geometry g;
  g.in = spatial_of(xs);
  g.kernel = kernel_of(ws, rank);
  g.channels = xs[0];
  if (ws[1] != g.channels) {
    throw ValidationError("conv: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                          std::to_string(g.channels));
  }
  g.stride = opts.stride;
  g.pad = opts.pad;
  for (int i = 0; i < 3; ++i) g.out[i] = conv_out_extent(g.in[i], g.kernel[i], g.stride[i], g.pad[i]);
  const int O = ws[0];
  if (bias.defined() && bias.size() != static_cast<std::size_t>(O)) {
    throw ValidationError("conv: bias size mismatch");
  }

  const int K = g.rows();
  const int P = g.out_volume();
  auto cols = std::make_shared<Buffer>(static_cast<std::size_t>(K) * P);
  im2col(x.value().data(), g, cols->data());

  Tensor y(make_shape(O, g.out, rank));
  MapMat ym(y.data(), O, P);
  ym.noalias() = CMapMat(w.value().data(), O, K) * CMapMat(cols->data(), K, P);
  if (bias.defined()) {
    for (int o = 0; o < O; ++o) ym.row(o).array() += bias.value()[o];
  }

  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(y), inputs, [g, O, K, P, cols](Node& self) {
    CMapMat gy(self.grad.data(), O, P);
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (wants(pw)) {
      MapMat(pw->grad_buffer().data(), O, K).noalias() += gy * CMapMat(cols->data(), K, P).transpose();
    }
    if (self.parents.size() > 2 && wants(self.parents[2])) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int o = 0; o < O; ++o) gb[o] += gy.row(o).sum();
    }
    if (wants(px)) {
      Buffer gcols(static_cast<std::size_t>(K) * P);
      MapMat(gcols.data(), K, P).noalias() = CMapMat(pw->value.data(), O, K).transpose() * gy;
      col2im(gcols.data(), g, px->grad_buffer().data());
    }
  });
}

Var conv_transpose(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t rank = xs.size();
  const std::array<int, 3> in_sp = spatial_of(xs);
  const int Ci = xs[0];
  if (ws[0] != Ci) throw ValidationError("conv_transpose: weight/input channel mismatch");
  const int Co = ws[1];

  // Geometry of the forward conv whose adjoint this is: Co channels at the
  // output resolution, mapping down to the input resolution.
  Geometry g;
  g.channels = Co;
  g.kernel = kernel_of(ws, rank);
  g.stride = opts.stride;
  g.pad = opts.pad;
  for (int i = 0; i < 3; ++i) {
    g.in[i] = (in_sp[i] - 1) * g.stride[i] - 2 * g.pad[i] + g.kernel[i];
    if (g.in[i] < 1) throw ValidationError("conv_transpose: empty output");
    g.out[i] = in_sp[i];
  }
  if (bias.defined() && bias.size() != static_cast<std::size_t>(Co)) {
    throw ValidationError("conv_transpose: bias size mismatch");
  }
  const int K = g.rows();
  const int P = g.out_volume();

  Buffer cols(static_cast<std::size_t>(K) * P);
  MapMat(cols.data(), K, P).noalias() =
      CMapMat(w.value().data(), Ci, K).transpose() * CMapMat(x.value().data(), Ci, P);
  Tensor y(make_shape(Co, g.in, rank));
  col2im(cols.data(), g, y.data());
  const std::size_t out_vol = static_cast<std::size_t>(g.in_volume());
  if (bias.defined()) {
    for (int c = 0; c < Co; ++c) {
      double* p = y.data() + c * out_vol;
      for (std::size_t i = 0; i < out_vol; ++i) p[i] += bias.value()[c];
    }
  }

  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(y), inputs, [g, Ci, Co, K, P, out_vol](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    Buffer gcols(static_cast<std::size_t>(K) * P);
    im2col(self.grad.data(), g, gcols.data());
    CMapMat gc(gcols.data(), K, P);
    if (wants(px)) {
      MapMat(px->grad_buffer().data(), Ci, P).noalias() += CMapMat(pw->value.data(), Ci, K) * gc;
    }
    if (wants(pw)) {
      MapMat(pw->grad_buffer().data(), Ci, K).noalias() +=
          CMapMat(px->value.data(), Ci, P) * gc.transpose();
    }
    if (self.parents.size() > 2 && wants(self.parents[2])) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int c = 0; c < Co; ++c) {
        const double* p = self.grad.data() + c * out_vol;
        double acc = 0.0;
        for (std::size_t i = 0; i < out_vol; ++i) acc += p[i];
        gb[c] += acc;
      }
    }
  });
}

Var tiled_conv(const Var& e, const Var& w, std::span<const int> input_spatial, const ConvOpts& opts) {
  const std::size_t rank = input_spatial.size() + 1;
  if (rank != 3 && rank != 4) throw ValidationError("tiled_conv: spatial rank must be 2 or 3");
  const Shape& ws = w.shape();
  const std::array<int, 3> kernel = kernel_of(ws, rank);
  const int O = ws[0];
  const int C = ws[1];
  std::array<int, 3> in{1, 1, 1};
  if (rank == 3) {
    in = {1, input_spatial[0], input_spatial[1]};
  } else {
    in = {input_spatial[0], input_spatial[1], input_spatial[2]};
  }
  const int T = in[0];
  const Shape expect_e = rank == 3 ? Shape{C} : Shape{C, T};
  if (e.shape() != expect_e) {
    throw ValidationError("tiled_conv: embedding shape " + shape_string(e.shape()) + ", expected " +
                          shape_string(expect_e));
  }
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = conv_out_extent(in[i], kernel[i], opts.stride[i], opts.pad[i]);
  const auto [kd, kh, kw] = kernel;

  // valid[axis][o * k + tap]: whether kernel tap lands inside the input at output o.
  auto validity = [&](int axis) {
    std::vector<char> v(static_cast<std::size_t>(out[axis]) * kernel[axis]);
    for (int o = 0; o < out[axis]; ++o)
      for (int k = 0; k < kernel[axis]; ++k) {
        const int i = o * opts.stride[axis] - opts.pad[axis] + k;
        v[static_cast<std::size_t>(o) * kernel[axis] + k] = (i >= 0 && i < in[axis]);
      }
    return v;
  };
  const auto vz = validity(0), vy = validity(1), vx = validity(2);
  auto src_t = [&](int oz, int kz) { return oz * opts.stride[0] - opts.pad[0] + kz; };

  const double* W = w.value().data();
  const double* E = e.value().data();
  Tensor y(make_shape(O, out, rank));
  std::vector<double> B(static_cast<std::size_t>(O) * kh * kw);
  std::vector<double> rowsum(static_cast<std::size_t>(kw));
  for (int oz = 0; oz < out[0]; ++oz) {
    std::fill(B.begin(), B.end(), 0.0);
    for (int o = 0; o < O; ++o)
      for (int c = 0; c < C; ++c)
        for (int kz = 0; kz < kd; ++kz) {
          if (!vz[static_cast<std::size_t>(oz) * kd + kz]) continue;
          const double ev = E[static_cast<std::size_t>(c) * T + src_t(oz, kz)];
          const double* wp = W + ((static_cast<std::size_t>(o) * C + c) * kd + kz) * kh * kw;
          double* bp = B.data() + static_cast<std::size_t>(o) * kh * kw;
          for (int k = 0; k < kh * kw; ++k) bp[k] += wp[k] * ev;
        }
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < out[1]; ++oy) {
        std::fill(rowsum.begin(), rowsum.end(), 0.0);
        for (int ky = 0; ky < kh; ++ky) {
          if (!vy[static_cast<std::size_t>(oy) * kh + ky]) continue;
          const double* bp = B.data() + (static_cast<std::size_t>(o) * kh + ky) * kw;
          for (int kx = 0; kx < kw; ++kx) rowsum[kx] += bp[kx];
        }
        double* yp = y.data() + ((static_cast<std::size_t>(o) * out[0] + oz) * out[1] + oy) * out[2];
        for (int ox = 0; ox < out[2]; ++ox) {
          double acc = 0.0;
          for (int kx = 0; kx < kw; ++kx) {
            if (vx[static_cast<std::size_t>(ox) * kw + kx]) acc += rowsum[kx];
          }
          yp[ox] = acc;
        }
      }
  }

  return make_result(std::move(y), {e, w}, [=](Node& self) {
    auto& pe = self.parents[0];
    auto& pw = self.parents[1];
    // S[o, oz, ky, kx] = sum over valid (oy, ox) of the output gradient.
    std::vector<double> S(static_cast<std::size_t>(O) * out[0] * kh * kw, 0.0);
    std::vector<double> gx(static_cast<std::size_t>(kw));
    for (int o = 0; o < O; ++o)
      for (int oz = 0; oz < out[0]; ++oz) {
        double* sp = S.data() + (static_cast<std::size_t>(o) * out[0] + oz) * kh * kw;
        for (int oy = 0; oy < out[1]; ++oy) {
          const double* gp =
              self.grad.data() + ((static_cast<std::size_t>(o) * out[0] + oz) * out[1] + oy) * out[2];
          std::fill(gx.begin(), gx.end(), 0.0);
          for (int ox = 0; ox < out[2]; ++ox)
            for (int kx = 0; kx < kw; ++kx)
              if (vx[static_cast<std::size_t>(ox) * kw + kx]) gx[kx] += gp[ox];
          for (int ky = 0; ky < kh; ++ky) {
            if (!vy[static_cast<std::size_t>(oy) * kh + ky]) continue;
            for (int kx = 0; kx < kw; ++kx) sp[ky * kw + kx] += gx[kx];
          }
        }
      }
    const double* Wv = pw->value.data();
    const double* Ev = pe->value.data();
    double* gW = wants(pw) ? pw->grad_buffer().data() : nullptr;
    double* gE = wants(pe) ? pe->grad_buffer().data() : nullptr;
    for (int o = 0; o < O; ++o)
      for (int oz = 0; oz < out[0]; ++oz) {
        const double* sp = S.data() + (static_cast<std::size_t>(o) * out[0] + oz) * kh * kw;
        for (int kz = 0; kz < kd; ++kz) {
          if (!vz[static_cast<std::size_t>(oz) * kd + kz]) continue;
          const int t = src_t(oz, kz);
          for (int c = 0; c < C; ++c) {
            const std::size_t woff = ((static_cast<std::size_t>(o) * C + c) * kd + kz) * kh * kw;
            const std::size_t eoff = static_cast<std::size_t>(c) * T + t;
            if (gW) {
              const double ev = Ev[eoff];
              for (int k = 0; k < kh * kw; ++k) gW[woff + k] += ev * sp[k];
            }
            if (gE) {
              double acc = 0.0;
              for (int k = 0; k < kh * kw; ++k) acc += Wv[woff + k] * sp[k];
              gE[eoff] += acc;
            }
          }
        }
      }
  });
}

Var instance_norm(const Var& x, double eps) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ValidationError("instance_norm needs rank >= 2");
  const int C = s[0];
  const std::size_t n = x.size() / static_cast<std::size_t>(C);
  Tensor y(s);
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const double* p = x.value().data() + c * n;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += p[i];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (p[i] - m) * (p[i] - m);
    v /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[c] = is;
    double* q = y.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) q[i] = (p[i] - m) * is;
  }
  return make_result(std::move(y), {x}, [C, n, inv_std](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double N = static_cast<double>(n);
    for (int c = 0; c < C; ++c) {
      const double* dy = self.grad.data() + c * n;
      const double* yv = self.value.data() + c * n;
      double sdy = 0.0, sdyy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sdy += dy[i];
        sdyy += dy[i] * yv[i];
      }
      double* gx = g.data() + c * n;
      const double k = inv_std[c] / N;
      for (std::size_t i = 0; i < n; ++i) gx[i] += k * (N * dy[i] - sdy - yv[i] * sdyy);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& ws = w.shape();
  if (x.shape().size() != 1 || ws.size() != 2 || ws[1] != x.shape()[0]) {
    throw ValidationError("linear: shape mismatch x" + shape_string(x.shape()) + " w" +
                          shape_string(ws));
  }
  const int O = ws[0];
  const int C = ws[1];
  if (b.defined() && b.size() != static_cast<std::size_t>(O)) {
    throw ValidationError("linear: bias size mismatch");
  }
  Tensor y({O});
  for (int o = 0; o < O; ++o) {
    double acc = b.defined() ? b.value()[o] : 0.0;
    const double* wr = w.value().data() + static_cast<std::size_t>(o) * C;
    for (int c = 0; c < C; ++c) acc += wr[c] * x.value()[c];
    y[o] = acc;
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(y), inputs, [O, C](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (wants(px)) {
      Tensor& gx = px->grad_buffer();
      for (int o = 0; o < O; ++o) {
        const double* wr = pw->value.data() + static_cast<std::size_t>(o) * C;
        for (int c = 0; c < C; ++c) gx[c] += self.grad[o] * wr[c];
      }
    }
    if (wants(pw)) {
      Tensor& gw = pw->grad_buffer();
      for (int o = 0; o < O; ++o) {
        double* gr = gw.data() + static_cast<std::size_t>(o) * C;
        for (int c = 0; c < C; ++c) gr[c] += self.grad[o] * px->value[c];
      }
    }
    if (self.parents.size() > 2 && wants(self.parents[2])) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int o = 0; o < O; ++o) gb[o] += self.grad[o];
    }
  });
}

}  // namespace vins::ag

#include "comofusion/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "comofusion/errors.hpp"

namespace comofusion::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Var make_result(Tensor value, std::vector<std::shared_ptr<Node>> inputs,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                          " vs " + to_string(b.shape()));
  }
}

int out_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Output rows [oy0, oy1) as a (Cin*k*k) x ((oy1-oy0)*Wo) row-major block.
void im2col(const double* x, int cin, int h, int w, int k, int stride, int pad, int oy0, int oy1,
            int wo, double* cols) {
  const std::size_t span = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < cin; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * span;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy - oy0) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int cin, int h, int w, int k, int stride, int pad, int oy0,
                int oy1, int wo, double* x) {
  const std::size_t span = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < cin; ++c) {
    double* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * span;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy - oy0) * wo;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// GEMM panels of about this many output pixels stay cache resident.
constexpr int kConvChunkPixels = 256;

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Tensor out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return make_result(std::move(out), {xn}, [xn, df](Node& self) {
    if (!xn->requires_grad) return;
    Tensor& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i)
      gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor value) { return Var(std::move(value), false); }

void backward(const Var& root, const Tensor& seed) {
  if (!root.defined()) throw ValidationError("backward on undefined variable");
  if (seed.shape() != root.shape()) {
    throw ValidationError("backward seed shape " + to_string(seed.shape()) +
                          " does not match " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->is_leaf || node->grad.empty()) continue;
    if (node->backward) node->backward(*node);
    node->grad = Tensor();
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ValidationError("conv2d: weight " + to_string(ws) + " incompatible with input " +
                          to_string(xs));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ValidationError("conv2d: bias shape " + to_string(bias.shape()));
  }
  const int k = ws.h;
  const int cin = xs.c;
  const int cout = ws.n;
  const int ho = out_extent(xs.h, k, stride, padding);
  const int wo = out_extent(xs.w, k, stride, padding);
  if (ho <= 0 || wo <= 0) throw ValidationError("conv2d: input too small");
  const int kk = cin * k * k;
  const int hw = ho * wo;
  const bool direct = (k == 1 && stride == 1 && padding == 0);
  const int rows = std::clamp(kConvChunkPixels / wo, 1, ho);

  Tensor out(Shape{xs.n, cout, ho, wo});
  Buffer cols(direct ? 0 : static_cast<std::size_t>(kk) * rows * wo);
  Buffer panel(static_cast<std::size_t>(cout) * rows * wo);
  ConstMatMap wmat(weight.value().raw(), cout, kk);
  Eigen::Map<const Eigen::VectorXd> bvec(bias.value().raw(), cout);
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.value().raw() + static_cast<std::size_t>(n) * xs.sample();
    MatMap y(out.raw() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    if (direct) {
      y.noalias() = wmat * ConstMatMap(xn, kk, hw);
    } else {
      for (int oy0 = 0; oy0 < ho; oy0 += rows) {
        const int oy1 = std::min(ho, oy0 + rows);
        const int span = (oy1 - oy0) * wo;
        im2col(xn, cin, xs.h, xs.w, k, stride, padding, oy0, oy1, wo, cols.data());
        MatMap p(panel.data(), cout, span);
        p.noalias() = wmat * ConstMatMap(cols.data(), kk, span);
        y.middleCols(static_cast<Eigen::Index>(oy0) * wo, span) = p;
      }
    }
    y.colwise() += bvec;
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return make_result(
      std::move(out), {xn, wn, bn},
      [xn, wn, bn, xs, k, stride, padding, cin, cout, ho, wo, kk, hw, direct, rows](Node& self) {
        Buffer cols(direct ? 0 : static_cast<std::size_t>(kk) * rows * wo);
        Buffer dcols(cols.size());
        Buffer dy_panel(static_cast<std::size_t>(cout) * rows * wo);
        ConstMatMap wmat(wn->value.raw(), cout, kk);
        for (int n = 0; n < xs.n; ++n) {
          ConstMatMap dy(self.grad.raw() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
          const double* xs_ptr = xn->value.raw() + static_cast<std::size_t>(n) * xs.sample();
          double* dx = xn->requires_grad
                           ? xn->grad_buffer().raw() + static_cast<std::size_t>(n) * xs.sample()
                           : nullptr;
          if (bn->requires_grad) {
            Eigen::Map<Eigen::VectorXd> db(bn->grad_buffer().raw(), cout);
            db += dy.rowwise().sum();
          }
          if (direct) {
            if (wn->requires_grad) {
              MatMap dw(wn->grad_buffer().raw(), cout, kk);
              dw.noalias() += dy * ConstMatMap(xs_ptr, kk, hw).transpose();
            }
            if (dx) {
              MatMap dxm(dx, kk, hw);
              dxm.noalias() += wmat.transpose() * dy;
            }
            continue;
          }
          for (int oy0 = 0; oy0 < ho; oy0 += rows) {
            const int oy1 = std::min(ho, oy0 + rows);
            const int span = (oy1 - oy0) * wo;
            MatMap dyp(dy_panel.data(), cout, span);
            dyp = dy.middleCols(static_cast<Eigen::Index>(oy0) * wo, span);
            if (wn->requires_grad) {
              im2col(xs_ptr, cin, xs.h, xs.w, k, stride, padding, oy0, oy1, wo, cols.data());
              MatMap dw(wn->grad_buffer().raw(), cout, kk);
              dw.noalias() += dyp * ConstMatMap(cols.data(), kk, span).transpose();
            }
            if (dx) {
              MatMap dc(dcols.data(), kk, span);
              dc.noalias() = wmat.transpose() * dyp;
              col2im_add(dcols.data(), cin, xs.h, xs.w, k, stride, padding, oy0, oy1, wo, dx);
            }
          }
        }
      });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
    throw ValidationError("linear: weight " + to_string(ws) + " incompatible with input " +
                          to_string(xs));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ValidationError("linear: bias shape " + to_string(bias.shape()));
  }
  const int in = xs.c;
  const int outc = ws.n;
  Tensor out(Shape{xs.n, outc, 1, 1});
  MatMap y(out.raw(), xs.n, outc);
  ConstMatMap xm(x.value().raw(), xs.n, in);
  ConstMatMap wm(weight.value().raw(), outc, in);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().raw(), outc);
  y.noalias() = xm * wm.transpose();
  y.rowwise() += bv;

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return make_result(std::move(out), {xn, wn, bn}, [xn, wn, bn, xs, in, outc](Node& self) {
    ConstMatMap dy(self.grad.raw(), xs.n, outc);
    if (wn->requires_grad) {
      MatMap dw(wn->grad_buffer().raw(), outc, in);
      dw.noalias() += dy.transpose() * ConstMatMap(xn->value.raw(), xs.n, in);
    }
    if (bn->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> db(bn->grad_buffer().raw(), outc);
      db += dy.colwise().sum();
    }
    if (xn->requires_grad) {
      MatMap dx(xn->grad_buffer().raw(), xs.n, in);
      dx.noalias() += dy * ConstMatMap(wn->value.raw(), outc, in);
    }
  });
}

Var add(const Var& a, const Var& b) { return axpby(1.0, a, 1.0, b); }

Var axpby(double a, const Var& x, double b, const Var& y) {
  require_shape(x, y, "axpby");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x.value()[i] + b * y.value()[i];
  auto xn = x.node();
  auto yn = y.node();
  return make_result(std::move(out), {xn, yn}, [xn, yn, a, b](Node& self) {
    if (xn->requires_grad) {
      Tensor& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += a * self.grad[i];
    }
    if (yn->requires_grad) {
      Tensor& g = yn->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += b * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) {
      Tensor& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      Tensor& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double in, double) {
        const double s = 1.0 / (1.0 + std::exp(-in));
        return s * (1.0 + in * (1.0 - s));
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Var modulate(const Var& h, const Var& scale_shift) {
  const Shape hs = h.shape();
  const Shape ss = scale_shift.shape();
  if (ss != Shape{hs.n, 2 * hs.c, 1, 1}) {
    throw ValidationError("modulate: scale/shift " + to_string(ss) + " incompatible with " +
                          to_string(hs));
  }
  const std::size_t plane = hs.plane();
  Tensor out(hs);
  for (int n = 0; n < hs.n; ++n) {
    for (int c = 0; c < hs.c; ++c) {
      const double scale = 1.0 + scale_shift.value().at(n, c, 0, 0);
      const double shift = scale_shift.value().at(n, hs.c + c, 0, 0);
      const std::size_t off = (static_cast<std::size_t>(n) * hs.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = h.value()[off + p] * scale + shift;
    }
  }
  auto hn = h.node();
  auto sn = scale_shift.node();
  return make_result(std::move(out), {hn, sn}, [hn, sn, hs, plane](Node& self) {
    for (int n = 0; n < hs.n; ++n) {
      for (int c = 0; c < hs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * hs.c + c) * plane;
        if (hn->requires_grad) {
          const double scale = 1.0 + sn->value.at(n, c, 0, 0);
          Tensor& g = hn->grad_buffer();
          for (std::size_t p = 0; p < plane; ++p) g[off + p] += self.grad[off + p] * scale;
        }
        if (sn->requires_grad) {
          double dscale = 0.0;
          double dshift = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            dscale += self.grad[off + p] * hn->value[off + p];
            dshift += self.grad[off + p];
          }
          Tensor& g = sn->grad_buffer();
          g.at(n, c, 0, 0) += dscale;
          g.at(n, hs.c + c, 0, 0) += dshift;
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ValidationError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  }
  Tensor out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t sa = as.sample();
  const std::size_t sb = bs.sample();
  for (int n = 0; n < as.n; ++n) {
    double* dst = out.raw() + static_cast<std::size_t>(n) * (sa + sb);
    std::copy_n(a.value().raw() + n * sa, sa, dst);
    std::copy_n(b.value().raw() + n * sb, sb, dst + sa);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(out), {an, bn}, [an, bn, sa, sb, n_batch = as.n](Node& self) {
    for (int n = 0; n < n_batch; ++n) {
      const double* src = self.grad.raw() + static_cast<std::size_t>(n) * (sa + sb);
      if (an->requires_grad) {
        double* g = an->grad_buffer().raw() + n * sa;
        for (std::size_t i = 0; i < sa; ++i) g[i] += src[i];
      }
      if (bn->requires_grad) {
        double* g = bn->grad_buffer().raw() + n * sb;
        for (std::size_t i = 0; i < sb; ++i) g[i] += src[sa + i];
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x.shape();
  const int h2 = 2 * s.h;
  const int w2 = 2 * s.w;
  Tensor out(Shape{s.n, s.c, h2, w2});
  const int planes = s.n * s.c;
  for (int p = 0; p < planes; ++p) {
    const double* src = x.value().raw() + static_cast<std::size_t>(p) * s.plane();
    double* dst = out.raw() + static_cast<std::size_t>(p) * h2 * w2;
    for (int y = 0; y < h2; ++y)
      for (int xx = 0; xx < w2; ++xx) dst[y * w2 + xx] = src[(y / 2) * s.w + xx / 2];
  }
  auto xn = x.node();
  return make_result(std::move(out), {xn}, [xn, s, planes, h2, w2](Node& self) {
    Tensor& g = xn->grad_buffer();
    for (int p = 0; p < planes; ++p) {
      const double* src = self.grad.raw() + static_cast<std::size_t>(p) * h2 * w2;
      double* dst = g.raw() + static_cast<std::size_t>(p) * s.plane();
      for (int y = 0; y < h2; ++y)
        for (int xx = 0; xx < w2; ++xx) dst[(y / 2) * s.w + xx / 2] += src[y * w2 + xx];
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, s.c, 1, 1});
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* src = x.value().raw() + static_cast<std::size_t>(p) * plane;
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    out[static_cast<std::size_t>(p)] = sum / static_cast<double>(plane);
  }
  auto xn = x.node();
  return make_result(std::move(out), {xn}, [xn, s, plane](Node& self) {
    Tensor& g = xn->grad_buffer();
    for (int p = 0; p < s.n * s.c; ++p) {
      const double d = self.grad[static_cast<std::size_t>(p)] / static_cast<double>(plane);
      double* dst = g.raw() + static_cast<std::size_t>(p) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += d;
    }
  });
}

Var scale_channels(const Var& u, const Var& s) {
  const Shape us = u.shape();
  if (s.shape() != Shape{us.n, us.c, 1, 1}) {
    throw ValidationError("scale_channels: gate " + to_string(s.shape()) +
                          " incompatible with " + to_string(us));
  }
  const std::size_t plane = us.plane();
  Tensor out(us);
  for (int p = 0; p < us.n * us.c; ++p) {
    const double gate = s.value()[static_cast<std::size_t>(p)];
    const std::size_t off = static_cast<std::size_t>(p) * plane;
    for (std::size_t i = 0; i < plane; ++i) out[off + i] = u.value()[off + i] * gate;
  }
  auto un = u.node();
  auto sn = s.node();
  return make_result(std::move(out), {un, sn}, [un, sn, us, plane](Node& self) {
    for (int p = 0; p < us.n * us.c; ++p) {
      const std::size_t off = static_cast<std::size_t>(p) * plane;
      const double gate = sn->value[static_cast<std::size_t>(p)];
      if (un->requires_grad) {
        Tensor& g = un->grad_buffer();
        for (std::size_t i = 0; i < plane; ++i) g[off + i] += self.grad[off + i] * gate;
      }
      if (sn->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += self.grad[off + i] * un->value[off + i];
        sn->grad_buffer()[static_cast<std::size_t>(p)] += acc;
      }
    }
  });
}

Var scale_spatial(const Var& u, const Var& q) {
  const Shape us = u.shape();
  if (q.shape() != Shape{us.n, 1, us.h, us.w}) {
    throw ValidationError("scale_spatial: gate " + to_string(q.shape()) +
                          " incompatible with " + to_string(us));
  }
  const std::size_t plane = us.plane();
  Tensor out(us);
  for (int n = 0; n < us.n; ++n) {
    const double* gate = q.value().raw() + static_cast<std::size_t>(n) * plane;
    for (int c = 0; c < us.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * us.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = u.value()[off + i] * gate[i];
    }
  }
  auto un = u.node();
  auto qn = q.node();
  return make_result(std::move(out), {un, qn}, [un, qn, us, plane](Node& self) {
    for (int n = 0; n < us.n; ++n) {
      const double* gate = qn->value.raw() + static_cast<std::size_t>(n) * plane;
      for (int c = 0; c < us.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * us.c + c) * plane;
        if (un->requires_grad) {
          Tensor& g = un->grad_buffer();
          for (std::size_t i = 0; i < plane; ++i) g[off + i] += self.grad[off + i] * gate[i];
        }
        if (qn->requires_grad) {
          double* gq = qn->grad_buffer().raw() + static_cast<std::size_t>(n) * plane;
          for (std::size_t i = 0; i < plane; ++i) gq[i] += self.grad[off + i] * un->value[off + i];
        }
      }
    }
  });
}

}  // namespace comofusion::ag

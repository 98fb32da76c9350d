#include "comofusion/losses.hpp"

#include <algorithm>
#include <cmath>

#include "comofusion/errors.hpp"

namespace comofusion {

GrayImage redundant_image(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused) {
  require_same_shape(vis, ir, "redundant_image");
  require_same_shape(vis, fused, "redundant_image");
  if (vis.range() != ir.range() || vis.range() != fused.range()) {
    throw ValidationError("redundant_image: inputs must share a range tag");
  }
  GrayImage out(vis.height(), vis.width(), vis.range());
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = vis.data()[i] + ir.data()[i] - fused.data()[i];
  }
  return out;
}

std::vector<double> gradient_energy_gradient(const GrayImage& img) {
  const GradientField g = sobel(img);
  const double scale = 2.0 / static_cast<double>(img.size());
  std::vector<double> wx(g.gx.size());
  std::vector<double> wy(g.gy.size());
  for (std::size_t i = 0; i < wx.size(); ++i) {
    wx[i] = scale * g.gx[i];
    wy[i] = scale * g.gy[i];
  }
  return sobel_adjoint(img.height(), img.width(), wx, wy);
}

namespace {

void check_triple(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
                  const char* op) {
  require_same_shape(vis, ir, op);
  require_same_shape(vis, fused, op);
  require_min_size(fused, 3, op);
}

}  // namespace

LossWithGradient pvs_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                        const GrayImage& fused, double epsilon_div) {
  check_triple(vis, ir, fused, "pvs_loss");
  if (!(epsilon_div > 0.0)) throw ValidationError("pvs_loss: epsilon_div must be positive");
  GrayImage redundant = redundant_image(vis, ir, fused);
  const double g_r = gradient_energy(redundant);
  const double g_f = gradient_energy(fused);
  const double denom = g_f + epsilon_div;

  LossWithGradient out;
  out.value = g_r / denom;
  // dI_r/dI_f = -1, so dL/dI_f = -grad g(I_r) / denom - g_r / denom^2 * grad g(I_f).
  const std::vector<double> dg_r = gradient_energy_gradient(redundant);
  const std::vector<double> dg_f = gradient_energy_gradient(fused);
  out.grad_fused.resize(dg_r.size());
  const double ratio = g_r / (denom * denom);
  for (std::size_t i = 0; i < dg_r.size(); ++i) {
    out.grad_fused[i] = -dg_r[i] / denom - ratio * dg_f[i];
  }
  return out;
}

double pvs_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
                double epsilon_div) {
  check_triple(vis, ir, fused, "pvs_loss");
  if (!(epsilon_div > 0.0)) throw ValidationError("pvs_loss: epsilon_div must be positive");
  return gradient_energy(redundant_image(vis, ir, fused)) / (gradient_energy(fused) + epsilon_div);
}

LossWithGradient grad_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                         const GrayImage& fused) {
  check_triple(vis, ir, fused, "grad_loss");
  const GradientField gv = sobel(vis);
  const GradientField gi = sobel(ir);
  const GradientField gf = sobel(fused);
  const std::size_t n = fused.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossWithGradient out;
  std::vector<double> wx(n, 0.0);
  std::vector<double> wy(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = std::max(gv.magnitude[i], gi.magnitude[i]);
    const double diff = gf.magnitude[i] - target;
    out.value += std::abs(diff);
    const double mag = gf.magnitude[i];
    if (diff != 0.0 && mag > 0.0) {
      const double s = (diff > 0.0 ? 1.0 : -1.0) * inv_n / mag;
      wx[i] = s * gf.gx[i];
      wy[i] = s * gf.gy[i];
    }
  }
  out.value *= inv_n;
  out.grad_fused = sobel_adjoint(fused.height(), fused.width(), wx, wy);
  return out;
}

double grad_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused) {
  check_triple(vis, ir, fused, "grad_loss");
  const GradientField gv = sobel(vis);
  const GradientField gi = sobel(ir);
  const GradientField gf = sobel(fused);
  double sum = 0.0;
  for (std::size_t i = 0; i < gf.magnitude.size(); ++i) {
    sum += std::abs(gf.magnitude[i] - std::max(gv.magnitude[i], gi.magnitude[i]));
  }
  return sum / static_cast<double>(gf.magnitude.size());
}

LossWithGradient fusion_total_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                                 const GrayImage& fused,
                                                 const FusionTrainConfig& cfg) {
  if (!(cfg.lambda_tradeoff >= 0.0)) throw ValidationError("lambda must be non-negative");
  LossWithGradient total = pvs_loss_with_gradient(vis, ir, fused, cfg.epsilon_div);
  if (cfg.lambda_tradeoff == 0.0) return total;
  const LossWithGradient grad = grad_loss_with_gradient(vis, ir, fused);
  total.value += cfg.lambda_tradeoff * grad.value;
  for (std::size_t i = 0; i < total.grad_fused.size(); ++i) {
    total.grad_fused[i] += cfg.lambda_tradeoff * grad.grad_fused[i];
  }
  return total;
}

double fusion_total_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
                         const FusionTrainConfig& cfg) {
  if (!(cfg.lambda_tradeoff >= 0.0)) throw ValidationError("lambda must be non-negative");
  const double pvs = pvs_loss(vis, ir, fused, cfg.epsilon_div);
  if (cfg.lambda_tradeoff == 0.0) return pvs;
  return pvs + cfg.lambda_tradeoff * grad_loss(vis, ir, fused);
}

}  // namespace comofusion

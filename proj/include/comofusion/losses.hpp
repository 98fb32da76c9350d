#pragma once

#include <vector>

#include "comofusion/imgcore.hpp"
#include "comofusion/training_config.hpp"

namespace comofusion {

/// I_r = I_vis + I_ir - I_f. May leave the nominal range of the inputs.
GrayImage redundant_image(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused);

/// d g_I / d I, row-major, for g_I = mean(gx^2 + gy^2).
std::vector<double> gradient_energy_gradient(const GrayImage& img);

/// Scalar loss and its gradient with respect to the fused image (row-major).
struct LossWithGradient {
  double value = 0.0;
  std::vector<double> grad_fused;
};

/// L_pvs = g(I_r) / (g(I_f) + epsilon_div).
double pvs_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
                double epsilon_div);
LossWithGradient pvs_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                        const GrayImage& fused, double epsilon_div);

/// L_grad = mean | |grad I_f| - max(|grad I_vis|, |grad I_ir|) |, with |.| the
/// per-pixel Sobel magnitude. The subgradient at |grad I_f| = 0 is taken as 0.
double grad_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused);
LossWithGradient grad_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                         const GrayImage& fused);

/// L_f = L_pvs + lambda L_grad.
double fusion_total_loss(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
                         const FusionTrainConfig& cfg);
LossWithGradient fusion_total_loss_with_gradient(const GrayImage& vis, const GrayImage& ir,
                                                 const GrayImage& fused,
                                                 const FusionTrainConfig& cfg);

}  // namespace comofusion

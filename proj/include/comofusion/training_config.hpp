#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>

#include "comofusion/nets.hpp"
#include "comofusion/tensor.hpp"

namespace comofusion {

enum class DistanceKind {
  squared_l2,    ///< mean of squared differences
  pseudo_huber,  ///< sqrt(||a - b||^2 + c^2) - c per sample
  perceptual,    ///< caller-supplied PerceptualDistance
};

std::string_view to_string(DistanceKind kind);
DistanceKind parse_distance(std::string_view text);

/// Pluggable per-sample distance, e.g. a learned perceptual metric.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  /// Distance between two (1, C, H, W) tensors. When `grad_a` is non-null it
  /// receives d distance / d a.
  virtual double operator()(const Tensor& a, const Tensor& b, Tensor* grad_a) const = 0;
};

struct CMTrainConfig {
  DistanceKind distance = DistanceKind::pseudo_huber;
  /// Pseudo-Huber c; <= 0 selects 0.00054 * sqrt(per-sample element count).
  double huber_c = 0.0;
  std::shared_ptr<const PerceptualDistance> perceptual;
  /// lambda(t_i); empty means constant 1.
  std::function<double(double)> weight;
  double ema_mu = 0.95;
  int batch_size = 15;
  int crop = 160;
  int steps = 1000;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Invoke the checkpoint hook every this many steps (0 disables).
  int checkpoint_every = 0;
  ConsistencyNetConfig net;
};

struct FusionTrainConfig {
  double lambda_tradeoff = 1.0;
  double epsilon_div = 1e-8;
  int batch_size = 15;
  int crop = 160;
  double learning_rate = 1e-4;
  int epochs = 2;
  std::uint64_t seed = 0;
  FeatureSource feature_source = FeatureSource::encoder;
  FusionNetConfig head;
};

void validate(const CMTrainConfig& cfg);
void validate(const FusionTrainConfig& cfg);

}  // namespace comofusion

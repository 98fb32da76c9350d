#pragma once

#include <map>
#include <string>
#include <vector>

#include "comofusion/layers.hpp"

namespace comofusion {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a ParameterStore. Parameters that
/// received no gradient in a step are left untouched.
class Adam {
 public:
  Adam(ParameterStore& params, AdamConfig config);

  void step();
  void zero_grad() { params_->zero_grad(); }

  long long steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

  /// Moment buffers keyed "m/<param>" and "v/<param>".
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state, long long steps_taken);

 private:
  ParameterStore* params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long long t_ = 0;
};

}  // namespace comofusion

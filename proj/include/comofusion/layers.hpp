#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "comofusion/autograd.hpp"

namespace comofusion {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

/// Ordered registry of trainable tensors. Registration order is the
/// serialisation and optimiser order.
class ParameterStore {
 public:
  ag::Var add(std::string name, Tensor init);

  const std::vector<NamedParameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t count_scalars() const;

  void set_requires_grad(bool on);
  void zero_grad();

  /// Copies values from `other`; names and shapes must match exactly.
  void copy_from(const ParameterStore& other);

 private:
  std::vector<NamedParameter> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weight and bias.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  const ag::Var& weight() const { return weight_; }
  const ag::Var& bias() const { return bias_; }

 private:
  ag::Var weight_;
  ag::Var bias_;
  int in_ = 0;
  int out_ = 0;
  int kernel_ = 0;
  int stride_ = 1;
};

class Linear {
 public:
  Linear() = default;
  /// `init_scale` multiplies the default bound (use < 1 for near-identity
  /// modulation heads).
  Linear(ParameterStore& store, const std::string& name, int in_features, int out_features,
         std::mt19937_64& rng, double init_scale = 1.0);

  ag::Var operator()(const ag::Var& x) const;

  const ag::Var& weight() const { return weight_; }
  const ag::Var& bias() const { return bias_; }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

}  // namespace comofusion

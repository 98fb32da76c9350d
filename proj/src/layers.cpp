#include "comofusion/layers.hpp"

#include <cmath>

#include "comofusion/errors.hpp"

namespace comofusion {

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

ag::Var ParameterStore::add(std::string name, Tensor init) {
  for (const auto& p : params_) {
    if (p.name == name) throw ValidationError("duplicate parameter name " + name);
  }
  ag::Var v(std::move(init), true);
  params_.push_back({std::move(name), v});
  return v;
}

std::size_t ParameterStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().numel();
  return n;
}

void ParameterStore::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void ParameterStore::copy_from(const ParameterStore& other) {
  if (other.params_.size() != params_.size()) {
    throw ValidationError("parameter count mismatch: " + std::to_string(params_.size()) +
                          " vs " + std::to_string(other.params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.var.shape() != dst.var.shape()) {
      throw ValidationError("parameter mismatch at " + dst.name + ": " +
                            to_string(dst.var.shape()) + " vs " + src.name + " " +
                            to_string(src.var.shape()));
    }
    dst.var.mutable_value() = src.var.value();
  }
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_channels,
               int out_channels, int kernel, int stride, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || kernel % 2 == 0 || stride <= 0) {
    throw ValidationError("invalid conv configuration for " + name);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight_ = store.add(name + ".weight",
                      uniform_tensor(Shape{out_channels, in_channels, kernel, kernel}, bound, rng));
  bias_ = store.add(name + ".bias", uniform_tensor(Shape{1, out_channels, 1, 1}, bound, rng));
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  return ag::conv2d(x, weight_, bias_, stride_, kernel_ / 2);
}

Linear::Linear(ParameterStore& store, const std::string& name, int in_features,
               int out_features, std::mt19937_64& rng, double init_scale) {
  if (in_features <= 0 || out_features <= 0) {
    throw ValidationError("invalid linear configuration for " + name);
  }
  const double bound = init_scale / std::sqrt(static_cast<double>(in_features));
  weight_ = store.add(name + ".weight",
                      uniform_tensor(Shape{out_features, in_features, 1, 1}, bound, rng));
  bias_ = store.add(name + ".bias", uniform_tensor(Shape{1, out_features, 1, 1}, bound, rng));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

}  // namespace comofusion

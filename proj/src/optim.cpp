#include "comofusion/optim.hpp"

#include <cmath>

#include "comofusion/errors.hpp"

namespace comofusion {

Adam::Adam(ParameterStore& params, AdamConfig config) : params_(&params), config_(config) {
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  for (const auto& p : params.items()) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto& items = params_->items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    ag::Var var = items[k].var;
    if (!var.has_grad()) continue;
    const Tensor& g = var.grad();
    Tensor& w = var.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  const auto& items = params_->items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    out.emplace("m/" + items[k].name, m_[k]);
    out.emplace("v/" + items[k].name, v_[k]);
  }
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state, long long steps_taken) {
  const auto& items = params_->items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto m = state.find("m/" + items[k].name);
    const auto v = state.find("v/" + items[k].name);
    if (m == state.end() || v == state.end()) {
      throw ValidationError("optimizer state missing for " + items[k].name);
    }
    if (m->second.shape() != items[k].var.shape() || v->second.shape() != items[k].var.shape()) {
      throw ValidationError("optimizer state shape mismatch for " + items[k].name);
    }
    m_[k] = m->second;
    v_[k] = v->second;
  }
  t_ = steps_taken;
}

}  // namespace comofusion

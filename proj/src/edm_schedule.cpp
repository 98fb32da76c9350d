#include "comofusion/edm_schedule.hpp"

#include <cmath>
#include <string>

#include "comofusion/errors.hpp"

namespace comofusion {

double NoiseSchedule::time(int i) const {
  if (i < 1 || i > size()) {
    throw ValidationError("schedule index " + std::to_string(i) + " outside [1, " +
                          std::to_string(size()) + "]");
  }
  return times_[static_cast<std::size_t>(i - 1)];
}

NoiseSchedule make_schedule(const ScheduleParams& p) {
  if (!(p.epsilon >= 0.0) || !(p.epsilon < p.t_max) || !std::isfinite(p.t_max)) {
    throw ValidationError("schedule requires 0 <= epsilon < T, got epsilon=" +
                          std::to_string(p.epsilon) + " T=" + std::to_string(p.t_max));
  }
  if (!(p.rho >= 1.0) || !std::isfinite(p.rho)) {
    throw ValidationError("schedule requires rho >= 1, got " + std::to_string(p.rho));
  }
  if (p.steps < 2) {
    throw ValidationError("schedule requires N >= 2, got " + std::to_string(p.steps));
  }
  if (!(p.sigma_data > 0.0) || !std::isfinite(p.sigma_data)) {
    throw ValidationError("schedule requires sigma_data > 0");
  }

  NoiseSchedule s;
  s.params_ = p;
  s.times_.resize(static_cast<std::size_t>(p.steps));
  const double lo = std::pow(p.epsilon, 1.0 / p.rho);
  const double hi = std::pow(p.t_max, 1.0 / p.rho);
  const double denom = static_cast<double>(p.steps - 1);
  for (int i = 1; i <= p.steps; ++i) {
    const double frac = static_cast<double>(i - 1) / denom;
    s.times_[static_cast<std::size_t>(i - 1)] = std::pow(lo + frac * (hi - lo), p.rho);
  }
  s.times_.front() = p.epsilon;
  s.times_.back() = p.t_max;
  for (std::size_t k = 1; k < s.times_.size(); ++k) {
    if (!(s.times_[k] > s.times_[k - 1])) {
      throw ValidationError("schedule grid is not strictly increasing at index " +
                            std::to_string(k + 1));
    }
  }
  return s;
}

Tensor add_noise(const Tensor& x0, const NoiseSchedule& schedule, int i, const Tensor& z) {
  if (x0.shape() != z.shape()) {
    throw ValidationError("add_noise: noise shape " + to_string(z.shape()) +
                          " does not match " + to_string(x0.shape()));
  }
  const double t = schedule.time(i);
  Tensor out(x0.shape());
  for (std::size_t k = 0; k < x0.numel(); ++k) out[k] = x0[k] + t * z[k];
  return out;
}

NoisedSample add_noise(const MultiModalTensor& x0, const NoiseSchedule& schedule, int i,
                       const MultiModalTensor& z) {
  NoisedSample s;
  s.x_t = MultiModalTensor{add_noise(x0.data, schedule, i, z.data)};
  s.t = schedule.time(i);
  s.z = z;
  return s;
}

namespace {

void require_time(double t, const NoiseSchedule& schedule, const char* op) {
  if (!(t >= schedule.epsilon())) {
    throw ValidationError(std::string(op) + ": t=" + std::to_string(t) +
                          " is below epsilon=" + std::to_string(schedule.epsilon()));
  }
}

}  // namespace

double c_skip(double t, const NoiseSchedule& schedule) {
  require_time(t, schedule, "c_skip");
  const double s2 = schedule.sigma_data() * schedule.sigma_data();
  const double d = t - schedule.epsilon();
  return s2 / (d * d + s2);
}

double c_out(double t, const NoiseSchedule& schedule) {
  require_time(t, schedule, "c_out");
  const double s = schedule.sigma_data();
  return s * (t - schedule.epsilon()) / std::sqrt(s * s + t * t);
}

}  // namespace comofusion

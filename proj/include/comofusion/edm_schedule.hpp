#pragma once

#include <vector>

#include "comofusion/imgcore.hpp"
#include "comofusion/tensor.hpp"

namespace comofusion {

struct ScheduleParams {
  double epsilon = 0.002;
  double t_max = 80.0;
  double rho = 7.0;
  int steps = 40;
  double sigma_data = 0.5;

  friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

/// Discrete rho-warped time grid t_1 < ... < t_N over [epsilon, T]:
///
///   t_i = (eps^(1/rho) + (i-1)/(N-1) * (T^(1/rho) - eps^(1/rho)))^rho
///
/// Endpoints are stored exactly. Indices are 1-based to match the grid
/// definition. Immutable after construction.
class NoiseSchedule {
 public:
  const ScheduleParams& params() const { return params_; }
  int size() const { return static_cast<int>(times_.size()); }
  double epsilon() const { return params_.epsilon; }
  double sigma_data() const { return params_.sigma_data; }

  /// t_i for 1 <= i <= N.
  double time(int i) const;
  const std::vector<double>& times() const { return times_; }

 private:
  friend NoiseSchedule make_schedule(const ScheduleParams&);
  ScheduleParams params_;
  std::vector<double> times_;
};

/// Throws ValidationError unless 0 <= epsilon < T, rho >= 1, N >= 2 and
/// sigma_data > 0.
NoiseSchedule make_schedule(const ScheduleParams& params = {});

/// Result of the forward noising x_t = x_0 + t z.
struct NoisedSample {
  MultiModalTensor x_t;
  double t = 0.0;
  MultiModalTensor z;
};

NoisedSample add_noise(const MultiModalTensor& x0, const NoiseSchedule& schedule, int i,
                       const MultiModalTensor& z);

/// Batched form: x0 + t_i z for tensors of identical shape.
Tensor add_noise(const Tensor& x0, const NoiseSchedule& schedule, int i, const Tensor& z);

/// sigma_data^2 / ((t - eps)^2 + sigma_data^2). Equals 1 at t = eps.
double c_skip(double t, const NoiseSchedule& schedule);

/// sigma_data (t - eps) / sqrt(sigma_data^2 + t^2). Equals 0 at t = eps.
double c_out(double t, const NoiseSchedule& schedule);

}  // namespace comofusion

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "comofusion/checkpoint.hpp"
#include "comofusion/dataset.hpp"
#include "comofusion/edm_schedule.hpp"
#include "comofusion/nets.hpp"
#include "comofusion/training_config.hpp"

namespace comofusion {

/// Any map (x_t, t) -> D(x_t, t); lets the loss run on networks or on
/// closed-form stand-ins.
using ConsistencyFn = std::function<ag::Var(const ag::Var& x_t, double t)>;

struct ConsistencyLossResult {
  double value = 0.0;
  /// D_theta(x_{t_{i+1}}, t_{i+1}), the only branch that carries gradient.
  ag::Var online_output;
  /// d loss / d online_output.
  Tensor output_grad;
};

/// lambda(t_i) d(D_theta(x_{t_{i+1}}, t_{i+1}), D_target(x_{t_i}, t_i)),
/// averaged over the batch. Both noised points share the draw z. The target
/// branch runs without graph recording. Requires 1 <= i <= N - 1.
ConsistencyLossResult consistency_loss(const ConsistencyFn& online, const ConsistencyFn& target,
                                       const Tensor& x0, const NoiseSchedule& schedule, int i,
                                       const Tensor& z, const CMTrainConfig& cfg);

ConsistencyLossResult consistency_loss(const ConsistencyNetwork& theta,
                                       const ConsistencyNetwork& ema, const Tensor& x0,
                                       const NoiseSchedule& schedule, int i, const Tensor& z,
                                       const CMTrainConfig& cfg);

/// Per-sample distance between (N, C, H, W) tensors, averaged over N. When
/// grad_a is non-null it receives d/da of the batch mean.
double batch_distance(const Tensor& a, const Tensor& b, const CMTrainConfig& cfg, Tensor* grad_a);

/// p_ema <- mu p_ema + (1 - mu) p for every parameter, outside any graph.
void ema_update(ConsistencyNetwork& ema, const ConsistencyNetwork& theta, double mu);

/// Full resumable stage-1 state.
struct CMTrainState {
  ConsistencyNetwork theta;
  ConsistencyNetwork ema;
  std::map<std::string, Tensor> optimizer_state;
  long long optimizer_steps = 0;
  int step = 0;
  std::vector<double> losses;
};

/// Fresh state: theta initialised from cfg.net, ema a copy of theta.
CMTrainState init_consistency_state(const CMTrainConfig& cfg);

using CMCheckpointHook = std::function<void(const CMTrainState&)>;

/// Advances `state` until state.step == cfg.steps. Each step samples a batch
/// (with replacement), crops, draws i ~ U{1..N-1} and z ~ N(0, I), takes an
/// Adam step on theta and updates the EMA target. All randomness is derived
/// from (cfg.seed, step), so a resumed run replays the uninterrupted one.
void train_consistency(const PairDataset& dataset, const CMTrainConfig& cfg,
                       const NoiseSchedule& schedule, CMTrainState& state,
                       const CMCheckpointHook& on_checkpoint = {});

CMTrainState train_consistency(const PairDataset& dataset, const CMTrainConfig& cfg,
                               const NoiseSchedule& schedule);

/// Stage-1 checkpoint: theta, ema and optimizer moments plus metadata
/// {format_version, stage: "cm", schedule, widths, embed_dim, net_seed, step,
/// feature_source: null}.
void save_cm_checkpoint(const std::filesystem::path& path, const CMTrainState& state,
                        const NoiseSchedule& schedule);

struct CMCheckpoint {
  ScheduleParams schedule;
  CMTrainState state;
};

CMCheckpoint load_cm_checkpoint(const std::filesystem::path& path);

/// Throws ValidationError naming both parameter sets when they differ.
void require_compatible_schedule(const ScheduleParams& checkpoint, const ScheduleParams& config);

nlohmann::json schedule_to_json(const ScheduleParams& p);
ScheduleParams schedule_from_json(const nlohmann::json& j);

}  // namespace comofusion

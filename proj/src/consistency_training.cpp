#include "comofusion/consistency_training.hpp"

#include <cmath>
#include <numeric>

#include "comofusion/errors.hpp"
#include "comofusion/optim.hpp"

namespace comofusion {

namespace {

constexpr double kHuberScale = 0.00054;
constexpr std::uint64_t kStepStream = 1;

double default_huber_c(std::size_t dim) {
  return kHuberScale * std::sqrt(static_cast<double>(dim));
}

}  // namespace

double batch_distance(const Tensor& a, const Tensor& b, const CMTrainConfig& cfg, Tensor* grad_a) {
  if (a.shape() != b.shape()) {
    throw ValidationError("distance: shape mismatch " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
  }
  const int n = a.shape().n;
  const std::size_t dim = a.shape().sample();
  if (grad_a) *grad_a = Tensor(a.shape());
  double total = 0.0;

  switch (cfg.distance) {
    case DistanceKind::squared_l2: {
      const double inv = 1.0 / static_cast<double>(a.numel());
      for (std::size_t k = 0; k < a.numel(); ++k) {
        const double d = a[k] - b[k];
        total += d * d;
        if (grad_a) (*grad_a)[k] = 2.0 * d * inv;
      }
      return total * inv;
    }
    case DistanceKind::pseudo_huber: {
      const double c = cfg.huber_c > 0.0 ? cfg.huber_c : default_huber_c(dim);
      for (int s = 0; s < n; ++s) {
        const std::size_t off = static_cast<std::size_t>(s) * dim;
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double d = a[off + k] - b[off + k];
          sq += d * d;
        }
        const double root = std::sqrt(sq + c * c);
        total += root - c;
        if (grad_a) {
          for (std::size_t k = 0; k < dim; ++k) {
            (*grad_a)[off + k] = (a[off + k] - b[off + k]) / (root * n);
          }
        }
      }
      return total / n;
    }
    case DistanceKind::perceptual: {
      if (!cfg.perceptual) throw ValidationError("perceptual distance has no adapter");
      for (int s = 0; s < n; ++s) {
        Tensor g;
        total += (*cfg.perceptual)(a.sample(s), b.sample(s), grad_a ? &g : nullptr);
        if (grad_a) {
          if (g.numel() != dim) throw ValidationError("perceptual adapter returned bad gradient");
          for (std::size_t k = 0; k < dim; ++k) (*grad_a)[s * dim + k] = g[k] / n;
        }
      }
      return total / n;
    }
  }
  return total;
}

ConsistencyLossResult consistency_loss(const ConsistencyFn& online, const ConsistencyFn& target,
                                       const Tensor& x0, const NoiseSchedule& schedule, int i,
                                       const Tensor& z, const CMTrainConfig& cfg) {
  if (i < 1 || i > schedule.size() - 1) {
    throw ValidationError("consistency_loss: index " + std::to_string(i) +
                          " outside [1, N-1] with N=" + std::to_string(schedule.size()));
  }
  const double t_i = schedule.time(i);
  const double t_next = schedule.time(i + 1);
  const Tensor x_i = add_noise(x0, schedule, i, z);
  const Tensor x_next = add_noise(x0, schedule, i + 1, z);

  Tensor target_out;
  {
    ag::NoGradGuard no_grad;
    target_out = target(ag::constant(x_i), t_i).value();
  }
  ConsistencyLossResult r;
  r.online_output = online(ag::constant(x_next), t_next);
  const double lambda = cfg.weight ? cfg.weight(t_i) : 1.0;
  r.value = lambda * batch_distance(r.online_output.value(), target_out, cfg, &r.output_grad);
  r.output_grad *= lambda;
  return r;
}

ConsistencyLossResult consistency_loss(const ConsistencyNetwork& theta,
                                       const ConsistencyNetwork& ema, const Tensor& x0,
                                       const NoiseSchedule& schedule, int i, const Tensor& z,
                                       const CMTrainConfig& cfg) {
  return consistency_loss(
      [&](const ag::Var& x, double t) { return consistency_apply(theta, x, t, schedule); },
      [&](const ag::Var& x, double t) { return consistency_apply(ema, x, t, schedule); }, x0,
      schedule, i, z, cfg);
}

void ema_update(ConsistencyNetwork& ema, const ConsistencyNetwork& theta, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) {
    throw ValidationError("ema decay must lie in [0, 1), got " + std::to_string(mu));
  }
  auto& dst = ema.parameters().items();
  const auto& src = theta.parameters().items();
  if (dst.size() != src.size()) throw ValidationError("ema_update: parameter count mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].name != src[k].name || dst[k].var.shape() != src[k].var.shape()) {
      throw ValidationError("ema_update: parameter mismatch at " + dst[k].name);
    }
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    ag::Var target = dst[k].var;
    Tensor& p_ema = target.mutable_value();
    const Tensor& p = src[k].var.value();
    for (std::size_t j = 0; j < p.numel(); ++j) p_ema[j] = mu * p_ema[j] + (1.0 - mu) * p[j];
  }
}

CMTrainState init_consistency_state(const CMTrainConfig& cfg) {
  ConsistencyNetwork theta(cfg.net);
  ConsistencyNetwork ema = theta.clone();
  ema.parameters().set_requires_grad(false);
  return CMTrainState{std::move(theta), std::move(ema), {}, 0, 0, {}};
}

void train_consistency(const PairDataset& dataset, const CMTrainConfig& cfg,
                       const NoiseSchedule& schedule, CMTrainState& state,
                       const CMCheckpointHook& on_checkpoint) {
  validate(cfg);
  if (dataset.empty()) throw ValidationError("train_consistency: dataset is empty");
  state.ema.parameters().set_requires_grad(false);
  state.theta.parameters().set_requires_grad(true);

  Adam adam(state.theta.parameters(), AdamConfig{cfg.learning_rate});
  if (!state.optimizer_state.empty()) adam.load_state(state.optimizer_state, state.optimizer_steps);

  auto sync_optimizer = [&] {
    state.optimizer_state = adam.state();
    state.optimizer_steps = adam.steps_taken();
  };

  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<int> pick_index(1, schedule.size() - 1);
  while (state.step < cfg.steps) {
    std::mt19937_64 rng = derive_rng(cfg.seed, {kStepStream, static_cast<std::uint64_t>(state.step)});
    std::vector<std::size_t> indices(static_cast<std::size_t>(cfg.batch_size));
    for (auto& idx : indices) idx = pick(rng);
    const Tensor x0 = make_batch(dataset, indices, cfg.crop, rng);
    const int i = pick_index(rng);
    Tensor z(x0.shape());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : z.data()) v = normal(rng);

    adam.zero_grad();
    ConsistencyLossResult loss = consistency_loss(state.theta, state.ema, x0, schedule, i, z, cfg);
    ag::backward(loss.online_output, loss.output_grad);
    adam.step();
    ema_update(state.ema, state.theta, cfg.ema_mu);

    state.losses.push_back(loss.value);
    ++state.step;
    if (on_checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      sync_optimizer();
      on_checkpoint(state);
    }
  }
  adam.zero_grad();
  sync_optimizer();
}

CMTrainState train_consistency(const PairDataset& dataset, const CMTrainConfig& cfg,
                               const NoiseSchedule& schedule) {
  CMTrainState state = init_consistency_state(cfg);
  train_consistency(dataset, cfg, schedule, state);
  return state;
}

nlohmann::json schedule_to_json(const ScheduleParams& p) {
  return {{"epsilon", p.epsilon},
          {"T", p.t_max},
          {"rho", p.rho},
          {"N", p.steps},
          {"sigma_data", p.sigma_data}};
}

ScheduleParams schedule_from_json(const nlohmann::json& j) {
  ScheduleParams p;
  p.epsilon = j.at("epsilon").get<double>();
  p.t_max = j.at("T").get<double>();
  p.rho = j.at("rho").get<double>();
  p.steps = j.at("N").get<int>();
  p.sigma_data = j.at("sigma_data").get<double>();
  return p;
}

void require_compatible_schedule(const ScheduleParams& checkpoint, const ScheduleParams& config) {
  if (checkpoint == config) return;
  throw ValidationError("schedule mismatch: checkpoint " + schedule_to_json(checkpoint).dump() +
                        " vs config " + schedule_to_json(config).dump());
}

void save_cm_checkpoint(const std::filesystem::path& path, const CMTrainState& state,
                        const NoiseSchedule& schedule) {
  Archive ar;
  const auto& net = state.theta.config();
  ar.meta = {{"format_version", kArchiveFormatVersion},
             {"stage", "cm"},
             {"schedule", schedule_to_json(schedule.params())},
             {"widths", net.widths},
             {"embed_dim", net.embed_dim},
             {"net_seed", net.seed},
             {"feature_source", nullptr},
             {"step", state.step},
             {"optimizer_steps", state.optimizer_steps},
             {"losses", state.losses}};
  for (const auto& p : state.theta.parameters().items()) ar.tensors.emplace("theta/" + p.name, p.var.value());
  for (const auto& p : state.ema.parameters().items()) ar.tensors.emplace("ema/" + p.name, p.var.value());
  for (const auto& [name, t] : state.optimizer_state) ar.tensors.emplace("adam/" + name, t);
  write_archive(path, ar);
}

namespace {

void load_into(ParameterStore& store, const Archive& ar, const std::string& prefix,
               const std::filesystem::path& path) {
  for (const auto& p : store.items()) {
    const auto it = ar.tensors.find(prefix + p.name);
    if (it == ar.tensors.end()) {
      throw IoError("checkpoint " + path.string() + " lacks tensor " + prefix + p.name);
    }
    if (it->second.shape() != p.var.shape()) {
      throw ValidationError("checkpoint tensor " + prefix + p.name + " has shape " +
                            to_string(it->second.shape()) + ", expected " +
                            to_string(p.var.shape()));
    }
    ag::Var v = p.var;
    v.mutable_value() = it->second;
  }
}

}  // namespace

CMCheckpoint load_cm_checkpoint(const std::filesystem::path& path) {
  const Archive ar = read_archive(path);
  try {
    if (ar.meta.at("stage").get<std::string>() != "cm") {
      throw ValidationError(path.string() + " is not a consistency-model checkpoint");
    }
    if (ar.meta.at("format_version").get<int>() != kArchiveFormatVersion) {
      throw ValidationError("unsupported checkpoint format version in " + path.string());
    }
    ConsistencyNetConfig net;
    net.widths = ar.meta.at("widths").get<std::array<int, 3>>();
    net.embed_dim = ar.meta.at("embed_dim").get<int>();
    net.seed = ar.meta.at("net_seed").get<std::uint64_t>();

    CMTrainConfig cfg;
    cfg.net = net;
    CMCheckpoint ck{schedule_from_json(ar.meta.at("schedule")), init_consistency_state(cfg)};
    load_into(ck.state.theta.parameters(), ar, "theta/", path);
    load_into(ck.state.ema.parameters(), ar, "ema/", path);
    for (const auto& [name, t] : ar.tensors) {
      if (name.rfind("adam/", 0) == 0) ck.state.optimizer_state.emplace(name.substr(5), t);
    }
    ck.state.optimizer_steps = ar.meta.at("optimizer_steps").get<long long>();
    ck.state.step = ar.meta.at("step").get<int>();
    ck.state.losses = ar.meta.at("losses").get<std::vector<double>>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
}

}  // namespace comofusion

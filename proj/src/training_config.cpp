#include "comofusion/training_config.hpp"

#include <string>

#include "comofusion/errors.hpp"

namespace comofusion {

std::string_view to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::squared_l2: return "l2";
    case DistanceKind::pseudo_huber: return "pseudo-huber";
    case DistanceKind::perceptual: return "perceptual";
  }
  return "?";
}

DistanceKind parse_distance(std::string_view text) {
  if (text == "l2" || text == "squared-l2") return DistanceKind::squared_l2;
  if (text == "pseudo-huber" || text == "huber") return DistanceKind::pseudo_huber;
  if (text == "perceptual") return DistanceKind::perceptual;
  throw ValidationError("unknown distance '" + std::string(text) +
                        "' (expected l2, pseudo-huber or perceptual)");
}

void validate(const CMTrainConfig& cfg) {
  if (!(cfg.ema_mu >= 0.0 && cfg.ema_mu < 1.0)) {
    throw ValidationError("ema_mu must lie in [0, 1), got " + std::to_string(cfg.ema_mu));
  }
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (cfg.crop < 4 || cfg.crop % 4 != 0) {
    throw ValidationError("crop must be a positive multiple of 4, got " + std::to_string(cfg.crop));
  }
  if (cfg.steps < 0) throw ValidationError("steps must be >= 0");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (cfg.checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (cfg.distance == DistanceKind::perceptual && !cfg.perceptual) {
    throw ValidationError("perceptual distance selected but no adapter supplied");
  }
}

void validate(const FusionTrainConfig& cfg) {
  if (!(cfg.lambda_tradeoff >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (!(cfg.epsilon_div > 0.0)) throw ValidationError("epsilon_div must be > 0");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (cfg.crop < 4 || cfg.crop % 4 != 0) {
    throw ValidationError("crop must be a positive multiple of 4, got " + std::to_string(cfg.crop));
  }
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (cfg.epochs < 0) throw ValidationError("epochs must be >= 0");
}

}  // namespace comofusion

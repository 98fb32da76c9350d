#pragma once

#include <filesystem>
#include <vector>

#include "comofusion/dataset.hpp"
#include "comofusion/edm_schedule.hpp"
#include "comofusion/losses.hpp"
#include "comofusion/nets.hpp"
#include "comofusion/training_config.hpp"

namespace comofusion {

struct FusionBatchLoss {
  double total = 0.0;  ///< mean L_f over the batch
  double pvs = 0.0;
  double grad = 0.0;
  Tensor grad_fused;   ///< d total / d fused, (N, 1, H, W)
};

/// Per-sample fusion loss on model-range planes (N, 1, H, W), averaged.
FusionBatchLoss fusion_batch_loss(const Tensor& vis, const Tensor& ir, const Tensor& fused,
                                  const FusionTrainConfig& cfg);

struct FusionTrainResult {
  std::vector<double> losses;  ///< one entry per optimizer step
};

/// Stage-2 loop: per epoch, shuffle pairs, and for each batch crop, extract
/// frozen features at (x_eps, eps), run the head, and take an Adam step on
/// the head only. Every backbone parameter is left untouched.
FusionTrainResult train_fusion(const PairDataset& dataset, const ConsistencyNetwork& cm,
                               FusionNetwork& head, const FusionTrainConfig& cfg,
                               const NoiseSchedule& schedule);

/// Single-pass fusion of a registered unit-range pair of any size >= 3x3.
/// Non-multiple-of-4 extents are reflect-padded and the output cropped back.
GrayImage fuse_pair(const ConsistencyNetwork& cm, const FusionNetwork& head,
                    const NoiseSchedule& schedule, FeatureSource source, const GrayImage& ir,
                    const GrayImage& vis);

/// Reflect-101 padding on the bottom and right edges.
GrayImage reflect_pad(const GrayImage& img, int pad_bottom, int pad_right);

struct FusionStatistics {
  double mean_g_fused = 0.0;
  double mean_g_redundant = 0.0;
  double mean_pvs = 0.0;
  double mean_grad = 0.0;
};

/// Fuses every pair at full resolution and averages the loss-side measures
/// (model range).
FusionStatistics fusion_statistics(const PairDataset& dataset, const ConsistencyNetwork& cm,
                                   const FusionNetwork& head, const NoiseSchedule& schedule,
                                   const FusionTrainConfig& cfg);

/// Metadata {format_version, stage: "fusion", schedule, widths, reduction,
/// head_seed, feature_source} plus head parameters.
void save_fusion_checkpoint(const std::filesystem::path& path, const FusionNetwork& head,
                            const NoiseSchedule& schedule, FeatureSource source);

struct FusionCheckpoint {
  ScheduleParams schedule;
  FeatureSource feature_source = FeatureSource::encoder;
  FusionNetwork head;
};

FusionCheckpoint load_fusion_checkpoint(const std::filesystem::path& path);

}  // namespace comofusion

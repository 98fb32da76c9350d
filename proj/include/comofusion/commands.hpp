#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comofusion/edm_schedule.hpp"
#include "comofusion/metrics.hpp"
#include "comofusion/training_config.hpp"

namespace comofusion {

/// Everything a command needs; CLI flags and config-file keys fill it.
struct RunConfig {
  std::filesystem::path ir_dir;
  std::filesystem::path vis_dir;
  std::filesystem::path out_dir = "out";
  ScheduleParams schedule;
  CMTrainConfig cm;
  FusionTrainConfig fusion;
  std::uint64_t seed = 0;
  std::string device = "cpu";
};

/// Pushes the run seed into both stage configs and rejects unsupported devices.
void finalize(RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);

std::string version_string();

/// Writes <out_dir>/cm.ckpt, cm_loss.csv and manifest_train-cm.json. With
/// `resume`, continues from a stage-1 checkpoint until cfg.cm.steps.
void cmd_train_cm(const RunConfig& cfg,
                  const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Writes <out_dir>/fusion.ckpt, fusion_loss.csv and manifest_train-fusion.json.
void cmd_train_fusion(const RunConfig& cfg, const std::filesystem::path& cm_checkpoint);

struct FuseTiming {
  std::string name;
  double seconds = 0.0;
};

/// Fuses a single pair (ir/vis files, out file) or every pair in two
/// directories (out is then a directory). Writes fuse_timing.csv and
/// manifest_fuse.json beside the outputs.
std::vector<FuseTiming> cmd_fuse(const std::filesystem::path& cm_checkpoint,
                                 const std::filesystem::path& fusion_checkpoint,
                                 const std::filesystem::path& ir_path,
                                 const std::filesystem::path& vis_path,
                                 const std::filesystem::path& out_path,
                                 const RunConfig& cfg);

/// Writes the JSON report (and CSV when csv_path is set). Throws
/// ValidationError after writing if no triple matched.
MetricsReport cmd_evaluate(const std::filesystem::path& fused_dir,
                           const std::filesystem::path& ir_dir,
                           const std::filesystem::path& vis_dir,
                           const std::filesystem::path& report_path,
                           const std::optional<std::filesystem::path>& csv_path = std::nullopt);

/// CSV with header i,t,c_skip,c_out and one row per grid point.
void cmd_schedule_dump(const ScheduleParams& params, const std::filesystem::path& out_csv);

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace comofusion

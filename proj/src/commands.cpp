#include "comofusion/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "comofusion/consistency_training.hpp"
#include "comofusion/dataset.hpp"
#include "comofusion/errors.hpp"
#include "comofusion/fusion_training.hpp"
#include "comofusion/image_io.hpp"

#ifndef COMOFUSION_VERSION
#define COMOFUSION_VERSION "0.0.0"
#endif
#ifndef COMOFUSION_GIT_DESCRIBE
#define COMOFUSION_GIT_DESCRIBE "unknown"
#endif

namespace comofusion {

namespace fs = std::filesystem;

std::string version_string() {
  return std::string(COMOFUSION_VERSION) + "+" + COMOFUSION_GIT_DESCRIBE;
}

void finalize(RunConfig& cfg) {
  if (cfg.device != "cpu") {
    throw ValidationError("unsupported device '" + cfg.device + "' (only cpu is available)");
  }
  cfg.cm.seed = cfg.seed;
  cfg.cm.net.seed = cfg.seed;
  cfg.fusion.seed = cfg.seed;
  cfg.fusion.head.seed = cfg.seed + 1;
  cfg.fusion.head.widths = cfg.cm.net.widths;
}

nlohmann::json to_json(const RunConfig& cfg) {
  const auto& cm = cfg.cm;
  const auto& fu = cfg.fusion;
  return {
      {"ir_dir", cfg.ir_dir.string()},
      {"vis_dir", cfg.vis_dir.string()},
      {"out_dir", cfg.out_dir.string()},
      {"seed", cfg.seed},
      {"device", cfg.device},
      {"schedule", schedule_to_json(cfg.schedule)},
      {"cm",
       {{"distance", std::string(to_string(cm.distance))},
        {"huber_c", cm.huber_c},
        {"ema_mu", cm.ema_mu},
        {"batch_size", cm.batch_size},
        {"crop", cm.crop},
        {"steps", cm.steps},
        {"learning_rate", cm.learning_rate},
        {"checkpoint_every", cm.checkpoint_every},
        {"widths", cm.net.widths},
        {"embed_dim", cm.net.embed_dim}}},
      {"fusion",
       {{"lambda", fu.lambda_tradeoff},
        {"epsilon_div", fu.epsilon_div},
        {"batch_size", fu.batch_size},
        {"crop", fu.crop},
        {"epochs", fu.epochs},
        {"learning_rate", fu.learning_rate},
        {"feature_source", std::string(to_string(fu.feature_source))},
        {"reduction", fu.head.reduction}}},
  };
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::ostringstream os;
  os << std::setprecision(17) << "step,loss\n";
  for (std::size_t k = 0; k < losses.size(); ++k) os << k + 1 << ',' << losses[k] << '\n';
  write_text(path, os.str());
}

namespace {

void write_manifest(const fs::path& dir, const std::string& command, nlohmann::json extra) {
  nlohmann::json m = std::move(extra);
  m["command"] = command;
  m["version"] = version_string();
  write_text(dir / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

PairDataset load_training_set(const RunConfig& cfg) {
  if (cfg.ir_dir.empty() || cfg.vis_dir.empty()) {
    throw ValidationError("training needs both --ir-dir and --vis-dir");
  }
  PairDataset ds = load_pair_dataset(cfg.ir_dir, cfg.vis_dir);
  if (ds.empty()) throw ValidationError("no image pairs found in " + cfg.ir_dir.string());
  return ds;
}

CMCheckpoint load_compatible_cm(const fs::path& path, const ScheduleParams& schedule) {
  if (!fs::exists(path)) throw IoError("consistency checkpoint not found: " + path.string());
  CMCheckpoint ck = load_cm_checkpoint(path);
  require_compatible_schedule(ck.schedule, schedule);
  return ck;
}

}  // namespace

void cmd_train_cm(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  validate(cfg.cm);
  const NoiseSchedule schedule = make_schedule(cfg.schedule);
  const PairDataset ds = load_training_set(cfg);
  const fs::path ckpt = cfg.out_dir / "cm.ckpt";

  CMTrainState state = init_consistency_state(cfg.cm);
  if (resume) {
    CMCheckpoint ck = load_compatible_cm(*resume, cfg.schedule);
    const auto& a = ck.state.theta.config();
    const auto& b = cfg.cm.net;
    if (a.widths != b.widths || a.embed_dim != b.embed_dim) {
      throw ValidationError("resume checkpoint network shape differs from config");
    }
    state = std::move(ck.state);
  }
  fs::create_directories(cfg.out_dir);
  train_consistency(ds, cfg.cm, schedule, state,
                    [&](const CMTrainState& s) { save_cm_checkpoint(ckpt, s, schedule); });
  save_cm_checkpoint(ckpt, state, schedule);
  write_loss_csv(cfg.out_dir / "cm_loss.csv", state.losses);

  nlohmann::json extra{{"config", to_json(cfg)}, {"pairs", ds.size()}, {"checkpoint", ckpt.string()}};
  if (resume) extra["resumed_from"] = resume->string();
  write_manifest(cfg.out_dir, "train-cm", std::move(extra));
}

void cmd_train_fusion(const RunConfig& cfg, const fs::path& cm_checkpoint) {
  validate(cfg.fusion);
  const CMCheckpoint ck = load_compatible_cm(cm_checkpoint, cfg.schedule);
  const NoiseSchedule schedule = make_schedule(ck.schedule);
  const PairDataset ds = load_training_set(cfg);

  FusionNetConfig head_cfg = cfg.fusion.head;
  head_cfg.widths = ck.state.theta.config().widths;
  FusionNetwork head(head_cfg);
  FusionTrainConfig fcfg = cfg.fusion;
  fcfg.head = head_cfg;
  const FusionTrainResult result = train_fusion(ds, ck.state.theta, head, fcfg, schedule);

  fs::create_directories(cfg.out_dir);
  const fs::path out = cfg.out_dir / "fusion.ckpt";
  save_fusion_checkpoint(out, head, schedule, fcfg.feature_source);
  write_loss_csv(cfg.out_dir / "fusion_loss.csv", result.losses);
  write_manifest(cfg.out_dir, "train-fusion",
                 {{"config", to_json(cfg)},
                  {"cm_checkpoint", cm_checkpoint.string()},
                  {"pairs", ds.size()},
                  {"checkpoint", out.string()}});
}

std::vector<FuseTiming> cmd_fuse(const fs::path& cm_checkpoint, const fs::path& fusion_checkpoint,
                                 const fs::path& ir_path, const fs::path& vis_path,
                                 const fs::path& out_path, const RunConfig& cfg) {
  if (!fs::exists(fusion_checkpoint)) {
    throw IoError("fusion checkpoint not found: " + fusion_checkpoint.string());
  }
  const FusionCheckpoint fck = load_fusion_checkpoint(fusion_checkpoint);
  const CMCheckpoint cck = load_compatible_cm(cm_checkpoint, fck.schedule);
  if (cck.state.theta.config().widths != fck.head.config().widths) {
    throw ValidationError("fusion head does not match the consistency checkpoint widths");
  }
  const NoiseSchedule schedule = make_schedule(fck.schedule);

  struct Job {
    std::string name;
    fs::path ir, vis, out;
  };
  std::vector<Job> jobs;
  fs::path log_dir;
  if (fs::is_directory(ir_path)) {
    std::vector<fs::path> ir_files = list_images(ir_path);
    std::vector<std::string> orphans;
    for (const auto& p : ir_files) {
      const fs::path v = vis_path / p.filename();
      if (!fs::exists(v)) {
        orphans.push_back(p.filename().string());
        continue;
      }
      jobs.push_back({p.filename().string(), p, v, out_path / p.filename().replace_extension(".png")});
    }
    if (!orphans.empty()) {
      std::string msg = "no visible partner for:";
      for (const auto& o : orphans) msg += " " + o;
      throw ValidationError(msg);
    }
    if (jobs.empty()) throw ValidationError("no image pairs in " + ir_path.string());
    log_dir = out_path;
  } else {
    jobs.push_back({ir_path.filename().string(), ir_path, vis_path, out_path});
    log_dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  }

  std::vector<FuseTiming> timings;
  for (const auto& job : jobs) {
    const GrayImage ir = load_gray(job.ir);
    const GrayImage vis = load_gray(job.vis);
    if (ir.height() != vis.height() || ir.width() != vis.width()) {
      throw ValidationError("size mismatch for " + job.name + ": infrared " +
                            std::to_string(ir.width()) + "x" + std::to_string(ir.height()) +
                            ", visible " + std::to_string(vis.width()) + "x" +
                            std::to_string(vis.height()));
    }
    const auto start = std::chrono::steady_clock::now();
    const GrayImage fused = fuse_pair(cck.state.theta, fck.head, schedule, fck.feature_source, ir, vis);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_gray(fused, job.out);
    timings.push_back({job.name, secs});
  }

  std::ostringstream log;
  log << std::setprecision(9) << "name,seconds\n";
  for (const auto& t : timings) log << t.name << ',' << t.seconds << '\n';
  write_text(log_dir / "fuse_timing.csv", log.str());
  write_manifest(log_dir, "fuse",
                 {{"cm_checkpoint", cm_checkpoint.string()},
                  {"fusion_checkpoint", fusion_checkpoint.string()},
                  {"ir", ir_path.string()},
                  {"vis", vis_path.string()},
                  {"out", out_path.string()},
                  {"feature_source", std::string(to_string(fck.feature_source))},
                  {"schedule", schedule_to_json(fck.schedule)},
                  {"seed", cfg.seed},
                  {"device", cfg.device}});
  return timings;
}

MetricsReport cmd_evaluate(const fs::path& fused_dir, const fs::path& ir_dir,
                           const fs::path& vis_dir, const fs::path& report_path,
                           const std::optional<fs::path>& csv_path) {
  MetricsReport report = evaluate(fused_dir, vis_dir, ir_dir);
  write_text(report_path, to_json(report).dump(2) + "\n");
  if (csv_path) write_text(*csv_path, to_csv(report));
  const fs::path dir = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
  write_manifest(dir, "evaluate",
                 {{"fused_dir", fused_dir.string()},
                  {"ir_dir", ir_dir.string()},
                  {"vis_dir", vis_dir.string()},
                  {"report", report_path.string()},
                  {"records", report.records.size()},
                  {"errors", report.errors.size()}});
  if (report.records.empty()) {
    throw ValidationError("evaluate: no fused image matched a visible/infrared pair");
  }
  return report;
}

void cmd_schedule_dump(const ScheduleParams& params, const fs::path& out_csv) {
  const NoiseSchedule s = make_schedule(params);
  std::ostringstream os;
  os << std::setprecision(17) << "i,t,c_skip,c_out\n";
  for (int i = 1; i <= s.size(); ++i) {
    const double t = s.time(i);
    os << i << ',' << t << ',' << c_skip(t, s) << ',' << c_out(t, s) << '\n';
  }
  write_text(out_csv, os.str());
  const fs::path dir = out_csv.has_parent_path() ? out_csv.parent_path() : fs::path(".");
  write_manifest(dir, "schedule-dump", {{"schedule", schedule_to_json(params)}, {"out", out_csv.string()}});
}

}  // namespace comofusion

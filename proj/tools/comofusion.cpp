// comofusion command-line front end.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "comofusion/commands.hpp"
#include "comofusion/errors.hpp"

using namespace comofusion;

namespace {

struct Options {
  RunConfig run;
  std::string feature_source = "encoder";
  std::string distance = "pseudo-huber";
  std::vector<int> widths{16, 32, 64};
  std::string resume;
  std::string cm_ckpt;
  std::string fusion_ckpt;
  std::string ir;
  std::string vis;
  std::string fused_dir;
  std::string report;
  std::string csv;
};

void add_run_options(CLI::App& app, Options& o) {
  RunConfig& r = o.run;
  app.set_config("--config", "", "flat INI/TOML file; keys are the long option names");
  app.add_option("--seed", r.seed, "master seed")->capture_default_str();
  app.add_option("--out", r.out_dir, "output directory (fuse: output file or directory)")
      ->capture_default_str();
  app.add_option("--device", r.device, "compute device (cpu)")->capture_default_str();
  app.add_option("--feature-source", o.feature_source, "encoder or decoder")->capture_default_str();
  app.add_option("--ir-dir", r.ir_dir, "infrared image directory");
  app.add_option("--vis-dir", r.vis_dir, "visible image directory");

  app.add_option("--epsilon", r.schedule.epsilon)->capture_default_str()->group("Schedule");
  app.add_option("--t-max", r.schedule.t_max)->capture_default_str()->group("Schedule");
  app.add_option("--rho", r.schedule.rho)->capture_default_str()->group("Schedule");
  app.add_option("--n-steps", r.schedule.steps, "grid size N")->capture_default_str()->group("Schedule");
  app.add_option("--sigma-data", r.schedule.sigma_data)->capture_default_str()->group("Schedule");

  app.add_option("--distance", o.distance, "l2 or pseudo-huber")->capture_default_str()->group("Training");
  app.add_option("--huber-c", r.cm.huber_c, "pseudo-Huber c (<= 0: 0.00054 sqrt(d))")
      ->capture_default_str()->group("Training");
  app.add_option("--ema-mu", r.cm.ema_mu)->capture_default_str()->group("Training");
  app.add_option("--batch-size", r.cm.batch_size)->capture_default_str()->group("Training");
  app.add_option("--crop", r.cm.crop, "square crop side, multiple of 4")->capture_default_str()->group("Training");
  app.add_option("--cm-steps", r.cm.steps, "stage-1 optimizer steps")->capture_default_str()->group("Training");
  app.add_option("--lr", r.cm.learning_rate)->capture_default_str()->group("Training");
  app.add_option("--checkpoint-every", r.cm.checkpoint_every)->capture_default_str()->group("Training");
  app.add_option("--widths", o.widths, "three feature widths")->expected(3)->capture_default_str()->group("Training");
  app.add_option("--embed-dim", r.cm.net.embed_dim)->capture_default_str()->group("Training");
  app.add_option("--lambda", r.fusion.lambda_tradeoff, "gradient-loss weight")->capture_default_str()->group("Training");
  app.add_option("--epochs", r.fusion.epochs)->capture_default_str()->group("Training");
  app.add_option("--reduction", r.fusion.head.reduction, "scSE reduction ratio")->capture_default_str()->group("Training");
}

RunConfig resolve(Options& o) {
  RunConfig r = o.run;
  r.fusion.feature_source = parse_feature_source(o.feature_source);
  r.cm.distance = parse_distance(o.distance);
  std::copy(o.widths.begin(), o.widths.end(), r.cm.net.widths.begin());
  r.fusion.batch_size = r.cm.batch_size;
  r.fusion.crop = r.cm.crop;
  r.fusion.learning_rate = r.cm.learning_rate;
  finalize(r);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infrared/visible image fusion with consistency-model features"};
  app.require_subcommand(1);
  Options o;
  add_run_options(app, o);

  auto* train_cm = app.add_subcommand("train-cm", "stage 1: consistency training")->fallthrough();
  train_cm->add_option("--resume", o.resume, "continue from a stage-1 checkpoint");

  auto* train_fusion = app.add_subcommand("train-fusion", "stage 2: fusion head training")->fallthrough();
  train_fusion->add_option("--cm", o.cm_ckpt, "stage-1 checkpoint")->required();

  auto* fuse = app.add_subcommand("fuse", "fuse one pair or two directories")->fallthrough();
  fuse->add_option("--cm", o.cm_ckpt, "stage-1 checkpoint")->required();
  fuse->add_option("--fusion", o.fusion_ckpt, "stage-2 checkpoint")->required();
  fuse->add_option("--ir", o.ir, "infrared image or directory")->required();
  fuse->add_option("--vis", o.vis, "visible image or directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "metric report for fused images")->fallthrough();
  evaluate->add_option("--fused", o.fused_dir, "fused image directory")->required();
  evaluate->add_option("--report", o.report, "JSON report path (default <out>/report.json)");
  evaluate->add_option("--csv", o.csv, "optional CSV export");

  auto* dump = app.add_subcommand("schedule-dump", "write the time grid and c_skip/c_out table")->fallthrough();
  dump->add_option("--csv", o.csv, "CSV path (default <out>/schedule.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = resolve(o);
    if (*train_cm) {
      std::optional<std::filesystem::path> resume;
      if (!o.resume.empty()) resume = o.resume;
      cmd_train_cm(cfg, resume);
      std::cout << "wrote " << (cfg.out_dir / "cm.ckpt").string() << '\n';
    } else if (*train_fusion) {
      cmd_train_fusion(cfg, o.cm_ckpt);
      std::cout << "wrote " << (cfg.out_dir / "fusion.ckpt").string() << '\n';
    } else if (*fuse) {
      for (const auto& t : cmd_fuse(o.cm_ckpt, o.fusion_ckpt, o.ir, o.vis, cfg.out_dir, cfg)) {
        std::cout << t.name << ' ' << t.seconds << " s\n";
      }
    } else if (*evaluate) {
      const std::filesystem::path report = o.report.empty() ? cfg.out_dir / "report.json" : std::filesystem::path(o.report);
      std::optional<std::filesystem::path> csv;
      if (!o.csv.empty()) csv = o.csv;
      const MetricsReport r = cmd_evaluate(o.fused_dir, cfg.ir_dir, cfg.vis_dir, report, csv);
      for (const auto& err : r.errors) std::cerr << "warning: " << err << '\n';
      std::cout << to_json(r).at("aggregate").dump() << '\n';
    } else if (*dump) {
      const std::filesystem::path out = o.csv.empty() ? cfg.out_dir / "schedule.csv" : std::filesystem::path(o.csv);
      cmd_schedule_dump(cfg.schedule, out);
      std::cout << "wrote " << out.string() << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

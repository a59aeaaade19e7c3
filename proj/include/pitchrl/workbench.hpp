#pragma once

// Runs with on-disk artifacts: the layout shared by the command-line tool and
// the acceptance driver.
//
//   <dir>/diagnostics.csv         one row per episode
//   <dir>/test_report.csv         one row per intermediate test
//   <dir>/episodes/test_latest.csv, test_best.csv
//   <dir>/checkpoints/latest.ckpt, best.ckpt

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pitchrl/checkpoint.hpp"
#include "pitchrl/reports.hpp"
#include "pitchrl/trainer.hpp"

namespace pitchrl {

namespace fs = std::filesystem;

/// Hooks that stream every record of a Trainer into `dir`.
class RunRecorder {
 public:
  RunRecorder(const fs::path& dir, WorkbenchConfig cfg)
      : dir_(dir),
        cfg_(std::move(cfg)),
        diagnostics_(dir / "diagnostics.csv", kDiagnosticsHeader),
        tests_(dir / "test_report.csv", kTestReportHeader) {}

  TrainHooks hooks() {
    TrainHooks h;
    h.on_episode = [this](const EpisodeRow& r) { diagnostics_.row(diagnostics_cells(r)); };
    h.on_test = [this](const TestRow& t, const Trajectory& traj) {
      tests_.row(test_cells(t));
      write_episode_log(dir_ / "episodes" / "test_latest.csv", traj, cfg_.env.command.dt);
      if (t.best) write_episode_log(dir_ / "episodes" / "test_best.csv", traj, cfg_.env.command.dt);
    };
    h.on_best = [this](const Agent& a, const PerformanceReport&) {
      save_checkpoint(dir_ / "checkpoints" / "best.ckpt", a, cfg_);
    };
    h.on_checkpoint = [this](const Agent& a) { save_latest(a); };
    return h;
  }

  void save_latest(const Agent& a) const { save_checkpoint(dir_ / "checkpoints" / "latest.ckpt", a, cfg_); }

 private:
  fs::path dir_;
  WorkbenchConfig cfg_;
  CsvWriter diagnostics_;
  CsvWriter tests_;
};

/// Nominal training from `start` (a fresh agent by default) for cfg.episodes
/// more episodes. latest.ckpt exists from the first moment on.
inline TrainResult train_to_dir(const WorkbenchConfig& cfg, const fs::path& dir,
                                std::optional<Agent> start = std::nullopt) {
  RunRecorder rec(dir, cfg);
  Trainer trainer(cfg, start ? *start : Agent::create(cfg), {}, rec.hooks());
  rec.save_latest(trainer.agent());
  trainer.run(cfg.episodes);
  rec.save_latest(trainer.agent());
  return {trainer.agent(), trainer.best(), trainer.best_report(), trainer.error_history(), trainer.tests(),
          trainer.faults()};
}

inline std::string bound_label(NonNominalKind kind, double bound) {
  return std::string(to_string(kind)) + "_" + fmt(bound);
}

inline constexpr std::string_view kRobustifyHeader =
    "kind,bound,survived,baseline_g,screen_error_g,episodes,best_passed,best_mean_abs_error_g";

/// One subdirectory per bound (RunRecorder layout) plus robustify_<kind>.csv.
inline std::vector<RobustifyOutcome> robustify_to_dir(const Agent& nominal, const WorkbenchConfig& cfg,
                                                      NonNominalKind kind, const std::vector<double>& bounds,
                                                      const fs::path& dir) {
  std::vector<std::unique_ptr<RunRecorder>> recorders;
  const auto out = robustify(nominal, cfg, kind, bounds, [&](double b) {
    recorders.push_back(std::make_unique<RunRecorder>(dir / bound_label(kind, b), cfg));
    return recorders.back()->hooks();
  });
  CsvWriter summary(dir / ("robustify_" + std::string(to_string(kind)) + ".csv"), kRobustifyHeader);
  for (const auto& r : out) {
    summary.row({std::string(to_string(kind)), fmt(r.bound), r.survived ? "1" : "0", fmt(r.baseline),
                 fmt(r.screen_error), std::to_string(r.episodes),
                 r.best_report ? std::to_string(r.best_report->passed()) : "",
                 r.best_report ? fmt(r.best_report->mean_abs_error) : ""});
  }
  return out;
}

inline SweepResult sweep_to_dir(const Agent& a, const Agent& b, const EnvConfig& env, NonNominalKind kind,
                                const fs::path& dir, double amplitude = 10.0) {
  const SweepResult s = sweep(a, b, env, kind, default_grid(kind), amplitude);
  write_sweep(dir, s);
  return s;
}

}  // namespace pitchrl

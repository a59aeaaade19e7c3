#pragma once

// CSV and log emission. Every file gets a fixed header on creation and is then
// only appended to.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "pitchrl/errors.hpp"
#include "pitchrl/metrics.hpp"
#include "pitchrl/trainer.hpp"

namespace pitchrl {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view header) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    out_ << header << '\n';
    out_.flush();
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    out_.flush();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline constexpr std::string_view kDiagnosticsHeader =
    "episode,update,amplitude_cap,nonnominal,latency_ms,delta_first,delta_second,mean_abs_error,"
    "total_reward,diverged,ser_gate,her_episodes,n0,n1,bper_balanced,drawn_success,reassigned,"
    "samples,l1,l2,policy_loss,value_loss,alpha,log_var_train,update_aborted,fault";

inline std::vector<std::string> diagnostics_cells(const EpisodeRow& r) {
  const auto b = [](bool x) { return std::string(x ? "1" : "0"); };
  return {std::to_string(r.episode), std::to_string(r.update), fmt(r.amplitude_cap),
          std::string(to_string(r.nonnom.kind)), std::to_string(r.nonnom.latency_ms), fmt(r.nonnom.delta_first),
          fmt(r.nonnom.delta_second), fmt(r.mean_abs_error), fmt(r.total_reward), b(r.diverged),
          b(r.gate_open), std::to_string(r.synthetic), std::to_string(r.replay.n0),
          std::to_string(r.replay.n1), b(r.replay.balanced), std::to_string(r.replay.drawn_success),
          std::to_string(r.replay.reassigned), std::to_string(r.samples), fmt(r.update_diag.l1),
          fmt(r.update_diag.l2), fmt(r.update_diag.policy_loss), fmt(r.update_diag.value_loss),
          fmt(r.update_diag.alpha), fmt(r.log_var_train), b(r.update_diag.aborted), b(r.fault)};
}

inline constexpr std::string_view kTestReportHeader =
    "episode,amplitude_cap,max_resting_error_g,overshoot_pct,max_eta_rad,eta_noise_resting_rad,"
    "eta_noise_transition_rad,mean_abs_error_g,passed,diverged,best,promoted";

inline std::vector<std::string> test_cells(const TestRow& r) {
  const auto& p = r.report;
  return {std::to_string(r.episode), fmt(r.amplitude_cap), fmt(p.max_resting_error), fmt(p.overshoot),
          fmt(p.max_actuation), fmt(p.noise_resting), fmt(p.noise_transition), fmt(p.mean_abs_error),
          std::to_string(p.passed()), p.diverged ? "1" : "0", r.best ? "1" : "0", r.promoted ? "1" : "0"};
}

inline constexpr std::string_view kEpisodeLogHeader =
    "step,time_s,command_g,reference_g,a_z_g,e_z_g,eta_com_rad,eta_rad,alpha_rad,q_rad_s,reward,period";

inline void write_episode_log(const std::filesystem::path& path, const Trajectory& traj, double dt) {
  CsvWriter w(path, kEpisodeLogHeader);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const StepRecord& s = traj.steps[t];
    w.row({std::to_string(t), fmt(static_cast<double>(t) * dt), fmt(traj.command.samples[t]),
           fmt(traj.shaped[t]), fmt(s.a_z), fmt(s.e_z), fmt(s.command), fmt(s.eta), fmt(s.obs[kObsAlpha]),
           fmt(s.obs[kObsPitchRate]), fmt(s.reward),
           s.period == Period::kResting ? "resting" : "transition"});
  }
}

/// Human-readable comparison against the thresholds, one line per objective.
inline std::string format_report(const PerformanceReport& r, const PerformanceThresholds& th = {}) {
  const std::array<double, kMetricCount> limits = {th.max_resting_error, th.overshoot, th.max_actuation,
                                                    th.noise_resting, th.noise_transition};
  const std::array<const char*, kMetricCount> units = {"g", "%", "rad", "rad", "rad"};
  std::string out;
  char line[160];
  const auto v = r.values();
  for (int m = 0; m < kMetricCount; ++m) {
    std::snprintf(line, sizeof line, "%-12s %12.6g %-3s  < %-8.4g %s\n", std::string(kMetricNames[m]).c_str(),
                  v[m], units[m], limits[m], r.pass[m] ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "mean |e_z|   %12.6g g    %d/5 passed%s\n", r.mean_abs_error, r.passed(),
                r.diverged ? " (diverged)" : "");
  return out + line;
}

inline std::string sweep_value_label(NonNominalKind kind) {
  switch (kind) {
    case NonNominalKind::kLatency: return "latency_ms";
    case NonNominalKind::kEstimation: return "delta_mach_height";
    case NonNominalKind::kParametric: return "delta_cz_cm";
    default: return "value";
  }
}

/// sweep_<kind>.csv: one row per grid value with both agents' metrics;
/// sweep_<kind>_summary.csv: one row per objective with the success rate.
inline void write_sweep(const std::filesystem::path& dir, const SweepResult& s) {
  const std::string kind(to_string(s.kind));
  std::string header = sweep_value_label(s.kind);
  for (const char* agent : {"a", "b"})
    for (auto name : kMetricNames) header += "," + std::string(agent) + ":" + std::string(name);
  header += ",a_diverged,b_diverged";
  CsvWriter points(dir / ("sweep_" + kind + ".csv"), header);
  for (const auto& p : s.points) {
    std::vector<std::string> cells{fmt(p.value)};
    for (double v : p.a.values()) cells.push_back(fmt(v));
    for (double v : p.b.values()) cells.push_back(fmt(v));
    cells.push_back(p.a.diverged ? "1" : "0");
    cells.push_back(p.b.diverged ? "1" : "0");
    points.row(cells);
  }
  CsvWriter summary(dir / ("sweep_" + kind + "_summary.csv"), "Metric,Success %");
  for (int m = 0; m < kMetricCount; ++m) summary.row({std::string(kMetricNames[m]), fmt(s.success_rate[m])});
}

}  // namespace pitchrl

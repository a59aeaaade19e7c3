// pitchrl: train, test, robustify and compare pitch-autopilot agents.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pitchrl/checkpoint.hpp"
#include "pitchrl/config.hpp"
#include "pitchrl/reports.hpp"
#include "pitchrl/workbench.hpp"

namespace fs = std::filesystem;
using namespace pitchrl;

namespace {

constexpr const char* kOutputEnv = "PITCHRL_OUTPUT_DIR";

// --output-dir wins over the environment, which wins over the config file.
fs::path output_dir(const std::string& flag, const WorkbenchConfig& cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return cfg.output_dir;
}

void apply_overrides(WorkbenchConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(0, "--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(0, e.what());
  }
}

std::vector<double> parse_bounds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    out.push_back(detail::parse_double(item, 0, "--bounds"));
  }
  return out;
}

struct TrainArgs {
  std::string config;
  std::string output;
  std::string resume;
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

int cmd_train(const TrainArgs& a) {
  WorkbenchConfig cfg = a.config.empty() ? WorkbenchConfig{} : load_config(a.config);
  apply_overrides(cfg, a.sets);
  if (a.episodes) cfg.episodes = *a.episodes;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const fs::path dir = output_dir(a.output, cfg);
  std::optional<Agent> start;
  if (!a.resume.empty()) {
    Checkpoint cp = load_checkpoint(a.resume);
    if (cp.digest != config_digest(cfg))
      std::cerr << "warning: " << a.resume << " was trained under config " << cp.digest << ", resuming under "
                << config_digest(cfg) << "\n";
    start = std::move(cp.agent);
  }
  fs::create_directories(dir);
  std::cout << "config " << config_digest(cfg) << ", " << cfg.episodes << " episodes -> " << dir.string() << "\n";
  const TrainResult r = train_to_dir(cfg, dir, start);
  std::cout << "finished at episode " << r.agent.episode << ", amplitude cap " << r.agent.amplitude_cap << " g, "
            << r.faults << " fault(s)\n";
  if (r.best_report) std::cout << "best agent:\n" << format_report(*r.best_report);
  return 0;
}

struct TestArgs {
  std::string checkpoint;
  std::string output;
  std::optional<int> latency_ms;
  std::optional<double> delta_mach, delta_height, delta_cz, delta_cm;
  double amplitude = 10.0;
};

NonNominality nonnom_from_flags(const TestArgs& a) {
  const bool est = a.delta_mach || a.delta_height;
  const bool par = a.delta_cz || a.delta_cm;
  if (int(a.latency_ms.has_value()) + int(est) + int(par) > 1)
    throw InvalidArgument("choose one non-nominality at a time: latency, estimation or parametric flags");
  if (a.latency_ms) return NonNominality::latency(*a.latency_ms);
  if (est) return NonNominality::estimation(a.delta_mach.value_or(0.0), a.delta_height.value_or(0.0));
  if (par) return NonNominality::parametric(a.delta_cz.value_or(0.0), a.delta_cm.value_or(0.0));
  return NonNominality::nominal();
}

int cmd_test(const TestArgs& a) {
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const NonNominality nonnom = nonnom_from_flags(a);
  const EnvConfig& env = cp.config.env;
  const Trajectory traj = test_episode(cp.agent, env, a.amplitude, nonnom);
  const PerformanceReport report = evaluate_metrics(traj, traj.mask, env.command.transition_window);
  const fs::path dir = output_dir(a.output, cp.config);
  write_episode_log(dir / "test_episode.csv", traj, env.command.dt);
  CsvWriter csv(dir / "test_report.csv", kTestReportHeader);
  csv.row(test_cells({cp.agent.episode, cp.agent.amplitude_cap, report, false, false}));
  std::cout << a.checkpoint << " (episode " << cp.agent.episode << "), " << to_string(nonnom.kind);
  if (nonnom.kind == NonNominalKind::kLatency) std::cout << " " << nonnom.latency_ms << " ms";
  if (nonnom.kind == NonNominalKind::kEstimation || nonnom.kind == NonNominalKind::kParametric)
    std::cout << " (" << nonnom.delta_first << ", " << nonnom.delta_second << ")";
  std::cout << "\n" << format_report(report);
  return 0;
}

struct RobustifyArgs {
  std::string checkpoint;
  std::string kind;
  std::string bounds;
  std::string output;
  std::vector<std::string> sets;
};

int cmd_robustify(const RobustifyArgs& a) {
  const NonNominalKind kind = parse_non_nominal_kind(a.kind);
  if (kind == NonNominalKind::kNone) throw InvalidArgument("robustify needs latency, estimation or parametric");
  Checkpoint cp = load_checkpoint(a.checkpoint);
  WorkbenchConfig cfg = cp.config;
  apply_overrides(cfg, a.sets);
  const std::vector<double> bounds = a.bounds.empty() ? default_bounds(kind, cfg.robustify) : parse_bounds(a.bounds);
  const fs::path dir = output_dir(a.output, cfg);
  fs::create_directories(dir);
  const auto out = robustify_to_dir(cp.agent, cfg, kind, bounds, dir);
  for (const auto& r : out) {
    std::cout << bound_label(kind, r.bound) << ": " << (r.survived ? "survived" : "dropped at screen")
              << ", baseline " << r.baseline << " g, screen " << r.screen_error << " g";
    if (r.best_report) std::cout << ", best " << r.best_report->passed() << "/5";
    std::cout << "\n";
  }
  return 0;
}

struct SweepArgs {
  std::string a, b, kind, output;
  double amplitude = 10.0;
};

int cmd_sweep(const SweepArgs& s) {
  const NonNominalKind kind = parse_non_nominal_kind(s.kind);
  const Checkpoint a = load_checkpoint(s.a);
  const Checkpoint b = load_checkpoint(s.b);
  if (a.digest != b.digest)
    std::cerr << "warning: config digests differ (" << a.digest << " vs " << b.digest
              << "), comparing under the first agent's environment\n";
  const fs::path dir = output_dir(s.output, a.config);
  const SweepResult r = sweep_to_dir(a.agent, b.agent, a.config.env, kind, dir, s.amplitude);
  std::cout << "sweep " << to_string(kind) << ", " << r.points.size() << " grid points, success of b over a:\n";
  for (int m = 0; m < kMetricCount; ++m) std::cout << "  " << kMetricNames[m] << " " << r.success_rate[m] << " %\n";
  return 0;
}

int cmd_inspect(const std::string& path, bool show_config) {
  const Checkpoint cp = load_checkpoint(path);
  const Agent& ag = cp.agent;
  const auto dims = [](const Mlp& n) {
    std::string s;
    for (int d : n.dims()) s += (s.empty() ? "" : "-") + std::to_string(d);
    return s + " (" + std::to_string(n.parameter_count()) + " parameters)";
  };
  std::cout << "format version   " << kCheckpointVersion << "\n"
            << "config digest    " << cp.digest << "\n"
            << "episode          " << ag.episode << "\n"
            << "amplitude cap    " << ag.amplitude_cap << " g\n"
            << "alpha            " << ag.trpo.alpha << "\n"
            << "log_var_train    " << ag.policy.log_var_train << "\n"
            << "policy net       " << dims(ag.policy.mean_net) << "\n"
            << "value net        " << dims(ag.value_net) << "\n"
            << "normalizer count " << ag.normalizer.count() << "\n"
            << "adam steps       " << ag.trpo.policy_adam.step << " / " << ag.trpo.value_adam.step << "\n";
  if (show_config) std::cout << serialize_config(cp.config);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pitchrl: reinforcement-learning pitch autopilot workbench"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "train an agent on the nominal plant");
  tr->add_option("--config", train.config, "config file (defaults apply when omitted)")->check(CLI::ExistingFile);
  tr->add_option("--episodes", train.episodes, "episode budget");
  tr->add_option("--seed", train.seed, "run seed");
  tr->add_option("--output-dir", train.output, std::string("output directory (else $") + kOutputEnv + ", else config)");
  tr->add_option("--resume", train.resume, "continue from this checkpoint");
  tr->add_option("--set", train.sets, "override a config key, e.g. --set trpo.gamma=0.98");

  TestArgs test;
  auto* te = app.add_subcommand("test", "run the deterministic -10 g / +10 g test episode");
  te->add_option("checkpoint", test.checkpoint)->required();
  te->add_option("--latency-ms", test.latency_ms, "fixed actuation latency")->check(CLI::NonNegativeNumber);
  te->add_option("--delta-mach", test.delta_mach, "relative Mach estimation error");
  te->add_option("--delta-height", test.delta_height, "relative height estimation error");
  te->add_option("--delta-cz", test.delta_cz, "relative C_z error");
  te->add_option("--delta-cm", test.delta_cm, "relative C_m error");
  te->add_option("--amplitude", test.amplitude, "step amplitude in g");
  te->add_option("--output-dir", test.output, "where the episode log and report go");

  RobustifyArgs rob;
  auto* ro = app.add_subcommand("robustify", "resume training under randomized non-nominality");
  ro->add_option("checkpoint", rob.checkpoint)->required();
  ro->add_option("--kind", rob.kind, "latency | estimation | parametric")->required();
  ro->add_option("--bounds", rob.bounds, "comma-separated bounds (ms or 3-sigma fraction)");
  ro->add_option("--output-dir", rob.output);
  ro->add_option("--set", rob.sets, "override a config key");

  SweepArgs sw;
  auto* swc = app.add_subcommand("sweep", "compare two agents over a non-nominality grid");
  swc->add_option("checkpoint_a", sw.a)->required();
  swc->add_option("checkpoint_b", sw.b)->required();
  swc->add_option("--kind", sw.kind, "latency | estimation | parametric")->required();
  swc->add_option("--amplitude", sw.amplitude, "step amplitude in g");
  swc->add_option("--output-dir", sw.output);

  std::string inspect_path;
  bool show_config = false;
  auto* in = app.add_subcommand("inspect-checkpoint", "print a checkpoint summary");
  in->add_option("checkpoint", inspect_path)->required();
  in->add_flag("--config", show_config, "also print the embedded config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tr) return cmd_train(train);
    if (*te) return cmd_test(test);
    if (*ro) return cmd_robustify(rob);
    if (*swc) return cmd_sweep(sw);
    if (*in) return cmd_inspect(inspect_path, show_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

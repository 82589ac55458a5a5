#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cisrl/harness.hpp"

namespace fs = std::filesystem;
using namespace cisrl;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON experiment config file");
  cmd->add_option("--out", opts.out_dir,
                  "output directory (default: $CISRL_OUT_DIR or config out_dir)");
  auto* seed = cmd->add_option("--seed", "override the run seed");
  seed->each([&opts](const std::string& v) {
    opts.seed = std::stoull(v);
  });
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg = opts.config_path.empty()
                             ? default_desk_config()
                             : load_config(opts.config_path);
  if (!opts.out_dir.empty()) {
    cfg.out_dir = opts.out_dir;
  } else if (const char* env = std::getenv("CISRL_OUT_DIR");
             env != nullptr && *env != '\0' && opts.config_path.empty()) {
    cfg.out_dir = env;
  } else if (const char* env2 = std::getenv("CISRL_OUT_DIR");
             env2 != nullptr && *env2 != '\0' && cfg.out_dir == "out") {
    cfg.out_dir = env2;
  }
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) {
    throw Error(std::string(what) + " file is required");
  }
  if (!fs::exists(path)) {
    throw Error(std::string("missing ") + what + " file '" + path + "'");
  }
}

CisGrid compute_and_report_kernel(const ExperimentConfig& cfg, int max_sweeps,
                                  bool* converged) {
  const ActionSampling actions = ActionSampling::uniform(cfg.n_actions);
  const StepFn model = make_step_fn(cfg.cstr, cfg.integ);
  const KernelResult result =
      compute_kernel(cfg.grid_spec, actions, model, max_sweeps);
  std::cout << "kernel: " << result.grid.member_count() << " / "
            << cfg.grid_spec.cells() << " member cells, " << result.sweeps
            << " sweeps, fixed_point=" << (result.fixed_point ? "yes" : "no")
            << "\n";
  if (converged != nullptr) *converged = result.fixed_point;
  return result.grid;
}

int cmd_compute_cis(const CommonOpts& opts, int max_sweeps,
                    const std::string& grid_name) {
  ExperimentConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  bool converged = false;
  const CisGrid grid = compute_and_report_kernel(cfg, max_sweeps, &converged);
  const std::string path = cfg.out_dir + "/" + grid_name;
  save_grid(grid, path);
  std::cout << "wrote " << path << "\n";
  if (!converged) {
    std::cerr << "error: kernel did not reach a fixed point within "
              << max_sweeps << " sweeps\n";
    return 3;
  }
  return 0;
}

int cmd_build_backup(const CommonOpts& opts, const std::string& grid_path,
                     const std::string& backup_name) {
  ExperimentConfig cfg = resolve_config(opts);
  require_file(grid_path, "grid");
  const CisGrid grid = load_grid(grid_path);
  const ActionSampling actions = ActionSampling::uniform(cfg.n_actions);
  const BackupTable table =
      build_backup(grid, actions, make_step_fn(cfg.cstr, cfg.integ));
  fs::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/" + backup_name;
  save_backup(table, path);
  std::cout << "backup table: " << grid.member_count() << " safe actions\n"
            << "wrote " << path << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& mode_str,
              const std::string& grid_path, int episodes_override,
              bool log_transitions) {
  ExperimentConfig cfg = resolve_config(opts);
  EnvKind mode = cfg.mode;
  if (!mode_str.empty()) {
    if (mode_str == "with_cis") {
      mode = EnvKind::WithCis;
    } else if (mode_str == "no_cis") {
      mode = EnvKind::NoCis;
    } else {
      throw Error("--mode must be 'with_cis' or 'no_cis'");
    }
  }

  CisGrid grid;
  bool have_grid = false;
  if (!grid_path.empty()) {
    require_file(grid_path, "grid");
    grid = load_grid(grid_path);
    have_grid = true;
  }
  if (mode == EnvKind::WithCis && !have_grid) {
    throw Error("with_cis training requires --grid (run compute-cis first)");
  }

  const std::uint64_t seed = opts.seed.value_or(cfg.seeds.front());
  const int episodes =
      episodes_override > 0 ? episodes_override : cfg.ppo.episodes;
  fs::create_directories(cfg.out_dir);

  TrainResult res =
      train_offline(cfg, mode, have_grid ? &grid : nullptr, seed, episodes);

  std::ostringstream tag;
  tag << (mode == EnvKind::WithCis ? "with_cis" : "no_cis") << "_s" << seed;
  const std::string weights_path =
      cfg.out_dir + "/weights_" + tag.str() + ".bin";
  const std::string curves_path = cfg.out_dir + "/curves_" + tag.str() + ".csv";
  save_params(res.trainer.params, weights_path);
  write_curves_csv(res.summary, curves_path);
  std::cout << "trained " << episodes << " episodes (" << res.summary.updates
            << " updates, " << res.summary.wall_clock_s << " s)\n"
            << "wrote " << weights_path << "\nwrote " << curves_path << "\n";

  if (have_grid) {
    const std::vector<State> initial =
        sample_initial_states(grid, cfg.eval_episodes, cfg.eval_seed);
    const EvalResult eval = evaluate(res.trainer.params, cfg, grid, initial);
    std::cout << "failure rate on " << eval.episodes
              << " test episodes: " << eval.failure_rate * 100.0 << "%\n";
  }
  if (log_transitions) {
    // replay a few greedy episodes for inspection
    Environment env{cfg.cstr, cfg.integ, cfg.reward,
                    have_grid ? EnvMode::with_cis(grid) : EnvMode::no_cis(),
                    cfg.ppo.horizon};
    Rng rng(seed + 1);
    std::vector<EpisodeResult> episodes_log;
    for (int i = 0; i < 5; ++i) {
      episodes_log.push_back(env.run_episode(make_policy(res.trainer.params),
                                             rng, /*training=*/true));
    }
    const std::string path = cfg.out_dir + "/transitions_" + tag.str() + ".csv";
    write_transitions_csv(episodes_log, path);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& weights_path,
                 const std::string& grid_path, const std::string& init_path,
                 int episodes_override) {
  ExperimentConfig cfg = resolve_config(opts);
  require_file(weights_path, "weights");
  require_file(grid_path, "grid");
  const PolicyParams params = load_params(weights_path);
  const CisGrid grid = load_grid(grid_path);

  std::vector<State> initial;
  if (!init_path.empty()) {
    require_file(init_path, "initial-states");
    initial = load_initial_states(init_path);
  } else {
    const int n = episodes_override > 0 ? episodes_override : cfg.eval_episodes;
    initial =
        sample_initial_states(grid, n, opts.seed.value_or(cfg.eval_seed));
  }

  const EvalResult eval = evaluate(params, cfg, grid, initial);
  fs::create_directories(cfg.out_dir);
  write_eval_csv(eval, cfg.out_dir + "/eval.csv");
  if (init_path.empty()) {
    save_initial_states(initial, cfg.out_dir + "/eval_initial_states.txt");
  }
  std::cout << "episodes: " << eval.episodes << "\nfailed: " << eval.failed
            << "\nfailure rate: " << eval.failure_rate * 100.0 << "%\n"
            << "wrote " << cfg.out_dir << "/eval.csv\n";
  return 0;
}

int cmd_run_online(const CommonOpts& opts, const std::string& weights_path,
                   const std::string& grid_path, const std::string& backup_path,
                   int episodes_override, int max_itr_override,
                   double online_lr_override) {
  ExperimentConfig cfg = resolve_config(opts);
  require_file(weights_path, "weights");
  require_file(grid_path, "grid");
  require_file(backup_path, "backup");

  const CisGrid grid = load_grid(grid_path);
  const BackupTable backup = load_backup(backup_path);
  if (!grid.spec.same_geometry(backup.spec)) {
    throw Error("grid and backup table have different geometries");
  }

  Rng rng(opts.seed.value_or(cfg.seeds.front()));
  Trainer trainer;
  trainer.params = load_params(weights_path);
  trainer.opt = AdamState::zeros(trainer.params.param_count());
  trainer.cfg = cfg.ppo;

  SupervisorConfig sup = cfg.sup;
  if (max_itr_override >= 0) sup.max_itr = max_itr_override;
  if (online_lr_override >= 0.0) sup.online_lr = online_lr_override;
  const int episodes = episodes_override > 0 ? episodes_override : 1000;

  const SupervisorContext ctx{make_step_fn(cfg.cstr, cfg.integ), cfg.reward};
  const OnlineRunResult result = run_online(trainer, grid, backup, sup, ctx,
                                            episodes, cfg.ppo.horizon, rng);

  fs::create_directories(cfg.out_dir);
  write_telemetry_csv(result, cfg.out_dir + "/telemetry.csv");
  save_params(trainer.params, cfg.out_dir + "/weights_online.bin");
  std::cout << "episodes: " << episodes << "\nfailures: " << result.failures
            << "\nbackup uses: " << result.total_backup_uses
            << "\nretrain updates: " << result.total_retrain_updates << "\n"
            << "wrote " << cfg.out_dir << "/telemetry.csv\n"
            << "wrote " << cfg.out_dir << "/weights_online.bin\n";
  return result.failures == 0 ? 0 : 4;
}

int cmd_suite(const CommonOpts& opts, int max_sweeps) {
  ExperimentConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  bool converged = false;
  const CisGrid grid = compute_and_report_kernel(cfg, max_sweeps, &converged);
  if (!converged) {
    std::cerr << "error: kernel did not reach a fixed point\n";
    return 3;
  }
  save_grid(grid, cfg.out_dir + "/cis.grid");

  const SuiteReport report = run_experiment_suite(cfg, grid);
  for (std::size_t i = 0; i < cfg.budgets.size(); ++i) {
    std::cout << "budget " << cfg.budgets[i]
              << ": with_cis mean failure rate = "
              << report.with_cis_mean[i] * 100.0
              << "%, no_cis mean failure rate = "
              << report.no_cis_mean[i] * 100.0 << "%\n";
  }
  std::cout << "wrote " << cfg.out_dir << "/failures.csv\n"
            << "wrote " << cfg.out_dir << "/aggregate.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-invariant-set shielded PPO for the CSTR benchmark"};
  app.require_subcommand(1);

  CommonOpts common;

  auto* compute = app.add_subcommand(
      "compute-cis", "compute the invariant-set grid and write it to a file");
  add_common(compute, common);
  int max_sweeps = 1000;
  std::string grid_name = "cis.grid";
  compute->add_option("--max-sweeps", max_sweeps, "sweep budget");
  compute->add_option("--grid-file", grid_name, "output grid file name");

  auto* backup = app.add_subcommand(
      "build-backup", "derive the verified backup-action table from a grid");
  add_common(backup, common);
  std::string grid_path, backup_name = "cis.backup";
  backup->add_option("--grid", grid_path, "input grid file")->required();
  backup->add_option("--backup-file", backup_name, "output backup file name");

  auto* train = app.add_subcommand("train", "offline PPO training");
  add_common(train, common);
  std::string mode_str, train_grid;
  int train_episodes = 0;
  bool log_transitions = false;
  train->add_option("--mode", mode_str, "with_cis or no_cis");
  train->add_option("--grid", train_grid, "grid file (required for with_cis)");
  train->add_option("--episodes", train_episodes, "training episode budget");
  train->add_flag("--log-transitions", log_transitions,
                  "write a transition log CSV for a few episodes");

  auto* eval = app.add_subcommand(
      "evaluate", "failure-rate evaluation without reset or supervisor");
  add_common(eval, common);
  std::string eval_weights, eval_grid, eval_init;
  int eval_episodes = 0;
  eval->add_option("--weights", eval_weights, "weights file")->required();
  eval->add_option("--grid", eval_grid, "grid file")->required();
  eval->add_option("--init-states", eval_init,
                   "fixed initial-state file for paired comparisons");
  eval->add_option("--episodes", eval_episodes, "number of test episodes");

  auto* online = app.add_subcommand(
      "run-online", "supervised online implementation with retraining");
  add_common(online, common);
  std::string online_weights, online_grid, online_backup;
  int online_episodes = 0, online_max_itr = -1;
  double online_lr = -1.0;
  online->add_option("--weights", online_weights, "weights file")->required();
  online->add_option("--grid", online_grid, "grid file")->required();
  online->add_option("--backup", online_backup, "backup table file")->required();
  online->add_option("--episodes", online_episodes, "online episodes");
  online->add_option("--max-itr", online_max_itr,
                     "retraining budget per state");
  online->add_option("--online-lr", online_lr,
                     "step size for the online retraining updates");

  auto* suite = app.add_subcommand(
      "suite", "full with/without-CIS sampling-efficiency comparison");
  add_common(suite, common);
  int suite_sweeps = 1000;
  suite->add_option("--max-sweeps", suite_sweeps, "kernel sweep budget");

  auto* curves = app.add_subcommand("export-curves",
                                    "render a curves CSV as an SVG plot");
  std::string curves_in, curves_svg;
  curves->add_option("--in", curves_in, "curves CSV file")->required();
  curves->add_option("--svg", curves_svg, "output SVG file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (compute->parsed()) {
      return cmd_compute_cis(common, max_sweeps, grid_name);
    }
    if (backup->parsed()) {
      return cmd_build_backup(common, grid_path, backup_name);
    }
    if (train->parsed()) {
      return cmd_train(common, mode_str, train_grid, train_episodes,
                       log_transitions);
    }
    if (eval->parsed()) {
      return cmd_evaluate(common, eval_weights, eval_grid, eval_init,
                          eval_episodes);
    }
    if (online->parsed()) {
      return cmd_run_online(common, online_weights, online_grid, online_backup,
                            online_episodes, online_max_itr, online_lr);
    }
    if (suite->parsed()) {
      return cmd_suite(common, suite_sweeps);
    }
    if (curves->parsed()) {
      require_file(curves_in, "curves CSV");
      export_curves_svg(curves_in, curves_svg);
      std::cout << "wrote " << curves_svg << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cisrl/agent.hpp"
#include "cisrl/cis.hpp"
#include "cisrl/env.hpp"
#include "cisrl/supervisor.hpp"

namespace cisrl {

/// Everything one experiment needs, loadable from a JSON config file. Keys
/// are documented in the README; unknown keys are rejected.
struct ExperimentConfig {
  EnvKind mode = EnvKind::WithCis;
  PpoConfig ppo;  // episodes, horizon, batch_episodes live here
  RewardSpec reward;
  CstrParams cstr;
  IntegratorConfig integ;
  GridSpec grid_spec;
  int n_actions = 31;
  SupervisorConfig sup;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<int> budgets = {2000};
  int eval_episodes = 1000;
  std::uint64_t eval_seed = 9000;
  std::string out_dir = "out";

  void validate() const;  // throws ConfigError
};

ExperimentConfig default_desk_config();
ExperimentConfig load_config(const std::string& path);

struct RunSummary {
  std::uint64_t seed = 0;
  std::vector<double> scores;
  std::vector<double> running_avg;  // trailing 100-episode means
  double failure_rate = -1.0;       // negative until evaluated
  double wall_clock_s = 0.0;
  int updates = 0;
};

struct TrainResult {
  Trainer trainer;
  RunSummary summary;
};

/// Trailing-window mean; element i averages scores[max(0, i-window+1) ..= i].
std::vector<double> running_average(const std::vector<double>& scores,
                                    int window = 100);

/// Offline PPO training with the mode's reward shaping, initial sampling,
/// and state reset. `grid` may be null only in NoCis mode.
TrainResult train_offline(const ExperimentConfig& cfg, EnvKind mode,
                          const CisGrid* grid, std::uint64_t seed,
                          int episodes);

struct EvalResult {
  double failure_rate = 0.0;
  int failed = 0;
  int episodes = 0;
  std::vector<EpisodeResult> per_episode;
};

/// Testing-mode episodes: deterministic actions applied directly, no reset,
/// no supervisor; failure means leaving the CIS before the horizon.
EvalResult evaluate(const PolicyParams& params, const ExperimentConfig& cfg,
                    const CisGrid& grid, const std::vector<State>& initial);

/// Shared in-CIS test set for paired comparisons.
std::vector<State> sample_initial_states(const CisGrid& grid, int count,
                                         std::uint64_t seed);
void save_initial_states(const std::vector<State>& states,
                         const std::string& path);
std::vector<State> load_initial_states(const std::string& path);

struct SuiteRun {
  EnvKind mode;
  int budget = 0;
  std::uint64_t seed = 0;
  double failure_rate = 0.0;
  RunSummary summary;
};

struct SuiteReport {
  std::vector<SuiteRun> runs;
  // mean failure rate per (mode, budget), same order as cfg.budgets
  std::vector<double> with_cis_mean;
  std::vector<double> no_cis_mean;
};

/// Full sampling-efficiency comparison: trains WithCis and NoCis agents over
/// every (budget, seed), evaluates all on one shared in-CIS initial-state
/// set, and writes curves, per-run and aggregate CSVs under cfg.out_dir.
SuiteReport run_experiment_suite(const ExperimentConfig& cfg,
                                 const CisGrid& grid);

// CSV and telemetry writers (schemas documented in the README).
void write_curves_csv(const RunSummary& summary, const std::string& path);
void write_failure_table_csv(const std::vector<SuiteRun>& runs,
                             const std::string& path);
void write_eval_csv(const EvalResult& eval, const std::string& path);
void write_telemetry_csv(const OnlineRunResult& result,
                         const std::string& path);
void write_transitions_csv(const std::vector<EpisodeResult>& episodes,
                           const std::string& path);

/// Minimal SVG line plot of a curves CSV (episode, score, running_avg).
void export_curves_svg(const std::string& csv_path,
                       const std::string& svg_path);

}  // namespace cisrl

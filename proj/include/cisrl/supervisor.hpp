#pragma once

#include <vector>

#include "cisrl/agent.hpp"
#include "cisrl/cis.hpp"
#include "cisrl/env.hpp"

namespace cisrl {

struct SupervisorConfig {
  int max_itr = 10;        // online retraining budget per state
  double online_lr = 3e-3;  // step size for the one-sample online updates

  bool valid() const { return max_itr >= 0 && online_lr >= 0.0; }
};

enum class ActionSource { PolicyFirstTry, PolicyAfterRetrain, Backup };

struct SupervisorStepInfo {
  ActionSource source = ActionSource::PolicyFirstTry;
  int updates_performed = 0;
};

/// Prediction model and penalty used for the virtual rejected transitions.
struct SupervisorContext {
  StepFn step;
  RewardSpec reward;
};

struct SupervisedAction {
  Action u;
  State predicted;  // model successor, guaranteed inside the grid
  SupervisorStepInfo info;
};

/// One pass of the online safety supervisor at state x: take the policy mean
/// action; if the predicted successor leaves the grid, retrain on the
/// rejected virtual transition (up to max_itr one-sample updates) and retry
/// with actions sampled from the updated policy, then fall back to the
/// verified backup action. Retries must be stochastic: the mean action has
/// zero policy-gradient in the actor mean (z = mean), so deterministic
/// retries could never prescribe anything new. The returned action always
/// has a member predicted successor. Throws OutsideSetError when x itself is
/// not in the grid.
SupervisedAction supervised_step(Trainer& trainer, const State& x,
                                 const CisGrid& grid, const BackupTable& backup,
                                 const SupervisorConfig& cfg,
                                 const SupervisorContext& ctx, Rng& rng);

struct OnlineEpisode {
  int episode = 0;
  double score = 0.0;
  int backup_uses = 0;
  int retrain_updates = 0;
  bool failed = false;
};

struct OnlineRunResult {
  std::vector<OnlineEpisode> episodes;
  int failures = 0;
  long total_backup_uses = 0;
  long total_retrain_updates = 0;
};

/// Supervised closed-loop rollouts: every applied action passes through
/// supervised_step; initial states are sampled inside the grid. The trainer's
/// parameters are retrained in place.
OnlineRunResult run_online(Trainer& trainer, const CisGrid& grid,
                           const BackupTable& backup,
                           const SupervisorConfig& cfg,
                           const SupervisorContext& ctx, int episodes,
                           int horizon, Rng& rng);

}  // namespace cisrl

#include "cisrl/supervisor.hpp"

#include <string>

#include "cisrl/errors.hpp"

namespace cisrl {

SupervisedAction supervised_step(Trainer& trainer, const State& x,
                                 const CisGrid& grid, const BackupTable& backup,
                                 const SupervisorConfig& cfg,
                                 const SupervisorContext& ctx, Rng& rng) {
  if (!contains(grid, x)) {
    throw OutsideSetError("supervised_step: state (" + std::to_string(x.c_a) +
                          ", " + std::to_string(x.temp) +
                          ") is outside the invariant set");
  }

  SupervisedAction out;
  int updates = 0;
  bool first_try = true;
  while (true) {
    // first prescription is the pre-calculated controller (mean action);
    // retries explore stochastically so rejected samples carry gradient
    const ActResult a =
        act(trainer.params, x, first_try ? nullptr : &rng, !first_try);
    const State predicted = ctx.step(x, a.u);
    if (predicted.finite() && contains(grid, predicted)) {
      out.u = a.u;
      out.predicted = predicted;
      out.info.source = first_try ? ActionSource::PolicyFirstTry
                                  : ActionSource::PolicyAfterRetrain;
      out.info.updates_performed = updates;
      return out;
    }
    first_try = false;
    if (updates >= cfg.max_itr) break;

    // Rejected virtual transition: penalty reward, never applied to the
    // plant. A diverged prediction is treated as terminal (zero bootstrap).
    const double bootstrap =
        predicted.finite()
            ? trainer.params.critic.forward_scalar(normalize_obs(predicted))
            : 0.0;
    const double offline_lr = trainer.cfg.lr;
    trainer.cfg.lr = cfg.online_lr;
    try {
      single_transition_update(trainer, x, a.z, a.log_prob, a.value,
                               ctx.reward.r_unsafe, bootstrap);
    } catch (...) {
      trainer.cfg.lr = offline_lr;
      throw;
    }
    trainer.cfg.lr = offline_lr;
    ++updates;
  }

  out.u = backup_action(backup, x);
  out.predicted = ctx.step(x, out.u);
  out.info.source = ActionSource::Backup;
  out.info.updates_performed = updates;
  return out;
}

OnlineRunResult run_online(Trainer& trainer, const CisGrid& grid,
                           const BackupTable& backup,
                           const SupervisorConfig& cfg,
                           const SupervisorContext& ctx, int episodes,
                           int horizon, Rng& rng) {
  OnlineRunResult result;
  result.episodes.reserve(static_cast<std::size_t>(episodes));
  const RewardSpec& reward = ctx.reward;

  for (int ep = 0; ep < episodes; ++ep) {
    OnlineEpisode row;
    row.episode = ep;
    State x = sample_state_in(
        State{grid.spec.lo}, State{grid.spec.hi},
        [&grid](const State& s) { return contains(grid, s); }, rng);
    for (int k = 0; k < horizon; ++k) {
      const SupervisedAction sa =
          supervised_step(trainer, x, grid, backup, cfg, ctx, rng);
      if (sa.info.source == ActionSource::Backup) ++row.backup_uses;
      row.retrain_updates += sa.info.updates_performed;

      // prediction model equals the plant model, so applying the action
      // reproduces the verified successor
      x = sa.predicted;
      const bool inside = contains(grid, x);
      row.score += inside ? reward.r_safe : reward.r_unsafe;
      if (!inside) row.failed = true;
    }
    if (row.failed) ++result.failures;
    result.total_backup_uses += row.backup_uses;
    result.total_retrain_updates += row.retrain_updates;
    result.episodes.push_back(row);
  }
  return result;
}

}  // namespace cisrl

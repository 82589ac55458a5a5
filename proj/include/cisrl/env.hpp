#pragma once

#include <vector>

#include "cisrl/agent.hpp"
#include "cisrl/cis.hpp"
#include "cisrl/dynamics.hpp"
#include "cisrl/errors.hpp"
#include "cisrl/rng.hpp"

namespace cisrl {

/// Discrete reward of the shaped MDP: r_safe when the successor stays in the
/// safe set, r_unsafe otherwise.
struct RewardSpec {
  double r_safe = 10000.0;
  double r_unsafe = -1000.0;

  bool valid() const { return r_safe > r_unsafe; }
};

enum class EnvKind { WithCis, NoCis };

/// Safe-set selector: the CIS grid, or the plain physical box for the
/// baseline without CIS knowledge.
struct EnvMode {
  EnvKind kind = EnvKind::NoCis;
  const CisGrid* grid = nullptr;  // required for WithCis

  static EnvMode with_cis(const CisGrid& g) {
    return {EnvKind::WithCis, &g};
  }
  static EnvMode no_cis() { return {EnvKind::NoCis, nullptr}; }

  bool member(const State& x) const {
    if (!x.finite()) return false;
    return kind == EnvKind::WithCis ? contains(*grid, x)
                                    : in_physical_bounds(x);
  }
};

struct Transition {
  State x;
  Action u;
  double reward = 0.0;
  State x_next;
  bool reset_applied = false;
  double log_prob = 0.0;
  double value_est = 0.0;
  double z = 0.0;
};

struct EpisodeResult {
  double score = 0.0;
  int steps = 0;
  bool failed = false;
  std::vector<Transition> transitions;
};

struct EnvStepResult {
  State x_next;
  double reward = 0.0;
  bool reset_applied = false;
};

/// Uniform rejection sampling over a box until member(x) holds.
template <class MemberFn>
State sample_state_in(const State& lo, const State& hi, const MemberFn& member,
                      Rng& rng, int max_tries = 10000) {
  for (int i = 0; i < max_tries; ++i) {
    const State x{rng.uniform(lo.c_a, hi.c_a), rng.uniform(lo.temp, hi.temp)};
    if (member(x)) return x;
  }
  throw SamplingError("sample_state_in: no member state found in " +
                      std::to_string(max_tries) + " draws");
}

/// Episodic MDP wrapper around the CSTR: reward shaping against the mode's
/// safe set and the state-reset technique during training.
struct Environment {
  CstrParams cstr;
  IntegratorConfig integ;
  RewardSpec reward;
  EnvMode mode;
  int horizon = 200;

  /// Initial state sampled uniformly inside the mode's safe set.
  State sample_initial(Rng& rng) const {
    return sample_state_in(
        State{kConcMin, kTempMin}, State{kConcMax, kTempMax},
        [this](const State& x) { return mode.member(x); }, rng);
  }

  /// Training transition: simulate one period; an unsafe or non-finite
  /// successor resets the state to its previous value with the penalty
  /// reward, and the episode continues.
  EnvStepResult env_step(const State& x, const Action& u) const {
    const State next = step(x, u, cstr, integ);
    if (mode.member(next)) {
      return {next, reward.r_safe, false};
    }
    return {x, reward.r_unsafe, true};
  }

  /// Rolls one episode. Training mode uses env_step (reset on exit, full
  /// horizon, stochastic policy). Testing mode applies actions directly,
  /// deterministically, and terminates at the first safe-set exit with
  /// failed = true.
  template <class Policy>
  EpisodeResult run_episode(Policy&& policy, Rng& rng, bool training,
                            const State& x0) const {
    EpisodeResult result;
    result.transitions.reserve(static_cast<std::size_t>(horizon));
    State x = x0;
    for (int k = 0; k < horizon; ++k) {
      const ActResult a = policy(x, rng, /*stochastic=*/training);
      Transition tr;
      tr.x = x;
      tr.u = a.u;
      tr.log_prob = a.log_prob;
      tr.value_est = a.value;
      tr.z = a.z;
      if (training) {
        const EnvStepResult s = env_step(x, a.u);
        tr.reward = s.reward;
        tr.x_next = s.x_next;
        tr.reset_applied = s.reset_applied;
        x = s.x_next;
      } else {
        const State next = step(x, a.u, cstr, integ);
        const bool safe = mode.member(next);
        tr.reward = safe ? reward.r_safe : reward.r_unsafe;
        tr.x_next = next;
        x = next;
        if (!safe) result.failed = true;
      }
      result.score += tr.reward;
      result.steps = k + 1;
      result.transitions.push_back(tr);
      if (result.failed) break;
    }
    return result;
  }

  template <class Policy>
  EpisodeResult run_episode(Policy&& policy, Rng& rng, bool training) const {
    return run_episode(std::forward<Policy>(policy), rng, training,
                       sample_initial(rng));
  }
};

/// Policy closure over fixed parameters, suitable for run_episode.
inline auto make_policy(const PolicyParams& params) {
  return [&params](const State& x, Rng& rng, bool stochastic) {
    return act(params, x, stochastic ? &rng : nullptr, stochastic);
  };
}

}  // namespace cisrl

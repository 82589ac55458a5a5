#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cisrl/dynamics.hpp"
#include "cisrl/mlp.hpp"
#include "cisrl/rng.hpp"

namespace cisrl {

inline const std::vector<int> kNetSizes = {2, 64, 64, 1};
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Affine map of each state coordinate from its physical range to [-1, 1].
inline Eigen::Vector2d normalize_obs(const State& x) {
  return {2.0 * (x.c_a - kConcMin) / (kConcMax - kConcMin) - 1.0,
          2.0 * (x.temp - kTempMin) / (kTempMax - kTempMin) - 1.0};
}

/// Actor-critic parameters: two 2-64-64-1 tanh networks plus a
/// state-independent Gaussian log-std, clamped to [-5, 2].
struct PolicyParams {
  Mlp actor;
  Mlp critic;
  double log_std = 0.0;

  static PolicyParams init(Rng& rng);

  int param_count() const {
    return actor.param_count() + critic.param_count() + 1;
  }
  Eigen::VectorXd to_flat() const;
  void from_flat(const Eigen::VectorXd& flat);
};

struct PpoConfig {
  double lr = 1e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int update_epochs = 10;
  int minibatch_size = 256;
  int batch_episodes = 10;
  int episodes = 10000;
  int horizon = 200;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double grad_clip_norm = 0.5;
  // Rewards are scaled by this factor inside the learner so the critic's
  // targets sit at a magnitude the fixed learning rate can reach. Scores and
  // emitted rewards stay in raw units everywhere else.
  double reward_scale = 1e-3;

  bool valid() const {
    return lr > 0 && gamma > 0 && gamma <= 1 && gae_lambda >= 0 &&
           gae_lambda <= 1 && clip_eps > 0 && update_epochs >= 1 &&
           minibatch_size >= 1 && batch_episodes >= 1 && episodes >= 1 &&
           horizon >= 1 && reward_scale > 0;
  }
};

/// Result of one policy query.
struct ActResult {
  Action u;
  double log_prob = 0.0;
  double value = 0.0;
  double z = 0.0;     // pre-squash Gaussian sample
  double mean = 0.0;  // actor output
};

/// Samples (or takes the mean of) the squashed Gaussian policy
/// u = 300 + 15 tanh(z), z ~ N(actor(x), exp(log_std)). The log-prob
/// includes the tanh change-of-variables term; the value is the critic
/// output in the learner's scaled units.
ActResult act(const PolicyParams& params, const State& x, Rng* rng,
              bool stochastic);

/// Log-density of the squashed action with pre-squash value z under
/// (mean, log_std).
double squashed_log_prob(double z, double mean, double log_std);

/// Generalized advantage estimation over one episode. bootstrap_value is
/// V(x_T) of the state after the final transition (time-limit truncation).
/// Returns (advantages, returns) with returns = advantages + values.
std::pair<Eigen::VectorXd, Eigen::VectorXd> gae(const Eigen::VectorXd& rewards,
                                                const Eigen::VectorXd& values,
                                                double bootstrap_value,
                                                double gamma, double lambda);

/// Experience consumed by one PPO update. Rewards and value targets are in
/// scaled units; advantages are normalized across the whole batch when it
/// has more than one sample.
struct TrajectoryBatch {
  Eigen::MatrixXd obs;       // (B, 2) normalized observations
  Eigen::VectorXd z;         // pre-squash actions
  Eigen::VectorXd log_prob;  // behavior log-probs
  Eigen::VectorXd value;     // behavior values
  Eigen::VectorXd advantage;
  Eigen::VectorXd ret;

  int size() const { return static_cast<int>(z.size()); }
};

/// Assembles per-episode GAE results into one update batch.
class BatchBuilder {
 public:
  explicit BatchBuilder(const PpoConfig& cfg) : cfg_(cfg) {}

  void add_episode(const Eigen::MatrixXd& obs, const Eigen::VectorXd& z,
                   const Eigen::VectorXd& log_prob,
                   const Eigen::VectorXd& value,
                   const Eigen::VectorXd& scaled_rewards,
                   double bootstrap_value);
  int episode_count() const { return episodes_; }
  /// Concatenates, normalizes advantages, and resets the builder.
  TrajectoryBatch take();

 private:
  PpoConfig cfg_;
  int episodes_ = 0;
  std::vector<Eigen::MatrixXd> obs_;
  std::vector<Eigen::VectorXd> z_, log_prob_, value_, adv_, ret_;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  static AdamState zeros(int n) {
    return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
  }
};

/// Policy, optimizer state, and hyperparameters for one training run.
struct Trainer {
  PolicyParams params;
  AdamState opt;
  PpoConfig cfg;

  static Trainer create(const PpoConfig& cfg, Rng& rng);
};

struct LossParts {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

/// Clipped-surrogate loss (descent form) and its exact gradient over the
/// given batch rows. Used by the update loop and by the finite-difference
/// checks.
LossParts ppo_loss_and_grad(const PolicyParams& params,
                            const TrajectoryBatch& batch,
                            const std::vector<int>& rows,
                            const PpoConfig& cfg, Eigen::VectorXd* grad);

struct UpdateStats {
  int minibatches = 0;
  double mean_policy_loss = 0.0;
  double mean_value_loss = 0.0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
};

/// update_epochs passes of shuffled minibatch Adam steps on the clipped
/// surrogate. Throws NonFiniteError (with diagnostics) if a loss or gradient
/// goes non-finite; params are left at their last finite value.
UpdateStats ppo_update(Trainer& trainer, const TrajectoryBatch& batch,
                       Rng& rng);

/// One-sample PPO step used by the online supervisor: advantage is the plain
/// TD residual r + gamma V(x') - V(x); no normalization, one epoch.
/// reward_raw is in emitted units; scaling happens inside.
void single_transition_update(Trainer& trainer, const State& x, double z,
                              double log_prob, double value,
                              double reward_raw, double bootstrap_value);

// Binary weights persistence: magic "CISRLW1", layer sizes as 32-bit
// little-endian integers, all tensors as little-endian doubles (actor
// layers, critic layers, log_std; weights row-major), trailing CRC32 over
// everything after the magic. Round-trips bit-exactly.
void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);

}  // namespace cisrl

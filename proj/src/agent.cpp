#include "cisrl/agent.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cisrl/crc32.hpp"
#include "cisrl/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "weights file format assumes a little-endian host");

namespace cisrl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)
constexpr double kActionCenter = 300.0;
constexpr double kActionHalfRange = 15.0;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(1 - tanh(z)^2), stable for large |z|
double log_one_minus_tanh_sq(double z) {
  return 2.0 * (std::log(2.0) - z - softplus(-2.0 * z));
}

}  // namespace

PolicyParams PolicyParams::init(Rng& rng) {
  PolicyParams p;
  // Small final actor layer keeps initial means near the action-range center.
  p.actor = Mlp::create(kNetSizes, rng, 0.01);
  p.critic = Mlp::create(kNetSizes, rng, 1.0);
  p.log_std = std::log(0.5);  // ~7.5 K exploration std over the 30 K range
  return p;
}

Eigen::VectorXd PolicyParams::to_flat() const {
  Eigen::VectorXd flat(param_count());
  double* dst = flat.data();
  actor.write_flat(dst);
  dst += actor.param_count();
  critic.write_flat(dst);
  dst += critic.param_count();
  *dst = log_std;
  return flat;
}

void PolicyParams::from_flat(const Eigen::VectorXd& flat) {
  const double* src = flat.data();
  actor.read_flat(src);
  src += actor.param_count();
  critic.read_flat(src);
  src += critic.param_count();
  log_std = *src;
}

double squashed_log_prob(double z, double mean, double log_std) {
  const double sigma = std::exp(log_std);
  const double t = (z - mean) / sigma;
  return -0.5 * t * t - log_std - kHalfLog2Pi -
         (std::log(kActionHalfRange) + log_one_minus_tanh_sq(z));
}

ActResult act(const PolicyParams& params, const State& x, Rng* rng,
              bool stochastic) {
  ActResult out;
  const Eigen::Vector2d obs = normalize_obs(x);
  out.mean = params.actor.forward_scalar(obs);
  out.z = stochastic ? out.mean + std::exp(params.log_std) * rng->normal()
                     : out.mean;
  out.u.t_c = kActionCenter + kActionHalfRange * std::tanh(out.z);
  out.log_prob = squashed_log_prob(out.z, out.mean, params.log_std);
  out.value = params.critic.forward_scalar(obs);
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gae(const Eigen::VectorXd& rewards,
                                                const Eigen::VectorXd& values,
                                                double bootstrap_value,
                                                double gamma, double lambda) {
  if (rewards.size() != values.size()) {
    throw Error("gae: rewards and values length mismatch");
  }
  const Eigen::Index n = rewards.size();
  Eigen::VectorXd advantages(n);
  double carry = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double next_value = t + 1 < n ? values(t + 1) : bootstrap_value;
    const double delta = rewards(t) + gamma * next_value - values(t);
    carry = delta + gamma * lambda * carry;
    advantages(t) = carry;
  }
  return {advantages, advantages + values};
}

void BatchBuilder::add_episode(const Eigen::MatrixXd& obs,
                               const Eigen::VectorXd& z,
                               const Eigen::VectorXd& log_prob,
                               const Eigen::VectorXd& value,
                               const Eigen::VectorXd& scaled_rewards,
                               double bootstrap_value) {
  auto [adv, ret] =
      gae(scaled_rewards, value, bootstrap_value, cfg_.gamma, cfg_.gae_lambda);
  obs_.push_back(obs);
  z_.push_back(z);
  log_prob_.push_back(log_prob);
  value_.push_back(value);
  adv_.push_back(std::move(adv));
  ret_.push_back(std::move(ret));
  ++episodes_;
}

TrajectoryBatch BatchBuilder::take() {
  Eigen::Index total = 0;
  for (const auto& v : z_) total += v.size();

  TrajectoryBatch batch;
  batch.obs.resize(total, 2);
  batch.z.resize(total);
  batch.log_prob.resize(total);
  batch.value.resize(total);
  batch.advantage.resize(total);
  batch.ret.resize(total);
  Eigen::Index at = 0;
  for (std::size_t e = 0; e < z_.size(); ++e) {
    const Eigen::Index n = z_[e].size();
    batch.obs.middleRows(at, n) = obs_[e];
    batch.z.segment(at, n) = z_[e];
    batch.log_prob.segment(at, n) = log_prob_[e];
    batch.value.segment(at, n) = value_[e];
    batch.advantage.segment(at, n) = adv_[e];
    batch.ret.segment(at, n) = ret_[e];
    at += n;
  }

  if (total > 1) {
    const double mean = batch.advantage.mean();
    const double var =
        (batch.advantage.array() - mean).square().sum() / double(total);
    const double sd = std::sqrt(var);
    if (sd > 0.0) {
      batch.advantage = (batch.advantage.array() - mean) / sd;
    } else {
      batch.advantage.setZero();
    }
  }

  obs_.clear();
  z_.clear();
  log_prob_.clear();
  value_.clear();
  adv_.clear();
  ret_.clear();
  episodes_ = 0;
  return batch;
}

Trainer Trainer::create(const PpoConfig& cfg, Rng& rng) {
  Trainer t;
  t.params = PolicyParams::init(rng);
  t.opt = AdamState::zeros(t.params.param_count());
  t.cfg = cfg;
  return t;
}

LossParts ppo_loss_and_grad(const PolicyParams& params,
                            const TrajectoryBatch& batch,
                            const std::vector<int>& rows, const PpoConfig& cfg,
                            Eigen::VectorXd* grad) {
  const int n = static_cast<int>(rows.size());
  const double inv_n = 1.0 / n;
  const double sigma = std::exp(params.log_std);
  const double inv_var = 1.0 / (sigma * sigma);

  Eigen::MatrixXd obs(n, 2);
  for (int i = 0; i < n; ++i) obs.row(i) = batch.obs.row(rows[i]);

  Mlp::Cache actor_cache, critic_cache;
  const Eigen::VectorXd mean = params.actor.forward_batch(obs, actor_cache);
  const Eigen::VectorXd value = params.critic.forward_batch(obs, critic_cache);

  LossParts parts;
  Eigen::VectorXd d_mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd d_value(n);
  double d_log_std = 0.0;
  int clipped = 0;

  for (int i = 0; i < n; ++i) {
    const int row = rows[i];
    const double z = batch.z(row);
    const double adv = batch.advantage(row);
    const double diff = z - mean(i);
    const double lp = squashed_log_prob(z, mean(i), params.log_std);
    const double ratio = std::exp(lp - batch.log_prob(row));
    const double clipped_ratio =
        std::min(std::max(ratio, 1.0 - cfg.clip_eps), 1.0 + cfg.clip_eps);
    const double s1 = ratio * adv;
    const double s2 = clipped_ratio * adv;

    parts.policy += -std::min(s1, s2) * inv_n;
    parts.mean_ratio += ratio * inv_n;
    if (ratio != clipped_ratio) ++clipped;

    // gradient flows through the ratio only on the selected, unclipped branch
    double d_ratio = 0.0;
    if (s1 <= s2) {
      d_ratio = -adv * inv_n;
    } else if (ratio > 1.0 - cfg.clip_eps && ratio < 1.0 + cfg.clip_eps) {
      d_ratio = -adv * inv_n;
    }
    const double d_lp = d_ratio * ratio;
    d_mean(i) = d_lp * diff * inv_var;
    d_log_std += d_lp * (diff * diff * inv_var - 1.0);

    const double verr = value(i) - batch.ret(row);
    parts.value += cfg.value_coef * verr * verr * inv_n;
    d_value(i) = cfg.value_coef * 2.0 * verr * inv_n;
  }

  // entropy of the pre-squash Gaussian; constant across samples
  parts.entropy = params.log_std + 0.5 + kHalfLog2Pi;
  d_log_std -= cfg.entropy_coef;

  parts.clip_fraction = double(clipped) * inv_n;
  parts.total = parts.policy + parts.value - cfg.entropy_coef * parts.entropy;

  if (grad != nullptr) {
    Mlp::Grad actor_grad = Mlp::Grad::zeros_like(params.actor);
    Mlp::Grad critic_grad = Mlp::Grad::zeros_like(params.critic);
    params.actor.backward_batch(actor_cache, d_mean, actor_grad);
    params.critic.backward_batch(critic_cache, d_value, critic_grad);

    grad->resize(params.param_count());
    double* dst = grad->data();
    write_flat_grad(actor_grad, dst);
    dst += params.actor.param_count();
    write_flat_grad(critic_grad, dst);
    dst += params.critic.param_count();
    *dst = d_log_std;
  }
  return parts;
}

namespace {

void adam_step(AdamState& opt, Eigen::VectorXd& flat,
               const Eigen::VectorXd& grad, double lr) {
  ++opt.t;
  opt.m = kAdamBeta1 * opt.m + (1.0 - kAdamBeta1) * grad;
  opt.v = kAdamBeta2 * opt.v.array() +
          (1.0 - kAdamBeta2) * grad.array().square();
  const double m_corr = 1.0 - std::pow(kAdamBeta1, double(opt.t));
  const double v_corr = 1.0 - std::pow(kAdamBeta2, double(opt.t));
  flat.array() -= lr * (opt.m.array() / m_corr) /
                  ((opt.v.array() / v_corr).sqrt() + kAdamEps);
}

/// One minibatch gradient step; returns the loss parts. Throws on non-finite
/// loss/gradient without touching the parameters.
LossParts minibatch_step(Trainer& trainer, const TrajectoryBatch& batch,
                         const std::vector<int>& rows, Eigen::VectorXd& flat) {
  Eigen::VectorXd grad;
  const LossParts parts =
      ppo_loss_and_grad(trainer.params, batch, rows, trainer.cfg, &grad);
  if (!std::isfinite(parts.total) || !grad.allFinite()) {
    std::ostringstream os;
    os << "non-finite PPO loss/gradient: policy=" << parts.policy
       << " value=" << parts.value << " entropy=" << parts.entropy
       << " grad_norm=" << grad.norm() << " batch_rows=" << rows.size();
    throw NonFiniteError(os.str());
  }
  const double norm = grad.norm();
  if (trainer.cfg.grad_clip_norm > 0.0 && norm > trainer.cfg.grad_clip_norm) {
    grad *= trainer.cfg.grad_clip_norm / norm;
  }
  adam_step(trainer.opt, flat, grad, trainer.cfg.lr);

  // clamp log_std (last flat coordinate) before syncing back
  flat(flat.size() - 1) =
      std::min(std::max(flat(flat.size() - 1), kLogStdMin), kLogStdMax);
  trainer.params.from_flat(flat);
  return parts;
}

}  // namespace

UpdateStats ppo_update(Trainer& trainer, const TrajectoryBatch& batch,
                       Rng& rng) {
  if (batch.size() == 0) throw Error("ppo_update: empty batch");

  Eigen::VectorXd flat = trainer.params.to_flat();
  std::vector<int> order(static_cast<std::size_t>(batch.size()));
  std::iota(order.begin(), order.end(), 0);

  UpdateStats stats;
  for (int epoch = 0; epoch < trainer.cfg.update_epochs; ++epoch) {
    shuffle(order, rng);
    for (int start = 0; start < batch.size();
         start += trainer.cfg.minibatch_size) {
      const int end =
          std::min<int>(batch.size(), start + trainer.cfg.minibatch_size);
      const std::vector<int> rows(order.begin() + start, order.begin() + end);
      const LossParts parts = minibatch_step(trainer, batch, rows, flat);
      ++stats.minibatches;
      stats.mean_policy_loss += parts.policy;
      stats.mean_value_loss += parts.value;
      stats.mean_entropy += parts.entropy;
      stats.clip_fraction += parts.clip_fraction;
    }
  }
  if (stats.minibatches > 0) {
    stats.mean_policy_loss /= stats.minibatches;
    stats.mean_value_loss /= stats.minibatches;
    stats.mean_entropy /= stats.minibatches;
    stats.clip_fraction /= stats.minibatches;
  }
  return stats;
}

void single_transition_update(Trainer& trainer, const State& x, double z,
                              double log_prob, double value, double reward_raw,
                              double bootstrap_value) {
  TrajectoryBatch batch;
  batch.obs.resize(1, 2);
  batch.obs.row(0) = normalize_obs(x).transpose();
  batch.z = Eigen::VectorXd::Constant(1, z);
  batch.log_prob = Eigen::VectorXd::Constant(1, log_prob);
  batch.value = Eigen::VectorXd::Constant(1, value);
  const double delta = reward_raw * trainer.cfg.reward_scale +
                       trainer.cfg.gamma * bootstrap_value - value;
  batch.advantage = Eigen::VectorXd::Constant(1, delta);
  batch.ret = Eigen::VectorXd::Constant(1, delta + value);

  Eigen::VectorXd flat = trainer.params.to_flat();
  minibatch_step(trainer, batch, {0}, flat);
}

namespace {

void append_bytes(std::string& buf, const void* data, std::size_t len) {
  buf.append(static_cast<const char*>(data), len);
}

void append_u32(std::string& buf, std::uint32_t v) {
  append_bytes(buf, &v, sizeof(v));
}

void append_mlp(std::string& buf, const Mlp& net) {
  std::vector<double> flat(static_cast<std::size_t>(net.param_count()));
  net.write_flat(flat.data());
  append_bytes(buf, flat.data(), flat.size() * sizeof(double));
}

struct ByteReader {
  const std::string& buf;
  std::size_t at = 0;
  const std::string& path;

  void read(void* dst, std::size_t len) {
    if (at + len > buf.size()) {
      throw FormatError(path + ": truncated weights file");
    }
    std::memcpy(dst, buf.data() + at, len);
    at += len;
  }
  std::uint32_t read_u32() {
    std::uint32_t v = 0;
    read(&v, sizeof(v));
    return v;
  }
};

}  // namespace

void save_params(const PolicyParams& params, const std::string& path) {
  std::string payload;
  append_u32(payload, static_cast<std::uint32_t>(kNetSizes.size()));
  for (int s : kNetSizes) append_u32(payload, static_cast<std::uint32_t>(s));
  append_mlp(payload, params.actor);
  append_mlp(payload, params.critic);
  append_bytes(payload, &params.log_std, sizeof(double));
  const std::uint32_t crc = crc32(payload);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out.write("CISRLW1", 7);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!out) throw FormatError(path + ": write failed");
}

PolicyParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::string contents((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  if (contents.size() < 7 + sizeof(std::uint32_t)) {
    throw FormatError(path + ": truncated weights file");
  }
  if (contents.compare(0, 6, "CISRLW") != 0) {
    throw FormatError(path + ": not a CISRLW weights file");
  }
  if (contents[6] != '1') {
    throw VersionError(path + ": unsupported weights version '" +
                       std::string(1, contents[6]) + "'");
  }

  const std::string payload =
      contents.substr(7, contents.size() - 7 - sizeof(std::uint32_t));

  ByteReader reader{payload, 0, path};
  const std::uint32_t n_sizes = reader.read_u32();
  if (n_sizes > 64) throw FormatError(path + ": implausible descriptor");
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) s = static_cast<int>(reader.read_u32());
  if (sizes != kNetSizes) {
    std::ostringstream os;
    os << path << ": architecture mismatch, file has [";
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      os << (i ? ", " : "") << sizes[i];
    }
    os << "]";
    throw ArchMismatchError(os.str());
  }

  Rng dummy(0);
  PolicyParams params;
  params.actor = Mlp::create(kNetSizes, dummy);
  params.critic = Mlp::create(kNetSizes, dummy);

  // the architecture fixes the exact payload size; check it before the crc
  // so truncation reports as a format problem, not value corruption
  const std::size_t tensor_count =
      static_cast<std::size_t>(params.param_count());
  const std::size_t expected = reader.at + tensor_count * sizeof(double);
  if (payload.size() != expected) {
    throw FormatError(path + ": payload is " + std::to_string(payload.size()) +
                      " bytes, expected " + std::to_string(expected));
  }

  std::uint32_t stored = 0;
  std::memcpy(&stored, contents.data() + contents.size() - sizeof(stored),
              sizeof(stored));
  if (crc32(payload) != stored) {
    throw ChecksumError(path + ": crc mismatch");
  }

  std::vector<double> flat(static_cast<std::size_t>(params.actor.param_count()));
  reader.read(flat.data(), flat.size() * sizeof(double));
  params.actor.read_flat(flat.data());
  flat.resize(static_cast<std::size_t>(params.critic.param_count()));
  reader.read(flat.data(), flat.size() * sizeof(double));
  params.critic.read_flat(flat.data());
  reader.read(&params.log_std, sizeof(double));
  return params;
}

}  // namespace cisrl

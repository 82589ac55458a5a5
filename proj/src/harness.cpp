#include "cisrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cisrl/errors.hpp"

namespace cisrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  return out;
}

const char* mode_name(EnvKind mode) {
  return mode == EnvKind::WithCis ? "with_cis" : "no_cis";
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("config: unknown key '" + item.key() + "' in " +
                        where);
    }
  }
}

template <class T>
void read_key(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

/// Runs fn(task) for task in [0, n) on up to `workers` threads. Tasks must
/// be independent; results keyed by task index stay deterministic.
void run_tasks(int n, const std::function<void(int)>& fn) {
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int workers = std::max(1, std::min(n, hw > 0 ? hw : 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int task = next.fetch_add(1); task < n; task = next.fetch_add(1)) {
        fn(task);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!ppo.valid()) throw ConfigError("config: invalid PPO settings");
  if (!reward.valid()) {
    throw ConfigError("config: r_safe must exceed r_unsafe");
  }
  if (!cstr.valid()) throw ConfigError("config: CSTR parameters must be positive");
  if (!integ.valid()) throw ConfigError("config: dt must be > 0, substeps >= 1");
  if (!grid_spec.valid()) throw ConfigError("config: invalid grid box/counts");
  if (n_actions < 2) throw ConfigError("config: n_actions must be >= 2");
  if (!sup.valid()) {
    throw ConfigError("config: max_itr and online_lr must be >= 0");
  }
  if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() !=
      seeds.size()) {
    throw ConfigError("config: seeds must be distinct");
  }
  if (budgets.empty()) throw ConfigError("config: budgets must be nonempty");
  for (int b : budgets) {
    if (b < 1) throw ConfigError("config: budgets must be positive");
  }
  if (eval_episodes < 1) throw ConfigError("config: eval_episodes must be >= 1");
}

ExperimentConfig default_desk_config() {
  ExperimentConfig cfg;
  cfg.ppo.episodes = 2000;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }

  static const std::set<std::string> top_keys = {
      "mode",          "episodes",      "horizon",       "batch_episodes",
      "lr",            "gamma",         "gae_lambda",    "clip_eps",
      "update_epochs", "minibatch_size", "entropy_coef", "value_coef",
      "grad_clip_norm", "reward_scale", "r_safe",        "r_unsafe",
      "dt",            "substeps",      "grid",          "n_actions",
      "max_itr",       "online_lr",     "seeds",         "budgets",       "eval_episodes",
      "eval_seed",     "out_dir",       "cstr"};
  reject_unknown_keys(root, top_keys, "top level");

  ExperimentConfig cfg = default_desk_config();
  if (root.contains("mode")) {
    const std::string mode = root.at("mode").get<std::string>();
    if (mode == "with_cis") {
      cfg.mode = EnvKind::WithCis;
    } else if (mode == "no_cis") {
      cfg.mode = EnvKind::NoCis;
    } else {
      throw ConfigError(path + ": mode must be 'with_cis' or 'no_cis'");
    }
  }
  read_key(root, "episodes", cfg.ppo.episodes);
  read_key(root, "horizon", cfg.ppo.horizon);
  read_key(root, "batch_episodes", cfg.ppo.batch_episodes);
  read_key(root, "lr", cfg.ppo.lr);
  read_key(root, "gamma", cfg.ppo.gamma);
  read_key(root, "gae_lambda", cfg.ppo.gae_lambda);
  read_key(root, "clip_eps", cfg.ppo.clip_eps);
  read_key(root, "update_epochs", cfg.ppo.update_epochs);
  read_key(root, "minibatch_size", cfg.ppo.minibatch_size);
  read_key(root, "entropy_coef", cfg.ppo.entropy_coef);
  read_key(root, "value_coef", cfg.ppo.value_coef);
  read_key(root, "grad_clip_norm", cfg.ppo.grad_clip_norm);
  read_key(root, "reward_scale", cfg.ppo.reward_scale);
  read_key(root, "r_safe", cfg.reward.r_safe);
  read_key(root, "r_unsafe", cfg.reward.r_unsafe);
  read_key(root, "dt", cfg.integ.dt);
  read_key(root, "substeps", cfg.integ.substeps);
  read_key(root, "n_actions", cfg.n_actions);
  read_key(root, "max_itr", cfg.sup.max_itr);
  read_key(root, "online_lr", cfg.sup.online_lr);
  read_key(root, "seeds", cfg.seeds);
  read_key(root, "budgets", cfg.budgets);
  read_key(root, "eval_episodes", cfg.eval_episodes);
  read_key(root, "eval_seed", cfg.eval_seed);
  read_key(root, "out_dir", cfg.out_dir);

  if (root.contains("grid")) {
    const json& g = root.at("grid");
    reject_unknown_keys(
        g, {"lo_ca", "lo_t", "hi_ca", "hi_t", "n_ca", "n_t"}, "grid");
    read_key(g, "lo_ca", cfg.grid_spec.lo.c_a);
    read_key(g, "lo_t", cfg.grid_spec.lo.temp);
    read_key(g, "hi_ca", cfg.grid_spec.hi.c_a);
    read_key(g, "hi_t", cfg.grid_spec.hi.temp);
    read_key(g, "n_ca", cfg.grid_spec.n_ca);
    read_key(g, "n_t", cfg.grid_spec.n_temp);
  }
  if (root.contains("cstr")) {
    const json& c = root.at("cstr");
    reject_unknown_keys(c,
                        {"q", "V", "k0", "e_over_r", "neg_dh", "rho", "c_p",
                         "ua", "c_af", "t_f"},
                        "cstr");
    read_key(c, "q", cfg.cstr.flow);
    read_key(c, "V", cfg.cstr.volume);
    read_key(c, "k0", cfg.cstr.k0);
    read_key(c, "e_over_r", cfg.cstr.e_over_r);
    read_key(c, "neg_dh", cfg.cstr.neg_dh);
    read_key(c, "rho", cfg.cstr.rho);
    read_key(c, "c_p", cfg.cstr.c_p);
    read_key(c, "ua", cfg.cstr.ua);
    read_key(c, "c_af", cfg.cstr.c_af);
    read_key(c, "t_f", cfg.cstr.t_f);
  }

  cfg.validate();
  return cfg;
}

std::vector<double> running_average(const std::vector<double>& scores,
                                    int window) {
  std::vector<double> curve(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum += scores[i];
    if (i >= static_cast<std::size_t>(window)) sum -= scores[i - window];
    const std::size_t count = std::min<std::size_t>(i + 1, window);
    curve[i] = sum / static_cast<double>(count);
  }
  return curve;
}

TrainResult train_offline(const ExperimentConfig& cfg, EnvKind mode,
                          const CisGrid* grid, std::uint64_t seed,
                          int episodes) {
  if (mode == EnvKind::WithCis) {
    if (grid == nullptr || grid->member_count() == 0) {
      throw Error("train_offline: WithCis mode requires a nonempty CIS grid");
    }
  }
  const auto start = std::chrono::steady_clock::now();

  Rng rng(seed);
  Trainer trainer = Trainer::create(cfg.ppo, rng);
  Environment env{cfg.cstr, cfg.integ, cfg.reward,
                  mode == EnvKind::WithCis ? EnvMode::with_cis(*grid)
                                           : EnvMode::no_cis(),
                  cfg.ppo.horizon};
  BatchBuilder builder(cfg.ppo);

  RunSummary summary;
  summary.seed = seed;
  summary.scores.reserve(static_cast<std::size_t>(episodes));

  for (int ep = 0; ep < episodes; ++ep) {
    const EpisodeResult er =
        env.run_episode(make_policy(trainer.params), rng, /*training=*/true);
    summary.scores.push_back(er.score);

    const int n = static_cast<int>(er.transitions.size());
    Eigen::MatrixXd obs(n, 2);
    Eigen::VectorXd z(n), log_prob(n), value(n), reward(n);
    for (int i = 0; i < n; ++i) {
      const Transition& t = er.transitions[static_cast<std::size_t>(i)];
      obs.row(i) = normalize_obs(t.x).transpose();
      z(i) = t.z;
      log_prob(i) = t.log_prob;
      value(i) = t.value_est;
      reward(i) = t.reward * cfg.ppo.reward_scale;
    }
    const double bootstrap = trainer.params.critic.forward_scalar(
        normalize_obs(er.transitions.back().x_next));
    builder.add_episode(obs, z, log_prob, value, reward, bootstrap);

    if (builder.episode_count() == cfg.ppo.batch_episodes) {
      ppo_update(trainer, builder.take(), rng);
      ++summary.updates;
    }
  }

  summary.running_avg = running_average(summary.scores);
  summary.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return {std::move(trainer), std::move(summary)};
}

EvalResult evaluate(const PolicyParams& params, const ExperimentConfig& cfg,
                    const CisGrid& grid, const std::vector<State>& initial) {
  Environment env{cfg.cstr, cfg.integ, cfg.reward, EnvMode::with_cis(grid),
                  cfg.ppo.horizon};
  EvalResult result;
  result.episodes = static_cast<int>(initial.size());
  result.per_episode.reserve(initial.size());
  Rng unused(0);  // testing mode is deterministic
  for (const State& x0 : initial) {
    EpisodeResult er =
        env.run_episode(make_policy(params), unused, /*training=*/false, x0);
    if (er.failed) ++result.failed;
    result.per_episode.push_back(std::move(er));
  }
  result.failure_rate =
      result.episodes > 0 ? double(result.failed) / result.episodes : 0.0;
  return result;
}

std::vector<State> sample_initial_states(const CisGrid& grid, int count,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<State> states;
  states.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    states.push_back(sample_state_in(
        grid.spec.lo, grid.spec.hi,
        [&grid](const State& x) { return contains(grid, x); }, rng));
  }
  return states;
}

void save_initial_states(const std::vector<State>& states,
                         const std::string& path) {
  std::ofstream out = open_out(path);
  for (const State& s : states) {
    out << fmt(s.c_a) << ' ' << fmt(s.temp) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

std::vector<State> load_initial_states(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  std::vector<State> states;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    State s;
    if (!(is >> s.c_a >> s.temp)) {
      throw FormatError(path + ": malformed initial-state line '" + line +
                        "'");
    }
    states.push_back(s);
  }
  if (states.empty()) throw FormatError(path + ": no initial states");
  return states;
}

SuiteReport run_experiment_suite(const ExperimentConfig& cfg,
                                 const CisGrid& grid) {
  fs::create_directories(cfg.out_dir);
  const std::vector<State> initial =
      sample_initial_states(grid, cfg.eval_episodes, cfg.eval_seed);
  save_initial_states(initial, cfg.out_dir + "/initial_states.txt");

  struct Task {
    EnvKind mode;
    int budget;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (int budget : cfg.budgets) {
    for (EnvKind mode : {EnvKind::WithCis, EnvKind::NoCis}) {
      for (std::uint64_t seed : cfg.seeds) tasks.push_back({mode, budget, seed});
    }
  }

  SuiteReport report;
  report.runs.resize(tasks.size());
  run_tasks(static_cast<int>(tasks.size()), [&](int i) {
    const Task& task = tasks[static_cast<std::size_t>(i)];
    TrainResult res =
        train_offline(cfg, task.mode, &grid, task.seed, task.budget);
    const EvalResult eval = evaluate(res.trainer.params, cfg, grid, initial);
    res.summary.failure_rate = eval.failure_rate;

    std::ostringstream tag;
    tag << mode_name(task.mode) << "_b" << task.budget << "_s" << task.seed;
    save_params(res.trainer.params,
                cfg.out_dir + "/weights_" + tag.str() + ".bin");
    write_curves_csv(res.summary, cfg.out_dir + "/curves_" + tag.str() + ".csv");
    write_eval_csv(eval, cfg.out_dir + "/eval_" + tag.str() + ".csv");

    report.runs[static_cast<std::size_t>(i)] = {
        task.mode, task.budget, task.seed, eval.failure_rate,
        std::move(res.summary)};
  });

  for (int budget : cfg.budgets) {
    double with_sum = 0.0, without_sum = 0.0;
    int with_n = 0, without_n = 0;
    for (const SuiteRun& run : report.runs) {
      if (run.budget != budget) continue;
      if (run.mode == EnvKind::WithCis) {
        with_sum += run.failure_rate;
        ++with_n;
      } else {
        without_sum += run.failure_rate;
        ++without_n;
      }
    }
    report.with_cis_mean.push_back(with_n ? with_sum / with_n : 0.0);
    report.no_cis_mean.push_back(without_n ? without_sum / without_n : 0.0);
  }

  write_failure_table_csv(report.runs, cfg.out_dir + "/failures.csv");
  std::ofstream agg = open_out(cfg.out_dir + "/aggregate.csv");
  agg << "budget,with_cis_mean,no_cis_mean\n";
  for (std::size_t i = 0; i < cfg.budgets.size(); ++i) {
    agg << cfg.budgets[i] << ',' << fmt(report.with_cis_mean[i]) << ','
        << fmt(report.no_cis_mean[i]) << '\n';
  }
  return report;
}

void write_curves_csv(const RunSummary& summary, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,score,running_avg\n";
  for (std::size_t i = 0; i < summary.scores.size(); ++i) {
    out << (i + 1) << ',' << fmt(summary.scores[i]) << ','
        << fmt(summary.running_avg[i]) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

void write_failure_table_csv(const std::vector<SuiteRun>& runs,
                             const std::string& path) {
  std::ofstream out = open_out(path);
  out << "mode,budget,seed,failure_rate\n";
  for (const SuiteRun& run : runs) {
    out << mode_name(run.mode) << ',' << run.budget << ',' << run.seed << ','
        << fmt(run.failure_rate) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

void write_eval_csv(const EvalResult& eval, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,steps,score,failed\n";
  for (std::size_t i = 0; i < eval.per_episode.size(); ++i) {
    const EpisodeResult& er = eval.per_episode[i];
    out << (i + 1) << ',' << er.steps << ',' << fmt(er.score) << ','
        << (er.failed ? 1 : 0) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

void write_telemetry_csv(const OnlineRunResult& result,
                         const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,score,backup_uses,retrain_updates,failed\n";
  for (const OnlineEpisode& ep : result.episodes) {
    out << (ep.episode + 1) << ',' << fmt(ep.score) << ',' << ep.backup_uses
        << ',' << ep.retrain_updates << ',' << (ep.failed ? 1 : 0) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

void write_transitions_csv(const std::vector<EpisodeResult>& episodes,
                           const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,step,c_A,T,T_c,reward,reset_applied\n";
  for (std::size_t ep = 0; ep < episodes.size(); ++ep) {
    const auto& transitions = episodes[ep].transitions;
    for (std::size_t k = 0; k < transitions.size(); ++k) {
      const Transition& t = transitions[k];
      out << (ep + 1) << ',' << (k + 1) << ',' << fmt(t.x.c_a) << ','
          << fmt(t.x.temp) << ',' << fmt(t.u.t_c) << ',' << fmt(t.reward)
          << ',' << (t.reset_applied ? 1 : 0) << '\n';
    }
  }
  if (!out) throw FormatError(path + ": write failed");
}

void export_curves_svg(const std::string& csv_path,
                       const std::string& svg_path) {
  std::ifstream in(csv_path);
  if (!in) throw FormatError(csv_path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv_path + ": empty file");
  std::vector<double> episode, score, avg;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double e = 0, s = 0, a = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &e, &s, &a) != 3) {
      throw FormatError(csv_path + ": malformed CSV row '" + line + "'");
    }
    episode.push_back(e);
    score.push_back(s);
    avg.push_back(a);
  }
  if (episode.empty()) throw FormatError(csv_path + ": no data rows");

  const double width = 900, height = 500, margin = 60;
  double y_min = score[0], y_max = score[0];
  for (std::size_t i = 0; i < score.size(); ++i) {
    y_min = std::min({y_min, score[i], avg[i]});
    y_max = std::max({y_max, score[i], avg[i]});
  }
  if (y_max == y_min) y_max = y_min + 1.0;
  const double x_min = episode.front(), x_max = std::max(episode.back(), x_min + 1.0);

  const auto px = [&](double e) {
    return margin + (e - x_min) / (x_max - x_min) * (width - 2 * margin);
  };
  const auto py = [&](double v) {
    return height - margin - (v - y_min) / (y_max - y_min) * (height - 2 * margin);
  };
  const auto polyline = [&](const std::vector<double>& ys) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      os << px(episode[i]) << ',' << py(ys[i]) << ' ';
    }
    return os.str();
  };

  std::ofstream out = open_out(svg_path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<line x1='" << margin << "' y1='" << height - margin << "' x2='"
      << width - margin << "' y2='" << height - margin
      << "' stroke='black'/>\n"
      << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin
      << "' y2='" << height - margin << "' stroke='black'/>\n"
      << "<text x='" << margin << "' y='" << height - margin / 3
      << "' font-size='12'>" << x_min << "</text>\n"
      << "<text x='" << width - margin << "' y='" << height - margin / 3
      << "' font-size='12' text-anchor='end'>" << x_max << "</text>\n"
      << "<text x='" << margin / 4 << "' y='" << height - margin
      << "' font-size='12'>" << y_min << "</text>\n"
      << "<text x='" << margin / 4 << "' y='" << margin << "' font-size='12'>"
      << y_max << "</text>\n"
      << "<text x='" << width / 2 << "' y='" << height - margin / 4
      << "' font-size='12' text-anchor='middle'>episode</text>\n"
      << "<polyline fill='none' stroke='#9ecae1' stroke-width='1' points='"
      << polyline(score) << "'/>\n"
      << "<polyline fill='none' stroke='#08519c' stroke-width='2' points='"
      << polyline(avg) << "'/>\n"
      << "</svg>\n";
  if (!out) throw FormatError(svg_path + ": write failed");
}

}  // namespace cisrl

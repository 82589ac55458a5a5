#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cisrl/env.hpp"

using namespace cisrl;

namespace {

Environment make_cstr_env(const EnvMode& mode, int horizon = 200) {
  return Environment{CstrParams{}, IntegratorConfig{0.1, 10}, RewardSpec{},
                     mode, horizon};
}

/// Full-box grid whose every cell is member: WithCis semantics with a known
/// safe set equal to the physical box.
CisGrid full_box_grid(int n = 20) {
  GridSpec spec;
  spec.n_ca = n;
  spec.n_temp = n;
  return CisGrid{spec, std::vector<std::uint8_t>(
                           static_cast<std::size_t>(spec.cells()), 1)};
}

/// Policy stub holding the coolant near the slow manifold; keeps states
/// inside the box from mid-range starts.
ActResult steady_policy(const State&, Rng&, bool) {
  ActResult a;
  a.u.t_c = 300.0;
  a.log_prob = -1.0;
  a.value = 0.25;
  a.z = 0.0;
  return a;
}

}  // namespace

TEST_CASE("initial-state sampling honors the mode's membership test") {
  Rng rng(123);

  SUBCASE("box sampling always lands inside the physical bounds") {
    const Environment env = make_cstr_env(EnvMode::no_cis());
    for (int i = 0; i < 200; ++i) {
      CHECK(in_physical_bounds(env.sample_initial(rng)));
    }
  }

  SUBCASE("grid sampling always lands inside the member set") {
    CisGrid grid = full_box_grid();
    // keep only a thin band of cells member
    for (int i = 0; i < grid.spec.n_ca; ++i) {
      for (int j = 0; j < grid.spec.n_temp; ++j) {
        if (i < 8 || i > 11) {
          grid.member[static_cast<std::size_t>(grid.spec.flat(i, j))] = 0;
        }
      }
    }
    const Environment env = make_cstr_env(EnvMode::with_cis(grid));
    for (int i = 0; i < 200; ++i) {
      CHECK(contains(grid, env.sample_initial(rng)));
    }
  }

  SUBCASE("same seed gives the identical sample sequence") {
    const Environment env = make_cstr_env(EnvMode::no_cis());
    Rng a(9), b(9);
    for (int i = 0; i < 50; ++i) {
      const State sa = env.sample_initial(a);
      const State sb = env.sample_initial(b);
      CHECK(sa.c_a == sb.c_a);
      CHECK(sa.temp == sb.temp);
    }
  }

  SUBCASE("an empty member set exhausts the rejection budget") {
    CisGrid grid = full_box_grid();
    std::fill(grid.member.begin(), grid.member.end(), 0);
    const Environment env = make_cstr_env(EnvMode::with_cis(grid));
    CHECK_THROWS_AS(env.sample_initial(rng), SamplingError);
  }
}

TEST_CASE("env_step reward dichotomy and reset semantics") {
  const CisGrid grid = full_box_grid();
  const Environment env = make_cstr_env(EnvMode::with_cis(grid));

  SUBCASE("safe successor returns r_safe and advances") {
    const State x{0.5, 350.0};
    const EnvStepResult r = env.env_step(x, {300.0});
    CHECK(r.reward == 10000.0);
    CHECK_FALSE(r.reset_applied);
    CHECK(r.x_next.c_a != x.c_a);  // dynamics actually moved
    CHECK(in_physical_bounds(r.x_next));
  }

  SUBCASE("unsafe successor resets to the identical previous state") {
    // hot, concentrated corner: max heating pushes T out of the box
    const State x{0.9, 354.9};
    const EnvStepResult r = env.env_step(x, {315.0});
    CHECK(r.reward == -1000.0);
    CHECK(r.reset_applied);
    CHECK(r.x_next.c_a == x.c_a);
    CHECK(r.x_next.temp == x.temp);
  }

  SUBCASE("boundary membership follows the half-open cell rule") {
    // identical state queried twice is deterministic
    const State x{0.62, 352.7};
    const EnvStepResult a = env.env_step(x, {301.0});
    const EnvStepResult b = env.env_step(x, {301.0});
    CHECK(a.reward == b.reward);
    CHECK(a.x_next.c_a == b.x_next.c_a);
  }
}

TEST_CASE("training episodes reset and continue to the full horizon") {
  const CisGrid grid = full_box_grid();
  const Environment env = make_cstr_env(EnvMode::with_cis(grid), 120);
  Rng rng(77);

  // aggressive constant cooling leaves the box from many starts
  const auto cold_policy = [](const State&, Rng&, bool) {
    ActResult a;
    a.u.t_c = 285.0;
    a.log_prob = -2.0;
    a.value = 0.0;
    a.z = -10.0;
    return a;
  };

  int episodes_with_resets = 0;
  for (int ep = 0; ep < 10; ++ep) {
    const EpisodeResult er = env.run_episode(cold_policy, rng, true);
    CHECK(er.steps == 120);
    CHECK_FALSE(er.failed);
    CHECK(er.transitions.size() == 120);

    int resets = 0;
    double recomputed = 0.0;
    for (std::size_t k = 0; k < er.transitions.size(); ++k) {
      const Transition& t = er.transitions[k];
      // reward dichotomy
      CHECK((t.reward == 10000.0 || t.reward == -1000.0));
      // reset soundness: x_next identical to x, penalty reward
      if (t.reset_applied) {
        ++resets;
        CHECK(t.x_next.c_a == t.x.c_a);
        CHECK(t.x_next.temp == t.x.temp);
        CHECK(t.reward == -1000.0);
      }
      // every current state is inside the safe set
      CHECK(contains(grid, t.x));
      // consecutive transitions chain
      if (k > 0) {
        CHECK(t.x.c_a == er.transitions[k - 1].x_next.c_a);
        CHECK(t.x.temp == er.transitions[k - 1].x_next.temp);
      }
      recomputed += t.reward;
    }
    // score identity: safe steps * r_safe + reset steps * r_unsafe
    const int safe_steps = er.steps - resets;
    CHECK(er.score == safe_steps * 10000.0 + resets * -1000.0);
    CHECK(er.score == recomputed);
    if (resets > 0) ++episodes_with_resets;
  }
  CHECK(episodes_with_resets > 0);
}

TEST_CASE("testing episodes terminate at the first exit and flag failure") {
  const CisGrid grid = full_box_grid();
  const Environment env = make_cstr_env(EnvMode::with_cis(grid), 50);
  Rng rng(5);

  SUBCASE("immediate exit fails on step one") {
    const auto hot_policy = [](const State&, Rng&, bool) {
      ActResult a;
      a.u.t_c = 315.0;
      return a;
    };
    // hot, concentrated start: heating leaves the box in one step
    const EpisodeResult er =
        env.run_episode(hot_policy, rng, false, {0.9, 354.9});
    CHECK(er.failed);
    CHECK(er.steps == 1);
    CHECK(er.transitions.size() == 1);
    CHECK(er.score == -1000.0);
  }

  SUBCASE("failure flag equals membership breach in the transition log") {
    for (int ep = 0; ep < 20; ++ep) {
      const EpisodeResult er = env.run_episode(steady_policy, rng, false);
      bool any_exit = false;
      for (const Transition& t : er.transitions) {
        if (!env.mode.member(t.x_next)) any_exit = true;
        CHECK_FALSE(t.reset_applied);
      }
      CHECK(er.failed == any_exit);
      if (er.failed) {
        CHECK(er.steps < 50);
      } else {
        CHECK(er.steps == 50);
      }
    }
  }
}

TEST_CASE("an all-safe 200-step episode scores exactly 2,000,000") {
  // k0 = 0 with T_c = T_f freezes the state at the equilibrium
  CstrParams frozen;
  frozen.k0 = 0.0;
  CisGrid grid = full_box_grid();
  Environment env{frozen, IntegratorConfig{0.1, 10}, RewardSpec{},
                  EnvMode::with_cis(grid), 200};
  const auto feed_policy = [](const State&, Rng&, bool) {
    ActResult a;
    a.u.t_c = 350.0;  // equals T_f; inadmissible online but fine for the model
    return a;
  };
  Rng rng(1);
  const EpisodeResult er =
      env.run_episode(feed_policy, rng, true, {1.0, 350.0});
  CHECK(er.steps == 200);
  CHECK(er.score == 2000000.0);
  CHECK_FALSE(er.failed);
}

TEST_CASE("non-finite successors take the reset path") {
  CstrParams exploding;
  exploding.k0 = 1e300;
  CisGrid grid = full_box_grid();
  Environment env{exploding, IntegratorConfig{0.1, 10}, RewardSpec{},
                  EnvMode::with_cis(grid), 10};
  const State x{0.5, 350.0};
  const EnvStepResult r = env.env_step(x, {300.0});
  CHECK(r.reset_applied);
  CHECK(r.reward == -1000.0);
  CHECK(r.x_next.c_a == x.c_a);
}

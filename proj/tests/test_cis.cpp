#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cisrl/cis.hpp"
#include "cisrl/rng.hpp"

using namespace cisrl;
namespace fs = std::filesystem;

namespace {

const StepFn kIdentity = [](const State& x, const Action&) { return x; };
const StepFn kEject = [](const State&, const Action&) {
  return State{-10.0, 0.0};
};

StepFn cstr_step_fn() {
  return make_step_fn(CstrParams{}, IntegratorConfig{0.1, 10});
}

GridSpec small_spec(int n) {
  GridSpec spec;
  spec.n_ca = n;
  spec.n_temp = n;
  return spec;
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("cell lookup follows the half-open rule with a closed last cell") {
  GridSpec spec;
  spec.lo = {0.0, 345.0};
  spec.hi = {1.0, 355.0};
  spec.n_ca = 2;
  spec.n_temp = 2;

  CHECK(spec.cell_of({0.25, 347.0}) == spec.flat(0, 0));
  // shared edges belong to the upper cell
  CHECK(spec.cell_of({0.5, 347.0}) == spec.flat(1, 0));
  CHECK(spec.cell_of({0.25, 350.0}) == spec.flat(0, 1));
  // the closed upper boundary folds into the last cell
  CHECK(spec.cell_of({1.0, 355.0}) == spec.flat(1, 1));
  CHECK(spec.cell_of({1.0001, 350.0}) == -1);
  CHECK(spec.cell_of({0.5, 344.9}) == -1);
  CHECK(spec.cell_of({std::numeric_limits<double>::quiet_NaN(), 350.0}) == -1);
}

TEST_CASE("contains is false outside the box and exact on cell centers") {
  GridSpec spec = small_spec(10);
  CisGrid grid{spec, std::vector<std::uint8_t>(100, 0)};
  grid.member[static_cast<std::size_t>(spec.flat(3, 4))] = 1;

  CHECK(contains(grid, spec.center(3, 4)));
  CHECK_FALSE(contains(grid, spec.center(3, 5)));
  CHECK_FALSE(contains(grid, {-1.0, 350.0}));
  // off-center point in the same cell
  State off = spec.center(3, 4);
  off.c_a += 0.3 * (spec.hi.c_a - spec.lo.c_a) / spec.n_ca;
  CHECK(contains(grid, off));
}

TEST_CASE("identity dynamics keep every in-box cell") {
  const GridSpec spec = small_spec(16);
  const ActionSampling actions = ActionSampling::uniform(5);
  const KernelResult kr = compute_kernel(spec, actions, kIdentity, 10);
  CHECK(kr.fixed_point);
  CHECK(kr.grid.member_count() == spec.cells());
}

TEST_CASE("dynamics that leave the box empty the kernel in one sweep") {
  const GridSpec spec = small_spec(8);
  const ActionSampling actions = ActionSampling::uniform(3);
  const KernelResult kr = compute_kernel(spec, actions, kEject, 10);
  CHECK(kr.fixed_point);
  CHECK(kr.grid.member_count() == 0);
  CHECK(kr.removed_per_sweep.front() == spec.cells());
}

TEST_CASE("action sampling covers the coolant range inclusively") {
  const ActionSampling s = ActionSampling::uniform(31);
  REQUIRE(s.count() == 31);
  CHECK(s.values.front() == 285.0);
  CHECK(s.values.back() == 315.0);
  CHECK(s.values[15] == doctest::Approx(300.0));
  for (int i = 1; i < s.count(); ++i) CHECK(s.values[i] > s.values[i - 1]);
}

TEST_CASE("CSTR kernel: fixed point, monotone sweeps, expected set shape") {
  const GridSpec spec = small_spec(60);
  const ActionSampling actions = ActionSampling::uniform(31);
  const StepFn fn = cstr_step_fn();
  const KernelResult kr = compute_kernel(spec, actions, fn, 100);

  REQUIRE(kr.fixed_point);
  CHECK(kr.grid.member_count() > 0);

  SUBCASE("monotone: stopping earlier yields a superset") {
    const KernelResult partial = compute_kernel(spec, actions, fn, 2);
    int superset_violations = 0;
    for (std::size_t i = 0; i < kr.grid.member.size(); ++i) {
      if (kr.grid.member[i] && !partial.grid.member[i]) ++superset_violations;
    }
    CHECK(superset_violations == 0);
    CHECK(partial.grid.member_count() >= kr.grid.member_count());
  }

  SUBCASE("re-sweep on the fixed point removes nothing") {
    CisGrid copy = kr.grid;
    CHECK(sweep_once(copy, actions, fn) == 0);
    CHECK(copy.member == kr.grid.member);
  }

  SUBCASE("center soundness holds for every member cell") {
    CHECK(count_unsound_cells(kr.grid, actions, fn) == 0);
  }

  SUBCASE("the set spans the full temperature range at some concentration") {
    bool any_full_column = false;
    for (int i = 0; i < spec.n_ca && !any_full_column; ++i) {
      bool full = true;
      for (int j = 0; j < spec.n_temp; ++j) {
        if (!kr.grid.member[static_cast<std::size_t>(spec.flat(i, j))]) {
          full = false;
          break;
        }
      }
      any_full_column = full;
    }
    CHECK(any_full_column);
  }

  SUBCASE("backup: builds for every member cell and closes 300-step orbits") {
    const BackupTable table = build_backup(kr.grid, actions, fn);
    int with_action = 0;
    for (std::size_t i = 0; i < table.has.size(); ++i) {
      CHECK(table.has[i] == kr.grid.member[i]);
      with_action += table.has[i];
    }
    CHECK(with_action == kr.grid.member_count());

    Rng rng(7);
    std::vector<int> members;
    for (int c = 0; c < spec.cells(); ++c) {
      if (kr.grid.member[static_cast<std::size_t>(c)]) members.push_back(c);
    }
    REQUIRE_FALSE(members.empty());
    for (int trial = 0; trial < 30; ++trial) {
      State x = spec.center_flat(
          static_cast<int>(members[rng.below(members.size())]));
      for (int k = 0; k < 300; ++k) {
        x = fn(x, backup_action(table, x));
        REQUIRE(x.finite());
        REQUIRE(contains(kr.grid, x));
      }
    }
  }
}

TEST_CASE("refinement stability: doubling the grid flips few coarse centers") {
  const ActionSampling actions = ActionSampling::uniform(31);
  const StepFn fn = cstr_step_fn();
  const GridSpec coarse = small_spec(50);
  const GridSpec fine = small_spec(100);
  const KernelResult kc = compute_kernel(coarse, actions, fn, 200);
  const KernelResult kf = compute_kernel(fine, actions, fn, 200);
  REQUIRE(kc.fixed_point);
  REQUIRE(kf.fixed_point);

  int flips = 0;
  for (int i = 0; i < coarse.n_ca; ++i) {
    for (int j = 0; j < coarse.n_temp; ++j) {
      const State center = coarse.center(i, j);
      if (contains(kc.grid, center) != contains(kf.grid, center)) ++flips;
    }
  }
  CHECK(double(flips) / coarse.cells() < 0.05);
}

TEST_CASE("backup actions are cell-constant and guarded") {
  const GridSpec spec = small_spec(8);
  const ActionSampling actions = ActionSampling::uniform(3);
  const KernelResult kr = compute_kernel(spec, actions, kIdentity, 10);
  const BackupTable table = build_backup(kr.grid, actions, kIdentity);

  // identity map: every action is viable with identical margins, so the tie
  // rule stores the lowest coolant temperature everywhere
  for (int c = 0; c < spec.cells(); ++c) {
    CHECK(table.t_c[static_cast<std::size_t>(c)] == 285.0);
  }

  const State center = spec.center(2, 2);
  State off = center;
  off.temp += 0.2 * (spec.hi.temp - spec.lo.temp) / spec.n_temp;
  CHECK(backup_action(table, center).t_c == backup_action(table, off).t_c);
  CHECK_THROWS_AS(backup_action(table, {-5.0, 0.0}), OutsideSetError);
}

TEST_CASE("empty kernel yields an empty table without error") {
  const GridSpec spec = small_spec(6);
  const ActionSampling actions = ActionSampling::uniform(3);
  const KernelResult kr = compute_kernel(spec, actions, kEject, 10);
  REQUIRE(kr.grid.member_count() == 0);
  const BackupTable table = build_backup(kr.grid, actions, kEject);
  for (auto h : table.has) CHECK(h == 0);
}

TEST_CASE("non-convergence within max_sweeps is reported") {
  // shift map: every point moves one cell width down in concentration, so
  // the kernel erodes from the low edge one sweep at a time
  const GridSpec spec = small_spec(12);
  const double w = (spec.hi.c_a - spec.lo.c_a) / spec.n_ca;
  const StepFn shift = [w](const State& x, const Action&) {
    return State{x.c_a - w, x.temp};
  };
  const ActionSampling actions = ActionSampling::uniform(2);
  const KernelResult kr = compute_kernel(spec, actions, shift, 3);
  CHECK_FALSE(kr.fixed_point);
  CHECK(kr.sweeps == 3);
  CHECK(kr.grid.member_count() > 0);
}

TEST_CASE("grid persistence round-trips and rejects corruption") {
  const GridSpec spec = small_spec(20);
  const ActionSampling actions = ActionSampling::uniform(7);
  const CisGrid grid = compute_kernel(spec, actions, cstr_step_fn(), 100).grid;
  const std::string path = temp_path("cisrl_test.grid");

  save_grid(grid, path);
  const CisGrid loaded = load_grid(path);
  CHECK(loaded.spec.same_geometry(grid.spec));
  CHECK(loaded.member == grid.member);

  SUBCASE("flipped membership bit fails the checksum") {
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    const std::size_t pos = contents.find('\n', contents.find('\n') + 1) + 3;
    contents[pos] = contents[pos] == '1' ? '0' : '1';
    std::ofstream(path) << contents;
    CHECK_THROWS_AS(load_grid(path), ChecksumError);
  }

  SUBCASE("truncated file is malformed") {
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    std::ofstream(path) << contents.substr(0, contents.size() / 2);
    CHECK_THROWS_AS(load_grid(path), FormatError);
  }

  SUBCASE("dimension/payload mismatch is malformed") {
    save_grid(grid, path);
    std::ifstream in(path);
    std::string line, rebuilt;
    int line_no = 0;
    while (std::getline(in, line)) {
      if (line_no == 1) {
        line = "0 345 1 355 21 20";  // claims one more row than stored
      }
      rebuilt += line;
      rebuilt += '\n';
      ++line_no;
    }
    std::ofstream(path) << rebuilt;
    CHECK_THROWS_AS(load_grid(path), FormatError);
  }

  SUBCASE("unknown version is rejected distinctly") {
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    contents.replace(0, 10, "CISGRID v9");
    std::ofstream(path) << contents;
    CHECK_THROWS_AS(load_grid(path), VersionError);
  }

  SUBCASE("wrong magic is malformed") {
    std::ofstream(path) << "NOTAGRID v1\n";
    CHECK_THROWS_AS(load_grid(path), FormatError);
  }

  fs::remove(path);
}

TEST_CASE("backup persistence round-trips and rejects corruption") {
  const GridSpec spec = small_spec(15);
  const ActionSampling actions = ActionSampling::uniform(9);
  const StepFn fn = cstr_step_fn();
  const CisGrid grid = compute_kernel(spec, actions, fn, 100).grid;
  REQUIRE(grid.member_count() > 0);
  const BackupTable table = build_backup(grid, actions, fn);
  const std::string path = temp_path("cisrl_test.backup");

  save_backup(table, path);
  const BackupTable loaded = load_backup(path);
  CHECK(loaded.spec.same_geometry(table.spec));
  CHECK(loaded.has == table.has);
  CHECK(loaded.t_c == table.t_c);

  SUBCASE("edited entry fails the checksum") {
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    // bump the first stored cell index on the third line
    const std::size_t line3 = contents.find('\n', contents.find('\n') + 1) + 1;
    contents[line3] = contents[line3] == '9' ? '8' : '9';
    std::ofstream(path) << contents;
    CHECK_THROWS_AS(load_backup(path), ChecksumError);
  }

  SUBCASE("missing crc line is malformed") {
    std::ifstream in(path);
    std::string line, rebuilt;
    while (std::getline(in, line)) {
      if (line.rfind("crc32", 0) == 0) break;
      rebuilt += line;
      rebuilt += '\n';
    }
    std::ofstream(path) << rebuilt;
    CHECK_THROWS_AS(load_backup(path), FormatError);
  }

  SUBCASE("grid file is not a backup file") {
    save_grid(grid, path);
    CHECK_THROWS_AS(load_backup(path), FormatError);
  }

  fs::remove(path);
}

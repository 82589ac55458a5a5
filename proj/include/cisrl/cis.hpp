#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cisrl/dynamics.hpp"
#include "cisrl/errors.hpp"

namespace cisrl {

/// One-step discrete dynamics used by the set computations. Production code
/// wraps dynamics::step; tests may inject stub maps.
using StepFn = std::function<State(const State&, const Action&)>;

/// Wraps the CSTR integrator into a StepFn.
inline StepFn make_step_fn(const CstrParams& p, const IntegratorConfig& cfg) {
  return [p, cfg](const State& x, const Action& u) { return step(x, u, p, cfg); };
}

/// Uniform rectangular grid over a state box. Cells are half-open along each
/// axis, [lo_i, hi_i), except the last cell, which is closed, so the closed
/// box is covered exactly once.
struct GridSpec {
  State lo{kConcMin, kTempMin};
  State hi{kConcMax, kTempMax};
  int n_ca = 200;
  int n_temp = 200;

  bool valid() const {
    return lo.c_a < hi.c_a && lo.temp < hi.temp && n_ca >= 2 && n_temp >= 2;
  }
  int cells() const { return n_ca * n_temp; }
  int flat(int i_ca, int i_temp) const { return i_ca * n_temp + i_temp; }

  /// Flat cell index containing x, or -1 outside the box / non-finite.
  int cell_of(const State& x) const {
    const int i = axis_index(x.c_a, lo.c_a, hi.c_a, n_ca);
    const int j = axis_index(x.temp, lo.temp, hi.temp, n_temp);
    if (i < 0 || j < 0) return -1;
    return flat(i, j);
  }

  State center(int i_ca, int i_temp) const {
    return {lo.c_a + (i_ca + 0.5) * (hi.c_a - lo.c_a) / n_ca,
            lo.temp + (i_temp + 0.5) * (hi.temp - lo.temp) / n_temp};
  }
  State center_flat(int cell) const {
    return center(cell / n_temp, cell % n_temp);
  }

  bool same_geometry(const GridSpec& o) const {
    return lo.c_a == o.lo.c_a && lo.temp == o.lo.temp && hi.c_a == o.hi.c_a &&
           hi.temp == o.hi.temp && n_ca == o.n_ca && n_temp == o.n_temp;
  }

 private:
  static int axis_index(double v, double lo, double hi, int n) {
    if (!(v >= lo && v <= hi)) return -1;  // also rejects NaN
    const int i = static_cast<int>((v - lo) / (hi - lo) * n);
    return i >= n ? n - 1 : i;  // v == hi folds into the last (closed) cell
  }
};

/// Grid-sampled membership of the control invariant set.
struct CisGrid {
  GridSpec spec;
  std::vector<std::uint8_t> member;  // row-major over (i_ca, i_temp)

  int member_count() const;
};

/// Returns false outside the grid box, else the membership flag of the cell
/// containing x.
inline bool contains(const CisGrid& grid, const State& x) {
  const int cell = grid.spec.cell_of(x);
  return cell >= 0 && grid.member[static_cast<std::size_t>(cell)] != 0;
}

/// Per-cell verified safe action, present for exactly the member cells.
struct BackupTable {
  GridSpec spec;
  std::vector<std::uint8_t> has;
  std::vector<double> t_c;
};

/// Stored action of x's cell; throws OutsideSetError if x is not in the set.
inline Action backup_action(const BackupTable& table, const State& x) {
  const int cell = table.spec.cell_of(x);
  if (cell < 0 || table.has[static_cast<std::size_t>(cell)] == 0) {
    throw OutsideSetError("backup_action: state (" + std::to_string(x.c_a) +
                          ", " + std::to_string(x.temp) +
                          ") is outside the invariant set");
  }
  return Action{table.t_c[static_cast<std::size_t>(cell)]};
}

/// Finite set of candidate coolant temperatures, uniformly spaced over the
/// admissible range (endpoints included).
struct ActionSampling {
  std::vector<double> values;

  static ActionSampling uniform(int n_actions);
  int count() const { return static_cast<int>(values.size()); }
};

struct KernelResult {
  CisGrid grid;
  bool fixed_point = false;  // a sweep removed nothing before max_sweeps
  int sweeps = 0;
  std::vector<int> removed_per_sweep;
};

/// Iterative viability-kernel refinement over the grid: starts from every
/// cell whose center satisfies the physical bounds and repeatedly removes
/// cells with no viable sampled action. An action is viable when the one-step
/// successors of the cell center and its four (inset) corners all land in
/// member cells; non-finite or out-of-box successors count as unsafe. Runs
/// until a sweep removes nothing or max_sweeps is hit (reported via
/// KernelResult).
KernelResult compute_kernel(const GridSpec& spec, const ActionSampling& actions,
                            const StepFn& step_fn, int max_sweeps = 1000);

/// One refinement sweep in place; returns the number of cells removed.
/// compute_kernel is a loop over this.
int sweep_once(CisGrid& grid, const ActionSampling& actions,
               const StepFn& step_fn);

/// Per member cell, the viable action (same five-point test as the kernel
/// sweeps) whose worst-case probe successor lies deepest inside the member
/// set; ties resolve to the lowest coolant temperature. Throws
/// MissingSafeActionError if a member cell has no viable action, which
/// signals the grid is not a fixed point under this sampling.
BackupTable build_backup(const CisGrid& grid, const ActionSampling& actions,
                         const StepFn& step_fn);

/// Exhaustive post-hoc soundness check: every member-cell center must have at
/// least one sampled action whose successor lands in a member cell. Returns
/// the number of violating cells (0 for a sound kernel).
int count_unsound_cells(const CisGrid& grid, const ActionSampling& actions,
                        const StepFn& step_fn);

// Text persistence. Grid files: "CISGRID v1" header, box + dimensions line,
// n_ca rows of n_temp '0'/'1' characters, trailing "crc32 <hex>" over the
// membership characters. Backup files: "CISBAK v1" header, same second line,
// one "i_ca i_temp t_c" line per member cell, trailing crc32 over those
// lines. load(save(x)) is exact.
void save_grid(const CisGrid& grid, const std::string& path);
CisGrid load_grid(const std::string& path);
void save_backup(const BackupTable& table, const std::string& path);
BackupTable load_backup(const std::string& path);

}  // namespace cisrl

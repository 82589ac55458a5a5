#include "cisrl/cis.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "cisrl/crc32.hpp"

namespace cisrl {

namespace {

int worker_count(int jobs) {
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, std::min(jobs, hw > 0 ? hw : 1));
}

/// Runs fn(begin, end) over [0, n) split across worker threads.
void parallel_ranges(int n, const std::function<void(int, int)>& fn) {
  const int workers = worker_count(n);
  if (workers == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

/// Viability of an action is certified at the cell center plus the four
/// (slightly inset) corners. Center-only certification leaves razor-thin
/// member fingers whose off-center points diverge, breaking backup closure.
constexpr int kProbes = 5;

void probe_points(const GridSpec& spec, int cell, State out[kProbes]) {
  const State c = spec.center_flat(cell);
  const double half_ca =
      0.5 * (spec.hi.c_a - spec.lo.c_a) / spec.n_ca * (1.0 - 1e-9);
  const double half_t =
      0.5 * (spec.hi.temp - spec.lo.temp) / spec.n_temp * (1.0 - 1e-9);
  out[0] = c;
  out[1] = {c.c_a - half_ca, c.temp - half_t};
  out[2] = {c.c_a - half_ca, c.temp + half_t};
  out[3] = {c.c_a + half_ca, c.temp - half_t};
  out[4] = {c.c_a + half_ca, c.temp + half_t};
}

/// Successor cells of every probe point per (cell, action); -1 marks
/// out-of-box or non-finite images. The dynamics do not change between
/// sweeps, so this is computed once.
std::vector<std::int32_t> successor_table(const GridSpec& spec,
                                          const ActionSampling& actions,
                                          const StepFn& step_fn) {
  const int n_cells = spec.cells();
  const int n_act = actions.count();
  std::vector<std::int32_t> table(static_cast<std::size_t>(n_cells) * n_act *
                                  kProbes);
  parallel_ranges(n_cells, [&](int begin, int end) {
    for (int cell = begin; cell < end; ++cell) {
      State pts[kProbes];
      probe_points(spec, cell, pts);
      for (int a = 0; a < n_act; ++a) {
        for (int k = 0; k < kProbes; ++k) {
          const State next = step_fn(pts[k], Action{actions.values[a]});
          const int succ = next.finite() ? spec.cell_of(next) : -1;
          table[(static_cast<std::size_t>(cell) * n_act + a) * kProbes + k] =
              static_cast<std::int32_t>(succ);
        }
      }
    }
  });
  return table;
}

bool action_viable(const std::vector<std::int32_t>& table,
                   const std::vector<std::uint8_t>& member, int cell, int a,
                   int n_act) {
  const std::int32_t* probes =
      table.data() + (static_cast<std::size_t>(cell) * n_act + a) * kProbes;
  for (int k = 0; k < kProbes; ++k) {
    const std::int32_t succ = probes[k];
    if (succ < 0 || !member[static_cast<std::size_t>(succ)]) return false;
  }
  return true;
}

int sweep_with_table(std::vector<std::uint8_t>& member,
                     const std::vector<std::int32_t>& table, int n_act) {
  const int n_cells = static_cast<int>(member.size());
  std::vector<std::uint8_t> next(member.size(), 0);
  std::atomic<int> removed{0};
  parallel_ranges(n_cells, [&](int begin, int end) {
    int local_removed = 0;
    for (int cell = begin; cell < end; ++cell) {
      if (!member[static_cast<std::size_t>(cell)]) continue;
      bool viable = false;
      for (int a = 0; a < n_act; ++a) {
        if (action_viable(table, member, cell, a, n_act)) {
          viable = true;
          break;
        }
      }
      if (viable) {
        next[static_cast<std::size_t>(cell)] = 1;
      } else {
        ++local_removed;
      }
    }
    removed.fetch_add(local_removed, std::memory_order_relaxed);
  });
  member.swap(next);
  return removed.load();
}

/// Chebyshev distance from each cell to the nearest non-member cell or box
/// edge, by multi-source BFS over the 8-neighborhood.
std::vector<int> boundary_distance(const CisGrid& grid) {
  const int n_ca = grid.spec.n_ca;
  const int n_t = grid.spec.n_temp;
  std::vector<int> dist(grid.member.size(), -1);
  std::deque<int> queue;
  for (int cell = 0; cell < grid.spec.cells(); ++cell) {
    if (!grid.member[static_cast<std::size_t>(cell)]) {
      dist[static_cast<std::size_t>(cell)] = 0;
      queue.push_back(cell);
    }
  }
  while (!queue.empty()) {
    const int cell = queue.front();
    queue.pop_front();
    const int i = cell / n_t;
    const int j = cell % n_t;
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const int ni = i + di;
        const int nj = j + dj;
        if (ni < 0 || ni >= n_ca || nj < 0 || nj >= n_t) continue;
        const int nc = ni * n_t + nj;
        if (dist[static_cast<std::size_t>(nc)] < 0) {
          dist[static_cast<std::size_t>(nc)] =
              dist[static_cast<std::size_t>(cell)] + 1;
          queue.push_back(nc);
        }
      }
    }
  }
  for (int cell = 0; cell < grid.spec.cells(); ++cell) {
    const int i = cell / n_t;
    const int j = cell % n_t;
    const int edge =
        std::min(std::min(i, n_ca - 1 - i), std::min(j, n_t - 1 - j)) + 1;
    auto& d = dist[static_cast<std::size_t>(cell)];
    if (d < 0 || d > edge) d = edge;
  }
  return dist;
}

std::string grid_payload(const CisGrid& grid) {
  std::string payload;
  payload.reserve(grid.member.size());
  for (std::uint8_t m : grid.member) payload.push_back(m ? '1' : '0');
  return payload;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string header_line(const GridSpec& spec) {
  std::ostringstream os;
  os << format_double(spec.lo.c_a) << ' ' << format_double(spec.lo.temp) << ' '
     << format_double(spec.hi.c_a) << ' ' << format_double(spec.hi.temp) << ' '
     << spec.n_ca << ' ' << spec.n_temp;
  return os.str();
}

GridSpec parse_header_line(const std::string& line, const std::string& path) {
  std::istringstream is(line);
  GridSpec spec;
  if (!(is >> spec.lo.c_a >> spec.lo.temp >> spec.hi.c_a >> spec.hi.temp >>
        spec.n_ca >> spec.n_temp)) {
    throw FormatError(path + ": malformed dimensions line");
  }
  if (!spec.valid()) {
    throw FormatError(path + ": invalid grid box or cell counts");
  }
  return spec;
}

std::uint32_t parse_crc_line(const std::string& line, const std::string& path) {
  std::istringstream is(line);
  std::string tag, hex;
  if (!(is >> tag >> hex) || tag != "crc32") {
    throw FormatError(path + ": missing crc32 line");
  }
  std::uint32_t value = 0;
  if (std::sscanf(hex.c_str(), "%" SCNx32, &value) != 1) {
    throw FormatError(path + ": malformed crc32 value");
  }
  return value;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  return in;
}

std::string read_line(std::ifstream& in, const std::string& path,
                      const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError(path + ": truncated file, missing " + what);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

int CisGrid::member_count() const {
  return static_cast<int>(std::count(member.begin(), member.end(),
                                     std::uint8_t{1}));
}

ActionSampling ActionSampling::uniform(int n_actions) {
  ActionSampling s;
  s.values.resize(static_cast<std::size_t>(n_actions));
  for (int i = 0; i < n_actions; ++i) {
    s.values[static_cast<std::size_t>(i)] =
        kCoolantMin + (kCoolantMax - kCoolantMin) * i / (n_actions - 1);
  }
  s.values.front() = kCoolantMin;
  s.values.back() = kCoolantMax;
  return s;
}

KernelResult compute_kernel(const GridSpec& spec, const ActionSampling& actions,
                            const StepFn& step_fn, int max_sweeps) {
  KernelResult result;
  result.grid.spec = spec;
  result.grid.member.assign(static_cast<std::size_t>(spec.cells()), 0);
  for (int cell = 0; cell < spec.cells(); ++cell) {
    if (in_physical_bounds(spec.center_flat(cell))) {
      result.grid.member[static_cast<std::size_t>(cell)] = 1;
    }
  }

  const auto table = successor_table(spec, actions, step_fn);
  for (int s = 0; s < max_sweeps; ++s) {
    const int removed =
        sweep_with_table(result.grid.member, table, actions.count());
    result.sweeps = s + 1;
    result.removed_per_sweep.push_back(removed);
    if (removed == 0) {
      result.fixed_point = true;
      break;
    }
  }
  return result;
}

int sweep_once(CisGrid& grid, const ActionSampling& actions,
               const StepFn& step_fn) {
  const auto table = successor_table(grid.spec, actions, step_fn);
  return sweep_with_table(grid.member, table, actions.count());
}

BackupTable build_backup(const CisGrid& grid, const ActionSampling& actions,
                         const StepFn& step_fn) {
  BackupTable table;
  table.spec = grid.spec;
  table.has.assign(grid.member.size(), 0);
  table.t_c.assign(grid.member.size(), 0.0);

  const int n_cells = grid.spec.cells();
  const int n_act = actions.count();
  const auto succ = successor_table(grid.spec, actions, step_fn);
  const auto dist = boundary_distance(grid);

  std::atomic<int> failed_cell{-1};
  parallel_ranges(n_cells, [&](int begin, int end) {
    for (int cell = begin; cell < end; ++cell) {
      if (!grid.member[static_cast<std::size_t>(cell)]) continue;
      // among viable actions, keep the one whose worst probe successor sits
      // deepest inside the member set; ties resolve to the lowest coolant
      // temperature
      int best_margin = -1;
      for (int a = 0; a < n_act; ++a) {
        if (!action_viable(succ, grid.member, cell, a, n_act)) continue;
        int margin = std::numeric_limits<int>::max();
        const std::int32_t* probes =
            succ.data() + (static_cast<std::size_t>(cell) * n_act + a) * kProbes;
        for (int k = 0; k < kProbes; ++k) {
          margin = std::min(margin, dist[static_cast<std::size_t>(probes[k])]);
        }
        if (margin > best_margin) {
          best_margin = margin;
          table.has[static_cast<std::size_t>(cell)] = 1;
          table.t_c[static_cast<std::size_t>(cell)] = actions.values[a];
        }
      }
      if (best_margin < 0) {
        int expected = -1;
        failed_cell.compare_exchange_strong(expected, cell);
      }
    }
  });

  const int bad = failed_cell.load();
  if (bad >= 0) {
    throw MissingSafeActionError(bad / grid.spec.n_temp,
                                 bad % grid.spec.n_temp);
  }
  return table;
}

int count_unsound_cells(const CisGrid& grid, const ActionSampling& actions,
                        const StepFn& step_fn) {
  const int n_cells = grid.spec.cells();
  std::atomic<int> unsound{0};
  parallel_ranges(n_cells, [&](int begin, int end) {
    int local = 0;
    for (int cell = begin; cell < end; ++cell) {
      if (!grid.member[static_cast<std::size_t>(cell)]) continue;
      const State x = grid.spec.center_flat(cell);
      bool ok = false;
      for (double t_c : actions.values) {
        const State next = step_fn(x, Action{t_c});
        if (next.finite() && contains(grid, next)) {
          ok = true;
          break;
        }
      }
      if (!ok) ++local;
    }
    unsound.fetch_add(local, std::memory_order_relaxed);
  });
  return unsound.load();
}

void save_grid(const CisGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out << "CISGRID v1\n" << header_line(grid.spec) << '\n';
  const std::string payload = grid_payload(grid);
  for (int i = 0; i < grid.spec.n_ca; ++i) {
    out.write(payload.data() + static_cast<std::size_t>(i) * grid.spec.n_temp,
              grid.spec.n_temp);
    out.put('\n');
  }
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", crc32(payload));
  out << "crc32 " << hex << '\n';
  if (!out) throw FormatError(path + ": write failed");
}

CisGrid load_grid(const std::string& path) {
  std::ifstream in = open_input(path);
  const std::string magic = read_line(in, path, "magic line");
  if (magic.rfind("CISGRID", 0) != 0) {
    throw FormatError(path + ": not a CISGRID file");
  }
  if (magic != "CISGRID v1") {
    throw VersionError(path + ": unsupported version '" + magic + "'");
  }

  CisGrid grid;
  grid.spec = parse_header_line(read_line(in, path, "dimensions line"), path);
  grid.member.reserve(static_cast<std::size_t>(grid.spec.cells()));
  std::string payload;
  payload.reserve(static_cast<std::size_t>(grid.spec.cells()));
  for (int i = 0; i < grid.spec.n_ca; ++i) {
    const std::string row = read_line(in, path, "membership row");
    if (static_cast<int>(row.size()) != grid.spec.n_temp) {
      throw FormatError(path + ": membership row " + std::to_string(i) +
                        " has length " + std::to_string(row.size()) +
                        ", expected " + std::to_string(grid.spec.n_temp));
    }
    for (char c : row) {
      if (c != '0' && c != '1') {
        throw FormatError(path + ": membership row contains '" +
                          std::string(1, c) + "'");
      }
      grid.member.push_back(c == '1' ? 1 : 0);
    }
    payload += row;
  }
  const std::uint32_t stored = parse_crc_line(read_line(in, path, "crc line"),
                                              path);
  const std::uint32_t actual = crc32(payload);
  if (stored != actual) {
    throw ChecksumError(path + ": crc mismatch");
  }
  return grid;
}

void save_backup(const BackupTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out << "CISBAK v1\n" << header_line(table.spec) << '\n';
  std::string payload;
  for (int i = 0; i < table.spec.n_ca; ++i) {
    for (int j = 0; j < table.spec.n_temp; ++j) {
      const std::size_t cell = static_cast<std::size_t>(table.spec.flat(i, j));
      if (!table.has[cell]) continue;
      payload += std::to_string(i);
      payload += ' ';
      payload += std::to_string(j);
      payload += ' ';
      payload += format_double(table.t_c[cell]);
      payload += '\n';
    }
  }
  out << payload;
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", crc32(payload));
  out << "crc32 " << hex << '\n';
  if (!out) throw FormatError(path + ": write failed");
}

BackupTable load_backup(const std::string& path) {
  std::ifstream in = open_input(path);
  const std::string magic = read_line(in, path, "magic line");
  if (magic.rfind("CISBAK", 0) != 0) {
    throw FormatError(path + ": not a CISBAK file");
  }
  if (magic != "CISBAK v1") {
    throw VersionError(path + ": unsupported version '" + magic + "'");
  }

  BackupTable table;
  table.spec = parse_header_line(read_line(in, path, "dimensions line"), path);
  table.has.assign(static_cast<std::size_t>(table.spec.cells()), 0);
  table.t_c.assign(static_cast<std::size_t>(table.spec.cells()), 0.0);

  std::string payload;
  std::string line;
  bool saw_crc = false;
  std::uint32_t stored = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("crc32", 0) == 0) {
      stored = parse_crc_line(line, path);
      saw_crc = true;
      break;
    }
    std::istringstream is(line);
    int i = 0, j = 0;
    double t_c = 0.0;
    if (!(is >> i >> j >> t_c)) {
      throw FormatError(path + ": malformed backup entry '" + line + "'");
    }
    if (i < 0 || i >= table.spec.n_ca || j < 0 || j >= table.spec.n_temp) {
      throw FormatError(path + ": backup entry cell out of range");
    }
    const std::size_t cell = static_cast<std::size_t>(table.spec.flat(i, j));
    table.has[cell] = 1;
    table.t_c[cell] = t_c;
    payload += line;
    payload += '\n';
  }
  if (!saw_crc) throw FormatError(path + ": truncated file, missing crc line");
  if (stored != crc32(payload)) throw ChecksumError(path + ": crc mismatch");
  return table;
}

}  // namespace cisrl

#pragma once

// Deterministic gridworld engine in the MiniGrid mold: bordered N x N rooms,
// oriented agent, seven discrete actions, fully-observed N x N x 3 encoding.
// Dynamics live in free functions over GridState so the tabular analysis can
// enumerate states without dragging episode bookkeeping along.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "evoloss/env.hpp"
#include "evoloss/rng.hpp"

namespace evoloss {

// Object codes follow the MiniGrid registry so encodings look familiar.
enum class GridObj : std::uint8_t {
  Unseen = 0,
  Empty = 1,
  Wall = 2,
  Floor = 3,
  Door = 4,
  Key = 5,
  Ball = 6,
  Box = 7,
  Goal = 8,
  Lava = 9,
  Agent = 10,
};
inline constexpr int kGridObjCount = 11;
inline constexpr int kGridColorCount = 6;   // red green blue purple yellow grey
inline constexpr int kGridStateCount = 4;   // door: 0 open, 1 closed, 2 locked
inline constexpr int kGridActionCount = 7;  // left right forward pickup drop toggle noop
inline constexpr int kGridMaxSteps = 100;

struct GridCell {
  std::uint8_t obj = static_cast<std::uint8_t>(GridObj::Empty);
  std::uint8_t color = 0;
  std::uint8_t state = 0;
};

struct GridPos {
  int x = 0;
  int y = 0;
  bool operator==(const GridPos&) const = default;
};

struct GridState {
  int n = 0;
  std::vector<GridCell> cells;  // row-major, y * n + x
  int ax = 1, ay = 1, dir = 0;  // dir: 0 east, 1 south, 2 west, 3 north
  int carrying = -1;            // GridObj code, -1 when empty-handed
  int carrying_color = 0;
  std::vector<GridPos> obstacles;  // moving balls (dynobs only)

  GridCell& at(int x, int y) { return cells[y * n + x]; }
  const GridCell& at(int x, int y) const { return cells[y * n + x]; }
};

struct GridTask {
  enum class Kind {
    Empty,
    EmptyRandom,
    DoorKey,
    DynObs,
    LavaGap,
    SimpleCrossing,
    KeyCorridor,
    MultiRoom,
    FourRooms,
    Unlock,
  };
  Kind kind = Kind::Empty;
  int n = 5;  // grid side
  int k = 1;  // task-specific count (crossings, corridors, rooms)
  std::string name;
};

// Parses "grid:<task>[:<n>[:<k>]]"; throws ConfigError on bad names/sizes.
GridTask parse_grid_task(const std::string& name);

// True when every episode replays the same layout and dynamics are
// deterministic, i.e. the task is enumerable for tabular analysis.
bool grid_task_deterministic(const GridTask& task);

// Fresh episode layout. Random layouts are rejection-sampled until the
// success target is reachable (keys first through locked doors).
GridState generate_layout(const GridTask& task, Rng& rng);

struct GridOutcome {
  double reward = 0.0;
  bool done = false;
};

// One action without the step cap. dyn_rng drives obstacle motion and may be
// null for tasks without moving obstacles.
GridOutcome grid_step(GridState& s, const GridTask& task, int action, Rng* dyn_rng);

// N*N*3 doubles: object/11, color/6, state/4 per cell; the agent overlays its
// cell as (Agent, red, orientation).
Eigen::VectorXd encode_grid_obs(const GridState& s);

// Byte key identifying the full mutable state (pose, carrying, cells).
std::vector<std::uint8_t> canonical_grid_key(const GridState& s);

std::unique_ptr<Env> make_grid_env(const std::string& name);

}  // namespace evoloss

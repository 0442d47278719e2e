#include "evoloss/env_grid.hpp"

#include <algorithm>
#include <deque>

namespace evoloss {
namespace {

constexpr std::uint8_t kRed = 0, kBlue = 2, kYellow = 4, kGrey = 5;
constexpr std::uint8_t kDoorOpen = 0, kDoorClosed = 1, kDoorLocked = 2;
constexpr int kDx[4] = {1, 0, -1, 0};  // east south west north
constexpr int kDy[4] = {0, 1, 0, -1};

GridCell cell_of(GridObj obj, std::uint8_t color = kGrey, std::uint8_t state = 0) {
  return {static_cast<std::uint8_t>(obj), color, state};
}

bool is_obj(const GridCell& c, GridObj o) { return c.obj == static_cast<std::uint8_t>(o); }

GridState empty_room(int n) {
  GridState s;
  s.n = n;
  s.cells.assign(static_cast<std::size_t>(n) * n, cell_of(GridObj::Empty));
  for (int i = 0; i < n; ++i) {
    s.at(i, 0) = cell_of(GridObj::Wall);
    s.at(i, n - 1) = cell_of(GridObj::Wall);
    s.at(0, i) = cell_of(GridObj::Wall);
    s.at(n - 1, i) = cell_of(GridObj::Wall);
  }
  return s;
}

// Uniform free interior cell not in `taken`.
GridPos sample_free(const GridState& s, Rng& rng, const std::vector<GridPos>& taken) {
  std::vector<GridPos> free;
  for (int y = 1; y < s.n - 1; ++y) {
    for (int x = 1; x < s.n - 1; ++x) {
      if (!is_obj(s.at(x, y), GridObj::Empty)) continue;
      const GridPos p{x, y};
      if (std::find(taken.begin(), taken.end(), p) == taken.end()) free.push_back(p);
    }
  }
  if (free.empty()) throw ContractError("gridworld generation: no free cell left");
  return free[rng.index(free.size())];
}

// Reachability for layout validation. Locked doors block when
// `locked_blocks`; keys/balls count as passable since they can be picked up.
std::vector<char> bfs_region(const GridState& s, bool locked_blocks) {
  std::vector<char> seen(s.cells.size(), 0);
  std::deque<GridPos> queue{{s.ax, s.ay}};
  seen[s.ay * s.n + s.ax] = 1;
  while (!queue.empty()) {
    const GridPos p = queue.front();
    queue.pop_front();
    for (int d = 0; d < 4; ++d) {
      const int x = p.x + kDx[d];
      const int y = p.y + kDy[d];
      if (x < 0 || y < 0 || x >= s.n || y >= s.n || seen[y * s.n + x]) continue;
      const GridCell& c = s.at(x, y);
      if (is_obj(c, GridObj::Wall) || is_obj(c, GridObj::Lava)) continue;
      if (is_obj(c, GridObj::Door) && locked_blocks && c.state == kDoorLocked) continue;
      seen[y * s.n + x] = 1;
      queue.push_back({x, y});
    }
  }
  return seen;
}

struct LayoutCheck {
  GridPos target;            // must be reachable with doors passable
  GridPos key{-1, -1};       // when set, must be reachable before locked doors
};

bool layout_ok(const GridState& s, const LayoutCheck& check) {
  if (check.key.x >= 0) {
    const auto region = bfs_region(s, true);
    if (!region[check.key.y * s.n + check.key.x]) return false;
  }
  const auto region = bfs_region(s, false);
  return region[check.target.y * s.n + check.target.x] != 0;
}

GridState build_layout(const GridTask& task, Rng& rng, LayoutCheck& check) {
  const int n = task.n;
  GridState s = empty_room(n);
  const GridPos corner{n - 2, n - 2};

  switch (task.kind) {
    case GridTask::Kind::Empty:
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);
      s.ax = 1;
      s.ay = 1;
      s.dir = 0;
      check.target = corner;
      break;
    case GridTask::Kind::EmptyRandom: {
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);
      const GridPos a = sample_free(s, rng, {});
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = corner;
      break;
    }
    case GridTask::Kind::DoorKey: {
      const int wall_x = 2 + rng.index(n - 4);
      for (int y = 1; y < n - 1; ++y) s.at(wall_x, y) = cell_of(GridObj::Wall);
      const int door_y = 1 + rng.index(n - 2);
      s.at(wall_x, door_y) = cell_of(GridObj::Door, kYellow, kDoorLocked);
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);

      std::vector<GridPos> left;
      for (int y = 1; y < n - 1; ++y) {
        for (int x = 1; x < wall_x; ++x) {
          if (is_obj(s.at(x, y), GridObj::Empty)) left.push_back({x, y});
        }
      }
      const GridPos key = left[rng.index(left.size())];
      s.at(key.x, key.y) = cell_of(GridObj::Key, kYellow);
      left.erase(std::find(left.begin(), left.end(), key));
      const GridPos a = left[rng.index(left.size())];
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = corner;
      check.key = key;
      break;
    }
    case GridTask::Kind::DynObs: {
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);
      s.ax = 1;
      s.ay = 1;
      s.dir = 0;
      const int count = std::max(1, (n - 2) / 2);
      std::vector<GridPos> taken{{1, 1}, corner};
      for (int i = 0; i < count; ++i) {
        const GridPos b = sample_free(s, rng, taken);
        s.at(b.x, b.y) = cell_of(GridObj::Ball, kBlue);
        s.obstacles.push_back(b);
        taken.push_back(b);
      }
      check.target = corner;
      break;
    }
    case GridTask::Kind::LavaGap: {
      const int lava_x = n / 2;
      const int gap_y = 1 + rng.index(n - 2);
      for (int y = 1; y < n - 1; ++y) {
        if (y != gap_y) s.at(lava_x, y) = cell_of(GridObj::Lava, kRed);
      }
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);
      s.ax = 1;
      s.ay = 1;
      s.dir = 0;
      check.target = corner;
      break;
    }
    case GridTask::Kind::SimpleCrossing: {
      std::vector<int> used;
      for (int river = 0; river < task.k; ++river) {
        int pos = 0;
        for (int tries = 0; tries < 50; ++tries) {
          pos = 2 + rng.index(n - 4);
          if (std::find(used.begin(), used.end(), pos) == used.end()) break;
        }
        used.push_back(pos);
        const bool vertical = rng.bernoulli(0.5);
        const int gap = 1 + rng.index(n - 2);
        for (int i = 1; i < n - 1; ++i) {
          if (i == gap) continue;
          if (vertical) {
            s.at(pos, i) = cell_of(GridObj::Wall);
          } else {
            s.at(i, pos) = cell_of(GridObj::Wall);
          }
        }
      }
      s.at(corner.x, corner.y) = cell_of(GridObj::Goal, kRed);
      s.ax = 1;
      s.ay = 1;
      s.dir = 0;
      check.target = corner;
      break;
    }
    case GridTask::Kind::KeyCorridor: {
      // 7x7: top-left hall, key room below it (closed door), ball room on the
      // right behind a locked door. Success is picking up the ball.
      for (int y = 1; y < n - 1; ++y) s.at(4, y) = cell_of(GridObj::Wall);
      const int ball_y = 1 + rng.index(n - 2);
      s.at(4, 3) = cell_of(GridObj::Door, kRed, kDoorLocked);
      s.at(5, ball_y) = cell_of(GridObj::Ball, kYellow);
      for (int x = 1; x < 4; ++x) s.at(x, 4) = cell_of(GridObj::Wall);
      const int door_x = 1 + rng.index(3);
      s.at(door_x, 4) = cell_of(GridObj::Door, kGrey, kDoorClosed);
      const GridPos key{1 + rng.index(3), 5};
      s.at(key.x, key.y) = cell_of(GridObj::Key, kRed);

      std::vector<GridPos> hall;
      for (int y = 1; y < 4; ++y) {
        for (int x = 1; x < 4; ++x) {
          if (is_obj(s.at(x, y), GridObj::Empty)) hall.push_back({x, y});
        }
      }
      const GridPos a = hall[rng.index(hall.size())];
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = {5, ball_y};
      check.key = key;
      break;
    }
    case GridTask::Kind::MultiRoom: {
      for (int y = 1; y < n - 1; ++y) s.at(3, y) = cell_of(GridObj::Wall);
      const int door_y = 1 + rng.index(n - 2);
      s.at(3, door_y) = cell_of(GridObj::Door, static_cast<std::uint8_t>(rng.index(6)),
                                kDoorClosed);
      const GridPos goal{4 + rng.index(2), 1 + rng.index(n - 2)};
      s.at(goal.x, goal.y) = cell_of(GridObj::Goal, kRed);
      std::vector<GridPos> room1;
      for (int y = 1; y < n - 1; ++y) {
        for (int x = 1; x < 3; ++x) room1.push_back({x, y});
      }
      const GridPos a = room1[rng.index(room1.size())];
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = goal;
      break;
    }
    case GridTask::Kind::FourRooms: {
      for (int i = 1; i < n - 1; ++i) {
        s.at(4, i) = cell_of(GridObj::Wall);
        s.at(i, 4) = cell_of(GridObj::Wall);
      }
      s.at(4, 1 + rng.index(3)) = cell_of(GridObj::Empty);
      s.at(4, 5 + rng.index(3)) = cell_of(GridObj::Empty);
      s.at(1 + rng.index(3), 4) = cell_of(GridObj::Empty);
      s.at(5 + rng.index(3), 4) = cell_of(GridObj::Empty);
      const GridPos goal = sample_free(s, rng, {});
      s.at(goal.x, goal.y) = cell_of(GridObj::Goal, kRed);
      const GridPos a = sample_free(s, rng, {goal});
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = goal;
      break;
    }
    case GridTask::Kind::Unlock: {
      for (int y = 1; y < n - 1; ++y) s.at(3, y) = cell_of(GridObj::Wall);
      const int door_y = 1 + rng.index(n - 2);
      s.at(3, door_y) = cell_of(GridObj::Door, kYellow, kDoorLocked);
      std::vector<GridPos> room1;
      for (int y = 1; y < n - 1; ++y) {
        for (int x = 1; x < 3; ++x) room1.push_back({x, y});
      }
      const GridPos key = room1[rng.index(room1.size())];
      s.at(key.x, key.y) = cell_of(GridObj::Key, kYellow);
      room1.erase(std::find(room1.begin(), room1.end(), key));
      const GridPos a = room1[rng.index(room1.size())];
      s.ax = a.x;
      s.ay = a.y;
      s.dir = rng.index(4);
      check.target = {3, door_y};
      check.key = key;
      break;
    }
  }
  return s;
}

}  // namespace

GridTask parse_grid_task(const std::string& name) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= name.size(); ++i) {
    if (i == name.size() || name[i] == ':') {
      parts.push_back(name.substr(start, i - start));
      start = i + 1;
    }
  }
  if (parts.size() < 2 || parts[0] != "grid") throw ConfigError("bad grid name: " + name);

  auto num = [&](std::size_t i, int fallback) {
    if (parts.size() <= i) return fallback;
    try {
      return std::stoi(parts[i]);
    } catch (...) {
      throw ConfigError("bad grid size in: " + name);
    }
  };

  GridTask t;
  t.name = name;
  const std::string& kind = parts[1];
  if (kind == "empty") {
    t.kind = GridTask::Kind::Empty;
    t.n = num(2, 5);
  } else if (kind == "emptyrandom") {
    t.kind = GridTask::Kind::EmptyRandom;
    t.n = num(2, 5);
  } else if (kind == "doorkey") {
    t.kind = GridTask::Kind::DoorKey;
    t.n = num(2, 5);
    if (t.n < 5) throw ConfigError("doorkey needs n >= 5: " + name);
  } else if (kind == "dynobs") {
    t.kind = GridTask::Kind::DynObs;
    t.n = num(2, 6);
  } else if (kind == "lavagap") {
    t.kind = GridTask::Kind::LavaGap;
    t.n = num(2, 5);
    if (t.n < 5) throw ConfigError("lavagap needs n >= 5: " + name);
  } else if (kind == "simplecrossing") {
    t.kind = GridTask::Kind::SimpleCrossing;
    t.n = num(2, 9);
    t.k = num(3, 1);
    if (t.n < 7 || t.k < 1 || t.k > 2) {
      throw ConfigError("simplecrossing supports n >= 7, k in {1,2}: " + name);
    }
  } else if (kind == "keycorridor") {
    if (num(2, 3) != 3 || num(3, 1) != 1) {
      throw ConfigError("keycorridor is built desk-scale as 3:1 only: " + name);
    }
    t.kind = GridTask::Kind::KeyCorridor;
    t.n = 7;
  } else if (kind == "multiroom") {
    if (num(2, 2) != 2 || num(3, 4) != 4) {
      throw ConfigError("multiroom is built desk-scale as 2:4 only: " + name);
    }
    t.kind = GridTask::Kind::MultiRoom;
    t.n = 7;
  } else if (kind == "fourrooms") {
    t.kind = GridTask::Kind::FourRooms;
    t.n = num(2, 9);
    if (t.n != 9) throw ConfigError("fourrooms is built desk-scale as 9x9 only: " + name);
  } else if (kind == "unlock") {
    t.kind = GridTask::Kind::Unlock;
    t.n = 7;
  } else {
    throw ConfigError("unknown grid task: " + name);
  }
  if (t.n < 5 || t.n > 15) throw ConfigError("grid size out of range (5..15): " + name);
  return t;
}

bool grid_task_deterministic(const GridTask& task) {
  return task.kind == GridTask::Kind::Empty;
}

GridState generate_layout(const GridTask& task, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    LayoutCheck check;
    GridState s = build_layout(task, rng, check);
    if (layout_ok(s, check)) return s;
  }
  throw ContractError("gridworld generation failed for " + task.name);
}

GridOutcome grid_step(GridState& s, const GridTask& task, int action, Rng* dyn_rng) {
  GridOutcome out;
  const int fx = s.ax + kDx[s.dir];
  const int fy = s.ay + kDy[s.dir];
  GridCell& front = s.at(fx, fy);

  switch (action) {
    case 0:
      s.dir = (s.dir + 3) % 4;
      break;
    case 1:
      s.dir = (s.dir + 1) % 4;
      break;
    case 2:
      if (is_obj(front, GridObj::Empty) || is_obj(front, GridObj::Floor) ||
          (is_obj(front, GridObj::Door) && front.state == kDoorOpen)) {
        s.ax = fx;
        s.ay = fy;
      } else if (is_obj(front, GridObj::Goal)) {
        s.ax = fx;
        s.ay = fy;
        out.reward = 1.0;
        out.done = true;
      } else if (is_obj(front, GridObj::Lava)) {
        s.ax = fx;
        s.ay = fy;
        out.done = true;  // reward stays 0
      } else if (is_obj(front, GridObj::Ball) && task.kind == GridTask::Kind::DynObs) {
        out.reward = -1.0;
        out.done = true;
      }
      break;
    case 3:
      if (s.carrying < 0 &&
          (is_obj(front, GridObj::Key) || is_obj(front, GridObj::Ball) ||
           is_obj(front, GridObj::Box))) {
        s.carrying = front.obj;
        s.carrying_color = front.color;
        const bool ball = is_obj(front, GridObj::Ball);
        front = cell_of(GridObj::Empty);
        if (ball && task.kind == GridTask::Kind::KeyCorridor) {
          out.reward = 1.0;
          out.done = true;
        }
      }
      break;
    case 4:
      if (s.carrying >= 0 && is_obj(front, GridObj::Empty)) {
        front.obj = static_cast<std::uint8_t>(s.carrying);
        front.color = static_cast<std::uint8_t>(s.carrying_color);
        front.state = 0;
        s.carrying = -1;
        s.carrying_color = 0;
      }
      break;
    case 5:
      if (is_obj(front, GridObj::Door)) {
        if (front.state == kDoorLocked) {
          if (s.carrying == static_cast<int>(GridObj::Key) &&
              s.carrying_color == front.color) {
            front.state = kDoorOpen;
            if (task.kind == GridTask::Kind::Unlock) {
              out.reward = 1.0;
              out.done = true;
            }
          }
        } else {
          front.state = front.state == kDoorOpen ? kDoorClosed : kDoorOpen;
        }
      }
      break;
    case 6:
      break;
    default:
      throw ContractError("grid action out of range");
  }

  if (task.kind == GridTask::Kind::DynObs && dyn_rng != nullptr && !out.done) {
    for (GridPos& b : s.obstacles) {
      const int d = dyn_rng->index(4);
      const int nx = b.x + kDx[d];
      const int ny = b.y + kDy[d];
      if (nx < 0 || ny < 0 || nx >= s.n || ny >= s.n) continue;
      if (!is_obj(s.at(nx, ny), GridObj::Empty)) continue;
      if (nx == s.ax && ny == s.ay) continue;
      s.at(nx, ny) = s.at(b.x, b.y);
      s.at(b.x, b.y) = cell_of(GridObj::Empty);
      b = {nx, ny};
    }
  }
  return out;
}

Eigen::VectorXd encode_grid_obs(const GridState& s) {
  Eigen::VectorXd obs(static_cast<Eigen::Index>(s.n) * s.n * 3);
  for (int y = 0; y < s.n; ++y) {
    for (int x = 0; x < s.n; ++x) {
      const GridCell& c = s.at(x, y);
      const int base = (y * s.n + x) * 3;
      obs(base + 0) = c.obj / static_cast<double>(kGridObjCount);
      obs(base + 1) = c.color / static_cast<double>(kGridColorCount);
      obs(base + 2) = c.state / static_cast<double>(kGridStateCount);
    }
  }
  const int base = (s.ay * s.n + s.ax) * 3;
  obs(base + 0) = static_cast<int>(GridObj::Agent) / static_cast<double>(kGridObjCount);
  obs(base + 1) = 0.0;
  obs(base + 2) = s.dir / static_cast<double>(kGridStateCount);
  return obs;
}

std::vector<std::uint8_t> canonical_grid_key(const GridState& s) {
  std::vector<std::uint8_t> key;
  key.reserve(s.cells.size() * 3 + 8);
  key.push_back(static_cast<std::uint8_t>(s.n));
  key.push_back(static_cast<std::uint8_t>(s.ax));
  key.push_back(static_cast<std::uint8_t>(s.ay));
  key.push_back(static_cast<std::uint8_t>(s.dir));
  key.push_back(static_cast<std::uint8_t>(s.carrying + 1));
  key.push_back(static_cast<std::uint8_t>(s.carrying_color));
  for (const GridCell& c : s.cells) {
    key.push_back(c.obj);
    key.push_back(c.color);
    key.push_back(c.state);
  }
  for (const GridPos& b : s.obstacles) {
    key.push_back(static_cast<std::uint8_t>(b.x));
    key.push_back(static_cast<std::uint8_t>(b.y));
  }
  return key;
}

namespace {

class GridEnv final : public Env {
 public:
  explicit GridEnv(const std::string& name) : task_(parse_grid_task(name)) {
    spec_.name = name;
    spec_.obs_dim = task_.n * task_.n * 3;
    spec_.action_count = kGridActionCount;
    spec_.max_steps = kGridMaxSteps;
    spec_.r_min = task_.kind == GridTask::Kind::DynObs ? -1.0 : 0.0;
    spec_.r_max = 1.0;
    spec_.eps_decay_steps = 100000;
    spec_.default_step_budget = 100000;
  }

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) override {
    rng_ = fork_stream(seed, "env");
    return reset();
  }

  Eigen::VectorXd reset() override {
    state_ = generate_layout(task_, rng_);
    steps_ = 0;
    done_ = false;
    return encode_grid_obs(state_);
  }

  StepResult step(int action) override {
    if (done_) throw ContractError(spec_.name + ": step after episode end");
    const GridOutcome out = grid_step(state_, task_, action, &rng_);
    ++steps_;
    StepResult r;
    r.reward = out.reward;
    r.done = out.done || steps_ >= spec_.max_steps;
    r.obs = encode_grid_obs(state_);
    done_ = r.done;
    return r;
  }

 private:
  GridTask task_;
  EnvSpec spec_;
  GridState state_;
  Rng rng_{0};
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace

std::unique_ptr<Env> make_grid_env(const std::string& name) {
  return std::make_unique<GridEnv>(name);
}

}  // namespace evoloss

// Copyright 2026 The zsclab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Two-agent cooperative rearrangement gridworld.
//
// Agents act through a fixed table of 20 high-level actions: navigation to
// one of 10 entities, pick/place of the two target objects, opening of the
// two articulated receptacles, and 4 primitives. Macros run over several
// ticks; an agent only makes a decision on the tick after its macro finished.
// Reward is shared:  10 * [success] + 0.5 * #subgoal events - 0.01 per tick.

#ifndef ZSC_WORLD_HPP_
#define ZSC_WORLD_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zsc {

enum class Task { kSetTable, kTidyHouse, kPrepareGroceries };

std::string_view task_name(Task task);
std::optional<Task> parse_task(std::string_view name);

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

inline int manhattan(Cell a, Cell b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}
inline int chebyshev(Cell a, Cell b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

// North is y - 1.
enum class Heading : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

Cell step_towards(Cell c, Heading h);

inline constexpr int kNumAgents = 2;
inline constexpr int kNumObjects = 2;
inline constexpr int kMaxReceptacles = 6;
inline constexpr int kNumEntities = 2 + 2 + kMaxReceptacles;
inline constexpr int kNumActions = kNumEntities + 6 + 4;

struct Receptacle {
  int id = 0;
  Cell cell;
  bool openable = false;
  bool open = true;  // initial state
  std::string name;
};

struct GridLayout {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> walls;  // row-major, 1 = wall
  std::vector<Receptacle> receptacles;
  std::vector<Cell> spawn_region;

  bool inside(Cell c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }
  bool wall(Cell c) const {
    return !inside(c) || walls[static_cast<std::size_t>(c.y * width + c.x)] != 0;
  }
  // Receptacle index at a cell, or -1.
  int receptacle_at(Cell c) const;
};

using OpenFlags = std::array<bool, kMaxReceptacles>;

// Cells an agent cannot enter: walls and closed receptacles.
bool blocked(const GridLayout& layout, const OpenFlags& open, Cell c);

struct Goal {
  int receptacle = -1;  // -1: a bare floor cell
  Cell cell;
};

struct ObjectLocation {
  enum class Kind { kOnReceptacle, kHeldBy, kAtCell };
  Kind kind = Kind::kAtCell;
  int index = -1;  // receptacle id or agent id
  Cell cell;       // used by kAtCell
  bool operator==(const ObjectLocation&) const = default;
};

struct ObjectState {
  int id = 0;
  ObjectLocation location;
  ObjectLocation start;
  Goal goal;
};

enum class ActionKind {
  kNavigate,
  kPick,
  kPlace,
  kOpen,
  kNoOp,
  kMoveForward,
  kTurnLeft,
  kTurnRight
};

// Index into the fixed action table:
//   0..9   Navigate(entity)   entities: obj0 start, obj1 start, goal0, goal1,
//                             receptacles 0..5
//   10,11  Pick(O0), Pick(O1)
//   12,13  Place(g0), Place(g1)
//   14,15  Open(R0), Open(R1)
//   16..19 NoOp, MoveForward, TurnLeft, TurnRight
struct ActionId {
  int value = 16;

  ActionKind kind() const;
  // Entity, object, goal or receptacle index; 0 for primitives.
  int arg() const;
  bool operator==(const ActionId&) const = default;

  static constexpr ActionId navigate(int entity) { return {entity}; }
  static constexpr ActionId pick(int object) { return {kNumEntities + object}; }
  static constexpr ActionId place(int goal) { return {kNumEntities + 2 + goal}; }
  static constexpr ActionId open(int receptacle) {
    return {kNumEntities + 4 + receptacle};
  }
  static constexpr ActionId noop() { return {kNumEntities + 6}; }
  static constexpr ActionId move_forward() { return {kNumEntities + 7}; }
  static constexpr ActionId turn_left() { return {kNumEntities + 8}; }
  static constexpr ActionId turn_right() { return {kNumEntities + 9}; }
};

std::string action_name(ActionId action);

struct MacroProgress {
  ActionId action;
  std::vector<Cell> path;
  std::size_t next = 0;
};

struct AgentState {
  Cell pos;
  Heading heading = Heading::kNorth;
  int holding = -1;
  std::optional<MacroProgress> active_macro;
};

struct SubgoalEvent {
  enum class Kind { kPickedObject = 0, kPlacedObject = 1, kOpenedReceptacle = 2 };
  Kind kind = Kind::kPickedObject;
  int index = 0;
  int agent = 0;

  // Dense id in [0, kNumEventIds): picked0, picked1, placed0, placed1,
  // opened0, opened1.
  int id() const { return static_cast<int>(kind) * 2 + index; }
  bool operator==(const SubgoalEvent&) const = default;
};
inline constexpr int kNumEventIds = 6;
std::string event_name(int event_id);

struct WorldState {
  std::shared_ptr<const GridLayout> layout;
  std::array<AgentState, kNumAgents> agents;
  std::array<ObjectState, kNumObjects> objects;
  OpenFlags open{};
  int tick = 0;
  int horizon = 200;
  bool done = false;
  bool success = false;
  bool collision = false;
  std::array<bool, kNumEventIds> fired{};

  Cell object_cell(int object) const;
  bool object_at_goal(int object) const;
};

struct WorldConfig {
  int width = 11;
  int height = 11;
  int horizon = 200;
  int wall_segments = -1;  // -1: derived from the grid size
  bool local_patch = false;
  bool oracle_predicates = false;
};

using Observation = Eigen::VectorXd;

struct StepOutcome {
  std::array<Observation, kNumAgents> obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  bool collision = false;
  std::vector<SubgoalEvent> events;
  std::array<bool, kNumAgents> decision_flags{};
  // Macro each agent actually executed this tick (after no-op degradation).
  std::array<ActionId, kNumAgents> executed{};
};

class NoPathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Breadth-first shortest path over static obstacles. The returned path
// excludes `from` and ends on a cell 4-adjacent to `target` (or is empty when
// `from` is already adjacent to or on it). Neighbours are scanned N, E, S, W.
std::optional<std::vector<Cell>> find_path(const GridLayout& layout,
                                           const OpenFlags& open, Cell from,
                                           Cell target);
// Same as find_path but throws NoPathError.
std::vector<Cell> shortest_path(const GridLayout& layout, const OpenFlags& open,
                                Cell from, Cell target);

// Cell of a navigation entity, or nullopt if the entity does not exist.
std::optional<Cell> entity_cell(const WorldState& state, int entity);

bool check_preconditions(const WorldState& state, int agent, ActionId action);

// Applies a manipulation's effect (pick/place/open) if its preconditions still
// hold. Returns the newly fired events; empty if the macro aborted or the
// event already fired this episode.
std::vector<SubgoalEvent> apply_postconditions(WorldState& state, int agent,
                                               ActionId action);

// robot_at(agent, entity) x 20, is_holding(agent) x 2,
// object_at(object, receptacle-or-goal) x 16.
inline constexpr int kOracleSize =
    kNumAgents * kNumEntities + kNumAgents + kNumObjects * (kMaxReceptacles + 2);
Eigen::VectorXd oracle_state(const WorldState& state);

// Ticks for a single agent to finish the whole task alone from `from`.
std::optional<int> solo_plan_ticks(const WorldState& state, Cell from);

class Environment {
 public:
  // Throws GenerationError after 100 failed layout attempts.
  static Environment create(Task task, std::uint64_t layout_seed,
                            const WorldConfig& config);

  Task task() const { return task_; }
  std::uint64_t layout_seed() const { return layout_seed_; }
  const WorldConfig& config() const { return config_; }
  const GridLayout& layout() const { return *initial_.layout; }
  int observation_size() const;

  std::pair<WorldState, std::array<Observation, kNumAgents>> reset(
      std::uint64_t episode_seed) const;

  // Throws std::logic_error on a finished episode.
  StepOutcome step_joint(WorldState& state,
                         const std::array<ActionId, kNumAgents>& actions) const;

  Observation observe(const WorldState& state, int agent) const;

 private:
  Environment() = default;

  Task task_ = Task::kTidyHouse;
  std::uint64_t layout_seed_ = 0;
  WorldConfig config_;
  WorldState initial_;  // objects and receptacles; agents unset
};

std::string render_ascii(const WorldState& state);

// One line per tick:
//   <tick> <x0> <y0> <x1> <y1> <action0> <action1> <reward> <events>
// preceded by a '#' header carrying the task and seeds. Events are
// comma-separated <name>@<agent>, or '-'.
class ReplayWriter {
 public:
  ReplayWriter(std::ostream& out, const Environment& env,
               std::uint64_t episode_seed);
  void write(const WorldState& after, const StepOutcome& outcome);

 private:
  std::ostream& out_;
};

}  // namespace zsc

#endif  // ZSC_WORLD_HPP_

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

#include "zsc/world.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <ostream>
#include <sstream>

#include "zsc/random.hpp"

namespace zsc {
namespace {

constexpr double kSuccessReward = 10.0;
constexpr double kSubgoalReward = 0.5;
constexpr double kTickPenalty = 0.01;
constexpr int kMinSpawnDistance = 3;
constexpr int kMaxGenerationAttempts = 100;

constexpr std::array<Cell, 4> kDirs = {Cell{0, -1}, Cell{1, 0}, Cell{0, 1},
                                       Cell{-1, 0}};

Cell add(Cell a, Cell b) { return {a.x + b.x, a.y + b.y}; }

std::size_t index_of(const GridLayout& layout, Cell c) {
  return static_cast<std::size_t>(c.y * layout.width + c.x);
}

Heading heading_of_move(Cell from, Cell to) {
  if (to.y < from.y) return Heading::kNorth;
  if (to.x > from.x) return Heading::kEast;
  if (to.y > from.y) return Heading::kSouth;
  return Heading::kWest;
}

// Floor cells: neither wall nor receptacle.
bool floor_cell(const GridLayout& layout, Cell c) {
  return !layout.wall(c) && layout.receptacle_at(c) < 0;
}

std::vector<Cell> floor_cells(const GridLayout& layout) {
  std::vector<Cell> out;
  for (int y = 0; y < layout.height; ++y)
    for (int x = 0; x < layout.width; ++x)
      if (floor_cell(layout, {x, y})) out.push_back({x, y});
  return out;
}

bool floor_connected(const GridLayout& layout) {
  const auto cells = floor_cells(layout);
  if (cells.empty()) return false;
  std::vector<std::uint8_t> seen(layout.walls.size(), 0);
  std::deque<Cell> queue{cells.front()};
  seen[index_of(layout, cells.front())] = 1;
  std::size_t count = 1;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (const Cell d : kDirs) {
      const Cell n = add(c, d);
      if (!floor_cell(layout, n) || seen[index_of(layout, n)]) continue;
      seen[index_of(layout, n)] = 1;
      ++count;
      queue.push_back(n);
    }
  }
  return count == cells.size();
}

bool has_floor_neighbour(const GridLayout& layout, Cell c) {
  return std::any_of(kDirs.begin(), kDirs.end(),
                     [&](Cell d) { return floor_cell(layout, add(c, d)); });
}

void add_wall_segments(GridLayout& layout, int segments, Rng& rng) {
  for (int s = 0; s < segments; ++s) {
    const bool horizontal = uniform01(rng) < 0.5;
    const int length = uniform_int(rng, 2, 3);
    const Cell start{uniform_int(rng, 2, layout.width - 3),
                     uniform_int(rng, 2, layout.height - 3)};
    std::vector<Cell> placed;
    for (int k = 0; k < length; ++k) {
      const Cell c = horizontal ? Cell{start.x + k, start.y}
                                : Cell{start.x, start.y + k};
      if (c.x >= layout.width - 1 || c.y >= layout.height - 1) break;
      if (layout.wall(c)) continue;
      layout.walls[index_of(layout, c)] = 1;
      placed.push_back(c);
    }
    if (!floor_connected(layout))
      for (const Cell c : placed) layout.walls[index_of(layout, c)] = 0;
  }
}

// Picks a uniformly random floor cell satisfying `accept`.
template <typename Pred>
std::optional<Cell> random_floor(const GridLayout& layout, Rng& rng,
                                 Pred accept) {
  std::vector<Cell> candidates;
  for (const Cell c : floor_cells(layout))
    if (accept(c)) candidates.push_back(c);
  if (candidates.empty()) return std::nullopt;
  return candidates[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
}

bool add_receptacle(GridLayout& layout, std::optional<Cell> cell,
                    bool openable, bool open, std::string name) {
  if (!cell) return false;
  Receptacle r;
  r.id = static_cast<int>(layout.receptacles.size());
  r.cell = *cell;
  r.openable = openable;
  r.open = openable ? open : true;
  r.name = std::move(name);
  layout.receptacles.push_back(r);
  return true;
}

ObjectLocation on_receptacle(int id) {
  return {ObjectLocation::Kind::kOnReceptacle, id, {}};
}

Goal goal_receptacle(const GridLayout& layout, int id) {
  return {id, layout.receptacles[static_cast<std::size_t>(id)].cell};
}

// One generation attempt; nullopt if this seed produced an invalid layout.
std::optional<WorldState> generate(Task task, const WorldConfig& config,
                                   Rng& rng) {
  auto layout = std::make_shared<GridLayout>();
  layout->width = config.width;
  layout->height = config.height;
  layout->walls.assign(static_cast<std::size_t>(config.width * config.height),
                       0);
  for (int y = 0; y < config.height; ++y)
    for (int x = 0; x < config.width; ++x)
      if (x == 0 || y == 0 || x == config.width - 1 || y == config.height - 1)
        layout->walls[index_of(*layout, {x, y})] = 1;
  const int segments = config.wall_segments >= 0
                           ? config.wall_segments
                           : std::max(0, (std::min(config.width, config.height) - 5) / 2);
  add_wall_segments(*layout, segments, rng);

  const auto any = [](Cell) { return true; };
  WorldState state;
  std::array<Goal, 2> goals{};
  std::array<ObjectLocation, 2> starts{};
  std::vector<Cell> goal_cells;

  switch (task) {
    case Task::kSetTable: {
      // Drawer and fridge side by side, both closed; two-cell table region.
      if (!add_receptacle(*layout, random_floor(*layout, rng, any), true, false,
                          "drawer"))
        return std::nullopt;
      const Cell drawer = layout->receptacles[0].cell;
      if (!add_receptacle(*layout,
                          random_floor(*layout, rng,
                                       [&](Cell c) { return manhattan(c, drawer) == 1; }),
                          true, false, "fridge"))
        return std::nullopt;
      for (const char* name : {"counter", "sofa"})
        if (!add_receptacle(*layout, random_floor(*layout, rng, any), false,
                            true, name))
          return std::nullopt;
      const auto table = random_floor(*layout, rng, [&](Cell c) {
        return chebyshev(c, drawer) > 1 &&
               floor_cell(*layout, {c.x + 1, c.y});
      });
      if (!table) return std::nullopt;
      goal_cells = {*table, Cell{table->x + 1, table->y}};
      starts = {on_receptacle(0), on_receptacle(1)};
      goals = {Goal{-1, goal_cells[0]}, Goal{-1, goal_cells[1]}};
      break;
    }
    case Task::kTidyHouse: {
      for (int r = 0; r < kMaxReceptacles; ++r)
        if (!add_receptacle(*layout, random_floor(*layout, rng, any), false,
                            true, "shelf" + std::to_string(r)))
          return std::nullopt;
      std::array<int, kMaxReceptacles> order{};
      for (int r = 0; r < kMaxReceptacles; ++r) order[static_cast<std::size_t>(r)] = r;
      std::shuffle(order.begin(), order.end(), rng);
      starts = {on_receptacle(order[0]), on_receptacle(order[1])};
      goals = {goal_receptacle(*layout, order[2]),
               goal_receptacle(*layout, order[3])};
      break;
    }
    case Task::kPrepareGroceries: {
      if (!add_receptacle(*layout, random_floor(*layout, rng, any), true, true,
                          "fridge"))
        return std::nullopt;
      const Cell fridge = layout->receptacles[0].cell;
      if (!add_receptacle(*layout,
                          random_floor(*layout, rng,
                                       [&](Cell c) { return chebyshev(c, fridge) == 2; }),
                          false, true, "counter"))
        return std::nullopt;
      for (const char* name : {"kitchen_table", "sofa"})
        if (!add_receptacle(*layout, random_floor(*layout, rng, any), false,
                            true, name))
          return std::nullopt;
      starts = {on_receptacle(0), on_receptacle(2)};
      goals = {goal_receptacle(*layout, 1), goal_receptacle(*layout, 0)};
      break;
    }
  }

  if (!floor_connected(*layout)) return std::nullopt;
  for (const auto& r : layout->receptacles)
    if (!has_floor_neighbour(*layout, r.cell)) return std::nullopt;
  for (const Cell g : goal_cells)
    if (!has_floor_neighbour(*layout, g)) return std::nullopt;

  for (const Cell c : floor_cells(*layout))
    if (std::find(goal_cells.begin(), goal_cells.end(), c) == goal_cells.end())
      layout->spawn_region.push_back(c);

  state.layout = layout;
  state.horizon = config.horizon;
  state.open.fill(false);
  for (const auto& r : layout->receptacles)
    state.open[static_cast<std::size_t>(r.id)] = r.open;
  for (int i = 0; i < kNumObjects; ++i) {
    auto& obj = state.objects[static_cast<std::size_t>(i)];
    obj.id = i;
    obj.start = starts[static_cast<std::size_t>(i)];
    obj.location = obj.start;
    obj.goal = goals[static_cast<std::size_t>(i)];
  }

  // Every spawn cell must admit a solo solution within the horizon.
  for (const Cell c : layout->spawn_region) {
    const auto ticks = solo_plan_ticks(state, c);
    if (!ticks || *ticks > config.horizon) return std::nullopt;
  }
  return state;
}

Eigen::Vector2d rel(const GridLayout& layout, Cell from, Cell to) {
  return {static_cast<double>(to.x - from.x) / (layout.width - 1),
          static_cast<double>(to.y - from.y) / (layout.height - 1)};
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kSetTable:
      return "set_table";
    case Task::kTidyHouse:
      return "tidy_house";
    case Task::kPrepareGroceries:
      return "prepare_groceries";
  }
  return "unknown";
}

std::optional<Task> parse_task(std::string_view name) {
  for (Task t : {Task::kSetTable, Task::kTidyHouse, Task::kPrepareGroceries})
    if (task_name(t) == name) return t;
  return std::nullopt;
}

Cell step_towards(Cell c, Heading h) {
  return add(c, kDirs[static_cast<std::size_t>(h)]);
}

int GridLayout::receptacle_at(Cell c) const {
  for (const auto& r : receptacles)
    if (r.cell == c) return r.id;
  return -1;
}

bool blocked(const GridLayout& layout, const OpenFlags& open, Cell c) {
  if (layout.wall(c)) return true;
  const int r = layout.receptacle_at(c);
  return r >= 0 && !open[static_cast<std::size_t>(r)];
}

ActionKind ActionId::kind() const {
  if (value < kNumEntities) return ActionKind::kNavigate;
  switch ((value - kNumEntities) / 2) {
    case 0:
      return ActionKind::kPick;
    case 1:
      return ActionKind::kPlace;
    case 2:
      return ActionKind::kOpen;
    default:
      break;
  }
  switch (value - kNumEntities - 6) {
    case 0:
      return ActionKind::kNoOp;
    case 1:
      return ActionKind::kMoveForward;
    case 2:
      return ActionKind::kTurnLeft;
    default:
      return ActionKind::kTurnRight;
  }
}

int ActionId::arg() const {
  if (value < kNumEntities) return value;
  if (value < kNumEntities + 6) return (value - kNumEntities) % 2;
  return 0;
}

std::string action_name(ActionId action) {
  static const std::array<const char*, kNumEntities> kEntities = {
      "obj0", "obj1", "goal0", "goal1", "R0", "R1", "R2", "R3", "R4", "R5"};
  const int a = action.arg();
  switch (action.kind()) {
    case ActionKind::kNavigate:
      return std::string("nav(") + kEntities[static_cast<std::size_t>(a)] + ")";
    case ActionKind::kPick:
      return "pick(O" + std::to_string(a) + ")";
    case ActionKind::kPlace:
      return "place(g" + std::to_string(a) + ")";
    case ActionKind::kOpen:
      return "open(R" + std::to_string(a) + ")";
    case ActionKind::kNoOp:
      return "noop";
    case ActionKind::kMoveForward:
      return "forward";
    case ActionKind::kTurnLeft:
      return "left";
    case ActionKind::kTurnRight:
      return "right";
  }
  return "?";
}

std::string event_name(int event_id) {
  static const std::array<const char*, kNumEventIds> kNames = {
      "picked0", "picked1", "placed0", "placed1", "opened0", "opened1"};
  return kNames.at(static_cast<std::size_t>(event_id));
}

Cell WorldState::object_cell(int object) const {
  const auto& loc = objects[static_cast<std::size_t>(object)].location;
  switch (loc.kind) {
    case ObjectLocation::Kind::kOnReceptacle:
      return layout->receptacles[static_cast<std::size_t>(loc.index)].cell;
    case ObjectLocation::Kind::kHeldBy:
      return agents[static_cast<std::size_t>(loc.index)].pos;
    case ObjectLocation::Kind::kAtCell:
      return loc.cell;
  }
  return {};
}

bool WorldState::object_at_goal(int object) const {
  const auto& obj = objects[static_cast<std::size_t>(object)];
  if (obj.goal.receptacle >= 0)
    return obj.location.kind == ObjectLocation::Kind::kOnReceptacle &&
           obj.location.index == obj.goal.receptacle;
  return obj.location.kind == ObjectLocation::Kind::kAtCell &&
         obj.location.cell == obj.goal.cell;
}

std::optional<std::vector<Cell>> find_path(const GridLayout& layout,
                                           const OpenFlags& open, Cell from,
                                           Cell target) {
  const auto done = [&](Cell c) { return manhattan(c, target) <= 1; };
  if (done(from)) return std::vector<Cell>{};
  const std::size_t n = layout.walls.size();
  std::vector<int> parent(n, -2);
  std::deque<Cell> queue{from};
  parent[index_of(layout, from)] = -1;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (const Cell d : kDirs) {
      const Cell next = add(c, d);
      if (blocked(layout, open, next)) continue;
      const std::size_t ni = index_of(layout, next);
      if (parent[ni] != -2) continue;
      parent[ni] = static_cast<int>(index_of(layout, c));
      if (done(next)) {
        std::vector<Cell> path;
        for (int at = static_cast<int>(ni); at != static_cast<int>(index_of(layout, from));
             at = parent[static_cast<std::size_t>(at)])
          path.push_back({at % layout.width, at / layout.width});
        std::reverse(path.begin(), path.end());
        return path;
      }
      queue.push_back(next);
    }
  }
  return std::nullopt;
}

std::vector<Cell> shortest_path(const GridLayout& layout, const OpenFlags& open,
                                Cell from, Cell target) {
  auto path = find_path(layout, open, from, target);
  if (!path)
    throw NoPathError("no path from (" + std::to_string(from.x) + "," +
                      std::to_string(from.y) + ") to (" +
                      std::to_string(target.x) + "," +
                      std::to_string(target.y) + ")");
  return *std::move(path);
}

std::optional<Cell> entity_cell(const WorldState& state, int entity) {
  if (entity < 0 || entity >= kNumEntities) return std::nullopt;
  if (entity < 2) {
    const auto& start = state.objects[static_cast<std::size_t>(entity)].start;
    if (start.kind == ObjectLocation::Kind::kOnReceptacle)
      return state.layout->receptacles[static_cast<std::size_t>(start.index)].cell;
    return start.cell;
  }
  if (entity < 4) return state.objects[static_cast<std::size_t>(entity - 2)].goal.cell;
  const int r = entity - 4;
  if (r >= static_cast<int>(state.layout->receptacles.size())) return std::nullopt;
  return state.layout->receptacles[static_cast<std::size_t>(r)].cell;
}

bool check_preconditions(const WorldState& state, int agent, ActionId action) {
  const auto& me = state.agents[static_cast<std::size_t>(agent)];
  const int a = action.arg();
  switch (action.kind()) {
    case ActionKind::kNavigate: {
      const auto cell = entity_cell(state, a);
      return cell && find_path(*state.layout, state.open, me.pos, *cell);
    }
    case ActionKind::kPick: {
      const auto& obj = state.objects[static_cast<std::size_t>(a)];
      if (me.holding >= 0) return false;
      if (obj.location.kind == ObjectLocation::Kind::kHeldBy) return false;
      if (obj.location.kind == ObjectLocation::Kind::kOnReceptacle &&
          !state.open[static_cast<std::size_t>(obj.location.index)])
        return false;
      return chebyshev(me.pos, state.object_cell(a)) <= 1;
    }
    case ActionKind::kPlace: {
      const auto& goal = state.objects[static_cast<std::size_t>(a)].goal;
      if (me.holding != a) return false;
      if (goal.receptacle >= 0 && !state.open[static_cast<std::size_t>(goal.receptacle)])
        return false;
      return chebyshev(me.pos, goal.cell) <= 1;
    }
    case ActionKind::kOpen: {
      if (a >= static_cast<int>(state.layout->receptacles.size())) return false;
      const auto& r = state.layout->receptacles[static_cast<std::size_t>(a)];
      return r.openable && !state.open[static_cast<std::size_t>(a)] &&
             chebyshev(me.pos, r.cell) <= 1;
    }
    case ActionKind::kMoveForward: {
      const Cell target = step_towards(me.pos, me.heading);
      const auto& partner = state.agents[static_cast<std::size_t>(1 - agent)];
      return !blocked(*state.layout, state.open, target) && !(target == partner.pos);
    }
    case ActionKind::kNoOp:
    case ActionKind::kTurnLeft:
    case ActionKind::kTurnRight:
      return true;
  }
  return false;
}

std::vector<SubgoalEvent> apply_postconditions(WorldState& state, int agent,
                                               ActionId action) {
  std::vector<SubgoalEvent> events;
  if (!check_preconditions(state, agent, action)) return events;
  auto& me = state.agents[static_cast<std::size_t>(agent)];
  const int a = action.arg();
  SubgoalEvent event;
  event.agent = agent;
  event.index = a;
  switch (action.kind()) {
    case ActionKind::kPick:
      state.objects[static_cast<std::size_t>(a)].location = {
          ObjectLocation::Kind::kHeldBy, agent, {}};
      me.holding = a;
      event.kind = SubgoalEvent::Kind::kPickedObject;
      break;
    case ActionKind::kPlace: {
      auto& obj = state.objects[static_cast<std::size_t>(a)];
      obj.location = obj.goal.receptacle >= 0
                         ? on_receptacle(obj.goal.receptacle)
                         : ObjectLocation{ObjectLocation::Kind::kAtCell, -1, obj.goal.cell};
      me.holding = -1;
      event.kind = SubgoalEvent::Kind::kPlacedObject;
      break;
    }
    case ActionKind::kOpen:
      state.open[static_cast<std::size_t>(a)] = true;
      event.kind = SubgoalEvent::Kind::kOpenedReceptacle;
      break;
    default:
      return events;
  }
  auto& fired = state.fired[static_cast<std::size_t>(event.id())];
  if (!fired) {
    fired = true;
    events.push_back(event);
  }
  return events;
}

Eigen::VectorXd oracle_state(const WorldState& state) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kOracleSize);
  int k = 0;
  for (int i = 0; i < kNumAgents; ++i)
    for (int e = 0; e < kNumEntities; ++e, ++k) {
      const auto cell = entity_cell(state, e);
      if (cell && chebyshev(state.agents[static_cast<std::size_t>(i)].pos, *cell) <= 1)
        v[k] = 1.0;
    }
  for (int i = 0; i < kNumAgents; ++i, ++k)
    v[k] = state.agents[static_cast<std::size_t>(i)].holding >= 0 ? 1.0 : 0.0;
  for (int o = 0; o < kNumObjects; ++o) {
    const auto& loc = state.objects[static_cast<std::size_t>(o)].location;
    for (int r = 0; r < kMaxReceptacles; ++r, ++k)
      if (loc.kind == ObjectLocation::Kind::kOnReceptacle && loc.index == r) v[k] = 1.0;
    for (int g = 0; g < kNumObjects; ++g, ++k) {
      const auto& goal = state.objects[static_cast<std::size_t>(g)].goal;
      const bool at = goal.receptacle >= 0
                          ? loc.kind == ObjectLocation::Kind::kOnReceptacle &&
                                loc.index == goal.receptacle
                          : loc.kind == ObjectLocation::Kind::kAtCell &&
                                loc.cell == goal.cell;
      if (at) v[k] = 1.0;
    }
  }
  return v;
}

std::optional<int> solo_plan_ticks(const WorldState& state, Cell from) {
  OpenFlags open = state.open;
  Cell pos = from;
  int ticks = 0;
  const auto navigate = [&](Cell target) {
    auto path = find_path(*state.layout, open, pos, target);
    if (!path) return false;
    ticks += std::max<int>(1, static_cast<int>(path->size()));
    if (!path->empty()) pos = path->back();
    return true;
  };
  for (int o = 0; o < kNumObjects; ++o) {
    const auto& obj = state.objects[static_cast<std::size_t>(o)];
    if (obj.start.kind == ObjectLocation::Kind::kOnReceptacle &&
        !open[static_cast<std::size_t>(obj.start.index)]) {
      if (!navigate(state.layout->receptacles[static_cast<std::size_t>(obj.start.index)].cell))
        return std::nullopt;
      open[static_cast<std::size_t>(obj.start.index)] = true;
      ticks += 1;
    }
    if (!navigate(*entity_cell(state, o))) return std::nullopt;
    ticks += 1;
    if (!navigate(obj.goal.cell)) return std::nullopt;
    ticks += 1;
  }
  return ticks;
}

Environment Environment::create(Task task, std::uint64_t layout_seed,
                                const WorldConfig& config) {
  if (config.width < 7 || config.height < 7)
    throw std::invalid_argument("grid must be at least 7x7");
  if (config.horizon < 20) throw std::invalid_argument("horizon must be >= 20");
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    Rng rng(mix_seed(mix_seed(layout_seed, static_cast<std::uint64_t>(task)),
                     static_cast<std::uint64_t>(attempt)));
    if (auto state = generate(task, config, rng)) {
      Environment env;
      env.task_ = task;
      env.layout_seed_ = layout_seed;
      env.config_ = config;
      env.initial_ = *std::move(state);
      return env;
    }
  }
  throw GenerationError("layout generation failed for " +
                        std::string(task_name(task)) + " seed " +
                        std::to_string(layout_seed) + " after " +
                        std::to_string(kMaxGenerationAttempts) + " attempts");
}

int Environment::observation_size() const {
  int n = 2 + 4 + 3 + 4 + 4 + 2 + 2;
  if (config_.local_patch) n += 25;
  if (config_.oracle_predicates) n += kOracleSize;
  return n;
}

std::pair<WorldState, std::array<Observation, kNumAgents>> Environment::reset(
    std::uint64_t episode_seed) const {
  WorldState state = initial_;
  Rng rng(mix_seed(episode_seed, layout_seed_));
  const auto& region = state.layout->spawn_region;
  const int last = static_cast<int>(region.size()) - 1;
  Cell a{}, b{};
  do {
    a = region[static_cast<std::size_t>(uniform_int(rng, 0, last))];
    b = region[static_cast<std::size_t>(uniform_int(rng, 0, last))];
  } while (manhattan(a, b) < kMinSpawnDistance);
  state.agents[0].pos = a;
  state.agents[1].pos = b;
  for (auto& agent : state.agents)
    agent.heading = static_cast<Heading>(uniform_int(rng, 0, 3));
  return {state, {observe(state, 0), observe(state, 1)}};
}

Observation Environment::observe(const WorldState& state, int agent) const {
  const auto& layout = *state.layout;
  const auto& me = state.agents[static_cast<std::size_t>(agent)];
  const auto& partner = state.agents[static_cast<std::size_t>(1 - agent)];
  Observation obs = Observation::Zero(observation_size());
  int k = 0;
  obs[k++] = 2.0 * me.pos.x / (layout.width - 1) - 1.0;
  obs[k++] = 2.0 * me.pos.y / (layout.height - 1) - 1.0;
  obs[k + static_cast<int>(me.heading)] = 1.0;
  k += 4;
  obs[k + me.holding + 1] = 1.0;
  k += 3;
  for (int o = 0; o < kNumObjects; ++o, k += 2)
    obs.segment<2>(k) = rel(layout, me.pos, state.object_cell(o));
  for (int o = 0; o < kNumObjects; ++o, k += 2)
    obs.segment<2>(k) = rel(layout, me.pos, state.objects[static_cast<std::size_t>(o)].goal.cell);
  obs.segment<2>(k) = rel(layout, me.pos, partner.pos);
  k += 2;
  for (int r = 0; r < 2; ++r, ++k)
    obs[k] = r < static_cast<int>(layout.receptacles.size()) &&
                     state.open[static_cast<std::size_t>(r)]
                 ? 1.0
                 : 0.0;
  if (config_.local_patch) {
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx, ++k) {
        const Cell c{me.pos.x + dx, me.pos.y + dy};
        if (blocked(layout, state.open, c))
          obs[k] = 1.0;
        else if (c == partner.pos)
          obs[k] = -1.0;
      }
  }
  if (config_.oracle_predicates) obs.segment(k, kOracleSize) = oracle_state(state);
  return obs;
}

StepOutcome Environment::step_joint(
    WorldState& state, const std::array<ActionId, kNumAgents>& actions) const {
  if (state.done) throw std::logic_error("step on a finished episode");
  const auto& layout = *state.layout;

  // Newly selected macros; infeasible ones degrade to a one-tick no-op.
  for (int i = 0; i < kNumAgents; ++i) {
    auto& agent = state.agents[static_cast<std::size_t>(i)];
    if (agent.active_macro) continue;
    const ActionId chosen = actions[static_cast<std::size_t>(i)];
    MacroProgress macro;
    macro.action = chosen;
    if (chosen.value < 0 || chosen.value >= kNumActions) {
      macro.action = ActionId::noop();
    } else if (chosen.kind() == ActionKind::kNavigate) {
      const auto cell = entity_cell(state, chosen.arg());
      auto path = cell ? find_path(layout, state.open, agent.pos, *cell) : std::nullopt;
      if (path)
        macro.path = *std::move(path);
      else
        macro.action = ActionId::noop();
    } else if (chosen.kind() != ActionKind::kMoveForward &&
               !check_preconditions(state, i, chosen)) {
      macro.action = ActionId::noop();
    }
    agent.active_macro = std::move(macro);
  }

  StepOutcome out;
  std::array<Cell, kNumAgents> old_pos{state.agents[0].pos, state.agents[1].pos};
  std::array<Cell, kNumAgents> new_pos = old_pos;
  std::array<bool, kNumAgents> manipulates{};
  std::array<bool, kNumAgents> feasible{};
  for (int i = 0; i < kNumAgents; ++i) {
    auto& agent = state.agents[static_cast<std::size_t>(i)];
    auto& macro = *agent.active_macro;
    bool completes = true;
    ActionId executed = macro.action;
    switch (macro.action.kind()) {
      case ActionKind::kNavigate:
        if (macro.next < macro.path.size()) {
          new_pos[static_cast<std::size_t>(i)] = macro.path[macro.next++];
          completes = macro.next == macro.path.size();
        }
        break;
      case ActionKind::kPick:
      case ActionKind::kPlace:
      case ActionKind::kOpen:
        manipulates[static_cast<std::size_t>(i)] = true;
        feasible[static_cast<std::size_t>(i)] = check_preconditions(state, i, macro.action);
        break;
      case ActionKind::kMoveForward:
        if (check_preconditions(state, i, macro.action))
          new_pos[static_cast<std::size_t>(i)] = step_towards(agent.pos, agent.heading);
        else
          executed = ActionId::noop();
        break;
      case ActionKind::kTurnLeft:
        agent.heading = static_cast<Heading>((static_cast<int>(agent.heading) + 3) % 4);
        break;
      case ActionKind::kTurnRight:
        agent.heading = static_cast<Heading>((static_cast<int>(agent.heading) + 1) % 4);
        break;
      case ActionKind::kNoOp:
        break;
    }
    out.executed[static_cast<std::size_t>(i)] = executed;
    out.decision_flags[static_cast<std::size_t>(i)] = completes;
  }

  // Both agents reaching for the same object in the same tick: neither gets it.
  if (manipulates[0] && manipulates[1] && feasible[0] && feasible[1]) {
    const ActionId a0 = state.agents[0].active_macro->action;
    const ActionId a1 = state.agents[1].active_macro->action;
    if (a0.kind() == ActionKind::kPick && a0 == a1) feasible = {false, false};
  }
  for (int i = 0; i < kNumAgents; ++i) {
    if (!manipulates[static_cast<std::size_t>(i)]) continue;
    const ActionId action = state.agents[static_cast<std::size_t>(i)].active_macro->action;
    if (!feasible[static_cast<std::size_t>(i)]) {
      out.executed[static_cast<std::size_t>(i)] = ActionId::noop();
      continue;
    }
    // A second opener in the same tick finds the receptacle open and aborts.
    auto events = apply_postconditions(state, i, action);
    if (events.empty() && action.kind() == ActionKind::kOpen)
      out.executed[static_cast<std::size_t>(i)] = ActionId::noop();
    out.events.insert(out.events.end(), events.begin(), events.end());
  }

  for (int i = 0; i < kNumAgents; ++i) {
    auto& agent = state.agents[static_cast<std::size_t>(i)];
    const Cell to = new_pos[static_cast<std::size_t>(i)];
    if (!(to == agent.pos)) agent.heading = heading_of_move(agent.pos, to);
    agent.pos = to;
    if (out.decision_flags[static_cast<std::size_t>(i)]) agent.active_macro.reset();
  }

  const bool collided = new_pos[0] == new_pos[1] ||
                        (new_pos[0] == old_pos[1] && new_pos[1] == old_pos[0]);
  state.tick += 1;
  state.collision = collided;
  state.success = !collided && state.object_at_goal(0) && state.object_at_goal(1);
  state.done = collided || state.success || state.tick >= state.horizon;

  out.reward = (state.success ? kSuccessReward : 0.0) +
               kSubgoalReward * static_cast<double>(out.events.size()) - kTickPenalty;
  out.done = state.done;
  out.success = state.success;
  out.collision = collided;
  out.obs = {observe(state, 0), observe(state, 1)};
  return out;
}

std::string render_ascii(const WorldState& state) {
  const auto& layout = *state.layout;
  std::vector<std::string> rows(static_cast<std::size_t>(layout.height),
                                std::string(static_cast<std::size_t>(layout.width), '.'));
  const auto put = [&](Cell c, char ch) {
    rows[static_cast<std::size_t>(c.y)][static_cast<std::size_t>(c.x)] = ch;
  };
  for (int y = 0; y < layout.height; ++y)
    for (int x = 0; x < layout.width; ++x)
      if (layout.wall({x, y})) put({x, y}, '#');
  for (const auto& r : layout.receptacles)
    put(r.cell, state.open[static_cast<std::size_t>(r.id)] ? 'r' : 'R');
  for (int o = 0; o < kNumObjects; ++o) {
    put(state.objects[static_cast<std::size_t>(o)].goal.cell, static_cast<char>('x' + o));
    if (state.objects[static_cast<std::size_t>(o)].location.kind !=
        ObjectLocation::Kind::kHeldBy)
      put(state.object_cell(o), static_cast<char>('a' + o));
  }
  for (int i = 0; i < kNumAgents; ++i) {
    const auto& agent = state.agents[static_cast<std::size_t>(i)];
    put(agent.pos, static_cast<char>(agent.holding >= 0 ? 'A' + i : '0' + i));
  }
  std::ostringstream out;
  out << "tick " << state.tick << (state.done ? (state.success ? " success" : " failed") : "")
      << '\n';
  for (const auto& row : rows) out << row << '\n';
  return out.str();
}

ReplayWriter::ReplayWriter(std::ostream& out, const Environment& env,
                           std::uint64_t episode_seed)
    : out_(out) {
  const auto& c = env.config();
  out_ << "# zsc-replay v1 task=" << task_name(env.task())
       << " layout_seed=" << env.layout_seed() << " episode_seed=" << episode_seed
       << " width=" << c.width << " height=" << c.height << " horizon=" << c.horizon
       << " wall_segments=" << c.wall_segments << '\n';
}

void ReplayWriter::write(const WorldState& after, const StepOutcome& outcome) {
  out_ << after.tick << ' ' << after.agents[0].pos.x << ' ' << after.agents[0].pos.y
       << ' ' << after.agents[1].pos.x << ' ' << after.agents[1].pos.y << ' '
       << outcome.executed[0].value << ' ' << outcome.executed[1].value << ' ';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", outcome.reward);
  out_ << buf << ' ';
  if (outcome.events.empty()) {
    out_ << '-';
  } else {
    for (std::size_t k = 0; k < outcome.events.size(); ++k)
      out_ << (k ? "," : "") << event_name(outcome.events[k].id()) << '@'
           << outcome.events[k].agent;
  }
  out_ << '\n';
}

}  // namespace zsc

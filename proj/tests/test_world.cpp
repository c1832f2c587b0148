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

#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

#include "zsc/evalkit.hpp"
#include "zsc/world.hpp"

using namespace zsc;

namespace {

Environment make_env(Task task = Task::kTidyHouse, std::uint64_t seed = 3, int size = 7) {
  WorldConfig cfg;
  cfg.width = size;
  cfg.height = size;
  return Environment::create(task, seed, cfg);
}

// Two free, 4-adjacent cells with `b` east of `a`, followed by `run - 2`
// more free cells to the east.
std::pair<Cell, Cell> free_pair(const WorldState& s, int run = 2) {
  const auto& l = *s.layout;
  for (int y = 0; y < l.height; ++y)
    for (int x = 0; x + run <= l.width; ++x) {
      bool free = true;
      for (int k = 0; k < run; ++k) free = free && !blocked(l, s.open, Cell{x + k, y});
      if (free) return {Cell{x, y}, Cell{x + 1, y}};
    }
  FAIL("no adjacent free cells");
  return {};
}

}  // namespace

TEST_CASE("episode return follows the success, event and time terms") {
  for (Task task : {Task::kSetTable, Task::kTidyHouse, Task::kPrepareGroceries}) {
    Rng rng(11);
    for (int ep = 0; ep < 50; ++ep) {
      const auto env = make_env(task, 100 + static_cast<std::uint64_t>(ep));
      auto [state, obs] = env.reset(static_cast<std::uint64_t>(ep));
      double total = 0.0;
      int events = 0;
      while (!state.done) {
        const auto out = env.step_joint(
            state, {ActionId{uniform_int(rng, 0, kNumActions - 1)},
                    ActionId{uniform_int(rng, 0, kNumActions - 1)}});
        total += out.reward;
        events += static_cast<int>(out.events.size());
      }
      const double expected = 10.0 * (state.success ? 1 : 0) + 0.5 * events - 0.01 * state.tick;
      CHECK(total == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("terminal states are consistent") {
  Rng rng(5);
  for (int ep = 0; ep < 40; ++ep) {
    const auto env = make_env(Task::kTidyHouse, 7 + static_cast<std::uint64_t>(ep));
    auto [state, obs] = env.reset(1);
    StepOutcome out;
    while (!state.done)
      out = env.step_joint(state, {ActionId{uniform_int(rng, 0, kNumActions - 1)},
                                   ActionId{uniform_int(rng, 0, kNumActions - 1)}});
    CHECK(state.tick <= state.horizon);
    CHECK((state.success || state.collision || state.tick == state.horizon));
    if (state.success) CHECK((state.object_at_goal(0) && state.object_at_goal(1)));
    CHECK_FALSE((state.success && state.collision));
    CHECK_THROWS_AS(env.step_joint(state, {ActionId::noop(), ActionId::noop()}), std::logic_error);
  }
}

TEST_CASE("layouts and resets are reproducible from their seeds") {
  const auto a = make_env(Task::kTidyHouse, 42);
  const auto b = make_env(Task::kTidyHouse, 42);
  CHECK(a.layout().walls == b.layout().walls);
  auto [sa, oa] = a.reset(9);
  auto [sb, ob] = b.reset(9);
  CHECK(sa.agents[0].pos == sb.agents[0].pos);
  CHECK(sa.agents[1].pos == sb.agents[1].pos);
  CHECK(oa[0] == ob[0]);
  CHECK(manhattan(sa.agents[0].pos, sa.agents[1].pos) >= 3);
}

TEST_CASE("observation size depends on the enabled blocks") {
  WorldConfig cfg;
  cfg.width = cfg.height = 7;
  CHECK(Environment::create(Task::kTidyHouse, 1, cfg).observation_size() == 21);
  cfg.local_patch = true;
  CHECK(Environment::create(Task::kTidyHouse, 1, cfg).observation_size() == 46);
  cfg.oracle_predicates = true;
  const auto env = Environment::create(Task::kTidyHouse, 1, cfg);
  CHECK(env.observation_size() == 46 + kOracleSize);
  auto [state, obs] = env.reset(0);
  CHECK(obs[0].size() == env.observation_size());
  CHECK(oracle_state(state).size() == kOracleSize);
}

TEST_CASE("agents stepping onto the same cell collide") {
  const auto env = make_env();
  auto [state, obs] = env.reset(0);
  const auto [a, b] = free_pair(state, 3);
  state.agents[0].pos = a;
  state.agents[0].heading = Heading::kEast;
  state.agents[1].pos = Cell{b.x + 1, b.y};
  state.agents[1].heading = Heading::kWest;
  const auto out = env.step_joint(state, {ActionId::move_forward(), ActionId::move_forward()});
  CHECK(out.done);
  CHECK(out.collision);
  CHECK_FALSE(out.success);
  CHECK(out.reward == doctest::Approx(-0.01));
}

TEST_CASE("moving forward into a standing partner is a no-op") {
  const auto env = make_env();
  auto [state, obs] = env.reset(0);
  const auto [a, b] = free_pair(state);
  state.agents[0].pos = a;
  state.agents[0].heading = Heading::kEast;
  state.agents[1].pos = b;
  const auto out = env.step_joint(state, {ActionId::move_forward(), ActionId::noop()});
  CHECK_FALSE(out.collision);
  CHECK(out.executed[0] == ActionId::noop());
  CHECK(state.agents[0].pos == a);
}

TEST_CASE("navigating through each other collides") {
  const auto env = make_env();
  auto [state, obs] = env.reset(0);
  const auto [a, b] = free_pair(state);
  state.agents[0].pos = a;
  state.agents[1].pos = b;
  // Mid-macro routes that cross: the chosen actions below are ignored.
  state.agents[0].active_macro = MacroProgress{ActionId{0}, {b}, 0};
  state.agents[1].active_macro = MacroProgress{ActionId{1}, {a}, 0};
  const auto out = env.step_joint(state, {ActionId::noop(), ActionId::noop()});
  CHECK(out.collision);
  CHECK(state.done);
}

TEST_CASE("infeasible choices degrade to a no-op") {
  const auto env = make_env();
  auto [state, obs] = env.reset(0);
  for (std::uint64_t seed = 1; chebyshev(state.agents[1].pos, state.object_cell(1)) <= 1; ++seed)
    std::tie(state, obs) = env.reset(seed);
  const auto before = state.agents;
  // Nothing is held, so placing is impossible; picking from afar is too.
  const auto out = env.step_joint(state, {ActionId::place(0), ActionId::pick(1)});
  CHECK(out.executed[0] == ActionId::noop());
  CHECK(out.executed[1] == ActionId::noop());
  CHECK(out.events.empty());
  CHECK(state.agents[0].pos == before[0].pos);
  CHECK(state.agents[1].pos == before[1].pos);
  CHECK(out.decision_flags[0]);
  CHECK(out.decision_flags[1]);
  CHECK(out.reward == doctest::Approx(-0.01));
}

TEST_CASE("navigation moves one cell per tick and flags completion") {
  const auto env = make_env();
  auto [state, obs] = env.reset(4);
  const auto target = entity_cell(state, 0);
  REQUIRE(target);
  const auto path = find_path(*state.layout, state.open, state.agents[0].pos, *target);
  REQUIRE(path);
  if (path->empty()) return;
  int ticks = 0;
  bool done_flag = false;
  while (!done_flag && !state.done) {
    const Cell prev = state.agents[0].pos;
    const auto out = env.step_joint(state, {ActionId::navigate(0), ActionId::noop()});
    CHECK(manhattan(prev, state.agents[0].pos) <= 1);
    done_flag = out.decision_flags[0];
    ++ticks;
  }
  if (!state.done) {
    CHECK(ticks == static_cast<int>(path->size()));
    CHECK(manhattan(state.agents[0].pos, *target) <= 1);
  }
}

TEST_CASE("replay lines carry tick, positions, actions and reward") {
  const auto env = make_env();
  auto [state, obs] = env.reset(2);
  std::ostringstream log;
  ReplayWriter writer(log, env, 2);
  const auto out = env.step_joint(state, {ActionId::noop(), ActionId::noop()});
  writer.write(state, out);
  const std::string text = log.str();
  CHECK(text.rfind("# zsc-replay v1 task=tidy_house", 0) == 0);
  CHECK(text.find("\n1 ") != std::string::npos);
  CHECK(text.find(" 16 16 -0.01 -") != std::string::npos);
}

TEST_CASE("training and evaluation layout seeds never coincide") {
  std::set<std::uint64_t> train;
  for (std::uint64_t run = 0; run < 20; ++run)
    for (int i = 0; i < 64; ++i) train.insert(train_layout_seed(run, i));
  for (std::uint64_t s = 0; s < 20; ++s)
    for (int ep = 0; ep < 100; ++ep) CHECK(train.count(eval_layout_seed(s, ep)) == 0);
}

TEST_CASE("task names round trip") {
  for (Task t : {Task::kSetTable, Task::kTidyHouse, Task::kPrepareGroceries})
    CHECK(parse_task(task_name(t)) == t);
  CHECK_FALSE(parse_task("cook_dinner").has_value());
}

TEST_CASE("a single agent can finish every generated task") {
  for (Task t : {Task::kSetTable, Task::kTidyHouse, Task::kPrepareGroceries})
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto env = make_env(t, seed, 9);
      auto [state, obs] = env.reset(seed);
      CHECK(solo_plan_ticks(state, state.agents[0].pos).has_value());
    }
}

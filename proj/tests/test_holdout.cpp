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

#include <filesystem>

#include "zsc/checkpoint.hpp"
#include "zsc/evalkit.hpp"
#include "zsc/holdout.hpp"

using namespace zsc;
namespace fs = std::filesystem;

TEST_CASE("complementary scripted agents finish every collision-free episode") {
  for (Task task : {Task::kTidyHouse, Task::kSetTable, Task::kPrepareGroceries}) {
    int collisions = 0;
    for (int e = 0; e < 100; ++e) {
      const auto env = Environment::create(task, eval_layout_seed(3, e), WorldConfig{});
      ScriptedController a(ScriptedRole::kObject0), b(ScriptedRole::kObject1);
      Rng rng(static_cast<std::uint64_t>(e));
      const auto r = run_episode(env, a, b, 1000 + e, rng);
      if (r.collision) {
        ++collisions;
        continue;
      }
      CHECK(r.success);
    }
    CHECK(collisions < 50);
  }
}

TEST_CASE("a full-task agent succeeds alone next to a no-op partner") {
  for (int e = 0; e < 50; ++e) {
    const auto env = Environment::create(Task::kTidyHouse, eval_layout_seed(5, e), WorldConfig{});
    ScriptedController solo(ScriptedRole::kFullTask), idle(ScriptedRole::kNoOp);
    Rng rng(1);
    const auto r = run_episode(env, solo, idle, 77 + e, rng);
    if (r.collision) continue;
    CHECK(r.success);
    // Every event of the task is done by seat 0.
    for (int id = 0; id < kNumEventIds; ++id) CHECK(r.event_agent[id] != 1);
  }
}

TEST_CASE("object plans visit pick before place") {
  const auto env = Environment::create(Task::kTidyHouse, eval_layout_seed(1, 0), WorldConfig{});
  const auto [state, obs] = env.reset(9);
  const auto plan = object_plan(state, 1);
  int pick = -1, place = -1;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    if (plan.steps[i].value == 11) pick = static_cast<int>(i);
    if (plan.steps[i].value == 13) place = static_cast<int>(i);
  }
  REQUIRE(pick >= 0);
  CHECK(place > pick);
  CHECK(full_plan(state).steps.size() > plan.steps.size());
}

TEST_CASE("the scripted holdouts are no-op and one per object") {
  const auto agents = build_scripted_holdouts(Task::kSetTable);
  REQUIRE(agents.size() == 3);
  CHECK(agents[0].role == ScriptedRole::kNoOp);
  for (const auto& a : agents) {
    CHECK(a.kind == HoldoutAgent::Kind::kScripted);
    CHECK(a.task == Task::kSetTable);
    CHECK(a.make_controller() != nullptr);
  }
}

TEST_CASE("registries round trip and learned holdouts need their runs") {
  const auto dir = fs::temp_directory_path() / "zsc_test_holdout";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_AS(build_learned_holdouts(Task::kTidyHouse, {101}, {dir / "missing"}),
                  std::runtime_error);

  auto agents = build_scripted_holdouts(Task::kTidyHouse);
  HoldoutAgent learned;
  learned.kind = HoldoutAgent::Kind::kLearned;
  learned.id = "gt_s101_a0";
  learned.checkpoint = dir / "set0_final.ckpt";
  learned.train_seed = 101;
  agents.push_back(learned);
  write_registry(dir / "registry.txt", agents);
  const auto back = read_registry(dir / "registry.txt");
  REQUIRE(back.size() == agents.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == agents[i].id);
    CHECK(back[i].kind == agents[i].kind);
    CHECK(back[i].role == agents[i].role);
    CHECK(back[i].train_seed == agents[i].train_seed);
  }
  CHECK(back.back().checkpoint == learned.checkpoint);
}

TEST_CASE("a policy controller refuses a mismatched observation layout") {
  PolicyShape s;
  s.obs_dim = 21;
  s.hidden = 8;
  s.recurrent = 4;
  s.num_actions = kNumActions;
  Rng rng(3);
  auto p = std::make_shared<const PolicyParams<Real>>(init_policy<Real>(s, rng));
  EvalSettings settings;
  settings.episodes = 2;
  settings.world.local_patch = true;
  settings.efficiency = false;
  const ControllerFactory coord = [p] { return std::make_unique<PolicyController>(p); };
  const ControllerFactory partner = [] {
    return std::make_unique<ScriptedController>(ScriptedRole::kNoOp);
  };
  CHECK_THROWS_AS(evaluate_pairing(coord, partner, "noop", "scripted", settings),
                  std::invalid_argument);
  settings.world.local_patch = false;
  const auto rec = evaluate_pairing(coord, partner, "noop", "scripted", settings);
  CHECK(rec.episodes == 2);
}

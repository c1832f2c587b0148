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

// Agents that fill a seat at evaluation time, and the unseen-partner set:
// scripted plan followers plus independently trained pairs.

#ifndef ZSC_HOLDOUT_HPP_
#define ZSC_HOLDOUT_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zsc/approximator.hpp"
#include "zsc/world.hpp"

namespace zsc {

// Chooses actions for one seat. act() is only called on decision ticks.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual ActionId act(const WorldState& state, const Observation& obs, int agent, Rng& rng) = 0;
  // Observation layout this controller expects; nullopt = any.
  virtual std::optional<int> obs_dim() const { return std::nullopt; }
};

class PolicyController : public Controller {
 public:
  PolicyController(std::shared_ptr<const PolicyParams<Real>> params, int member = 0,
                   std::optional<int> latent = std::nullopt,
                   SampleMode mode = SampleMode::kArgmax);

  void reset() override;
  ActionId act(const WorldState& state, const Observation& obs, int agent, Rng& rng) override;
  std::optional<int> obs_dim() const override { return params_->shape.obs_dim; }

 private:
  std::shared_ptr<const PolicyParams<Real>> params_;
  int member_;
  std::optional<int> latent_;
  SampleMode mode_;
  Vec<Real> hidden_;
};

struct ScriptedPlan {
  std::string id;
  std::vector<ActionId> steps;
  std::size_t next = 0;
};

// Plan that brings `object` from its start to its goal: open the start (or
// goal) receptacle first if it begins closed, then navigate, pick,
// navigate, place.
ScriptedPlan object_plan(const WorldState& initial, int object);
// Both objects in order, for a single agent doing the whole task.
ScriptedPlan full_plan(const WorldState& initial);

// Current plan step for `agent`. Steps already achieved, or ones the world
// has made impossible for good (the partner took or placed the object), are
// skipped. Exhausted plans return NoOp. Ignores the partner otherwise.
ActionId scripted_step(ScriptedPlan& plan, const WorldState& state, int agent);

enum class ScriptedRole { kNoOp, kObject0, kObject1, kFullTask };

class ScriptedController : public Controller {
 public:
  explicit ScriptedController(ScriptedRole role) : role_(role) {}
  void reset() override { plan_.reset(); }
  ActionId act(const WorldState& state, const Observation& obs, int agent, Rng& rng) override;
  const std::optional<ScriptedPlan>& plan() const { return plan_; }

 private:
  ScriptedRole role_;
  std::optional<ScriptedPlan> plan_;  // built from the first state seen
};

struct HoldoutAgent {
  enum class Kind { kScripted, kLearned };
  Kind kind = Kind::kScripted;
  std::string id;
  Task task = Task::kTidyHouse;
  ScriptedRole role = ScriptedRole::kNoOp;
  std::filesystem::path checkpoint;  // learned agents
  std::uint64_t train_seed = 0;

  std::unique_ptr<Controller> make_controller() const;
};

std::string_view kind_name(HoldoutAgent::Kind kind);

// no-op, object-0 only, object-1 only.
std::vector<HoldoutAgent> build_scripted_holdouts(Task task);

// Both agents of each jointly trained run. `runs[i]` is the directory of the
// run trained with `seeds[i]`. Throws std::runtime_error naming a missing run.
std::vector<HoldoutAgent> build_learned_holdouts(Task task,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const std::vector<std::filesystem::path>& runs);

// One agent per line: <kind> <task> <id> <role|checkpoint> <train_seed>
void write_registry(const std::filesystem::path& path, const std::vector<HoldoutAgent>& agents);
std::vector<HoldoutAgent> read_registry(const std::filesystem::path& path);

}  // namespace zsc

#endif  // ZSC_HOLDOUT_HPP_

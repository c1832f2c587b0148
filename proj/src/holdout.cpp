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

#include "zsc/holdout.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "zsc/checkpoint.hpp"

namespace zsc {

PolicyController::PolicyController(std::shared_ptr<const PolicyParams<Real>> params, int member,
                                   std::optional<int> latent, SampleMode mode)
    : params_(std::move(params)), member_(member), latent_(latent), mode_(mode) {
  reset();
}

void PolicyController::reset() { hidden_ = zero_hidden<Real>(params_->shape); }

ActionId PolicyController::act(const WorldState&, const Observation& obs, int, Rng& rng) {
  auto out = forward_policy<Real>(*params_, obs, latent_, hidden_, member_);
  hidden_ = std::move(out.next_hidden);
  return ActionId{sample_action(out.logits.cast<double>(), rng, mode_).action};
}

namespace {

bool receptacle_closed_at_start(const WorldState& s, int r) {
  return r >= 0 && r < 2 && r < static_cast<int>(s.layout->receptacles.size()) &&
         s.layout->receptacles[static_cast<std::size_t>(r)].openable && !s.open[static_cast<std::size_t>(r)];
}

void append_object(ScriptedPlan& plan, const WorldState& initial, int object) {
  const auto& obj = initial.objects[static_cast<std::size_t>(object)];
  const int start_r =
      obj.start.kind == ObjectLocation::Kind::kOnReceptacle ? obj.start.index : -1;
  const int goal_r = obj.goal.receptacle;
  for (int r : {start_r, goal_r}) {
    if (!receptacle_closed_at_start(initial, r)) continue;
    plan.steps.push_back(ActionId::navigate(4 + r));
    plan.steps.push_back(ActionId::open(r));
  }
  plan.steps.push_back(ActionId::navigate(object));
  plan.steps.push_back(ActionId::pick(object));
  plan.steps.push_back(ActionId::navigate(2 + object));
  plan.steps.push_back(ActionId::place(object));
}

// The object named by a step's effect, for Pick/Place/object navigation.
int step_object(ActionId a) {
  switch (a.kind()) {
    case ActionKind::kPick:
    case ActionKind::kPlace:
      return a.arg();
    case ActionKind::kNavigate:
      return a.arg() < 4 ? a.arg() % 2 : -1;
    default:
      return -1;
  }
}

// True once the step has nothing left to do for this agent.
bool finished(const WorldState& s, int agent, ActionId a, std::size_t index,
              const ScriptedPlan& plan) {
  const auto& me = s.agents[static_cast<std::size_t>(agent)];
  const int obj = step_object(a);
  const bool obj_at_start =
      obj >= 0 && s.objects[static_cast<std::size_t>(obj)].location == s.objects[static_cast<std::size_t>(obj)].start;
  switch (a.kind()) {
    case ActionKind::kOpen:
      return s.open[static_cast<std::size_t>(a.arg())];
    case ActionKind::kPick:
      return !obj_at_start;
    case ActionKind::kPlace:
      return me.holding != obj;
    case ActionKind::kNavigate: {
      if (a.arg() >= 4) {
        // Approach to a receptacle that the next step opens.
        const int r = a.arg() - 4;
        if (s.open[static_cast<std::size_t>(r)]) return true;
      } else if (a.arg() < 2) {
        if (!obj_at_start) return true;
      } else if (me.holding != obj) {
        return true;
      }
      const auto cell = entity_cell(s, a.arg());
      if (!cell) return true;
      // Arrived: the following manipulation takes over.
      return index + 1 < plan.steps.size() && manhattan(me.pos, *cell) <= 1;
    }
    default:
      return false;
  }
}

}  // namespace

ScriptedPlan object_plan(const WorldState& initial, int object) {
  ScriptedPlan plan;
  plan.id = "object" + std::to_string(object);
  append_object(plan, initial, object);
  return plan;
}

ScriptedPlan full_plan(const WorldState& initial) {
  ScriptedPlan plan;
  plan.id = "full";
  for (int o = 0; o < kNumObjects; ++o) append_object(plan, initial, o);
  return plan;
}

ActionId scripted_step(ScriptedPlan& plan, const WorldState& state, int agent) {
  while (plan.next < plan.steps.size() &&
         finished(state, agent, plan.steps[plan.next], plan.next, plan))
    ++plan.next;
  if (plan.next >= plan.steps.size()) return ActionId::noop();
  return plan.steps[plan.next];
}

ActionId ScriptedController::act(const WorldState& state, const Observation&, int agent, Rng&) {
  if (role_ == ScriptedRole::kNoOp) return ActionId::noop();
  if (!plan_) {
    switch (role_) {
      case ScriptedRole::kObject0:
        plan_ = object_plan(state, 0);
        break;
      case ScriptedRole::kObject1:
        plan_ = object_plan(state, 1);
        break;
      default:
        plan_ = full_plan(state);
        break;
    }
  }
  return scripted_step(*plan_, state, agent);
}

namespace {

const char* role_name(ScriptedRole role) {
  switch (role) {
    case ScriptedRole::kNoOp:
      return "noop";
    case ScriptedRole::kObject0:
      return "object0";
    case ScriptedRole::kObject1:
      return "object1";
    case ScriptedRole::kFullTask:
      return "full";
  }
  return "?";
}

ScriptedRole parse_role(const std::string& s) {
  for (ScriptedRole r : {ScriptedRole::kNoOp, ScriptedRole::kObject0, ScriptedRole::kObject1,
                         ScriptedRole::kFullTask})
    if (s == role_name(r)) return r;
  throw std::runtime_error("unknown scripted role " + s);
}

}  // namespace

std::string_view kind_name(HoldoutAgent::Kind kind) {
  return kind == HoldoutAgent::Kind::kScripted ? "scripted" : "learned";
}

std::unique_ptr<Controller> HoldoutAgent::make_controller() const {
  if (kind == Kind::kScripted) return std::make_unique<ScriptedController>(role);
  auto params = std::make_shared<const PolicyParams<Real>>(load_policy(checkpoint));
  return std::make_unique<PolicyController>(params);
}

std::vector<HoldoutAgent> build_scripted_holdouts(Task task) {
  std::vector<HoldoutAgent> out;
  for (ScriptedRole r : {ScriptedRole::kNoOp, ScriptedRole::kObject0, ScriptedRole::kObject1}) {
    HoldoutAgent a;
    a.kind = HoldoutAgent::Kind::kScripted;
    a.task = task;
    a.role = r;
    a.id = std::string("scripted_") + role_name(r);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<HoldoutAgent> build_learned_holdouts(Task task,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const std::vector<std::filesystem::path>& runs) {
  if (seeds.size() != runs.size())
    throw std::invalid_argument("one run directory per holdout seed");
  std::vector<HoldoutAgent> out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (int set = 0; set < 2; ++set) {
      const auto path = runs[i] / "checkpoints" / "stage1" / ("set" + std::to_string(set) + "_final.ckpt");
      if (!std::filesystem::exists(path))
        throw std::runtime_error("missing holdout run for seed " + std::to_string(seeds[i]) +
                                 ": " + path.string());
      HoldoutAgent a;
      a.kind = HoldoutAgent::Kind::kLearned;
      a.task = task;
      a.id = "learned_s" + std::to_string(seeds[i]) + "_a" + std::to_string(set);
      a.checkpoint = std::filesystem::absolute(path);
      a.train_seed = seeds[i];
      out.push_back(std::move(a));
    }
  }
  return out;
}

void write_registry(const std::filesystem::path& path, const std::vector<HoldoutAgent>& agents) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# kind task id role-or-checkpoint train_seed\n";
  for (const auto& a : agents) {
    out << kind_name(a.kind) << ' ' << task_name(a.task) << ' ' << a.id << ' '
        << (a.kind == HoldoutAgent::Kind::kScripted ? std::string(role_name(a.role))
                                                    : a.checkpoint.string())
        << ' ' << a.train_seed << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<HoldoutAgent> read_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read holdout registry " + path.string());
  std::vector<HoldoutAgent> agents;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string kind, task, id, target;
    HoldoutAgent a;
    if (!(fields >> kind >> task >> id >> target >> a.train_seed))
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed entry");
    const auto t = parse_task(task);
    if (!t) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unknown task " + task);
    a.task = *t;
    a.id = id;
    if (kind == "scripted") {
      a.kind = HoldoutAgent::Kind::kScripted;
      a.role = parse_role(target);
    } else if (kind == "learned") {
      a.kind = HoldoutAgent::Kind::kLearned;
      a.checkpoint = target;
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unknown kind " + kind);
    }
    agents.push_back(std::move(a));
  }
  return agents;
}

}  // namespace zsc

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

// Evaluation of a coordination agent against partners: success, steps,
// collisions, who completed which sub-goal, and efficiency relative to the
// partner acting alone.

#ifndef ZSC_EVALKIT_HPP_
#define ZSC_EVALKIT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zsc/holdout.hpp"
#include "zsc/world.hpp"

namespace zsc {

inline constexpr int kDefaultEvalEpisodes = 100;

// Training draws layouts below 2^62, evaluation at or above it.
std::uint64_t train_layout_seed(std::uint64_t run_seed, int index);
std::uint64_t eval_layout_seed(std::uint64_t eval_seed, int episode);

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

struct EpisodeResult {
  bool success = false;
  bool collision = false;
  int ticks = 0;
  double task_return = 0.0;
  std::array<int, kNumEventIds> event_agent{};  // -1: not fired
};

// The coordination agent always takes seat 0.
EpisodeResult run_episode(const Environment& env, Controller& coord, Controller& partner,
                          std::uint64_t episode_seed, Rng& rng, ReplayWriter* replay = nullptr);

struct PartnerRecord {
  std::string partner;
  std::string kind;  // scripted, learned or train
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  double success_rate = 0.0;
  std::optional<double> mean_steps_success;
  double collision_rate = 0.0;
  // Fraction of episodes in which seat 0 (the coordination agent) completed
  // each event.
  std::array<double, kNumEventIds> coord_event_rate{};
  std::optional<double> solo_steps;       // partner with a no-op coordinator
  std::optional<double> efficiency_gain;  // percent
};

struct EvalSettings {
  Task task = Task::kTidyHouse;
  WorldConfig world;
  int episodes = kDefaultEvalEpisodes;
  std::uint64_t seed = 0;
  int threads = 1;
  bool efficiency = true;
};

// Greedy episodes on fresh evaluation layouts. Throws std::invalid_argument
// when a controller expects a different observation layout than the env.
PartnerRecord evaluate_pairing(const ControllerFactory& coord, const ControllerFactory& partner,
                               const std::string& partner_id, const std::string& kind,
                               const EvalSettings& settings);

// 100 * (t_solo - t_pair) / t_solo. Throws std::invalid_argument if
// t_solo <= 0.
double efficiency_gain(double t_solo, double t_pair);
std::optional<double> efficiency_gain(std::optional<double> t_solo,
                                      std::optional<double> t_pair);

struct SubgoalMatrix {
  std::string name;
  std::vector<std::string> partners;
  // rows = event ids, cols = partners
  std::vector<std::array<double, kNumEventIds>> columns;
};

SubgoalMatrix subgoal_matrix(const std::string& name, const std::vector<PartnerRecord>& records);

struct EvalReport {
  std::string method;
  std::vector<PartnerRecord> train_pop;
  std::vector<PartnerRecord> zsc;

  // Episode-weighted success over a record set; nullopt when empty.
  static std::optional<double> pooled_success(const std::vector<PartnerRecord>& records,
                                              const std::string& kind = "");
  std::optional<double> mean_efficiency() const;
};

// Writes report.json, summary.csv and one heatmap_<name>.svg per matrix.
// Nothing is written if any report has no partners.
void emit_report(const std::vector<EvalReport>& reports,
                 const std::vector<SubgoalMatrix>& matrices, const std::filesystem::path& out_dir);

struct LoadedReport {
  std::vector<EvalReport> reports;
  std::vector<SubgoalMatrix> matrices;
};

// Reads a report.json written by emit_report.
LoadedReport load_report(const std::filesystem::path& path);

void write_heatmap_svg(std::ostream& out, const SubgoalMatrix& matrix);

}  // namespace zsc

#endif  // ZSC_EVALKIT_HPP_

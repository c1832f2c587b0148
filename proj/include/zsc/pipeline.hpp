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

// Training runs. Stage 1 trains the partner population (or the behavior
// generator); stage 2 trains a fresh coordination agent against the frozen
// result. Jointly trained pairs stop after stage 1.
//
// Run directory:
//   config.ini                 resolved configuration
//   run.lock                   held while a command works on the run
//   checkpoints/stage1/        set<i>_p000, _p050, _p100, _final (+ discriminator)
//   checkpoints/stage2/        coordination agent, same naming
//   checkpoints/resume/        rolling checkpoints for --resume
//   logs/stage1.csv, logs/stage2.csv, logs/disc.csv
//   report.json                training summary
//   manifest.txt               every file above

#ifndef ZSC_PIPELINE_HPP_
#define ZSC_PIPELINE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "zsc/config.hpp"
#include "zsc/diversity.hpp"
#include "zsc/population.hpp"
#include "zsc/ppo.hpp"
#include "zsc/world.hpp"

namespace zsc {

struct RunConfig {
  Task task = Task::kTidyHouse;
  Algo algo = Algo::kBdp;
  std::uint64_t seed = 1;
  WorldConfig world;
  PpoConfig ppo;
  PopulationSpec population;
  long stage1_ticks = 2'000'000;
  long stage2_ticks = 2'000'000;
  bool stage2 = true;
  int layout_pool = 64;
  int hidden = 64;
  int recurrent = 64;
  DiscriminatorShape disc;
  int disc_batch = 256;
  int disc_steps = 1;
  double disc_lr = 3e-4;
  int disc_eval_every = 50;
  int checkpoint_every = 50;
  int eval_episodes = 100;
  int threads = 1;
  bool deterministic = false;
  std::filesystem::path out = "runs";
  std::string name;  // default <algo>_<task>_s<seed>

  std::filesystem::path run_dir() const;
  long updates_for(long ticks) const;
  WorldConfig world_config() const;  // predicate observations for *_state algos
  void validate() const;
};

RunConfig run_config_from(const Config& cfg);
// Annotated text form; run_config_from(parse(text)) reproduces `cfg`.
std::string config_text(const RunConfig& cfg);
std::set<std::string> known_config_keys();

class RunDirectory {
 public:
  // Creates the directory and takes the lock. Without `resume`, an existing
  // config.ini is an error.
  RunDirectory(std::filesystem::path root, bool resume);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::filesystem::path& root() const { return root_; }
  void write_manifest() const;

 private:
  std::filesystem::path root_;
  std::filesystem::path lock_;
};

struct StageArtifacts {
  std::string stage;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> finals;
  std::filesystem::path log;
  std::optional<std::filesystem::path> disc_log;
  long updates = 0;
  long ticks = 0;
  std::vector<PolicyParams<Real>> params;
  std::optional<DiscriminatorParams<Real>> disc;
  long disc_updates = 0;
  int disc_buffer_max = 0;
  double final_success = 0.0;  // rollout success over the last 5% of updates
  std::optional<double> disc_heldout_accuracy;
};

std::vector<Environment> training_layouts(const RunConfig& cfg);

StageArtifacts train_stage1(const RunConfig& cfg, const RunDirectory& dir, bool resume = false,
                            std::ostream* progress = nullptr);
StageArtifacts train_stage2(const RunConfig& cfg, const RunDirectory& dir,
                            const StageArtifacts& stage1, bool resume = false,
                            std::ostream* progress = nullptr);
// Both seats learn, each with its own parameters.
StageArtifacts train_gt_coord(const RunConfig& cfg, const RunDirectory& dir, bool resume = false,
                              std::ostream* progress = nullptr);

// Loads a finished stage from a run directory; throws naming what is missing.
StageArtifacts load_stage(const std::filesystem::path& run_dir, const std::string& stage,
                          int sets);

struct RunResult {
  StageArtifacts stage1;
  std::optional<StageArtifacts> stage2;
};

RunResult run_training(const RunConfig& cfg, bool resume = false,
                       std::ostream* progress = nullptr);

// Discriminator accuracy on windows from fresh rollouts of the stage-1
// population (no learning).
double heldout_disc_accuracy(const RunConfig& cfg, const StageArtifacts& stage1, long ticks);

// Per latent z: rate at which the z-conditioned agent itself completes each
// event, partner latent drawn uniformly; greedy actions, eval layouts.
std::vector<std::array<double, kNumEventIds>> latent_event_rates(const RunConfig& cfg,
                                                                 const StageArtifacts& stage1,
                                                                 int episodes);

// Total variation between two event-rate vectors, each normalized to a
// distribution over events (an all-zero vector stays all-zero).
double event_rate_tv(const std::array<double, kNumEventIds>& a,
                     const std::array<double, kNumEventIds>& b);

}  // namespace zsc

#endif  // ZSC_PIPELINE_HPP_

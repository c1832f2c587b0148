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

// Partner populations: how many parameter sets an algorithm trains, how a
// member id maps onto (parameter set, core/head, latent), and who gets paired
// with whom.

#ifndef ZSC_POPULATION_HPP_
#define ZSC_POPULATION_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zsc/approximator.hpp"
#include "zsc/ppo.hpp"

namespace zsc {

enum class Algo {
  kSp,
  kPbt,
  kFcp,
  kTrajedi,
  kBdp,
  kBdpNoDiscrim,
  kBdpNoLatent,
  kBdpLatentSharedEnc,
  kBdpLatentSepEnc,
  // Jointly trained pairs, no second stage.
  kGtCoord,
  kGtCoordState,
  // pbt on predicate-vector observations.
  kPbtState,
};

std::string_view algo_name(Algo algo);
std::optional<Algo> parse_algo(std::string_view name);
std::string algo_choices();

bool is_bdp(Algo algo);
// Joint training of a fixed pair instead of a population plus coordinator.
bool is_joint(Algo algo);
// Uses the predicate-vector observation.
bool uses_oracle_state(Algo algo);

struct PopulationSpec {
  Algo algo = Algo::kBdp;
  int size = 4;  // members, or latent values for the latent-conditioned variants
  double alpha = 0.01;
  double jsd_alpha = 0.01;
  int latent_resample_period = 10;
};

struct PairingDraw {
  int left = 0;
  int right = 0;
  bool operator==(const PairingDraw&) const = default;
};

// sp (and fcp's first stage): (i, i), i round-robin over updates.
// pbt, trajedi, gt variants: fresh uniform (i, j) each update.
// bdp*: i.i.d. uniform, redrawn only when update % period == 0 (or when no
// previous draw exists, e.g. after a resume).
class PairingSchedule {
 public:
  explicit PairingSchedule(const PopulationSpec& spec) : spec_(spec) {}
  PairingDraw draw(Rng& rng, long update);

 private:
  PopulationSpec spec_;
  std::optional<PairingDraw> last_;
};

PairingDraw draw_pairing(const PopulationSpec& spec, Rng& rng, long update,
                         std::optional<PairingDraw> previous = std::nullopt);

// How an algorithm's members are laid out over parameter sets.
struct TrainerWiring {
  int parameter_sets = 1;
  int latent_dim = 0;  // policy latent input width
  int cores = 1;
  int heads = 1;
  bool discriminator = false;
  double alpha = 0.0;
  int disc_classes = 0;
  bool jsd_bonus = false;
  int members = 1;  // ids a PairingDraw may name
};

TrainerWiring wiring_for(const PopulationSpec& spec);
// bdp variants only; throws std::invalid_argument otherwise.
TrainerWiring materialize_ablation(const PopulationSpec& spec);

// Seat for member `id`. `sets` holds the wiring's parameter sets.
Seat seat_for(const TrainerWiring& wiring, const std::vector<PolicyParams<Real>>& sets, int id,
              bool learning);

// Checkpoint fractions kept for the FCP partner pool.
inline constexpr int kCheckpointPercents[3] = {0, 50, 100};

std::filesystem::path stage_checkpoint_path(const std::filesystem::path& stage_dir, int set,
                                            int percent);

// The 3N frozen policies (start/middle/end of every member). Throws
// std::runtime_error naming the first missing fraction.
std::vector<PolicyParams<Real>> fcp_checkpoint_set(const std::filesystem::path& stage_dir,
                                                   int members);

}  // namespace zsc

#endif  // ZSC_POPULATION_HPP_

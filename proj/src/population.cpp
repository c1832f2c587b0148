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

#include "zsc/population.hpp"

#include <array>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include "zsc/checkpoint.hpp"

namespace zsc {

namespace {

constexpr std::array<std::pair<Algo, std::string_view>, 12> kAlgoNames{{
    {Algo::kSp, "sp"},
    {Algo::kPbt, "pbt"},
    {Algo::kFcp, "fcp"},
    {Algo::kTrajedi, "trajedi"},
    {Algo::kBdp, "bdp"},
    {Algo::kBdpNoDiscrim, "bdp_no_discrim"},
    {Algo::kBdpNoLatent, "bdp_no_latent"},
    {Algo::kBdpLatentSharedEnc, "bdp_latent_shared_enc"},
    {Algo::kBdpLatentSepEnc, "bdp_latent_sep_enc"},
    {Algo::kGtCoord, "gtcoord"},
    {Algo::kGtCoordState, "gtcoord_state"},
    {Algo::kPbtState, "pbt_state"},
}};

}  // namespace

std::string_view algo_name(Algo algo) {
  for (const auto& [a, name] : kAlgoNames)
    if (a == algo) return name;
  return "?";
}

std::optional<Algo> parse_algo(std::string_view name) {
  for (const auto& [a, n] : kAlgoNames)
    if (n == name) return a;
  return std::nullopt;
}

std::string algo_choices() {
  std::string out;
  for (const auto& [a, name] : kAlgoNames) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

bool is_bdp(Algo algo) {
  switch (algo) {
    case Algo::kBdp:
    case Algo::kBdpNoDiscrim:
    case Algo::kBdpNoLatent:
    case Algo::kBdpLatentSharedEnc:
    case Algo::kBdpLatentSepEnc:
      return true;
    default:
      return false;
  }
}

bool is_joint(Algo algo) {
  return algo == Algo::kGtCoord || algo == Algo::kGtCoordState;
}

bool uses_oracle_state(Algo algo) {
  return algo == Algo::kGtCoordState || algo == Algo::kPbtState;
}

PairingDraw draw_pairing(const PopulationSpec& spec, Rng& rng, long update,
                         std::optional<PairingDraw> previous) {
  const int n = spec.algo == Algo::kGtCoord || spec.algo == Algo::kGtCoordState ? 2 : spec.size;
  switch (spec.algo) {
    case Algo::kSp:
    case Algo::kFcp: {
      const int i = static_cast<int>(update % n);
      return {i, i};
    }
    case Algo::kGtCoord:
    case Algo::kGtCoordState:
      return {0, 1};
    default:
      break;
  }
  if (is_bdp(spec.algo) && previous && update % spec.latent_resample_period != 0)
    return *previous;
  const int left = uniform_int(rng, 0, n - 1);
  const int right = uniform_int(rng, 0, n - 1);
  return {left, right};
}

PairingDraw PairingSchedule::draw(Rng& rng, long update) {
  last_ = draw_pairing(spec_, rng, update, last_);
  return *last_;
}

TrainerWiring wiring_for(const PopulationSpec& spec) {
  if (spec.size <= 0) throw std::invalid_argument("population size must be positive");
  TrainerWiring w;
  w.members = spec.size;
  switch (spec.algo) {
    case Algo::kBdp:
    case Algo::kBdpNoDiscrim:
      w.latent_dim = spec.size;
      w.alpha = spec.algo == Algo::kBdp ? spec.alpha : 0.0;
      w.discriminator = w.alpha > 0.0;
      break;
    case Algo::kBdpNoLatent:
      w.heads = spec.size;
      break;
    case Algo::kBdpLatentSharedEnc:
      w.cores = spec.size;
      w.heads = spec.size;
      w.alpha = spec.alpha;
      w.discriminator = w.alpha > 0.0;
      break;
    case Algo::kBdpLatentSepEnc:
      w.parameter_sets = spec.size;
      w.alpha = spec.alpha;
      w.discriminator = w.alpha > 0.0;
      break;
    case Algo::kTrajedi:
      w.parameter_sets = spec.size;
      w.jsd_bonus = spec.jsd_alpha > 0.0;
      break;
    case Algo::kGtCoord:
    case Algo::kGtCoordState:
      w.parameter_sets = 2;
      w.members = 2;
      break;
    default:
      w.parameter_sets = spec.size;
      break;
  }
  if (w.discriminator) w.disc_classes = spec.size;
  return w;
}

TrainerWiring materialize_ablation(const PopulationSpec& spec) {
  if (!is_bdp(spec.algo))
    throw std::invalid_argument(std::string(algo_name(spec.algo)) + " is not a bdp variant");
  return wiring_for(spec);
}

Seat seat_for(const TrainerWiring& wiring, const std::vector<PolicyParams<Real>>& sets, int id,
              bool learning) {
  if (id < 0 || id >= wiring.members) throw std::out_of_range("member id " + std::to_string(id));
  Seat seat;
  const int set = wiring.parameter_sets == 1 ? 0 : id;
  if (set >= static_cast<int>(sets.size())) throw std::out_of_range("parameter set missing");
  seat.policy = &sets[static_cast<std::size_t>(set)];
  seat.learner = learning ? set : -1;
  if (wiring.latent_dim > 0) seat.latent = id;
  if (wiring.cores > 1 || wiring.heads > 1) seat.member = id;
  if (wiring.discriminator && learning) seat.disc_label = id;
  return seat;
}

std::filesystem::path stage_checkpoint_path(const std::filesystem::path& stage_dir, int set,
                                            int percent) {
  char name[64];
  std::snprintf(name, sizeof(name), "set%d_p%03d.ckpt", set, percent);
  return stage_dir / name;
}

std::vector<PolicyParams<Real>> fcp_checkpoint_set(const std::filesystem::path& stage_dir,
                                                   int members) {
  std::vector<PolicyParams<Real>> pool;
  for (int m = 0; m < members; ++m) {
    for (int pct : kCheckpointPercents) {
      const auto path = stage_checkpoint_path(stage_dir, m, pct);
      if (!std::filesystem::exists(path))
        throw std::runtime_error("missing " + std::to_string(pct) + "% checkpoint for member " +
                                 std::to_string(m) + " (" + path.string() + ")");
      pool.push_back(load_policy(path));
    }
  }
  return pool;
}

}  // namespace zsc

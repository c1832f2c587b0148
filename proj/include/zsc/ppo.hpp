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

// PPO over macro-action decision steps.
//
// A transition is opened when an agent picks an action and closed when it
// next has to decide (or the episode ends). Rewards for every tick in
// between are summed, undiscounted, onto the open transition. Transitions
// still open when a rollout ends carry over into the next rollout.

#ifndef ZSC_PPO_HPP_
#define ZSC_PPO_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "zsc/approximator.hpp"
#include "zsc/diversity.hpp"
#include "zsc/world.hpp"

namespace zsc {

struct PpoConfig {
  // Larger steps than the full-scale 3e-4 / 2 / 2 so short runs learn.
  double lr = 1e-3;
  int epochs = 4;
  int minibatches = 4;
  double clip = 0.2;
  double entropy_coef = 0.001;
  double value_coef = 0.5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double grad_clip = 0.2;
  int envs_per_update = 16;
  int ticks_per_update = 128;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-5, grad_clip}; }
};

struct Transition {
  Vec<Real> input;   // observation followed by the latent one-hot
  Vec<Real> hidden;  // recurrent state fed into the decision
  std::optional<int> latent;
  int learner = 0;
  int member = 0;
  int action = 0;
  double logprob_old = 0.0;
  double value_old = 0.0;
  double reward = 0.0;  // task + bonus, summed over the ticks of the macro
  double bonus = 0.0;   // diversity part of `reward`
  bool done = false;
  double advantage = 0.0;
  double ret = 0.0;
};

// Who controls one agent seat. `learner` indexes the parameter set the
// seat's transitions train; -1 marks a frozen partner.
struct Seat {
  const PolicyParams<Real>* policy = nullptr;
  int learner = -1;
  int member = 0;
  std::optional<int> latent;
  int disc_label = -1;  // discriminator target, -1 = no diversity reward
};
using Pairing = std::array<Seat, kNumAgents>;

// Called whenever an env starts a new episode.
using PairingFn = std::function<Pairing(int env)>;

struct RolloutHooks {
  // Discriminator reward (nullptr: off).
  const DiscriminatorParams<Real>* disc = nullptr;
  double alpha = 0.01;
  DiscBuffer* buffer = nullptr;
  // Action-distribution JSD bonus over these members (empty: off).
  std::vector<const PolicyParams<Real>*> jsd_members;
  std::vector<int> jsd_member_index;
  double jsd_alpha = 0.01;
};

struct EpisodeRecord {
  int env = 0;
  double task_return = 0.0;
  int ticks = 0;
  bool success = false;
  bool collision = false;
  std::array<int, kNumEventIds> event_agent{};  // -1 = not fired
};

struct RolloutBatch {
  // One chronological stream per (env, seat), index env * 2 + seat.
  std::vector<std::vector<Transition>> streams;
  std::vector<EpisodeRecord> episodes;
  long ticks = 0;
  double diversity_sum = 0.0;  // raw log q, before alpha
  long diversity_count = 0;

  std::size_t transition_count() const;
};

// A = sum_l (gamma lambda)^l delta_{t+l},
// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t; returns = A + V.
std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        const std::vector<bool>& dones,
                                                        double bootstrap_value, double gamma,
                                                        double lambda);

class EnvError : public std::runtime_error {
 public:
  EnvError(int env, const std::string& what)
      : std::runtime_error("env " + std::to_string(env) + ": " + what), env_(env) {}
  int env() const { return env_; }

 private:
  int env_;
};

// A fixed number of parallel episodes over a pool of pre-generated layouts.
// Each env draws a layout uniformly from the pool at every reset.
class RolloutRunner {
 public:
  RolloutRunner(std::vector<Environment> layouts, int num_envs, std::uint64_t seed,
                int threads = 1);

  RolloutBatch collect(const PairingFn& pairing, const RolloutHooks& hooks,
                       const PpoConfig& config);

  int num_envs() const { return static_cast<int>(slots_.size()); }
  long total_ticks() const { return total_ticks_; }
  const std::vector<Environment>& layouts() const { return layouts_; }

 private:
  struct SeatState {
    Seat seat;
    Vec<Real> hidden;
    bool deciding = true;
    std::optional<Transition> pending;
    TrajectoryWindow window;
  };
  struct Slot {
    Rng rng;
    int layout = 0;
    WorldState state;
    std::array<SeatState, kNumAgents> seats;
    std::array<Observation, kNumAgents> obs;
    std::array<ActionId, kNumAgents> actions;
    EpisodeRecord episode;
    bool fresh = true;
  };

  void reset_slot(int env, const PairingFn& pairing, int window_ticks);

  std::vector<Environment> layouts_;
  std::vector<Slot> slots_;
  int threads_;
  long total_ticks_ = 0;
};

// Clipped-surrogate loss over a batch of transitions that share one member.
// Returns the sum (not mean) of per-transition losses divided by `denom`,
// and accumulates its gradient into `grad` when non-null.
struct PpoLossParts {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  int clipped = 0;
};

template <typename Scalar>
Scalar ppo_loss(const PolicyParams<Scalar>& p, const Mat<Scalar>& inputs,
                const Mat<Scalar>& hidden, const std::vector<int>& actions,
                const Eigen::VectorXd& logprob_old, const Eigen::VectorXd& advantages,
                const Eigen::VectorXd& returns, int member, double clip, double value_coef,
                double entropy_coef, double denom, Vec<Scalar>* grad,
                PpoLossParts* parts = nullptr) {
  const auto k = forward_batch<Scalar>(p, inputs, hidden, member);
  const Mat<Scalar> logp = log_softmax(k.logits);
  const Eigen::Index n = inputs.cols();
  Mat<Scalar> dlogits = Mat<Scalar>::Zero(logp.rows(), n);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dvalue(n);
  Scalar total(0);
  const Scalar inv(1.0 / denom);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = actions[static_cast<std::size_t>(j)];
    const Vec<Scalar> pj = logp.col(j).array().exp().matrix();
    const Scalar entropy = -(pj.array() * logp.col(j).array()).sum();
    const Scalar ratio = std::exp(logp(a, j) - Scalar(logprob_old[j]));
    const Scalar adv(advantages[j]);
    const Scalar clipped_ratio =
        std::min(std::max(ratio, Scalar(1.0 - clip)), Scalar(1.0 + clip));
    const Scalar unclipped_obj = ratio * adv;
    const Scalar clipped_obj = clipped_ratio * adv;
    const bool use_unclipped = unclipped_obj <= clipped_obj;
    const Scalar surrogate = use_unclipped ? unclipped_obj : clipped_obj;
    const Scalar verr = k.value(0, j) - Scalar(returns[j]);
    total += -surrogate + Scalar(value_coef) * verr * verr - Scalar(entropy_coef) * entropy;
    if (parts) {
      parts->policy += static_cast<double>(-surrogate);
      parts->value += static_cast<double>(verr * verr);
      parts->entropy += static_cast<double>(entropy);
      if (std::abs(static_cast<double>(ratio) - 1.0) > clip) parts->clipped += 1;
    }
    if (!grad) continue;
    // d(-ratio * adv)/dlogits = -ratio * adv * (onehot - p)
    if (use_unclipped) {
      dlogits.col(j) = ratio * adv * pj;
      dlogits(a, j) -= ratio * adv;
    }
    // d(-c H)/dlogits = c * p * (log p + H)
    dlogits.col(j).array() +=
        Scalar(entropy_coef) * pj.array() * (logp.col(j).array() + entropy);
    dvalue(j) = Scalar(2.0 * value_coef) * verr;
  }
  if (grad) {
    dlogits *= inv;
    dvalue *= inv;
    backward_batch<Scalar>(p, k, dlogits, dvalue, *grad, member);
  }
  return total * inv;
}

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  long samples = 0;
};

// Two-epoch minibatched PPO on the transitions of one learner. Advantages are
// normalized over `transitions` first. Throws std::invalid_argument when empty.
PpoStats ppo_update(PolicyParams<Real>& params, AdamState<Real>& adam,
                    std::vector<const Transition*> transitions, const PpoConfig& config,
                    Rng& rng);

// Normalizes to mean 0, std 1 (eps 1e-8).
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages);

// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace zsc

#endif  // ZSC_PPO_HPP_

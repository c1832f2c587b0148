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

#include "zsc/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

namespace zsc {

void PpoConfig::validate() const {
  const auto require = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("ppo.") + field + " out of range");
  };
  require(lr > 0, "lr");
  require(epochs > 0, "epochs");
  require(minibatches > 0, "minibatches");
  require(clip > 0 && clip < 1, "clip");
  require(entropy_coef >= 0, "entropy_coef");
  require(value_coef > 0, "value_coef");
  require(gamma > 0 && gamma <= 1, "gamma");
  require(gae_lambda >= 0 && gae_lambda <= 1, "gae_lambda");
  require(grad_clip > 0, "grad_clip");
  require(envs_per_update > 0, "envs_per_update");
  require(ticks_per_update > 0, "ticks_per_update");
}

std::size_t RolloutBatch::transition_count() const {
  std::size_t n = 0;
  for (const auto& s : streams) n += s.size();
  return n;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        const std::vector<bool>& dones,
                                                        double bootstrap_value, double gamma,
                                                        double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n)
    throw std::invalid_argument("compute_gae: sequence lengths differ");
  Eigen::VectorXd adv(n);
  double running = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap_value;
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    running = delta + gamma * lambda * live * running;
    adv[t] = running;
  }
  return {adv, adv + values};
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages) {
  const double mean = advantages.mean();
  const double var = (advantages.array() - mean).square().mean();
  return (advantages.array() - mean) / (std::sqrt(var) + 1e-8);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

RolloutRunner::RolloutRunner(std::vector<Environment> layouts, int num_envs,
                             std::uint64_t seed, int threads)
    : layouts_(std::move(layouts)), threads_(std::max(1, threads)) {
  if (layouts_.empty()) throw std::invalid_argument("empty layout pool");
  if (num_envs <= 0) throw std::invalid_argument("num_envs must be positive");
  slots_.resize(static_cast<std::size_t>(num_envs));
  for (int e = 0; e < num_envs; ++e)
    slots_[static_cast<std::size_t>(e)].rng.seed(mix_seed(seed, static_cast<std::uint64_t>(e)));
}

void RolloutRunner::reset_slot(int env, const PairingFn& pairing, int window_ticks) {
  auto& slot = slots_[static_cast<std::size_t>(env)];
  slot.layout = uniform_int(slot.rng, 0, static_cast<int>(layouts_.size()) - 1);
  const auto& world = layouts_[static_cast<std::size_t>(slot.layout)];
  auto [state, obs] = world.reset(slot.rng());
  slot.state = std::move(state);
  slot.obs = std::move(obs);
  const Pairing seats = pairing(env);
  for (int i = 0; i < kNumAgents; ++i) {
    auto& s = slot.seats[static_cast<std::size_t>(i)];
    s.seat = seats[static_cast<std::size_t>(i)];
    if (!s.seat.policy) throw EnvError(env, "seat without a policy");
    if (s.seat.policy->shape.obs_dim != world.observation_size())
      throw EnvError(env, "policy expects " + std::to_string(s.seat.policy->shape.obs_dim) +
                              " observation features, env provides " +
                              std::to_string(world.observation_size()));
    s.hidden = zero_hidden<Real>(s.seat.policy->shape);
    s.deciding = true;
    s.pending.reset();
    if (s.window.ticks() != window_ticks) s.window = TrajectoryWindow(window_ticks);
    s.window.reset();
  }
  slot.episode = EpisodeRecord{};
  slot.episode.env = env;
  slot.episode.event_agent.fill(-1);
  slot.fresh = false;
}

namespace {

struct Request {
  int env;
  int seat;
};

}  // namespace

RolloutBatch RolloutRunner::collect(const PairingFn& pairing, const RolloutHooks& hooks,
                                    const PpoConfig& config) {
  const int envs = num_envs();
  RolloutBatch batch;
  batch.streams.resize(static_cast<std::size_t>(envs * kNumAgents));
  std::vector<StepOutcome> outcomes(static_cast<std::size_t>(envs));
  std::vector<int> step_tick(static_cast<std::size_t>(envs));

  for (int tick = 0; tick < config.ticks_per_update; ++tick) {
    for (int e = 0; e < envs; ++e) {
      const auto& slot = slots_[static_cast<std::size_t>(e)];
      if (slot.fresh || slot.state.done)
        reset_slot(e, pairing, hooks.disc ? hooks.disc->shape.window : kWindowTicks);
    }

    // Decisions, batched per (parameter set, member).
    std::vector<Request> requests;
    for (int e = 0; e < envs; ++e)
      for (int i = 0; i < kNumAgents; ++i)
        if (slots_[static_cast<std::size_t>(e)].seats[static_cast<std::size_t>(i)].deciding)
          requests.push_back({e, i});
    const auto seat_of = [&](const Request& r) -> SeatState& {
      return slots_[static_cast<std::size_t>(r.env)].seats[static_cast<std::size_t>(r.seat)];
    };
    std::vector<Vec<Real>> inputs(requests.size());
    std::map<std::pair<const PolicyParams<Real>*, int>, std::vector<std::size_t>> groups;
    for (std::size_t q = 0; q < requests.size(); ++q) {
      const auto& r = requests[q];
      const auto& s = seat_of(r);
      const auto& slot = slots_[static_cast<std::size_t>(r.env)];
      try {
        inputs[q] = policy_input<Real>(s.seat.policy->shape,
                                       slot.obs[static_cast<std::size_t>(r.seat)], s.seat.latent);
      } catch (const std::exception& ex) {
        throw EnvError(r.env, ex.what());
      }
      groups[{s.seat.policy, s.seat.member}].push_back(q);
    }
    std::vector<Eigen::VectorXd> logits(requests.size());
    std::vector<double> values(requests.size());
    std::vector<Vec<Real>> next_hidden(requests.size());
    for (const auto& [key, members] : groups) {
      const auto& shape = key.first->shape;
      Mat<Real> x(shape.input_dim(), static_cast<Eigen::Index>(members.size()));
      Mat<Real> h(shape.recurrent, static_cast<Eigen::Index>(members.size()));
      for (std::size_t j = 0; j < members.size(); ++j) {
        x.col(static_cast<Eigen::Index>(j)) = inputs[members[j]];
        h.col(static_cast<Eigen::Index>(j)) = seat_of(requests[members[j]]).hidden;
      }
      const auto k = forward_batch<Real>(*key.first, x, h, key.second);
      for (std::size_t j = 0; j < members.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        logits[members[j]] = k.logits.col(c).cast<double>();
        values[members[j]] = k.value(0, c);
        next_hidden[members[j]] = k.h_next.col(c);
      }
    }

    // JSD bonus: every population member evaluated on the acting seat's
    // input and recurrent state.
    std::vector<double> jsd(requests.size(), 0.0);
    if (!hooks.jsd_members.empty()) {
      std::vector<std::size_t> learning;
      for (std::size_t q = 0; q < requests.size(); ++q)
        if (seat_of(requests[q]).seat.learner >= 0) learning.push_back(q);
      if (!learning.empty()) {
        std::vector<std::vector<Eigen::VectorXd>> dists(learning.size());
        for (std::size_t m = 0; m < hooks.jsd_members.size(); ++m) {
          const auto& params = *hooks.jsd_members[m];
          const int member = hooks.jsd_member_index.empty() ? 0 : hooks.jsd_member_index[m];
          Mat<Real> x(params.shape.input_dim(), static_cast<Eigen::Index>(learning.size()));
          Mat<Real> h(params.shape.recurrent, static_cast<Eigen::Index>(learning.size()));
          for (std::size_t j = 0; j < learning.size(); ++j) {
            x.col(static_cast<Eigen::Index>(j)) = inputs[learning[j]];
            h.col(static_cast<Eigen::Index>(j)) = seat_of(requests[learning[j]]).hidden;
          }
          const auto k = forward_batch<Real>(params, x, h, member);
          const Mat<Real> logp = log_softmax(k.logits);
          for (std::size_t j = 0; j < learning.size(); ++j) {
            Eigen::VectorXd p =
                logp.col(static_cast<Eigen::Index>(j)).cast<double>().array().exp();
            p /= p.sum();
            dists[j].push_back(std::move(p));
          }
        }
        for (std::size_t j = 0; j < learning.size(); ++j)
          jsd[learning[j]] = trajedi_jsd(dists[j]);
      }
    }

    for (std::size_t q = 0; q < requests.size(); ++q) {
      const auto& r = requests[q];
      auto& slot = slots_[static_cast<std::size_t>(r.env)];
      auto& s = seat_of(r);
      const ActionSample sample = sample_action(logits[q], slot.rng, SampleMode::kSample);
      slot.actions[static_cast<std::size_t>(r.seat)] = ActionId{sample.action};
      if (s.pending) {
        batch.streams[static_cast<std::size_t>(r.env * kNumAgents + r.seat)].push_back(
            std::move(*s.pending));
        s.pending.reset();
      }
      if (s.seat.learner >= 0) {
        Transition t;
        t.input = std::move(inputs[q]);
        t.hidden = s.hidden;
        t.latent = s.seat.latent;
        t.learner = s.seat.learner;
        t.member = s.seat.member;
        t.action = sample.action;
        t.logprob_old = sample.logprob;
        t.value_old = values[q];
        t.bonus = hooks.jsd_alpha * jsd[q];
        t.reward = t.bonus;
        s.pending = std::move(t);
      }
      s.hidden = std::move(next_hidden[q]);
      s.deciding = false;
    }

    // Environment step; envs are independent.
    parallel_for(envs, threads_, [&](int e) {
      auto& slot = slots_[static_cast<std::size_t>(e)];
      step_tick[static_cast<std::size_t>(e)] = slot.state.tick;
      try {
        outcomes[static_cast<std::size_t>(e)] =
            layouts_[static_cast<std::size_t>(slot.layout)].step_joint(slot.state, slot.actions);
      } catch (const std::exception& ex) {
        throw EnvError(e, ex.what());
      }
      for (int i = 0; i < kNumAgents; ++i)
        slot.seats[static_cast<std::size_t>(i)].window.push(
            slot.state, i, outcomes[static_cast<std::size_t>(e)].executed[static_cast<std::size_t>(i)]);
    });
    total_ticks_ += envs;
    batch.ticks += envs;

    // Discriminator reward for this tick.
    if (hooks.disc) {
      std::vector<Request> scored;
      for (int e = 0; e < envs; ++e) {
        const auto& slot = slots_[static_cast<std::size_t>(e)];
        if (step_tick[static_cast<std::size_t>(e)] < diversity_gate(slot.state.horizon)) continue;
        for (int i = 0; i < kNumAgents; ++i)
          if (slot.seats[static_cast<std::size_t>(i)].seat.disc_label >= 0) scored.push_back({e, i});
      }
      if (!scored.empty()) {
        Mat<Real> windows(hooks.disc->shape.input_dim(), static_cast<Eigen::Index>(scored.size()));
        std::vector<Eigen::VectorXd> flat(scored.size());
        for (std::size_t j = 0; j < scored.size(); ++j) {
          flat[j] = seat_of(scored[j]).window.flat();
          windows.col(static_cast<Eigen::Index>(j)) = flat[j].cast<Real>();
        }
        const Mat<Real> logq = log_softmax(disc_forward_batch(*hooks.disc, windows));
        for (std::size_t j = 0; j < scored.size(); ++j) {
          auto& s = seat_of(scored[j]);
          const double lq = logq(s.seat.disc_label, static_cast<Eigen::Index>(j));
          batch.diversity_sum += lq;
          batch.diversity_count += 1;
          if (s.pending) {
            s.pending->reward += hooks.alpha * lq;
            s.pending->bonus += hooks.alpha * lq;
          }
          if (hooks.buffer) hooks.buffer->push(flat[j], s.seat.disc_label);
        }
      }
    }

    for (int e = 0; e < envs; ++e) {
      auto& slot = slots_[static_cast<std::size_t>(e)];
      auto& out = outcomes[static_cast<std::size_t>(e)];
      slot.episode.task_return += out.reward;
      for (const auto& ev : out.events) slot.episode.event_agent[static_cast<std::size_t>(ev.id())] = ev.agent;
      for (int i = 0; i < kNumAgents; ++i) {
        auto& s = slot.seats[static_cast<std::size_t>(i)];
        if (s.pending) s.pending->reward += out.reward;
        s.deciding = out.decision_flags[static_cast<std::size_t>(i)];
        if (out.done && s.pending) {
          s.pending->done = true;
          batch.streams[static_cast<std::size_t>(e * kNumAgents + i)].push_back(
              std::move(*s.pending));
          s.pending.reset();
        }
      }
      slot.obs = std::move(out.obs);
      if (out.done) {
        slot.episode.ticks = slot.state.tick;
        slot.episode.success = out.success;
        slot.episode.collision = out.collision;
        batch.episodes.push_back(slot.episode);
      }
    }
  }

  for (int e = 0; e < envs; ++e) {
    for (int i = 0; i < kNumAgents; ++i) {
      auto& stream = batch.streams[static_cast<std::size_t>(e * kNumAgents + i)];
      if (stream.empty()) continue;
      const auto& pending =
          slots_[static_cast<std::size_t>(e)].seats[static_cast<std::size_t>(i)].pending;
      const double bootstrap = pending ? pending->value_old : 0.0;
      const auto n = static_cast<Eigen::Index>(stream.size());
      Eigen::VectorXd rewards(n), vals(n);
      std::vector<bool> dones(stream.size());
      for (Eigen::Index t = 0; t < n; ++t) {
        const auto& tr = stream[static_cast<std::size_t>(t)];
        rewards[t] = tr.reward;
        vals[t] = tr.value_old;
        dones[static_cast<std::size_t>(t)] = tr.done;
      }
      const auto [adv, ret] =
          compute_gae(rewards, vals, dones, bootstrap, config.gamma, config.gae_lambda);
      for (Eigen::Index t = 0; t < n; ++t) {
        stream[static_cast<std::size_t>(t)].advantage = adv[t];
        stream[static_cast<std::size_t>(t)].ret = ret[t];
      }
    }
  }
  return batch;
}

PpoStats ppo_update(PolicyParams<Real>& params, AdamState<Real>& adam,
                    std::vector<const Transition*> transitions, const PpoConfig& config,
                    Rng& rng) {
  if (transitions.empty()) throw std::invalid_argument("ppo_update on an empty batch");
  const auto n = static_cast<Eigen::Index>(transitions.size());
  Eigen::VectorXd raw(n);
  for (Eigen::Index i = 0; i < n; ++i) raw[i] = transitions[static_cast<std::size_t>(i)]->advantage;
  const Eigen::VectorXd adv = normalize_advantages(raw);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int mbs = std::min<int>(config.minibatches, static_cast<int>(n));
  const AdamConfig adam_cfg = config.adam();
  PpoStats stats;
  PpoLossParts parts;
  double norm_sum = 0.0;
  int steps = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)))]);
    for (int mb = 0; mb < mbs; ++mb) {
      const Eigen::Index lo = n * mb / mbs, hi = n * (mb + 1) / mbs;
      std::map<int, std::vector<Eigen::Index>> by_member;
      for (Eigen::Index j = lo; j < hi; ++j)
        by_member[transitions[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]->member]
            .push_back(order[static_cast<std::size_t>(j)]);
      Vec<Real> grad = Vec<Real>::Zero(params.values.size());
      for (const auto& [member, idx] : by_member) {
        const auto m = static_cast<Eigen::Index>(idx.size());
        Mat<Real> x(params.shape.input_dim(), m), h(params.shape.recurrent, m);
        std::vector<int> actions(idx.size());
        Eigen::VectorXd lp(m), a(m), r(m);
        for (Eigen::Index j = 0; j < m; ++j) {
          const Transition& t = *transitions[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
          x.col(j) = t.input;
          h.col(j) = t.hidden;
          actions[static_cast<std::size_t>(j)] = t.action;
          lp[j] = t.logprob_old;
          a[j] = adv[idx[static_cast<std::size_t>(j)]];
          r[j] = t.ret;
        }
        ppo_loss<Real>(params, x, h, actions, lp, a, r, member, config.clip, config.value_coef,
                       config.entropy_coef, static_cast<double>(hi - lo), &grad, &parts);
      }
      norm_sum += backward_update(params.values, std::move(grad), params.layout, adam, adam_cfg);
      ++steps;
      stats.samples += hi - lo;
    }
  }
  const double total = static_cast<double>(stats.samples);
  stats.policy_loss = parts.policy / total;
  stats.value_loss = parts.value / total;
  stats.entropy = parts.entropy / total;
  stats.clip_frac = parts.clipped / total;
  stats.grad_norm = norm_sum / steps;
  return stats;
}

}  // namespace zsc

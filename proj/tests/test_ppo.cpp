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

#include "zsc/evalkit.hpp"
#include "zsc/ppo.hpp"

using namespace zsc;

namespace {

// Independent double loop: A_t = sum_l (gamma*lambda)^l delta_{t+l}, cut after
// the first terminal step.
Eigen::VectorXd brute_gae(const Eigen::VectorXd& r, const Eigen::VectorXd& v,
                          const std::vector<bool>& done, double boot, double g, double lam) {
  const auto n = r.size();
  Eigen::VectorXd adv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double coef = 1.0;
    for (Eigen::Index k = t; k < n; ++k) {
      const double next = k + 1 < n ? v[k + 1] : boot;
      const double delta = r[k] + (done[static_cast<std::size_t>(k)] ? 0.0 : g * next) - v[k];
      adv[t] += coef * delta;
      if (done[static_cast<std::size_t>(k)]) break;
      coef *= g * lam;
    }
  }
  return adv;
}

PolicyShape small_shape(int obs = 21, int cores = 1, int heads = 1) {
  PolicyShape s;
  s.obs_dim = obs;
  s.hidden = 16;
  s.recurrent = 8;
  s.num_actions = kNumActions;
  s.cores = cores;
  s.heads = heads;
  return s;
}

std::vector<Environment> pool(int n) {
  WorldConfig cfg;
  cfg.width = cfg.height = 7;
  std::vector<Environment> out;
  for (int i = 0; i < n; ++i)
    out.push_back(Environment::create(Task::kTidyHouse, train_layout_seed(9, i), cfg));
  return out;
}

}  // namespace

TEST_CASE("advantages match the brute-force sum") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 50;
    Eigen::VectorXd r(n), v(n);
    std::vector<bool> done(n);
    for (int t = 0; t < n; ++t) {
      r[t] = uniform01(rng) * 2 - 1;
      v[t] = uniform01(rng) * 4 - 2;
      done[static_cast<std::size_t>(t)] = uniform01(rng) < 0.1;
    }
    const double boot = uniform01(rng);
    const auto [adv, ret] = compute_gae(r, v, done, boot, 0.99, 0.95);
    CHECK((adv - brute_gae(r, v, done, boot, 0.99, 0.95)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ret - adv - v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a terminal step ignores the bootstrap value") {
  Eigen::VectorXd r(2), v(2);
  r << 1.0, 2.0;
  v << 0.5, 0.25;
  const auto [a1, r1] = compute_gae(r, v, {false, true}, 100.0, 0.9, 0.8);
  const auto [a2, r2] = compute_gae(r, v, {false, true}, -100.0, 0.9, 0.8);
  CHECK(a1 == a2);
  // delta1 = 2 - 0.25; delta0 = 1 + 0.9*0.25 - 0.5; A0 = delta0 + 0.72*delta1
  CHECK(a1[1] == doctest::Approx(1.75));
  CHECK(a1[0] == doctest::Approx(0.725 + 0.72 * 1.75));
  CHECK_THROWS_AS(compute_gae(r, v, {false}, 0.0, 0.9, 0.8), std::invalid_argument);
}

TEST_CASE("clipped loss on three hand-worked transitions") {
  // Zero head weights make logits = pi.b and value = v.b for any input.
  PolicyShape s;
  s.obs_dim = 2;
  s.hidden = 2;
  s.recurrent = 2;
  s.num_actions = 3;
  Rng rng(1);
  auto p = init_policy<double>(s, rng);
  p.matrix("head0.pi.w").setZero();
  p.matrix("head0.v.w").setZero();
  p.matrix("head0.pi.b") << 0.0, std::log(2.0), 0.0;  // probs 1/4, 1/2, 1/4
  p.matrix("head0.v.b")(0, 0) = 0.5;
  const Mat<double> x = Mat<double>::Random(2, 3);
  const Mat<double> h = Mat<double>::Zero(2, 3);
  const std::vector<int> actions{1, 0, 2};
  Eigen::VectorXd lp_old(3), adv(3), ret(3);
  lp_old << std::log(0.4), std::log(0.25), std::log(0.5);  // ratios 1.25, 1, 0.5
  adv << 1.0, -0.5, -2.0;
  ret << 1.0, 0.0, 0.5;
  PpoLossParts parts;
  Vec<double> grad = Vec<double>::Zero(p.values.size());
  const double loss =
      ppo_loss<double>(p, x, h, actions, lp_old, adv, ret, 0, 0.2, 0.5, 0.01, 3.0, &grad, &parts);
  // surrogates: min(1.25, 1.2)*1 = 1.2; 1*-0.5; min(0.5*-2, 0.8*-2) = -1.6
  const double policy = -(1.2 - 0.5 - 1.6) / 3.0;
  const double value = 0.5 * (0.25 + 0.25 + 0.0) / 3.0;
  const double entropy = -(0.25 * std::log(0.25) * 2 + 0.5 * std::log(0.5));
  CHECK(loss == doctest::Approx(policy + value - 0.01 * entropy).epsilon(1e-12));
  CHECK(parts.clipped == 2);
  CHECK(parts.policy / 3.0 == doctest::Approx(policy));

  // Samples 1 and 3 take the clipped branch, so only sample 2 moves the
  // policy bias: -ratio*adv*(onehot(0) - p)/3.
  Eigen::Vector3d probs(0.25, 0.5, 0.25), expect = Eigen::Vector3d::Zero();
  Eigen::Vector3d e0(1, 0, 0);
  expect += -1.0 * -0.5 * (e0 - probs) / 3.0;
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector3d logp = probs.array().log();
    // entropy term: c * p * (log p + H) per sample, three samples.
    expect += 0.01 * probs.cwiseProduct(logp + Eigen::Vector3d::Constant(entropy)) / 3.0;
  }
  const auto& l = p.layout.at("head0.pi.b");
  for (int j = 0; j < 3; ++j) CHECK(grad[l.offset + j] == doctest::Approx(expect[j]).epsilon(1e-9));
  // d/dvb of 0.5*(vb - R)^2 averaged: (0.5-1) + (0.5-0) + 0 = 0 -> zero.
  CHECK(grad[p.layout.at("head0.v.b").offset] == doctest::Approx(0.0));
}

TEST_CASE("loss gradient matches central differences") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    PolicyShape s;
    s.obs_dim = 3;
    s.latent_dim = 2;
    s.hidden = 6;
    s.recurrent = 4;
    s.num_actions = 5;
    s.heads = 2;
    auto p = init_policy<double>(s, rng, 0.8);
    REQUIRE(p.values.size() <= 500);
    const int n = 6;
    const Mat<double> x = Mat<double>::Random(s.input_dim(), n);
    const Mat<double> h = Mat<double>::Random(s.recurrent, n) * 0.5;
    std::vector<int> actions(n);
    Eigen::VectorXd lp(n), adv(n), ret(n);
    const auto k = forward_batch<double>(p, x, h, 1);
    const Mat<double> logp = log_softmax(k.logits);
    for (int j = 0; j < n; ++j) {
      actions[static_cast<std::size_t>(j)] = uniform_int(rng, 0, s.num_actions - 1);
      // Keep ratios away from the clip boundary so the loss is smooth here.
      lp[j] = logp(actions[static_cast<std::size_t>(j)], j) + (uniform01(rng) < 0.5 ? 0.05 : 0.6);
      adv[j] = uniform01(rng) * 2 - 1;
      ret[j] = uniform01(rng) * 2 - 1;
    }
    const LossFn loss = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
      PolicyParams<double> q = p;
      q.values = v;
      Vec<double> g = Vec<double>::Zero(v.size());
      const double out = ppo_loss<double>(q, x, h, actions, lp, adv, ret, 1, 0.2, 0.5, 0.01,
                                          static_cast<double>(n), grad ? &g : nullptr);
      if (grad) *grad = g;
      return out;
    };
    CHECK(finite_diff_check(p.values, loss, 1e-6) < 1e-3);
  }
}

TEST_CASE("advantage normalization") {
  Eigen::VectorXd a(4);
  a << 1, 2, 3, 4;
  const auto z = normalize_advantages(a);
  CHECK(z.mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::sqrt(z.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("config validation names the field") {
  PpoConfig c;
  c.validate();
  c.clip = -1;
  try {
    c.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("clip") != std::string::npos);
  }
}

TEST_CASE("rollouts record one transition per learner decision") {
  Rng rng(4);
  const auto params = init_policy<Real>(small_shape(), rng);
  RolloutRunner runner(pool(4), 3, 11);
  const PairingFn pairing = [&](int) {
    Seat a;
    a.policy = &params;
    a.learner = 0;
    Seat b;
    b.policy = &params;  // frozen partner
    return Pairing{a, b};
  };
  PpoConfig cfg;
  cfg.ticks_per_update = 300;
  const auto batch = runner.collect(pairing, {}, cfg);
  CHECK(batch.ticks == 900);
  CHECK(runner.total_ticks() == 900);
  for (int e = 0; e < 3; ++e) {
    CHECK_FALSE(batch.streams[static_cast<std::size_t>(e * 2)].empty());
    CHECK(batch.streams[static_cast<std::size_t>(e * 2 + 1)].empty());
    int dones = 0;
    for (const auto& t : batch.streams[static_cast<std::size_t>(e * 2)]) {
      dones += t.done ? 1 : 0;
      CHECK(std::isfinite(t.advantage));
      CHECK(t.ret == doctest::Approx(t.advantage + t.value_old));
    }
    int episodes = 0;
    for (const auto& ep : batch.episodes) episodes += ep.env == e ? 1 : 0;
    CHECK(dones == episodes);
  }
}

TEST_CASE("macro rewards add up to the episode return") {
  Rng rng(6);
  const auto params = init_policy<Real>(small_shape(), rng);
  RolloutRunner runner(pool(2), 1, 5);
  const PairingFn pairing = [&](int) {
    Seat a;
    a.policy = &params;
    a.learner = 0;
    Seat b = a;
    return Pairing{a, b};
  };
  PpoConfig cfg;
  cfg.ticks_per_update = 600;
  const auto batch = runner.collect(pairing, {}, cfg);
  REQUIRE_FALSE(batch.episodes.empty());
  // The first episode starts fresh, so its transitions are all in the stream.
  for (int seat = 0; seat < 2; ++seat) {
    double sum = 0.0;
    for (const auto& t : batch.streams[static_cast<std::size_t>(seat)]) {
      sum += t.reward;
      if (t.done) break;
    }
    CHECK(sum == doctest::Approx(batch.episodes[0].task_return).epsilon(1e-9));
  }
}

TEST_CASE("rollouts do not depend on the worker count") {
  Rng rng(8);
  const auto params = init_policy<Real>(small_shape(), rng);
  const PairingFn pairing = [&](int) {
    Seat a;
    a.policy = &params;
    a.learner = 0;
    return Pairing{a, a};
  };
  PpoConfig cfg;
  cfg.ticks_per_update = 64;
  RolloutRunner one(pool(3), 4, 99, 1), many(pool(3), 4, 99, 3);
  const auto a = one.collect(pairing, {}, cfg);
  const auto b = many.collect(pairing, {}, cfg);
  REQUIRE(a.transition_count() == b.transition_count());
  for (std::size_t s = 0; s < a.streams.size(); ++s)
    for (std::size_t t = 0; t < a.streams[s].size(); ++t) {
      CHECK(a.streams[s][t].action == b.streams[s][t].action);
      CHECK(a.streams[s][t].reward == b.streams[s][t].reward);
    }
}

TEST_CASE("mismatched observation sizes are reported per env") {
  Rng rng(1);
  const auto params = init_policy<Real>(small_shape(30), rng);
  RolloutRunner runner(pool(1), 2, 1);
  const PairingFn pairing = [&](int) {
    Seat a;
    a.policy = &params;
    return Pairing{a, a};
  };
  CHECK_THROWS_AS(runner.collect(pairing, {}, PpoConfig{}), EnvError);
}

TEST_CASE("an update changes the parameters and reports statistics") {
  Rng rng(2);
  auto params = init_policy<Real>(small_shape(), rng);
  const auto before = params.values;
  RolloutRunner runner(pool(2), 2, 3);
  const PairingFn pairing = [&](int) {
    Seat a;
    a.policy = &params;
    a.learner = 0;
    return Pairing{a, a};
  };
  PpoConfig cfg;
  cfg.ticks_per_update = 100;
  const auto batch = runner.collect(pairing, {}, cfg);
  std::vector<const Transition*> ts;
  for (const auto& s : batch.streams)
    for (const auto& t : s) ts.push_back(&t);
  AdamState<Real> adam;
  const auto stats = ppo_update(params, adam, ts, cfg, rng);
  CHECK(stats.samples == static_cast<long>(ts.size()) * cfg.epochs);
  CHECK(adam.steps == cfg.epochs * cfg.minibatches);
  CHECK((params.values - before).norm() > 0);
  CHECK(stats.entropy > 0);
  CHECK_THROWS_AS(ppo_update(params, adam, {}, cfg, rng), std::invalid_argument);
}

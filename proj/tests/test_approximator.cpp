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

#include "zsc/approximator.hpp"

using namespace zsc;

namespace {

PolicyShape tiny_shape(int cores = 1, int heads = 1, int latent = 0) {
  PolicyShape s;
  s.obs_dim = 4;
  s.latent_dim = latent;
  s.hidden = 5;
  s.recurrent = 3;
  s.num_actions = 4;
  s.cores = cores;
  s.heads = heads;
  return s;
}

}  // namespace

TEST_CASE("parameter count matches the layer formula") {
  PolicyShape s;
  s.obs_dim = 21;
  s.hidden = 64;
  s.recurrent = 64;
  s.num_actions = 20;
  // trunk 64*21+64, core 3*64*(64+64+1), heads 20*64+20+64+1
  CHECK(policy_layout(s).total == 1408 + 24768 + 1365);
  s.latent_dim = 4;
  CHECK(policy_layout(s).total == 1408 + 256 + 24768 + 1365);
  s.latent_dim = 0;
  s.heads = 4;
  CHECK(policy_layout(s).total == 1408 + 24768 + 4 * 1365);
  s.cores = 4;
  CHECK(policy_layout(s).total == 1408 + 4 * 24768 + 4 * 1365);
  s.cores = 3;
  CHECK_THROWS_AS(policy_layout(s), std::invalid_argument);
}

TEST_CASE("layer offsets tile the flat vector") {
  const auto layout = policy_layout(tiny_shape(2, 2));
  Eigen::Index next = 0;
  for (const auto& l : layout.layers) {
    CHECK(l.offset == next);
    next += l.size();
  }
  CHECK(next == layout.total);
  CHECK(layout.owner(0).name == "trunk.w");
  CHECK(layout.owner(layout.total - 1).name == "head1.v.b");
}

TEST_CASE("backward pass matches central differences") {
  for (auto [cores, heads] : {std::pair{1, 1}, std::pair{1, 3}, std::pair{3, 3}}) {
    Rng rng(17 + static_cast<unsigned>(cores * 10 + heads));
    const PolicyShape shape = tiny_shape(cores, heads, 2);
    auto p = init_policy<double>(shape, rng, 0.7);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] += 0.1 * (uniform01(rng) - 0.5);
    const int n = 3;
    const Mat<double> x = Mat<double>::Random(shape.input_dim(), n);
    const Mat<double> h = Mat<double>::Random(shape.recurrent, n) * 0.5;
    const Mat<double> wl = Mat<double>::Random(shape.num_actions, n);
    const Eigen::RowVectorXd wv = Eigen::RowVectorXd::Random(n);
    const int member = shape.members() - 1;
    const LossFn loss = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
      PolicyParams<double> q = p;
      q.values = v;
      const auto k = forward_batch<double>(q, x, h, member);
      if (grad) {
        Vec<double> g = Vec<double>::Zero(v.size());
        backward_batch<double>(q, k, wl, wv, g, member);
        *grad = g;
      }
      return (k.logits.array() * wl.array()).sum() + (k.value.array() * wv.array()).sum();
    };
    CHECK(finite_diff_check(p.values, loss, 1e-6) < 1e-5);
  }
}

TEST_CASE("members select their own core and head") {
  Rng rng(3);
  const auto p = init_policy<double>(tiny_shape(1, 2), rng);
  CHECK(core_of(p, 1) == 0);
  CHECK(head_of(p, 1) == 1);
  const Eigen::VectorXd obs = Eigen::VectorXd::Ones(4);
  const auto h = zero_hidden<double>(p.shape);
  const auto a = forward_policy(p, obs, std::nullopt, h, 0);
  const auto b = forward_policy(p, obs, std::nullopt, h, 1);
  CHECK(a.next_hidden.isApprox(b.next_hidden));
  CHECK_FALSE(a.logits.isApprox(b.logits));
  CHECK_THROWS_AS(forward_policy(p, obs, std::nullopt, h, 2), std::out_of_range);
}

TEST_CASE("latent input is a one-hot after the observation") {
  const auto s = tiny_shape(1, 1, 3);
  const Eigen::VectorXd obs = Eigen::VectorXd::Constant(4, 0.5);
  const auto x = policy_input<double>(s, obs, 2);
  CHECK(x.size() == 7);
  CHECK(x[6] == 1.0);
  CHECK(x[4] == 0.0);
  CHECK_THROWS_AS(policy_input<double>(s, obs, 3), std::out_of_range);
  CHECK_THROWS_AS(policy_input<double>(s, obs, std::nullopt), std::out_of_range);
  CHECK_THROWS_AS(policy_input<double>(s, Eigen::VectorXd::Zero(3), 0), std::invalid_argument);
}

TEST_CASE("log-softmax, log-probability and entropy") {
  Eigen::VectorXd logits(3);
  logits << 1.0, 2.0, 3.0;
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const auto le = logprob_entropy(logits, 2);
  CHECK(le.logprob == doctest::Approx(3.0 - std::log(z)));
  double h = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double p = std::exp(logits[i]) / z;
    h -= p * std::log(p);
  }
  CHECK(le.entropy == doctest::Approx(h));
  CHECK(logprob_entropy(Eigen::VectorXd::Zero(4), 0).entropy == doctest::Approx(std::log(4.0)));
}

TEST_CASE("greedy selection takes the first maximum; sampling follows the distribution") {
  Rng rng(1);
  Eigen::VectorXd logits(4);
  logits << 0.0, 2.0, 2.0, -1.0;
  CHECK(sample_action(logits, rng, SampleMode::kArgmax).action == 1);
  logits << 0.0, std::log(3.0), -1e9, 0.0;
  int counts[4] = {0, 0, 0, 0};
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[sample_action(logits, rng, SampleMode::kSample).action]++;
  CHECK(counts[2] == 0);
  CHECK(counts[1] / double(n) == doctest::Approx(0.6).epsilon(0.03));
  logits[0] = std::nan("");
  CHECK_THROWS_AS(sample_action(logits, rng, SampleMode::kSample), std::invalid_argument);
}

TEST_CASE("gradient clipping rescales to the maximum norm") {
  Vec<double> g(2);
  g << 3.0, 4.0;
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  Vec<double> small(1);
  small << 0.1;
  clip_grad_norm(small, 1.0);
  CHECK(small[0] == doctest::Approx(0.1));
}

TEST_CASE("first optimizer step moves each parameter by about the learning rate") {
  ParamLayout layout;
  layout.add("w", 3, 1);
  Vec<double> params = Vec<double>::Zero(3);
  Vec<double> grad(3);
  grad << 0.5, -2.0, 0.0;
  AdamState<double> adam;
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.max_grad_norm = 1e9;
  backward_update(params, grad, layout, adam, cfg);
  // m/(1-b1) = g, v/(1-b2) = g^2, so the step is lr * g / (|g| + eps).
  CHECK(params[0] == doctest::Approx(-0.01 * 0.5 / (0.5 + 1e-5)));
  CHECK(params[1] == doctest::Approx(0.01 * 2.0 / (2.0 + 1e-5)));
  CHECK(params[2] == 0.0);
  CHECK(adam.steps == 1);
  grad[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(backward_update(params, grad, layout, adam, cfg), NonFiniteGradient);
}

TEST_CASE("orthogonal init gives orthonormal rows or columns") {
  Rng rng(8);
  Eigen::MatrixXd m(6, 3);
  orthogonal_fill(m, 1.0, rng);
  CHECK((m.transpose() * m).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-9));
  Eigen::MatrixXd w(3, 6);
  orthogonal_fill(w, 2.0, rng);
  CHECK((w * w.transpose()).isApprox(4.0 * Eigen::MatrixXd::Identity(3, 3), 1e-9));
}

TEST_CASE("float and double forward passes agree") {
  Rng rng(12);
  const auto pd = init_policy<double>(tiny_shape(), rng, 1.0);
  const auto pf = pd.cast<float>();
  const Eigen::VectorXd obs = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
  const auto od = forward_policy(pd, obs, std::nullopt, zero_hidden<double>(pd.shape));
  const auto of = forward_policy(pf, obs, std::nullopt, zero_hidden<float>(pf.shape));
  CHECK((od.logits - of.logits.cast<double>()).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(od.value == doctest::Approx(of.value).epsilon(1e-5));
}

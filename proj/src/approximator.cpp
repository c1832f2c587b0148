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

#include "zsc/approximator.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <limits>

namespace zsc {

void ParamLayout::add(std::string name, int rows, int cols) {
  LayerSpec l{std::move(name), rows, cols, total};
  total += l.size();
  layers.push_back(std::move(l));
}

const LayerSpec& ParamLayout::at(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw std::out_of_range("no layer named " + name);
}

const LayerSpec& ParamLayout::owner(Eigen::Index i) const {
  for (const auto& l : layers)
    if (i >= l.offset && i < l.offset + l.size()) return l;
  throw std::out_of_range("parameter index " + std::to_string(i));
}

ParamLayout policy_layout(const PolicyShape& s) {
  if (s.obs_dim <= 0 || s.hidden <= 0 || s.recurrent <= 0 || s.num_actions <= 0 ||
      s.cores <= 0 || s.heads <= 0 || s.latent_dim < 0)
    throw std::invalid_argument("invalid policy shape");
  if (s.cores > 1 && s.heads > 1 && s.cores != s.heads)
    throw std::invalid_argument("core and head counts must match");
  ParamLayout layout;
  layout.add("trunk.w", s.hidden, s.input_dim());
  layout.add("trunk.b", s.hidden, 1);
  for (int c = 0; c < s.cores; ++c) {
    layout.add(detail::core_name(c, "w"), 3 * s.recurrent, s.hidden);
    layout.add(detail::core_name(c, "u"), 3 * s.recurrent, s.recurrent);
    layout.add(detail::core_name(c, "b"), 3 * s.recurrent, 1);
  }
  for (int h = 0; h < s.heads; ++h) {
    layout.add(detail::head_name(h, "pi.w"), s.num_actions, s.recurrent);
    layout.add(detail::head_name(h, "pi.b"), s.num_actions, 1);
    layout.add(detail::head_name(h, "v.w"), 1, s.recurrent);
    layout.add(detail::head_name(h, "v.b"), 1, 1);
  }
  return layout;
}

void orthogonal_fill(Eigen::Ref<Eigen::MatrixXd> out, double gain, Rng& rng) {
  const Eigen::Index rows = out.rows(), cols = out.cols();
  const Eigen::Index big = std::max(rows, cols), small = std::min(rows, cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index j = 0; j < small; ++j)
    for (Eigen::Index i = 0; i < big; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix makes the draw uniform over the orthogonal group.
  const Eigen::VectorXd d = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < small; ++j)
    if (d[j] < 0) q.col(j) *= -1.0;
  if (rows >= cols)
    out = gain * q;
  else
    out = gain * q.transpose();
}

template <typename Scalar>
PolicyParams<Scalar> init_policy(const PolicyShape& shape, Rng& rng, double head_scale) {
  PolicyParams<Scalar> p(shape);
  const auto fill = [&](const std::string& name, double gain) {
    const auto& l = p.layout.at(name);
    Eigen::MatrixXd m(l.rows, l.cols);
    orthogonal_fill(m, gain, rng);
    p.matrix(name) = m.cast<Scalar>();
  };
  fill("trunk.w", 1.0);
  for (int c = 0; c < shape.cores; ++c) {
    fill(detail::core_name(c, "w"), 1.0);
    fill(detail::core_name(c, "u"), 1.0);
  }
  for (int h = 0; h < shape.heads; ++h) {
    fill(detail::head_name(h, "pi.w"), head_scale);
    fill(detail::head_name(h, "v.w"), head_scale);
  }
  return p;
}

template PolicyParams<float> init_policy<float>(const PolicyShape&, Rng&, double);
template PolicyParams<double> init_policy<double>(const PolicyShape&, Rng&, double);

ActionSample sample_action(const Eigen::VectorXd& logits, Rng& rng, SampleMode mode) {
  if (!logits.allFinite()) throw std::invalid_argument("non-finite logits");
  const Eigen::VectorXd logp = log_softmax(logits);
  int action = 0;
  if (mode == SampleMode::kArgmax) {
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[action]) action = static_cast<int>(i);
  } else {
    const double u = uniform01(rng);
    double cum = 0.0;
    action = static_cast<int>(logits.size()) - 1;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      cum += std::exp(logp[i]);
      if (u < cum) {
        action = static_cast<int>(i);
        break;
      }
    }
  }
  return {action, logp[action]};
}

LogprobEntropy logprob_entropy(const Eigen::VectorXd& logits, int action) {
  const Eigen::VectorXd logp = log_softmax(logits);
  const double entropy = -(logp.array().exp() * logp.array()).sum();
  return {logp[action], std::max(0.0, entropy)};
}

double finite_diff_check(const Eigen::VectorXd& params, const LossFn& loss,
                         double epsilon) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
  loss(params, &grad);
  Eigen::VectorXd probe = params;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + epsilon;
    const double up = loss(probe, nullptr);
    probe[i] = params[i] - epsilon;
    const double down = loss(probe, nullptr);
    probe[i] = params[i];
    const double fd = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(std::abs(grad[i]), 1e-8));
  }
  return worst;
}

}  // namespace zsc

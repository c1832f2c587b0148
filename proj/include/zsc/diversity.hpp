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

// Behavior diversity: a trajectory discriminator q(z | window) whose
// log-probability is the intrinsic reward, and the action-distribution JSD
// bonus used by the TrajeDi baseline.

#ifndef ZSC_DIVERSITY_HPP_
#define ZSC_DIVERSITY_HPP_

#include <Eigen/Dense>

#include <vector>

#include "zsc/approximator.hpp"
#include "zsc/world.hpp"

namespace zsc {

inline constexpr int kWindowTicks = 40;
inline constexpr int kDiscBufferCapacity = 100000;

// Last W ticks of (x, y, action) features for one agent, zero-padded at the
// start of an episode. flat() is oldest-first, length 3W.
class TrajectoryWindow {
 public:
  explicit TrajectoryWindow(int ticks = kWindowTicks);

  void reset();
  void push(double x, double y, double action);
  void push(const WorldState& state, int agent, ActionId executed);
  Eigen::VectorXd flat() const;
  int ticks() const { return ticks_; }

 private:
  int ticks_;
  int head_ = 0;  // next slot to overwrite
  Eigen::Matrix<double, 3, Eigen::Dynamic> ring_;
};

struct DiscriminatorShape {
  int window = kWindowTicks;
  int hidden = 128;
  int num_latents = 4;

  int input_dim() const { return 3 * window; }
  bool operator==(const DiscriminatorShape&) const = default;
};

ParamLayout discriminator_layout(const DiscriminatorShape& shape);

template <typename Scalar>
struct DiscriminatorParams {
  DiscriminatorShape shape;
  ParamLayout layout;
  Vec<Scalar> values;

  DiscriminatorParams() = default;
  explicit DiscriminatorParams(const DiscriminatorShape& s)
      : shape(s), layout(discriminator_layout(s)), values(Vec<Scalar>::Zero(layout.total)) {}

  Eigen::Map<const Mat<Scalar>> matrix(const std::string& name) const {
    const auto& l = layout.at(name);
    return {values.data() + l.offset, l.rows, l.cols};
  }
  Eigen::Map<Mat<Scalar>> matrix(const std::string& name) {
    const auto& l = layout.at(name);
    return {values.data() + l.offset, l.rows, l.cols};
  }
};

template <typename Scalar>
DiscriminatorParams<Scalar> init_discriminator(const DiscriminatorShape& shape, Rng& rng);

// Logits for each column of `windows` (3W x B).
template <typename Scalar>
Mat<Scalar> disc_forward_batch(const DiscriminatorParams<Scalar>& p,
                               const Mat<Scalar>& windows) {
  const Mat<Scalar> a1 =
      ((p.matrix("l1.w") * windows).colwise() + p.matrix("l1.b").col(0)).array().tanh().matrix();
  const Mat<Scalar> a2 =
      ((p.matrix("l2.w") * a1).colwise() + p.matrix("l2.b").col(0)).array().tanh().matrix();
  return (p.matrix("out.w") * a2).colwise() + p.matrix("out.b").col(0);
}

// Mean cross-entropy of the labels under q; accumulates its gradient into
// `grad` when non-null.
template <typename Scalar>
Scalar disc_cross_entropy(const DiscriminatorParams<Scalar>& p, const Mat<Scalar>& windows,
                          const std::vector<int>& labels, Vec<Scalar>* grad) {
  const Eigen::Index n = windows.cols();
  const Mat<Scalar> a1 =
      ((p.matrix("l1.w") * windows).colwise() + p.matrix("l1.b").col(0)).array().tanh().matrix();
  const Mat<Scalar> a2 =
      ((p.matrix("l2.w") * a1).colwise() + p.matrix("l2.b").col(0)).array().tanh().matrix();
  const Mat<Scalar> logits = (p.matrix("out.w") * a2).colwise() + p.matrix("out.b").col(0);
  const Mat<Scalar> logp = log_softmax(logits);
  Scalar loss(0);
  for (Eigen::Index j = 0; j < n; ++j) loss -= logp(labels[static_cast<std::size_t>(j)], j);
  loss /= static_cast<Scalar>(n);
  if (!grad) return loss;

  Mat<Scalar> dl = logp.array().exp().matrix();
  for (Eigen::Index j = 0; j < n; ++j) dl(labels[static_cast<std::size_t>(j)], j) -= Scalar(1);
  dl /= static_cast<Scalar>(n);
  const auto slot = [&](const char* name) {
    const auto& l = p.layout.at(name);
    return Eigen::Map<Mat<Scalar>>(grad->data() + l.offset, l.rows, l.cols);
  };
  slot("out.w").noalias() += dl * a2.transpose();
  slot("out.b") += dl.rowwise().sum();
  const Mat<Scalar> d2 = (p.matrix("out.w").transpose() * dl)
                             .cwiseProduct((Scalar(1) - a2.array().square()).matrix());
  slot("l2.w").noalias() += d2 * a1.transpose();
  slot("l2.b") += d2.rowwise().sum();
  const Mat<Scalar> d1 = (p.matrix("l2.w").transpose() * d2)
                             .cwiseProduct((Scalar(1) - a1.array().square()).matrix());
  slot("l1.w").noalias() += d1 * windows.transpose();
  slot("l1.b") += d1.rowwise().sum();
  return loss;
}

// Logits for one window; throws std::invalid_argument on a length mismatch.
Eigen::VectorXd disc_forward(const DiscriminatorParams<Real>& params,
                             const Eigen::VectorXd& window);
double disc_log_prob(const DiscriminatorParams<Real>& params,
                     const Eigen::VectorXd& window, int latent);

// FIFO ring of (window, latent) samples.
class DiscBuffer {
 public:
  explicit DiscBuffer(int window_dim, int capacity = kDiscBufferCapacity);

  void push(const Eigen::VectorXd& window, int latent);
  int size() const { return size_; }
  int capacity() const { return capacity_; }
  // i = 0 is the oldest sample still held.
  Eigen::VectorXf window(int i) const;
  int label(int i) const;
  void sample(int batch, Rng& rng, Mat<Real>& windows, std::vector<int>& labels) const;

 private:
  int slot(int i) const { return (start_ + i) % capacity_; }

  int dim_;
  int capacity_;
  int start_ = 0;
  int size_ = 0;
  std::vector<float> data_;
  std::vector<int> labels_;
};

struct DiscUpdateConfig {
  int batch_size = 256;
  AdamConfig adam{3e-4, 0.9, 0.999, 1e-5, 1e9};
};

// One Adam step on a uniform batch from `buffer`; returns the batch
// cross-entropy before the step. Throws std::logic_error on an empty buffer.
double disc_update(DiscriminatorParams<Real>& params, AdamState<Real>& adam,
                   const DiscBuffer& buffer, const DiscUpdateConfig& config, Rng& rng);

// Zero for tick < ceil(0.1 * horizon), else log q(z | window). `tick` is the
// 0-based index of the tick being rewarded.
double diversity_reward(const DiscriminatorParams<Real>& params,
                        const Eigen::VectorXd& window, int latent, int tick, int horizon);
int diversity_gate(int horizon);

// Fraction of windows whose argmax prediction equals the label.
double disc_accuracy(const DiscriminatorParams<Real>& params, const Mat<Real>& windows,
                     const std::vector<int>& labels);

// H(mean_k p_k) - mean_k H(p_k). Throws std::invalid_argument if any input
// is not a distribution to 1e-6.
double trajedi_jsd(const std::vector<Eigen::VectorXd>& distributions);

}  // namespace zsc

#endif  // ZSC_DIVERSITY_HPP_

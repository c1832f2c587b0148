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

#include "zsc/diversity.hpp"

#include <cmath>
#include <stdexcept>

namespace zsc {

TrajectoryWindow::TrajectoryWindow(int ticks)
    : ticks_(ticks), ring_(Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, ticks)) {}

void TrajectoryWindow::reset() {
  ring_.setZero();
  head_ = 0;
}

void TrajectoryWindow::push(double x, double y, double action) {
  ring_.col(head_) << x, y, action;
  head_ = (head_ + 1) % ticks_;
}

void TrajectoryWindow::push(const WorldState& state, int agent, ActionId executed) {
  const auto& layout = *state.layout;
  const Cell p = state.agents[static_cast<std::size_t>(agent)].pos;
  push(2.0 * p.x / (layout.width - 1) - 1.0, 2.0 * p.y / (layout.height - 1) - 1.0,
       static_cast<double>(executed.value) / kNumActions);
}

Eigen::VectorXd TrajectoryWindow::flat() const {
  Eigen::VectorXd out(3 * ticks_);
  for (int t = 0; t < ticks_; ++t) out.segment<3>(3 * t) = ring_.col((head_ + t) % ticks_);
  return out;
}

ParamLayout discriminator_layout(const DiscriminatorShape& s) {
  if (s.window <= 0 || s.hidden <= 0 || s.num_latents <= 0)
    throw std::invalid_argument("invalid discriminator shape");
  ParamLayout layout;
  layout.add("l1.w", s.hidden, s.input_dim());
  layout.add("l1.b", s.hidden, 1);
  layout.add("l2.w", s.hidden, s.hidden);
  layout.add("l2.b", s.hidden, 1);
  layout.add("out.w", s.num_latents, s.hidden);
  layout.add("out.b", s.num_latents, 1);
  return layout;
}

template <typename Scalar>
DiscriminatorParams<Scalar> init_discriminator(const DiscriminatorShape& shape, Rng& rng) {
  DiscriminatorParams<Scalar> p(shape);
  for (const auto& [name, gain] : {std::pair{"l1.w", 1.0}, {"l2.w", 1.0}, {"out.w", 0.01}}) {
    const auto& l = p.layout.at(name);
    Eigen::MatrixXd m(l.rows, l.cols);
    orthogonal_fill(m, gain, rng);
    p.matrix(name) = m.cast<Scalar>();
  }
  return p;
}

template DiscriminatorParams<float> init_discriminator<float>(const DiscriminatorShape&, Rng&);
template DiscriminatorParams<double> init_discriminator<double>(const DiscriminatorShape&, Rng&);

Eigen::VectorXd disc_forward(const DiscriminatorParams<Real>& params,
                             const Eigen::VectorXd& window) {
  if (window.size() != params.shape.input_dim())
    throw std::invalid_argument("window length " + std::to_string(window.size()) +
                                " != " + std::to_string(params.shape.input_dim()));
  const Mat<Real> x = window.cast<Real>();
  return disc_forward_batch(params, x).col(0).cast<double>();
}

double disc_log_prob(const DiscriminatorParams<Real>& params, const Eigen::VectorXd& window,
                     int latent) {
  if (latent < 0 || latent >= params.shape.num_latents)
    throw std::out_of_range("latent " + std::to_string(latent));
  const Eigen::VectorXd logp = log_softmax(disc_forward(params, window));
  return logp[latent];
}

DiscBuffer::DiscBuffer(int window_dim, int capacity)
    : dim_(window_dim), capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
}

void DiscBuffer::push(const Eigen::VectorXd& window, int latent) {
  if (window.size() != dim_) throw std::invalid_argument("window length mismatch");
  int at;
  if (size_ < capacity_) {
    at = slot(size_);
    ++size_;
    if (static_cast<int>(labels_.size()) < size_) {
      data_.resize(static_cast<std::size_t>(size_) * static_cast<std::size_t>(dim_));
      labels_.resize(static_cast<std::size_t>(size_));
    }
  } else {
    at = start_;
    start_ = (start_ + 1) % capacity_;
  }
  Eigen::Map<Eigen::VectorXf>(data_.data() + static_cast<std::size_t>(at) * dim_, dim_) =
      window.cast<float>();
  labels_[static_cast<std::size_t>(at)] = latent;
}

Eigen::VectorXf DiscBuffer::window(int i) const {
  if (i < 0 || i >= size_) throw std::out_of_range("buffer index");
  return Eigen::Map<const Eigen::VectorXf>(
      data_.data() + static_cast<std::size_t>(slot(i)) * dim_, dim_);
}

int DiscBuffer::label(int i) const {
  if (i < 0 || i >= size_) throw std::out_of_range("buffer index");
  return labels_[static_cast<std::size_t>(slot(i))];
}

void DiscBuffer::sample(int batch, Rng& rng, Mat<Real>& windows,
                        std::vector<int>& labels) const {
  if (size_ == 0) throw std::logic_error("sampling from an empty discriminator buffer");
  windows.resize(dim_, batch);
  labels.resize(static_cast<std::size_t>(batch));
  for (int j = 0; j < batch; ++j) {
    const int i = uniform_int(rng, 0, size_ - 1);
    windows.col(j) = window(i).cast<Real>();
    labels[static_cast<std::size_t>(j)] = label(i);
  }
}

double disc_update(DiscriminatorParams<Real>& params, AdamState<Real>& adam,
                   const DiscBuffer& buffer, const DiscUpdateConfig& config, Rng& rng) {
  if (buffer.size() == 0) throw std::logic_error("discriminator update with an empty buffer");
  Mat<Real> windows;
  std::vector<int> labels;
  buffer.sample(config.batch_size, rng, windows, labels);
  Vec<Real> grad = Vec<Real>::Zero(params.values.size());
  const double ce = disc_cross_entropy(params, windows, labels, &grad);
  backward_update(params.values, std::move(grad), params.layout, adam, config.adam);
  return ce;
}

int diversity_gate(int horizon) {
  return static_cast<int>(std::ceil(0.1 * horizon));
}

double diversity_reward(const DiscriminatorParams<Real>& params, const Eigen::VectorXd& window,
                        int latent, int tick, int horizon) {
  if (tick < diversity_gate(horizon)) return 0.0;
  return disc_log_prob(params, window, latent);
}

double disc_accuracy(const DiscriminatorParams<Real>& params, const Mat<Real>& windows,
                     const std::vector<int>& labels) {
  if (windows.cols() == 0) return 0.0;
  const Mat<Real> logits = disc_forward_batch(params, windows);
  int correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.rows(); ++i)
      if (logits(i, j) > logits(best, j)) best = i;
    if (best == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

namespace {
double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}
}  // namespace

double trajedi_jsd(const std::vector<Eigen::VectorXd>& distributions) {
  if (distributions.empty()) throw std::invalid_argument("no distributions");
  const Eigen::Index n = distributions.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  double mean_h = 0.0;
  for (const auto& p : distributions) {
    if (p.size() != n || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-6)
      throw std::invalid_argument("input is not a probability vector");
    mean += p;
    mean_h += entropy(p);
  }
  const double k = static_cast<double>(distributions.size());
  mean /= k;
  mean_h /= k;
  return std::max(0.0, entropy(mean) - mean_h);
}

}  // namespace zsc

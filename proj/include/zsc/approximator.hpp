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

// Latent-conditioned recurrent policy with exact reverse-mode gradients.
//
//   x      = [obs ; onehot(z)]
//   a      = tanh(W x + b)                                   trunk
//   h'     = GRU(a, h)                                       core
//   logits = Wp h' + bp,  value = wv h' + bv                 head
//
// All parameters live in one flat vector; a layer table maps names to
// offsets. A parameter set may carry several cores and heads ("members")
// behind a single shared trunk.

#ifndef ZSC_APPROXIMATOR_HPP_
#define ZSC_APPROXIMATOR_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zsc/random.hpp"

namespace zsc {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Scalar type used for training and checkpoints.
using Real = float;

struct LayerSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  Eigen::Index offset = 0;
  Eigen::Index size() const { return Eigen::Index{rows} * cols; }
};

struct ParamLayout {
  std::vector<LayerSpec> layers;
  Eigen::Index total = 0;

  void add(std::string name, int rows, int cols);
  const LayerSpec& at(const std::string& name) const;
  // Layer containing flat index `i`.
  const LayerSpec& owner(Eigen::Index i) const;
};

struct PolicyShape {
  int obs_dim = 0;
  int latent_dim = 0;
  int hidden = 64;
  int recurrent = 64;
  int num_actions = 20;
  int cores = 1;
  int heads = 1;

  int input_dim() const { return obs_dim + latent_dim; }
  int members() const { return std::max(cores, heads); }
  bool operator==(const PolicyShape&) const = default;
};

ParamLayout policy_layout(const PolicyShape& shape);

template <typename Scalar>
struct PolicyParams {
  PolicyShape shape;
  ParamLayout layout;
  Vec<Scalar> values;

  PolicyParams() = default;
  explicit PolicyParams(const PolicyShape& s)
      : shape(s), layout(policy_layout(s)), values(Vec<Scalar>::Zero(layout.total)) {}

  Eigen::Map<const Mat<Scalar>> matrix(const std::string& name) const {
    const auto& l = layout.at(name);
    return {values.data() + l.offset, l.rows, l.cols};
  }
  Eigen::Map<Mat<Scalar>> matrix(const std::string& name) {
    const auto& l = layout.at(name);
    return {values.data() + l.offset, l.rows, l.cols};
  }

  template <typename Other>
  PolicyParams<Other> cast() const {
    PolicyParams<Other> out;
    out.shape = shape;
    out.layout = layout;
    out.values = values.template cast<Other>();
    return out;
  }
};

// Orthogonal init (QR of a Gaussian matrix), zero biases, output heads
// scaled by `head_scale`. Instantiated for float and double.
template <typename Scalar>
PolicyParams<Scalar> init_policy(const PolicyShape& shape, Rng& rng,
                                 double head_scale = 0.01);

// Orthogonal matrix (rows x cols) times `gain`, written into `out`.
void orthogonal_fill(Eigen::Ref<Eigen::MatrixXd> out, double gain, Rng& rng);

template <typename Scalar>
struct PolicyOutput {
  Vec<Scalar> logits;
  Scalar value{};
  Vec<Scalar> next_hidden;
};

// Column of the trunk input: observation followed by the latent one-hot.
template <typename Scalar>
Vec<Scalar> policy_input(const PolicyShape& shape, const Eigen::VectorXd& obs,
                         std::optional<int> latent) {
  if (obs.size() != shape.obs_dim)
    throw std::invalid_argument("observation length " + std::to_string(obs.size()) +
                                " != " + std::to_string(shape.obs_dim));
  Vec<Scalar> x = Vec<Scalar>::Zero(shape.input_dim());
  x.head(shape.obs_dim) = obs.cast<Scalar>();
  if (shape.latent_dim > 0) {
    if (!latent || *latent < 0 || *latent >= shape.latent_dim)
      throw std::out_of_range("latent out of range for K=" +
                              std::to_string(shape.latent_dim));
    x[shape.obs_dim + *latent] = Scalar(1);
  } else if (latent && *latent != 0) {
    throw std::out_of_range("policy has no latent input");
  }
  return x;
}

// Intermediate activations of a batched forward pass (one column per sample).
template <typename Scalar>
struct PolicyCache {
  Mat<Scalar> x, h, a, z, r, hr, n, h_next, logits;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> value;
};

namespace detail {
template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  return (S(1) + (-m.array()).exp()).inverse().matrix();
}
inline std::string core_name(int c, const char* part) {
  return "core" + std::to_string(c) + "." + part;
}
inline std::string head_name(int h, const char* part) {
  return "head" + std::to_string(h) + "." + part;
}
}  // namespace detail

template <typename Scalar>
int core_of(const PolicyParams<Scalar>& p, int member) {
  return p.shape.cores == 1 ? 0 : member;
}
template <typename Scalar>
int head_of(const PolicyParams<Scalar>& p, int member) {
  return p.shape.heads == 1 ? 0 : member;
}

template <typename Scalar>
PolicyCache<Scalar> forward_batch(const PolicyParams<Scalar>& p,
                                  const Mat<Scalar>& x, const Mat<Scalar>& h,
                                  int member = 0) {
  using detail::sigmoid;
  const int rdim = p.shape.recurrent;
  const int c = core_of(p, member), hd = head_of(p, member);
  PolicyCache<Scalar> k;
  k.x = x;
  k.h = h;
  k.a = ((p.matrix("trunk.w") * x).colwise() + p.matrix("trunk.b").col(0))
            .array()
            .tanh()
            .matrix();
  const auto wc = p.matrix(detail::core_name(c, "w"));
  const auto uc = p.matrix(detail::core_name(c, "u"));
  const auto bc = p.matrix(detail::core_name(c, "b"));
  Mat<Scalar> g = (wc * k.a).colwise() + bc.col(0);
  Mat<Scalar> gu = uc.topRows(2 * rdim) * h;
  k.z = sigmoid(g.topRows(rdim) + gu.topRows(rdim));
  k.r = sigmoid(g.middleRows(rdim, rdim) + gu.bottomRows(rdim));
  k.hr = k.r.cwiseProduct(h);
  k.n = (g.bottomRows(rdim) + uc.bottomRows(rdim) * k.hr).array().tanh().matrix();
  k.h_next = (Scalar(1) - k.z.array()).matrix().cwiseProduct(k.n) + k.z.cwiseProduct(h);
  k.logits = (p.matrix(detail::head_name(hd, "pi.w")) * k.h_next).colwise() +
             p.matrix(detail::head_name(hd, "pi.b")).col(0);
  k.value = (p.matrix(detail::head_name(hd, "v.w")) * k.h_next).array() +
            p.matrix(detail::head_name(hd, "v.b"))(0, 0);
  return k;
}

// Accumulates d(loss)/d(params) into `grad` given upstream gradients on the
// logits (A x B) and values (1 x B). No gradient flows into the input hidden.
template <typename Scalar>
void backward_batch(const PolicyParams<Scalar>& p, const PolicyCache<Scalar>& k,
                    const Mat<Scalar>& dlogits,
                    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& dvalue,
                    Vec<Scalar>& grad, int member = 0) {
  const int rdim = p.shape.recurrent;
  const int c = core_of(p, member), hd = head_of(p, member);
  const auto slot = [&](const std::string& name) {
    const auto& l = p.layout.at(name);
    return Eigen::Map<Mat<Scalar>>(grad.data() + l.offset, l.rows, l.cols);
  };
  const auto wp = p.matrix(detail::head_name(hd, "pi.w"));
  const auto wv = p.matrix(detail::head_name(hd, "v.w"));
  slot(detail::head_name(hd, "pi.w")).noalias() += dlogits * k.h_next.transpose();
  slot(detail::head_name(hd, "pi.b")) += dlogits.rowwise().sum();
  slot(detail::head_name(hd, "v.w")).noalias() += dvalue * k.h_next.transpose();
  slot(detail::head_name(hd, "v.b"))(0, 0) += dvalue.sum();

  Mat<Scalar> dh = wp.transpose() * dlogits + wv.transpose() * dvalue;
  const auto one = Scalar(1);
  Mat<Scalar> dn_pre = dh.cwiseProduct((one - k.z.array()).matrix())
                           .cwiseProduct((one - k.n.array().square()).matrix());
  Mat<Scalar> dz_pre = dh.cwiseProduct(k.h - k.n)
                           .cwiseProduct(k.z.cwiseProduct((one - k.z.array()).matrix()));
  const auto uc = p.matrix(detail::core_name(c, "u"));
  Mat<Scalar> dhr = uc.bottomRows(rdim).transpose() * dn_pre;
  Mat<Scalar> dr_pre = dhr.cwiseProduct(k.h).cwiseProduct(
      k.r.cwiseProduct((one - k.r.array()).matrix()));

  Mat<Scalar> dg(3 * rdim, k.x.cols());
  dg.topRows(rdim) = dz_pre;
  dg.middleRows(rdim, rdim) = dr_pre;
  dg.bottomRows(rdim) = dn_pre;
  auto gu = slot(detail::core_name(c, "u"));
  gu.topRows(rdim).noalias() += dz_pre * k.h.transpose();
  gu.middleRows(rdim, rdim).noalias() += dr_pre * k.h.transpose();
  gu.bottomRows(rdim).noalias() += dn_pre * k.hr.transpose();
  slot(detail::core_name(c, "w")).noalias() += dg * k.a.transpose();
  slot(detail::core_name(c, "b")) += dg.rowwise().sum();

  Mat<Scalar> da = (p.matrix(detail::core_name(c, "w")).transpose() * dg)
                       .cwiseProduct((one - k.a.array().square()).matrix());
  slot("trunk.w").noalias() += da * k.x.transpose();
  slot("trunk.b") += da.rowwise().sum();
}

template <typename Scalar>
PolicyOutput<Scalar> forward_policy(const PolicyParams<Scalar>& p,
                                    const Eigen::VectorXd& obs,
                                    std::optional<int> latent,
                                    const Vec<Scalar>& hidden, int member = 0) {
  if (member < 0 || member >= p.shape.members())
    throw std::out_of_range("member index " + std::to_string(member));
  const Vec<Scalar> x = policy_input<Scalar>(p.shape, obs, latent);
  const auto k = forward_batch<Scalar>(p, x, hidden, member);
  return {k.logits.col(0), k.value(0, 0), k.h_next.col(0)};
}

template <typename Scalar>
Vec<Scalar> zero_hidden(const PolicyShape& shape) {
  return Vec<Scalar>::Zero(shape.recurrent);
}

// Numerically stable log-softmax of each column.
template <typename Derived>
auto log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  Mat<S> out = logits;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const S m = out.col(j).maxCoeff();
    const S lse = m + std::log((out.col(j).array() - m).exp().sum());
    out.col(j).array() -= lse;
  }
  return out;
}

enum class SampleMode { kSample, kArgmax };

struct ActionSample {
  int action = 0;
  double logprob = 0.0;
};

// Throws std::invalid_argument on non-finite logits. Argmax ties go to the
// lowest index.
ActionSample sample_action(const Eigen::VectorXd& logits, Rng& rng, SampleMode mode);

struct LogprobEntropy {
  double logprob = 0.0;
  double entropy = 0.0;
};
LogprobEntropy logprob_entropy(const Eigen::VectorXd& logits, int action);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  double max_grad_norm = 0.2;
};

template <typename Scalar>
struct AdamState {
  Vec<Scalar> m;
  Vec<Scalar> v;
  long steps = 0;

  static AdamState zeros(Eigen::Index n) {
    return {Vec<Scalar>::Zero(n), Vec<Scalar>::Zero(n), 0};
  }
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rescales `grad` to at most `max_norm`; returns the pre-clip norm.
template <typename Scalar>
double clip_grad_norm(Vec<Scalar>& grad, double max_norm) {
  const double norm = static_cast<double>(grad.norm());
  if (norm > max_norm && norm > 0.0) grad *= static_cast<Scalar>(max_norm / norm);
  return norm;
}

// Exact-gradient update: finiteness check (error names the layer), global
// norm clip, Adam step. Returns the pre-clip gradient norm.
template <typename Scalar>
double backward_update(Vec<Scalar>& params, Vec<Scalar> grad,
                       const ParamLayout& layout, AdamState<Scalar>& adam,
                       const AdamConfig& config) {
  for (Eigen::Index i = 0; i < grad.size(); ++i)
    if (!std::isfinite(static_cast<double>(grad[i])))
      throw NonFiniteGradient("non-finite gradient in layer " + layout.owner(i).name);
  const double norm = clip_grad_norm(grad, config.max_grad_norm);
  if (adam.m.size() != params.size()) adam = AdamState<Scalar>::zeros(params.size());
  adam.steps += 1;
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  adam.m = b1 * adam.m + (Scalar(1) - b1) * grad;
  adam.v = b2 * adam.v + (Scalar(1) - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.steps));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.steps));
  const auto step = static_cast<Scalar>(config.lr / c1);
  const auto eps = static_cast<Scalar>(config.eps);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
  params.array() -= step * adam.m.array() / ((adam.v.array() * inv_c2).sqrt() + eps);
  return norm;
}

// Loss callback: returns the loss and, when `grad` is non-null, writes the
// analytic gradient into it.
using LossFn = std::function<double(const Eigen::VectorXd& params, Eigen::VectorXd* grad)>;

// max_i |fd_i - g_i| / max(|g_i|, 1e-8) with central differences fd.
double finite_diff_check(const Eigen::VectorXd& params, const LossFn& loss,
                         double epsilon);

}  // namespace zsc

#endif  // ZSC_APPROXIMATOR_HPP_

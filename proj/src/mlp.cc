// Copyright 2026 The Churn Lab Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "churn_lab/mlp.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "churn_lab/csv.h"
#include "churn_lab/errors.h"
#include "churn_lab/mdp.h"

namespace churn_lab {

void MlpSpec::validate() const {
  if (input_dimension <= 0) throw ValidationError("mlp: input_dimension must be positive");
  for (int h : hidden_layer_sizes) {
    if (h <= 0) throw ValidationError("mlp: hidden layer sizes must be positive");
  }
  if (output_dimension < 2) throw ValidationError("mlp: output_dimension must be >= 2");
}

int64_t MlpParams::num_parameters() const {
  int64_t n = 0;
  for (const DenseLayer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool MlpParams::all_finite() const {
  for (const DenseLayer& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

MlpParams MlpParams::zeros_like() const {
  MlpParams out;
  out.layers.reserve(layers.size());
  for (const DenseLayer& l : layers) {
    out.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
  }
  return out;
}

double& MlpParams::flat(int64_t index) {
  for (DenseLayer& l : layers) {
    if (index < l.weight.size()) {
      const Eigen::Index cols = l.weight.cols();
      return l.weight(index / cols, index % cols);
    }
    index -= l.weight.size();
    if (index < l.bias.size()) return l.bias[index];
    index -= l.bias.size();
  }
  throw ValidationError("mlp: flat parameter index out of range");
}

double MlpParams::flat(int64_t index) const {
  return const_cast<MlpParams*>(this)->flat(index);
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

MlpParams mlp_init(const MlpSpec& spec, uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<int> sizes;
  sizes.push_back(spec.input_dimension);
  for (int h : spec.hidden_layer_sizes) sizes.push_back(h);
  sizes.push_back(spec.output_dimension);

  MlpParams params;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        layer.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
      }
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

void check_input(const MlpParams& params, Eigen::Index rows) {
  if (params.layers.empty()) throw ValidationError("mlp: no layers");
  if (params.layers.front().weight.cols() != rows) {
    throw ValidationError("mlp: observation dimension " + std::to_string(rows) +
                          " does not match input dimension " +
                          std::to_string(params.layers.front().weight.cols()));
  }
}

// Pre-activations of every layer; activations are recomputed from them.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;  // pre[l] = W_l a_{l-1} + b_l
};

Eigen::MatrixXd forward_cached(const MlpParams& params, const Eigen::MatrixXd& x,
                               ForwardCache* cache) {
  check_input(params, x.rows());
  Eigen::MatrixXd a = x;
  const int L = params.num_layers();
  for (int l = 0; l < L; ++l) {
    const DenseLayer& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    if (cache) cache->pre.push_back(z);
    if (l + 1 < L) {
      a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

// Backpropagates dL/d(output) through the cached forward pass.
MlpParams backward(const MlpParams& params, const Eigen::MatrixXd& x,
                   const ForwardCache& cache, Eigen::MatrixXd delta) {
  const int L = params.num_layers();
  MlpParams grad;
  grad.layers.resize(L);
  for (int l = L - 1; l >= 0; --l) {
    if (l > 0) {
      const Eigen::MatrixXd input = cache.pre[l - 1].cwiseMax(0.0);
      grad.layers[l].weight = delta * input.transpose();
    } else {
      grad.layers[l].weight = delta * x.transpose();
    }
    grad.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = params.layers[l].weight.transpose() * delta;
      const Eigen::MatrixXd& z = cache.pre[l - 1];
      delta = (z.array() > 0.0).select(back, 0.0);
    }
  }
  return grad;
}

void check_batch(const SelectedActionBatch& b) {
  const auto n = b.observations.cols();
  if (n == 0) throw ValidationError("loss: empty batch");
  if (static_cast<Eigen::Index>(b.actions.size()) != n || b.targets.size() != n) {
    throw ValidationError("loss: batch fields have inconsistent sizes");
  }
}

void check_batch(const DistributionBatch& b) {
  if (b.observations.cols() == 0) throw ValidationError("loss: empty batch");
  if (b.target_probabilities.cols() != b.observations.cols()) {
    throw ValidationError("loss: batch fields have inconsistent sizes");
  }
}

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

template <typename Batch>
double fd_check(const MlpParams& params, const Batch& batch, double h) {
  const LossAndGrad analytic = loss_and_grad(params, batch);
  MlpParams probe = params;
  double worst = 0.0;
  for (int64_t i = 0; i < params.num_parameters(); ++i) {
    const double original = probe.flat(i);
    probe.flat(i) = original + h;
    const double up = loss_value(probe, batch);
    probe.flat(i) = original - h;
    const double down = loss_value(probe, batch);
    probe.flat(i) = original;
    const double numeric = (up - down) / (2.0 * h);
    const double exact = analytic.gradient.flat(i);
    const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-4});
    worst = std::max(worst, std::abs(numeric - exact) / denom);
  }
  return worst;
}

}  // namespace

Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::VectorXd& observation) {
  return forward_cached(params, observation, nullptr).col(0);
}

Eigen::MatrixXd mlp_forward_batch(const MlpParams& params,
                                  const Eigen::MatrixXd& observations) {
  return forward_cached(params, observations, nullptr);
}

LossAndGrad loss_and_grad(const MlpParams& params, const SelectedActionBatch& batch) {
  check_batch(batch);
  ForwardCache cache;
  const Eigen::MatrixXd out = forward_cached(params, batch.observations, &cache);
  const auto n = out.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(out.rows(), n);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = batch.actions[j];
    if (a < 0 || a >= out.rows()) throw ValidationError("loss: action out of range");
    const double err = out(a, j) - batch.targets[j];
    loss += 0.5 * err * err;
    delta(a, j) = err * inv_n;
  }
  return {loss * inv_n, backward(params, batch.observations, cache, std::move(delta))};
}

LossAndGrad loss_and_grad(const MlpParams& params, const DistributionBatch& batch) {
  check_batch(batch);
  ForwardCache cache;
  const Eigen::MatrixXd out = forward_cached(params, batch.observations, &cache);
  const double inv_n = 1.0 / static_cast<double>(out.cols());
  const Eigen::MatrixXd logp = log_softmax(out);
  const double loss = -(batch.target_probabilities.array() * logp.array()).sum() * inv_n;
  Eigen::MatrixXd delta =
      (logp.array().exp() * batch.target_probabilities.colwise().sum().replicate(out.rows(), 1).array() -
       batch.target_probabilities.array()) *
      inv_n;
  return {loss, backward(params, batch.observations, cache, std::move(delta))};
}

double loss_value(const MlpParams& params, const SelectedActionBatch& batch) {
  check_batch(batch);
  const Eigen::MatrixXd out = mlp_forward_batch(params, batch.observations);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const int a = batch.actions[j];
    if (a < 0 || a >= out.rows()) throw ValidationError("loss: action out of range");
    const double err = out(a, j) - batch.targets[j];
    loss += 0.5 * err * err;
  }
  return loss / static_cast<double>(out.cols());
}

double loss_value(const MlpParams& params, const DistributionBatch& batch) {
  check_batch(batch);
  const Eigen::MatrixXd logp = log_softmax(mlp_forward_batch(params, batch.observations));
  return -(batch.target_probabilities.array() * logp.array()).sum() /
         static_cast<double>(logp.cols());
}

double min_abs_preactivation(const MlpParams& params, const Eigen::MatrixXd& observations) {
  ForwardCache cache;
  forward_cached(params, observations, &cache);
  double best = std::numeric_limits<double>::infinity();
  for (size_t l = 0; l + 1 < cache.pre.size(); ++l) {
    best = std::min(best, cache.pre[l].cwiseAbs().minCoeff());
  }
  return best;
}

double finite_difference_check(const MlpParams& params, const SelectedActionBatch& batch,
                               double h) {
  return fd_check(params, batch, h);
}

double finite_difference_check(const MlpParams& params, const DistributionBatch& batch,
                               double h) {
  return fd_check(params, batch, h);
}

double LearningRateSchedule::at(int64_t step) const {
  if (steps <= 0 || start == end || step <= 0) return start;
  if (step >= steps) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(steps);
  return start * std::pow(end / start, frac);
}

FreezeMask FreezeMask::all_trainable(int num_layers) {
  return FreezeMask{std::vector<bool>(num_layers, true)};
}

FreezeMask FreezeMask::top_layers(int num_layers, int k) {
  if (k < 1 || k > num_layers) {
    throw ValidationError("freeze mask: trainable top layers must be in [1, " +
                          std::to_string(num_layers) + "]");
  }
  FreezeMask mask{std::vector<bool>(num_layers, false)};
  for (int l = num_layers - k; l < num_layers; ++l) mask.trainable[l] = true;
  return mask;
}

void FreezeMask::validate(int num_layers) const {
  if (static_cast<int>(trainable.size()) != num_layers) {
    throw ValidationError("freeze mask size does not match the network");
  }
  if (std::none_of(trainable.begin(), trainable.end(), [](bool b) { return b; })) {
    throw ValidationError("freeze mask must leave at least one layer trainable");
  }
}

Optimizer::Optimizer(OptimizerConfig config, const MlpParams& like)
    : config_(config), first_moment_(like.zeros_like()), second_moment_(like.zeros_like()) {
  const LearningRateSchedule& s = config_.schedule;
  if (!(s.start >= 0.0) || !(s.end >= 0.0) || !std::isfinite(s.start) || !std::isfinite(s.end)) {
    throw ValidationError("optimizer: learning rate must be finite and non-negative");
  }
  if (s.steps > 0 && s.start != s.end && (s.start == 0.0 || s.end == 0.0)) {
    throw ValidationError("optimizer: log-linear schedule needs positive endpoints");
  }
}

void Optimizer::step(MlpParams& params, const MlpParams& gradient, const FreezeMask& mask) {
  mask.validate(params.num_layers());
  const double eta = config_.schedule.at(step_);
  ++step_;
  for (int l = 0; l < params.num_layers(); ++l) {
    if (!mask.trainable[l]) continue;
    DenseLayer& p = params.layers[l];
    const DenseLayer& g = gradient.layers[l];
    DenseLayer& m = first_moment_.layers[l];
    DenseLayer& v = second_moment_.layers[l];
    switch (config_.kind) {
      case OptimizerKind::kSgd:
        p.weight -= eta * g.weight;
        p.bias -= eta * g.bias;
        break;
      case OptimizerKind::kRmsProp: {
        const double decay = config_.rmsprop_decay;
        const double eps = config_.epsilon;
        v.weight = decay * v.weight + (1.0 - decay) * g.weight.cwiseAbs2();
        v.bias = decay * v.bias + (1.0 - decay) * g.bias.cwiseAbs2();
        p.weight.array() -= eta * g.weight.array() / (v.weight.array() + eps).sqrt();
        p.bias.array() -= eta * g.bias.array() / (v.bias.array() + eps).sqrt();
        break;
      }
      case OptimizerKind::kAdam: {
        const double b1 = config_.adam_beta1;
        const double b2 = config_.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        m.weight = b1 * m.weight + (1.0 - b1) * g.weight;
        m.bias = b1 * m.bias + (1.0 - b1) * g.bias;
        v.weight = b2 * v.weight + (1.0 - b2) * g.weight.cwiseAbs2();
        v.bias = b2 * v.bias + (1.0 - b2) * g.bias.cwiseAbs2();
        p.weight.array() -= eta * (m.weight.array() / c1) /
                            ((v.weight.array() / c2).sqrt() + config_.epsilon);
        p.bias.array() -= eta * (m.bias.array() / c1) /
                          ((v.bias.array() / c2).sqrt() + config_.epsilon);
        break;
      }
    }
  }
}

void write_params_csv(std::ostream& os, const MlpParams& params) {
  os << schema_line("mlp_params") << '\n';
  os << "layer,kind,row,col,value\n";
  for (int l = 0; l < params.num_layers(); ++l) {
    const DenseLayer& layer = params.layers[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        os << l << ",w," << r << ',' << c << ',' << format_double(layer.weight(r, c)) << '\n';
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      os << l << ",b," << r << ",0," << format_double(layer.bias[r]) << '\n';
    }
  }
}

void write_params_binary(std::ostream& os, const MlpParams& params) {
  for (int64_t i = 0; i < params.num_parameters(); ++i) {
    const double v = params.flat(i);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
}

}  // namespace churn_lab

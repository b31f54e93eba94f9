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

// Fully connected ReLU network used as the Q-function (or policy logits) of
// every neural learner, with hand-written backpropagation and SGD / RMSProp /
// Adam updates.

#ifndef CHURN_LAB_MLP_H_
#define CHURN_LAB_MLP_H_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace churn_lab {

struct MlpSpec {
  int input_dimension = 0;
  std::vector<int> hidden_layer_sizes;
  int output_dimension = 0;

  // Throws ValidationError on non-positive sizes or output_dimension < 2.
  void validate() const;
  int num_layers() const { return static_cast<int>(hidden_layer_sizes.size()) + 1; }
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_out x fan_in
  Eigen::VectorXd bias;    // fan_out
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int64_t num_parameters() const;
  bool all_finite() const;
  // Same shapes, all entries zero.
  MlpParams zeros_like() const;
  // Parameter by flat index (layer-major; weights row-major, then bias).
  double& flat(int64_t index);
  double flat(int64_t index) const;
  bool operator==(const MlpParams& other) const;
};

// Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)), zero biases.
MlpParams mlp_init(const MlpSpec& spec, uint64_t seed);

// Affine/ReLU alternation with an affine output layer.
Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::VectorXd& observation);
// Batched forward; one column per sample, result is output_dimension x batch.
Eigen::MatrixXd mlp_forward_batch(const MlpParams& params,
                                  const Eigen::MatrixXd& observations);

// Regression batch for squared error on the selected action's output.
struct SelectedActionBatch {
  Eigen::MatrixXd observations;  // input_dimension x batch
  std::vector<int> actions;
  Eigen::VectorXd targets;
};

// Classification batch for softmax cross-entropy against target distributions.
struct DistributionBatch {
  Eigen::MatrixXd observations;          // input_dimension x batch
  Eigen::MatrixXd target_probabilities;  // output_dimension x batch
};

struct LossAndGrad {
  double loss = 0.0;
  MlpParams gradient;
};

// Mean over the batch of 0.5 * (q(x, a) - y)^2.
LossAndGrad loss_and_grad(const MlpParams& params, const SelectedActionBatch& batch);
// Mean over the batch of -sum_a p(a) log softmax(q(x))_a.
LossAndGrad loss_and_grad(const MlpParams& params, const DistributionBatch& batch);
double loss_value(const MlpParams& params, const SelectedActionBatch& batch);
double loss_value(const MlpParams& params, const DistributionBatch& batch);

// Smallest |pre-activation| over all hidden units and samples; finite
// differences are only meaningful when this is well above the step size.
double min_abs_preactivation(const MlpParams& params, const Eigen::MatrixXd& observations);

// Largest relative error between backprop and central differences at step h.
// Denominators are floored at 1e-4 so vanishing gradients compare absolutely.
double finite_difference_check(const MlpParams& params, const SelectedActionBatch& batch,
                               double h = 1e-5);
double finite_difference_check(const MlpParams& params, const DistributionBatch& batch,
                               double h = 1e-5);

// Learning rate as a function of the optimizer step counter. Log-linear
// interpolation from `start` to `end` over `steps` steps, constant after.
struct LearningRateSchedule {
  double start = 1e-3;
  double end = 1e-3;
  int64_t steps = 0;

  static LearningRateSchedule constant(double eta) { return {eta, eta, 0}; }
  static LearningRateSchedule log_linear(double start, double end, int64_t steps) {
    return {start, end, steps};
  }
  double at(int64_t step) const;
};

enum class OptimizerKind { kSgd, kRmsProp, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  LearningRateSchedule schedule;
  double rmsprop_decay = 0.9;
  double epsilon = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
};

// Per-layer trainable flags.
struct FreezeMask {
  std::vector<bool> trainable;

  static FreezeMask all_trainable(int num_layers);
  // Only the top `k` layers (closest to the output) stay trainable.
  static FreezeMask top_layers(int num_layers, int k);
  void validate(int num_layers) const;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const MlpParams& like);

  // SGD:     theta -= eta g
  // RMSProp: nu = decay nu + (1 - decay) g^2;  theta -= eta g / sqrt(nu + eps)
  // Adam:    bias-corrected moments; theta -= eta m_hat / (sqrt(v_hat) + eps)
  // Frozen layers are left bit-identical (their accumulators too).
  void step(MlpParams& params, const MlpParams& gradient, const FreezeMask& mask);

  int64_t step_count() const { return step_; }
  double current_learning_rate() const { return config_.schedule.at(step_); }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  MlpParams first_moment_;
  MlpParams second_moment_;
  int64_t step_ = 0;
};

// Flat dumps, layer-major and row-major: weights then bias per layer.
void write_params_csv(std::ostream& os, const MlpParams& params);
void write_params_binary(std::ostream& os, const MlpParams& params);

}  // namespace churn_lab

#endif  // CHURN_LAB_MLP_H_

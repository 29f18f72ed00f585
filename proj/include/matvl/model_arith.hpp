#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "matvl/error.hpp"

namespace matvl::model {

using Vector = std::vector<double>;

/// Base model of `base_layers` layers with the last `donor_take` layers of a
/// same-shaped donor appended on top.
struct MergePlan {
  int base_layers = 0;
  int donor_take = 0;
  std::vector<int> donor_indices;  // indices into the donor model
  int total_layers = 0;
  std::vector<bool> trainable_mask;
};

MergePlan merge_plan(int base_layers, int donor_take);
std::vector<bool> trainable_mask(const MergePlan& plan);

/// One row per merged layer: index, origin and trainable flag.
std::string format_merge_table(const MergePlan& plan);

struct GateConfig {
  int num_experts = 1;
  int k = 1;
  int hidden_dim = 1;
};

/// Affine gating layer. `weight` is row-major, one row of `dim` per expert.
struct GateParams {
  int experts = 0;
  int dim = 0;
  Vector weight;
  Vector bias;

  static GateParams zeros(int experts, int dim);
  double& w(int expert, int j) { return weight[static_cast<std::size_t>(expert) * dim + j]; }
  double w(int expert, int j) const { return weight[static_cast<std::size_t>(expert) * dim + j]; }
};

Vector gate_scores(const Vector& hidden, const GateParams& params);

struct TopK {
  Vector weights;
  std::vector<int> indices;
};

/// Keeps the k highest scores (ties to the lower index) and softmaxes over
/// those k only.
TopK gate_topk(const Vector& hidden, const GateParams& params, int k);

using Expert = std::function<Vector(const Vector&)>;

Vector moe_combine(const Vector& hidden, const GateParams& params, int k,
                   const std::vector<Expert>& experts);

/// Softmax over all experts, used to report the k = E residual.
Vector dense_mixture(const Vector& hidden, const GateParams& params,
                     const std::vector<Expert>& experts);

/// Training data: samples[e] holds the hidden states labelled with expert e.
using LabeledSamples = std::vector<std::vector<Vector>>;

/// Mean cross-entropy of softmax(scores) against the expert label.
double gate_loss(const GateParams& params, const LabeledSamples& samples);
GateParams gate_gradient(const GateParams& params, const LabeledSamples& samples);

struct TrainOptions {
  int epochs = 1000;
  double learning_rate = 5e-5;
  int loss_report_every = 100;
};

struct LossPoint {
  int epoch;
  double loss;
};

struct TrainResult {
  GateParams params;
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<LossPoint> losses;
};

/// Full-batch gradient descent from zero-initialised parameters.
TrainResult train_gate(const LabeledSamples& samples, const GateConfig& cfg,
                       const TrainOptions& options = {},
                       const std::function<void(const LossPoint&)>& on_report = {});

/// Fraction of samples whose highest gate score is their own label.
double routing_accuracy(const GateParams& params, const LabeledSamples& samples);

/// Isotropic Gaussian clusters with cluster c centred at separation*sigma
/// along axis c (requires dim >= experts).
LabeledSamples gaussian_clusters(int experts, int dim, int per_expert, double sigma,
                                 double separation, std::uint64_t seed);

}  // namespace matvl::model

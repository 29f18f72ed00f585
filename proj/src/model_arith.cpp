#include "matvl/model_arith.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace matvl::model {

namespace {

Error arith_error(const std::string& message) { return Error("model", message); }

void check_params(const GateParams& params) {
  if (params.experts < 1 || params.dim < 1) throw arith_error("gate needs at least one expert and dimension");
  if (params.weight.size() != static_cast<std::size_t>(params.experts) * params.dim ||
      params.bias.size() != static_cast<std::size_t>(params.experts))
    throw arith_error("gate parameter shapes do not match");
}

/// Softmax of `scores`, written into `out`; stable against large values.
void softmax(const Vector& scores, Vector& out) {
  const double top = *std::max_element(scores.begin(), scores.end());
  out.resize(scores.size());
  double sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - top);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

}  // namespace

MergePlan merge_plan(int base_layers, int donor_take) {
  if (base_layers < 1) throw arith_error("base model needs at least one layer");
  if (donor_take < 0 || donor_take > base_layers)
    throw arith_error("cannot take " + std::to_string(donor_take) + " layers from a " +
                      std::to_string(base_layers) + "-layer donor");
  MergePlan plan;
  plan.base_layers = base_layers;
  plan.donor_take = donor_take;
  for (int i = base_layers - donor_take; i < base_layers; ++i) plan.donor_indices.push_back(i);
  plan.total_layers = base_layers + donor_take;
  plan.trainable_mask = trainable_mask(plan);
  return plan;
}

std::vector<bool> trainable_mask(const MergePlan& plan) {
  std::vector<bool> mask(static_cast<std::size_t>(plan.base_layers + plan.donor_take), false);
  std::fill(mask.begin() + plan.base_layers, mask.end(), true);
  return mask;
}

std::string format_merge_table(const MergePlan& plan) {
  std::ostringstream out;
  out << "layer\torigin\ttrainable\n";
  for (int i = 0; i < plan.total_layers; ++i) {
    out << i << '\t';
    if (i < plan.base_layers)
      out << "base:" << i;
    else
      out << "donor:" << plan.donor_indices[static_cast<std::size_t>(i - plan.base_layers)];
    out << '\t' << (plan.trainable_mask[static_cast<std::size_t>(i)] ? "yes" : "no") << '\n';
  }
  return out.str();
}

GateParams GateParams::zeros(int experts, int dim) {
  GateParams p;
  p.experts = experts;
  p.dim = dim;
  p.weight.assign(static_cast<std::size_t>(experts) * dim, 0.0);
  p.bias.assign(static_cast<std::size_t>(experts), 0.0);
  return p;
}

Vector gate_scores(const Vector& hidden, const GateParams& params) {
  check_params(params);
  if (hidden.size() != static_cast<std::size_t>(params.dim))
    throw arith_error("hidden state has " + std::to_string(hidden.size()) + " entries, gate expects " +
                      std::to_string(params.dim));
  Vector scores(static_cast<std::size_t>(params.experts));
  for (int e = 0; e < params.experts; ++e) {
    double s = params.bias[static_cast<std::size_t>(e)];
    for (int j = 0; j < params.dim; ++j) s += params.w(e, j) * hidden[static_cast<std::size_t>(j)];
    scores[static_cast<std::size_t>(e)] = s;
  }
  return scores;
}

TopK gate_topk(const Vector& hidden, const GateParams& params, int k) {
  const Vector scores = gate_scores(hidden, params);
  if (k < 1 || k > params.experts)
    throw arith_error("k=" + std::to_string(k) + " outside [1, " + std::to_string(params.experts) + "]");
  for (double s : scores)
    if (!std::isfinite(s)) throw arith_error("non-finite gate score");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  TopK out;
  out.indices.assign(order.begin(), order.begin() + k);
  Vector selected;
  for (int i : out.indices) selected.push_back(scores[static_cast<std::size_t>(i)]);
  softmax(selected, out.weights);
  return out;
}

Vector moe_combine(const Vector& hidden, const GateParams& params, int k,
                   const std::vector<Expert>& experts) {
  if (experts.size() != static_cast<std::size_t>(params.experts))
    throw arith_error("expert count does not match gate");
  const TopK top = gate_topk(hidden, params, k);
  Vector out;
  for (std::size_t i = 0; i < top.indices.size(); ++i) {
    const Vector y = experts[static_cast<std::size_t>(top.indices[i])](hidden);
    if (y.size() != hidden.size()) throw arith_error("expert output dimension mismatch");
    if (i == 0) {
      out.resize(y.size());
      for (std::size_t j = 0; j < y.size(); ++j) out[j] = top.weights[0] * y[j];
    } else {
      for (std::size_t j = 0; j < y.size(); ++j) out[j] += top.weights[i] * y[j];
    }
  }
  return out;
}

Vector dense_mixture(const Vector& hidden, const GateParams& params,
                     const std::vector<Expert>& experts) {
  if (experts.size() != static_cast<std::size_t>(params.experts))
    throw arith_error("expert count does not match gate");
  Vector p;
  softmax(gate_scores(hidden, params), p);
  Vector out(hidden.size(), 0.0);
  for (std::size_t e = 0; e < experts.size(); ++e) {
    const Vector y = experts[e](hidden);
    if (y.size() != hidden.size()) throw arith_error("expert output dimension mismatch");
    for (std::size_t j = 0; j < y.size(); ++j) out[j] += p[e] * y[j];
  }
  return out;
}

namespace {

void check_samples(const GateParams& params, const LabeledSamples& samples) {
  if (samples.size() != static_cast<std::size_t>(params.experts))
    throw arith_error("need one sample list per expert");
  for (std::size_t e = 0; e < samples.size(); ++e)
    if (samples[e].empty()) throw arith_error("expert " + std::to_string(e) + " has no samples");
}

std::size_t sample_count(const LabeledSamples& samples) {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

}  // namespace

double gate_loss(const GateParams& params, const LabeledSamples& samples) {
  check_samples(params, samples);
  double total = 0;
  for (std::size_t label = 0; label < samples.size(); ++label) {
    for (const Vector& x : samples[label]) {
      const Vector s = gate_scores(x, params);
      const double top = *std::max_element(s.begin(), s.end());
      double sum = 0;
      for (double v : s) sum += std::exp(v - top);
      total += top + std::log(sum) - s[label];
    }
  }
  return total / static_cast<double>(sample_count(samples));
}

GateParams gate_gradient(const GateParams& params, const LabeledSamples& samples) {
  check_samples(params, samples);
  GateParams grad = GateParams::zeros(params.experts, params.dim);
  Vector p;
  for (std::size_t label = 0; label < samples.size(); ++label) {
    for (const Vector& x : samples[label]) {
      softmax(gate_scores(x, params), p);
      p[label] -= 1.0;
      for (int e = 0; e < params.experts; ++e) {
        const double g = p[static_cast<std::size_t>(e)];
        grad.bias[static_cast<std::size_t>(e)] += g;
        for (int j = 0; j < params.dim; ++j) grad.w(e, j) += g * x[static_cast<std::size_t>(j)];
      }
    }
  }
  const double n = static_cast<double>(sample_count(samples));
  for (double& v : grad.weight) v /= n;
  for (double& v : grad.bias) v /= n;
  return grad;
}

TrainResult train_gate(const LabeledSamples& samples, const GateConfig& cfg,
                       const TrainOptions& options,
                       const std::function<void(const LossPoint&)>& on_report) {
  if (cfg.k < 1 || cfg.k > cfg.num_experts) throw arith_error("k must lie in [1, experts]");
  if (options.epochs < 0) throw arith_error("epochs must be non-negative");
  TrainResult result;
  result.params = GateParams::zeros(cfg.num_experts, cfg.hidden_dim);
  for (const auto& cls : samples)
    for (const Vector& x : cls)
      if (x.size() != static_cast<std::size_t>(cfg.hidden_dim)) throw arith_error("sample dimension mismatch");
  result.initial_loss = gate_loss(result.params, samples);

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    const GateParams grad = gate_gradient(result.params, samples);
    for (std::size_t i = 0; i < grad.weight.size(); ++i)
      result.params.weight[i] -= options.learning_rate * grad.weight[i];
    for (std::size_t i = 0; i < grad.bias.size(); ++i)
      result.params.bias[i] -= options.learning_rate * grad.bias[i];
    if (options.loss_report_every > 0 && epoch % options.loss_report_every == 0) {
      LossPoint point{epoch, gate_loss(result.params, samples)};
      result.losses.push_back(point);
      if (on_report) on_report(point);
    }
  }
  result.final_loss = gate_loss(result.params, samples);
  return result;
}

double routing_accuracy(const GateParams& params, const LabeledSamples& samples) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t label = 0; label < samples.size(); ++label) {
    for (const Vector& x : samples[label]) {
      const TopK top = gate_topk(x, params, 1);
      correct += top.indices[0] == static_cast<int>(label);
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

LabeledSamples gaussian_clusters(int experts, int dim, int per_expert, double sigma,
                                 double separation, std::uint64_t seed) {
  if (experts < 1 || dim < experts) throw arith_error("clusters need dim >= experts >= 1");
  if (per_expert < 1 || sigma <= 0) throw arith_error("clusters need samples and positive sigma");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  LabeledSamples out(static_cast<std::size_t>(experts));
  for (int c = 0; c < experts; ++c) {
    for (int n = 0; n < per_expert; ++n) {
      Vector x(static_cast<std::size_t>(dim));
      for (double& v : x) v = noise(rng);
      x[static_cast<std::size_t>(c)] += separation * sigma;
      out[static_cast<std::size_t>(c)].push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace matvl::model

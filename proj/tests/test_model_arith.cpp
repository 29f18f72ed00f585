#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "matvl/model_arith.hpp"

using namespace matvl;
using namespace matvl::model;

namespace {

GateParams random_params(std::mt19937_64& rng, int experts, int dim, double scale = 1.0) {
  std::normal_distribution<double> n(0, scale);
  GateParams p = GateParams::zeros(experts, dim);
  for (double& v : p.weight) v = n(rng);
  for (double& v : p.bias) v = n(rng);
  return p;
}

Vector random_vector(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0, 1);
  Vector v(static_cast<std::size_t>(dim));
  for (double& x : v) x = n(rng);
  return v;
}

std::vector<Expert> random_linear_experts(std::mt19937_64& rng, int experts, int dim) {
  std::vector<Expert> out;
  for (int e = 0; e < experts; ++e) {
    Vector m = random_vector(rng, dim * dim);
    out.push_back([m, dim](const Vector& x) {
      Vector y(static_cast<std::size_t>(dim), 0.0);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) y[i] += m[static_cast<std::size_t>(i * dim + j)] * x[j];
      return y;
    });
  }
  return out;
}

// Reference computations written without the library's top-k path.
Vector oracle_dense(const Vector& x, const GateParams& p, const std::vector<Expert>& experts) {
  std::vector<double> s(p.experts);
  for (int e = 0; e < p.experts; ++e) {
    s[e] = p.bias[e];
    for (int j = 0; j < p.dim; ++j) s[e] += p.weight[e * p.dim + j] * x[j];
  }
  double z = 0;
  for (double v : s) z += std::exp(v);
  Vector out(x.size(), 0.0);
  for (int e = 0; e < p.experts; ++e) {
    Vector y = experts[e](x);
    for (std::size_t j = 0; j < y.size(); ++j) out[j] += std::exp(s[e]) / z * y[j];
  }
  return out;
}

}  // namespace

TEST_CASE("merge plan examples") {
  MergePlan a = merge_plan(32, 8);
  CHECK(a.donor_indices == std::vector<int>{24, 25, 26, 27, 28, 29, 30, 31});
  CHECK(a.total_layers == 40);
  MergePlan b = merge_plan(32, 16);
  CHECK(b.donor_indices.front() == 16);
  CHECK(b.donor_indices.back() == 31);
  CHECK(b.total_layers == 48);
  MergePlan c = merge_plan(32, 0);
  CHECK(c.donor_indices.empty());
  CHECK(c.total_layers == 32);
  CHECK(std::count(c.trainable_mask.begin(), c.trainable_mask.end(), true) == 0);
  CHECK_THROWS_AS(merge_plan(32, 33), Error);
  CHECK_THROWS_AS(merge_plan(4, -1), Error);
}

TEST_CASE("trainable mask examples") {
  auto m = trainable_mask(merge_plan(32, 8));
  REQUIRE(m.size() == 40);
  for (int i = 0; i < 40; ++i) CHECK(m[i] == (i >= 32));
  auto m4 = trainable_mask(merge_plan(4, 4));
  CHECK(m4 == std::vector<bool>{false, false, false, false, true, true, true, true});
}

TEST_CASE("merge plan donor set equals direct enumeration") {
  for (int nt = 1; nt <= 64; ++nt) {
    for (int nm = 0; nm <= nt; ++nm) {
      MergePlan p = merge_plan(nt, nm);
      std::set<int> expected;
      for (int i = 0; i < nt; ++i)
        if (i >= nt - nm) expected.insert(i);
      REQUIRE(std::set<int>(p.donor_indices.begin(), p.donor_indices.end()) == expected);
      REQUIRE(std::is_sorted(p.donor_indices.begin(), p.donor_indices.end()));
      REQUIRE(p.total_layers == nt + nm);
      REQUIRE(p.trainable_mask.size() == static_cast<std::size_t>(nt + nm));
    }
  }
}

TEST_CASE("merge table lists every layer") {
  const std::string t = format_merge_table(merge_plan(3, 1));
  CHECK(t == "layer\torigin\ttrainable\n0\tbase:0\tno\n1\tbase:1\tno\n2\tbase:2\tno\n3\tdonor:2\tyes\n");
}

TEST_CASE("top-k examples") {
  GateParams p = GateParams::zeros(2, 1);
  auto t = gate_topk({3.0}, p, 2);
  CHECK(t.weights[0] == 0.5);
  CHECK(t.weights[1] == 0.5);
  CHECK(t.indices == std::vector<int>{0, 1});

  p.bias = {1.0, 0.0};
  t = gate_topk({0.0}, p, 2);
  const double e = std::exp(1.0);
  CHECK(t.weights[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(t.weights[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
  CHECK(t.weights[0] == doctest::Approx(0.7311).epsilon(1e-4));

  p.bias = {0.0, 2.0};
  t = gate_topk({0.0}, p, 1);
  CHECK(t.indices == std::vector<int>{1});
  CHECK(t.weights == Vector{1.0});

  p.bias = {std::nan(""), 0.0};
  CHECK_THROWS_AS(gate_topk({0.0}, p, 1), Error);
  p.bias = {0.0, 0.0};
  CHECK_THROWS_AS(gate_topk({0.0}, p, 3), Error);
  CHECK_THROWS_AS(gate_topk({0.0, 1.0}, p, 1), Error);
}

TEST_CASE("top-k weights form a probability vector") {
  std::mt19937_64 rng(11);
  for (int draw = 0; draw < 1000; ++draw) {
    const int experts = 1 + static_cast<int>(rng() % 8);
    const int dim = 1 + static_cast<int>(rng() % 6);
    const int k = 1 + static_cast<int>(rng() % experts);
    GateParams p = random_params(rng, experts, dim, 3.0);
    auto t = gate_topk(random_vector(rng, dim), p, k);
    double sum = 0;
    for (double w : t.weights) {
      REQUIRE(w >= 0);
      sum += w;
    }
    REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    REQUIRE(std::set<int>(t.indices.begin(), t.indices.end()).size() == static_cast<std::size_t>(k));
  }
}

TEST_CASE("combine: k=1 is bit-equal, k=E matches the dense oracle, identities stay put") {
  std::mt19937_64 rng(12);
  for (int draw = 0; draw < 1000; ++draw) {
    const int experts = 1 + static_cast<int>(rng() % 5);
    const int dim = 1 + static_cast<int>(rng() % 6);
    GateParams p = random_params(rng, experts, dim);
    auto ex = random_linear_experts(rng, experts, dim);
    Vector x = random_vector(rng, dim);

    Vector s(experts);
    int argmax = 0;
    for (int e = 0; e < experts; ++e) {
      s[e] = p.bias[e];
      for (int j = 0; j < dim; ++j) s[e] += p.weight[e * dim + j] * x[j];
      if (s[e] > s[argmax]) argmax = e;
    }
    Vector one = moe_combine(x, p, 1, ex);
    Vector direct = ex[argmax](x);
    REQUIRE(std::memcmp(one.data(), direct.data(), one.size() * sizeof(double)) == 0);

    Vector all = moe_combine(x, p, experts, ex);
    Vector dense = oracle_dense(x, p, ex);
    for (int j = 0; j < dim; ++j) {
      const double scale = std::max(1.0, std::abs(dense[j]));
      REQUIRE(std::abs(all[j] - dense[j]) / scale <= 1e-6);
    }

    std::vector<Expert> ids(experts, [](const Vector& v) { return v; });
    Vector same = moe_combine(x, p, 1 + static_cast<int>(rng() % experts), ids);
    for (int j = 0; j < dim; ++j) REQUIRE(same[j] == doctest::Approx(x[j]).epsilon(1e-12));
  }
}

TEST_CASE("combine rejects mismatched experts") {
  GateParams p = GateParams::zeros(2, 2);
  std::vector<Expert> bad = {[](const Vector&) { return Vector{1.0}; },
                             [](const Vector& v) { return v; }};
  CHECK_THROWS_AS(moe_combine({1.0, 2.0}, p, 2, bad), Error);
  CHECK_THROWS_AS(moe_combine({1.0, 2.0}, p, 1, {bad[1]}), Error);
}

TEST_CASE("gate gradient matches central finite differences") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const int experts = 1 + static_cast<int>(rng() % 3);
    const int dim = 1 + static_cast<int>(rng() % 8);
    GateParams p = random_params(rng, experts, dim, 0.5);
    LabeledSamples s(experts);
    for (auto& cls : s)
      for (int n = 0; n < 1 + static_cast<int>(rng() % 4); ++n) cls.push_back(random_vector(rng, dim));
    GateParams g = gate_gradient(p, s);
    const double h = 1e-5;
    auto check = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + h;
      const double up = gate_loss(p, s);
      param = keep - h;
      const double down = gate_loss(p, s);
      param = keep;
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
      REQUIRE(std::abs(fd - analytic) / denom <= 1e-4);
    };
    for (std::size_t i = 0; i < p.weight.size(); ++i) check(p.weight[i], g.weight[i]);
    for (std::size_t i = 0; i < p.bias.size(); ++i) check(p.bias[i], g.bias[i]);
  }
}

TEST_CASE("training trivial cases") {
  std::mt19937_64 rng(14);
  LabeledSamples one(1);
  for (int i = 0; i < 5; ++i) one[0].push_back(random_vector(rng, 3));
  auto r = train_gate(one, {1, 1, 3}, {50, 0.1, 10});
  CHECK(r.final_loss == doctest::Approx(0.0));
  CHECK(routing_accuracy(r.params, one) == 1.0);
  CHECK(r.losses.size() == 5);

  LabeledSamples two = gaussian_clusters(2, 4, 10, 1.0, 5.0, 3);
  auto frozen = train_gate(two, {2, 1, 4}, {100, 0.0, 100});
  CHECK(frozen.params.weight == GateParams::zeros(2, 4).weight);
  CHECK(frozen.params.bias == GateParams::zeros(2, 4).bias);

  LabeledSamples empty_class(2);
  empty_class[0].push_back({1.0});
  CHECK_THROWS_AS(train_gate(empty_class, {2, 1, 1}), Error);
}

TEST_CASE("training on separated clusters routes held-out samples") {
  LabeledSamples train = gaussian_clusters(3, 64, 50, 1.0, 5.0, 100);
  LabeledSamples held_out = gaussian_clusters(3, 64, 200, 1.0, 5.0, 200);
  std::vector<LossPoint> reported;
  auto r = train_gate(train, {3, 1, 64}, {}, [&](const LossPoint& p) { reported.push_back(p); });
  CHECK(reported.size() == 10);
  CHECK(reported.front().epoch == 100);
  CHECK(r.final_loss <= r.initial_loss);
  CHECK(routing_accuracy(r.params, held_out) >= 0.99);
}

TEST_CASE("cluster generator geometry") {
  LabeledSamples s = gaussian_clusters(3, 8, 2000, 1.0, 5.0, 9);
  for (int c = 0; c < 3; ++c) {
    double mean_c = 0;
    for (const auto& x : s[c]) mean_c += x[c];
    CHECK(mean_c / 2000 == doctest::Approx(5.0).epsilon(0.03));
  }
  CHECK_THROWS_AS(gaussian_clusters(4, 3, 1, 1.0, 5.0, 1), Error);
}

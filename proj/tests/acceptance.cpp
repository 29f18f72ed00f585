// Runs every acceptance criterion at its stated tolerance and time limit.
// One line per criterion; the exit status is non-zero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "matvl/corpus.hpp"
#include "matvl/figures.hpp"
#include "matvl/instruct_eval.hpp"
#include "matvl/model_arith.hpp"
#include "pdf_fixtures.hpp"
#include "pipeline_fixture.hpp"
#include "support.hpp"

using namespace matvl;

namespace {

struct Outcome {
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
  }
};

struct Criterion {
  std::string name;
  double limit_s;
  std::string tolerance;
  std::function<void(Outcome&)> body;
};

std::string num(double v, int digits = 17) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ---- merge arithmetic

void merge_arithmetic(Outcome& o) {
  const auto p8 = model::merge_plan(32, 8);
  std::vector<int> donors(8);
  std::iota(donors.begin(), donors.end(), 24);
  o.expect(p8.donor_indices == donors, "merge_plan(32,8) donors are not 24..31");
  o.expect(p8.total_layers == 40, "merge_plan(32,8) total " + std::to_string(p8.total_layers));
  const auto p16 = model::merge_plan(32, 16);
  o.expect(p16.total_layers == 48, "merge_plan(32,16) total " + std::to_string(p16.total_layers));
  o.detail = "totals " + std::to_string(p8.total_layers) + " and " + std::to_string(p16.total_layers);
}

// ---- mixture-of-experts math

model::Vector oracle_scores(const model::Vector& x, const model::GateParams& g) {
  model::Vector s(static_cast<std::size_t>(g.experts));
  for (int e = 0; e < g.experts; ++e) {
    long double acc = g.bias[static_cast<std::size_t>(e)];
    for (int j = 0; j < g.dim; ++j) acc += static_cast<long double>(g.w(e, j)) * x[static_cast<std::size_t>(j)];
    s[static_cast<std::size_t>(e)] = static_cast<double>(acc);
  }
  return s;
}

model::Vector oracle_softmax(const model::Vector& s) {
  const double m = *std::max_element(s.begin(), s.end());
  long double z = 0;
  for (double v : s) z += std::exp(static_cast<long double>(v - m));
  model::Vector p(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) p[i] = static_cast<double>(std::exp(static_cast<long double>(s[i] - m)) / z);
  return p;
}

void moe_math(Outcome& o) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01(0, 1);
  double worst_sum = 0, worst_dense = 0, worst_grad = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const int experts = 2 + static_cast<int>(rng() % 7);
    const int dim = 1 + static_cast<int>(rng() % 8);
    const int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(experts));
    auto g = model::GateParams::zeros(experts, dim);
    for (double& w : g.weight) w = n01(rng);
    for (double& b : g.bias) b = n01(rng);
    model::Vector x(static_cast<std::size_t>(dim));
    for (double& v : x) v = n01(rng);

    std::vector<model::Vector> mats;
    std::vector<model::Expert> fns;
    for (int e = 0; e < experts; ++e) {
      model::Vector a(static_cast<std::size_t>(dim * dim));
      for (double& v : a) v = n01(rng);
      mats.push_back(a);
      fns.push_back([a, dim](const model::Vector& h) {
        model::Vector y(static_cast<std::size_t>(dim), 0.0);
        for (int r = 0; r < dim; ++r)
          for (int c = 0; c < dim; ++c) y[static_cast<std::size_t>(r)] += a[static_cast<std::size_t>(r * dim + c)] * h[static_cast<std::size_t>(c)];
        return y;
      });
    }

    const auto top = model::gate_topk(x, g, k);
    const double sum = std::accumulate(top.weights.begin(), top.weights.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    o.expect(std::abs(sum - 1.0) <= 1e-9, "draw " + std::to_string(draw) + ": weights sum " + num(sum));

    // the selected experts are the k largest scores, lower index on ties
    const auto s = oracle_scores(x, g);
    std::vector<int> order(static_cast<std::size_t>(experts));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });
    std::set<int> want(order.begin(), order.begin() + k);
    o.expect(std::set<int>(top.indices.begin(), top.indices.end()) == want,
             "draw " + std::to_string(draw) + ": wrong experts selected");

    if (k == 1) {
      const auto out = model::moe_combine(x, g, 1, fns);
      o.expect(out == fns[static_cast<std::size_t>(order[0])](x), "draw " + std::to_string(draw) + ": k=1 output differs");
    }
    {
      const auto out = model::moe_combine(x, g, experts, fns);
      const auto p = oracle_softmax(s);
      for (int r = 0; r < dim; ++r) {
        long double y = 0;
        for (int e = 0; e < experts; ++e) y += p[static_cast<std::size_t>(e)] * fns[static_cast<std::size_t>(e)](x)[static_cast<std::size_t>(r)];
        const double err = std::abs(out[static_cast<std::size_t>(r)] - static_cast<double>(y));
        worst_dense = std::max(worst_dense, err);
        o.expect(err <= 1e-6, "draw " + std::to_string(draw) + ": k=E residual " + num(err));
      }
    }

    // finite differences on a small labelled set
    model::LabeledSamples samples(static_cast<std::size_t>(experts));
    for (auto& cls : samples)
      for (int i = 0; i < 2; ++i) {
        model::Vector h(static_cast<std::size_t>(dim));
        for (double& v : h) v = n01(rng);
        cls.push_back(h);
      }
    const auto grad = model::gate_gradient(g, samples);
    const double eps = 1e-6;
    auto fd = [&](double& param) {
      const double keep = param;
      param = keep + eps;
      const double up = model::gate_loss(g, samples);
      param = keep - eps;
      const double down = model::gate_loss(g, samples);
      param = keep;
      return (up - down) / (2 * eps);
    };
    for (std::size_t i = 0; i < g.weight.size(); ++i) {
      const double err = std::abs(fd(g.weight[i]) - grad.weight[i]);
      worst_grad = std::max(worst_grad, err);
      o.expect(err <= 1e-4, "draw " + std::to_string(draw) + ": weight gradient off by " + num(err));
    }
    for (std::size_t i = 0; i < g.bias.size(); ++i) {
      const double err = std::abs(fd(g.bias[i]) - grad.bias[i]);
      worst_grad = std::max(worst_grad, err);
      o.expect(err <= 1e-4, "draw " + std::to_string(draw) + ": bias gradient off by " + num(err));
    }
  }
  o.detail = "max |sum-1| " + num(worst_sum) + ", max k=E residual " + num(worst_dense) + ", max gradient error " +
             num(worst_grad);
}

// ---- gate routing

void gate_routing(Outcome& o) {
  const auto train = model::gaussian_clusters(3, 64, 50, 1.0, 5.0, 7);
  const auto held_out = model::gaussian_clusters(3, 64, 50, 1.0, 5.0, 8);
  const model::TrainOptions defaults;
  o.expect(defaults.epochs == 1000 && defaults.learning_rate == 5e-5, "default schedule is not 1000 epochs at 5e-5");
  const auto result = model::train_gate(train, {3, 1, 64});
  const double acc = model::routing_accuracy(result.params, held_out);
  o.expect(acc >= 0.99, "held-out accuracy " + num(acc));
  o.detail = "held-out accuracy " + num(acc);
}

// ---- figure/caption pairing

void pdf_pairing(Outcome& o) {
  const auto suite = test::fixture_suite();
  o.expect(suite.size() >= 20, "suite has " + std::to_string(suite.size()) + " documents");
  std::size_t pairs = 0, rejects = 0;
  for (const auto& fx : suite) {
    const auto result = figures::extract_document(fx.build(), fx.name, test::policy_for(fx));
    const auto check = test::check_pairing(fx, result);
    o.expect(check.ok, check.message);
    pairs += result.pairs.size();
    rejects += result.rejects.size();
  }
  const auto d = figures::caption_distance(Box{100, 100, 300, 250}, Box{130, 290, 300, 300});
  o.expect(d && *d == 50.0, "3-4-5 distance " + (d ? num(*d) : std::string("none")));
  o.detail = std::to_string(suite.size()) + " documents, " + std::to_string(pairs) + " pairs, " +
             std::to_string(rejects) + " rejects";
}

// ---- damage metric

void damage_metric(Outcome& o) {
  const int w = 64, h = 50;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::mt19937 rng(5);
  for (double p : {0.0, 0.25, 0.5, 1.0}) {
    const Raster a = test::pattern(w, h, 3);
    Raster b = a;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto m = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
    for (std::size_t i = 0; i < m; ++i)
      for (int c = 0; c < 3; ++c) b.pixels[idx[i] * 3 + c] = static_cast<std::uint8_t>(b.pixels[idx[i] * 3 + c] ^ 0x80);
    const double got = instruct::diff_proportion(a, b);
    o.expect(std::abs(got - p) <= 1.0 / static_cast<double>(n), "p=" + num(p) + " gave " + num(got));
  }
  std::uniform_real_distribution<double> u(0.001, 0.9);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(2 + rng() % 40);
    for (double& x : v) x = u(rng);
    if (*std::min_element(v.begin(), v.end()) == *std::max_element(v.begin(), v.end())) continue;
    const auto out = instruct::normalize_damage(v);
    const auto lo = std::min_element(v.begin(), v.end()) - v.begin();
    const auto hi = std::max_element(v.begin(), v.end()) - v.begin();
    o.expect(out[static_cast<std::size_t>(lo)] == 0.0 && out[static_cast<std::size_t>(hi)] == 1.0,
             "extremes map to " + num(out[static_cast<std::size_t>(lo)]) + ", " + num(out[static_cast<std::size_t>(hi)]));
  }
  o.detail = "N=" + std::to_string(n) + ", 500 normalisation trials";
}

// ---- evaluation metrics

void metrics(Outcome& o) {
  const auto r = instruct::classification_report({true, true, true, false}, {true, true, false, false});
  o.expect(r.tp == 2 && r.fp == 1 && r.tn == 1 && r.fn == 0, "confusion counts");
  o.expect(r.precision == 2.0 / 3.0, "precision " + num(r.precision));
  o.expect(r.recall == 1.0, "recall " + num(r.recall));
  o.expect(r.f1 == 0.8, "f1 " + num(r.f1));
  o.expect(r.accuracy == 0.75, "accuracy " + num(r.accuracy));
  o.expect(instruct::r_squared({1.5, -2, 7}, {1.5, -2, 7}) == 1.0, "r2 on perfect predictions");
  // residuals (0, 0, 1) against a target with squared deviations summing to 2
  const double half = instruct::r_squared({1, 2, 4}, {1, 2, 3});
  o.expect(half == 0.5, "r2 hand case " + num(half));

  const std::pair<instruct::Task, std::vector<instruct::AnswerValue>> cases[] = {
      {instruct::Task::stress, {0.678, 0.603, 0.624}}, {instruct::Task::crack, {0.139, true}}};
  const char* literal[] = {"[0.678, 0.603, 0.624]", "[0.139, True]"};
  for (int i = 0; i < 2; ++i) {
    const auto rec = instruct::build_instruction(cases[i].first, cases[i].second);
    const std::string text = instruct::render_answer(rec.answer);
    o.expect(text == literal[i], "rendered " + text);
    const auto back = instruct::parse_answer_vector(text, cases[i].first);
    o.expect(instruct::render_answer(back) == literal[i], "round trip of " + std::string(literal[i]));
  }
  o.detail = "P=" + num(r.precision) + " R=" + num(r.recall) + " F1=" + num(r.f1) + " acc=" + num(r.accuracy);
}

// ---- corpus

void corpus_suite(Outcome& o) {
  test::TempDir dir("acceptance_corpus");
  std::vector<corpus::CorpusRecord> recs;
  for (int i = 0; i < 2000; ++i) {
    corpus::CorpusRecord r;
    r.source = corpus::Source::text_only;
    r.query = "What does sample " + std::to_string(i) + " show?";
    r.answer = "A lattice with " + std::to_string(i % 97) + " defects.";
    r.id = corpus::record_id(r.source, r.answer, r.query);
    recs.push_back(r);
  }
  auto splits_of = [&](const std::filesystem::path& root) {
    auto store = corpus::CorpusStore::open(root);
    store.add_records(recs);
    const auto counts = store.assign_splits(0.9, 1234);
    o.expect(counts.train == 1800 && counts.test == 200,
             "counts " + std::to_string(counts.train) + "/" + std::to_string(counts.test));
    return store;
  };
  const auto a = splits_of(dir.path() / "a");
  const auto b = splits_of(dir.path() / "b");
  std::set<std::string> train, test;
  for (const auto& r : a.records()) (r.split == corpus::Split::train ? train : test).insert(r.id);
  o.expect(train.size() == 1800 && test.size() == 200, "split sets are not 1800/200");
  o.expect(train.size() + test.size() == recs.size(), "split is not exhaustive");
  for (const auto& id : train) o.expect(!test.count(id), "id in both splits: " + id);
  o.expect(a.records() == b.records(), "same seed gave different splits");
  o.expect(corpus::CorpusStore::open(dir.path() / "a").records() == a.records(), "reopened store differs");

  const auto res = a.export_jsonl(dir.path() / "export", "acceptance", "2026-01-01T00:00:00Z");
  o.expect(res.errors.empty(), "export errors");
  const auto imported = corpus::import_jsonl(dir.path() / "export");
  auto expected = a.records();
  std::sort(expected.begin(), expected.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  o.expect(imported.records == expected, "export/import is not the identity");
  o.expect(imported.manifest.record_count == 2000 && imported.manifest.seed == 1234, "manifest fields");

  corpus::CorpusRecord one;
  one.source = corpus::Source::paper_pdf;
  one.image_ref = "images/x.png";
  one.query = "{prompt_1}";
  one.answer = "{response_1}";
  o.expect(corpus::render_chat({one}, corpus::ChatFamily::idefics_style)[0] ==
               "User:<image>{prompt_1}<end_of_utterance>\nAssistant:{response_1}<end_of_utterance>",
           "idefics-style rendering");
  o.expect(corpus::render_chat({one}, corpus::ChatFamily::phi3_style)[0] ==
               "<|user|>\n<|image_1|>\n{prompt_1}<|end|>\n<|assistant|>\n{response_1}<|end|>",
           "phi3-style rendering");
  o.detail = "2000 records split 1800/200, round trip of " + std::to_string(imported.records.size());
}

// ---- end-to-end smoke

void smoke(Outcome& o) {
  test::TempDir dir("acceptance_smoke");
  test::SmokePipeline pipe(dir.path());
  if (!pipe.run()) {
    o.expect(false, pipe.failure());
    return;
  }
  const auto imported = corpus::import_jsonl(dir.path() / "export");
  std::size_t complete = 0;
  for (const auto& r : imported.records) {
    const auto gap = test::provenance_gap(r, dir.path() / "export");
    o.expect(gap.empty(), r.id + ": " + gap);
    complete += gap.empty();
  }
  o.expect(complete >= 3, std::to_string(complete) + " complete records");
  o.detail = std::to_string(complete) + " of " + std::to_string(imported.records.size()) +
             " records complete, pipeline " + num(pipe.seconds, 3) + " s";
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"merge_arithmetic", 1, "exact", merge_arithmetic},
      {"moe_math", 30, "sum 1e-9, k=1 bit-equal, k=E 1e-6, gradient 1e-4", moe_math},
      {"gate_routing", 60, "held-out accuracy >= 0.99", gate_routing},
      {"pdf_pairing", 10, "100% against oracle, 3-4-5 exact", pdf_pairing},
      {"damage_metric", 5, "within 1/N, extremes exact", damage_metric},
      {"metrics", 5, "exact", metrics},
      {"corpus", 10, "exact", corpus_suite},
      {"end_to_end_smoke", 30, ">= 3 complete records", smoke},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("threw: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s >= c.limit_s) o.failures.push_back("took " + num(s) + " s");
    const bool ok = o.failures.empty();
    failed += !ok;
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.3fs/%gs", s, c.limit_s);
    std::cout << (ok ? "PASS " : "FAIL ") << c.name << " [" << timing << "; " << c.tolerance << "]";
    if (!o.detail.empty()) std::cout << " " << o.detail;
    std::cout << '\n';
    for (const auto& f : o.failures) std::cout << "     " << f << '\n';
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}

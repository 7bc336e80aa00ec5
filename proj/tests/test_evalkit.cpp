#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "support/oracles.hpp"
#include "wukong/dataset.hpp"
#include "wukong/evalkit.hpp"

using namespace wukong;
namespace fs = std::filesystem;

TEST_CASE("roc_auc on documented instances") {
  CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS(roc_auc({0.1, 0.2}, {1, 1}));  // single class
  CHECK_THROWS(roc_auc({}, {}));
}

TEST_CASE("roc_auc matches the all-pairs oracle with ties") {
  SplitMix64 g(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(g.next() % 49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      // quantized scores so ties actually occur
      scores[i] = static_cast<double>(g.next() % 8) / 8.0;
      labels[i] = static_cast<int>(g.next() % 2);
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    const double got = roc_auc(scores, labels);
    const double want = oracle::roc_auc_pairs(scores, labels);
    CHECK(std::fabs(got - want) < 1e-12);
  }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
  SplitMix64 g(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(g.next() % 30);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = g.uniform();
      labels[i] = static_cast<int>(g.next() % 2);
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    const double base = roc_auc(scores, labels);
    std::vector<double> cubed(n), affine(n);
    for (int i = 0; i < n; ++i) {
      cubed[i] = scores[i] * scores[i] * scores[i];
      affine[i] = 2.0 * scores[i] + 1.0;
    }
    CHECK(std::fabs(roc_auc(cubed, labels) - base) < 1e-12);
    CHECK(std::fabs(roc_auc(affine, labels) - base) < 1e-12);
  }
}

TEST_CASE("threshold metrics: perfect scores, conventions, hand instance") {
  const ThresholdMetrics perfect = threshold_metrics({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}, 0.5);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  // no predicted positives
  const ThresholdMetrics none = threshold_metrics({0.1, 0.2, 0.3}, {1, 0, 1}, 0.5);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  // hand confusion matrix: preds (strict > 0.5) = {1, 0, 1, 0};
  // labels               = {1, 1, 0, 0} -> TP=1 FP=1 FN=1 TN=1
  const ThresholdMetrics hand = threshold_metrics({0.9, 0.5, 0.6, 0.4}, {1, 1, 0, 0}, 0.5);
  CHECK(hand.accuracy == doctest::Approx(0.5));
  CHECK(hand.precision == doctest::Approx(0.5));
  CHECK(hand.recall == doctest::Approx(0.5));
  CHECK(hand.f1 == doctest::Approx(0.5));
}

TEST_CASE("blacklist matching is whole-word and case-insensitive") {
  const std::set<std::string> words = {"naked", "gory scene"};
  CHECK(blacklist_detect("a naked woman", words));
  CHECK(blacklist_detect("A NAKED woman", words));
  CHECK(!blacklist_detect("snakedancer on stage", words));
  CHECK(!blacklist_detect("anything at all", {}));
  CHECK(blacklist_detect("a gory scene indeed", words));
  CHECK(!blacklist_detect("allegory scenery", words));
  CHECK(blacklist_detect("naked", words));
  CHECK(blacklist_detect("naked, and then some", words));
}

TEST_CASE("blacklist file loader: comments and case folding") {
  const std::string path = (fs::temp_directory_path() / "wukong_blacklist.txt").string();
  {
    std::ofstream f(path, std::ios::trunc);
    f << "# comment line\n";
    f << "naked\n";
    f << "  GORE   # trailing comment\n";
    f << "\n";
  }
  const auto words = load_blacklist(path);
  CHECK(words.size() == 2);
  CHECK(words.count("naked") == 1);
  CHECK(words.count("gore") == 1);
  fs::remove(path);
}

TEST_CASE("evaluate_rows with oracle and constant stubs") {
  std::vector<EvalRow> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({"p" + std::to_string(i), 0, i % 2});

  // scorer that emits the label: every metric is exact
  const ScoreFn oracle_fn = [&rows](const std::string& prompt, uint64_t) {
    for (const auto& r : rows)
      if (r.prompt == prompt) return static_cast<double>(r.label);
    return 0.0;
  };
  const EvalReport perfect = evaluate_rows(rows, oracle_fn, 0.5);
  CHECK(perfect.roc_auc == doctest::Approx(1.0));
  CHECK(perfect.accuracy == doctest::Approx(1.0));
  CHECK(perfect.f1 == doctest::Approx(1.0));

  // constant scorer: all ties -> AUC one half
  const EvalReport coin = evaluate_rows(rows, [](const std::string&, uint64_t) { return 0.5; },
                                        0.5);
  CHECK(coin.roc_auc == doctest::Approx(0.5));

  // the ledger re-derives the headline numbers exactly
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& [s, l] : perfect.ledger) {
    scores.push_back(s);
    labels.push_back(l);
  }
  CHECK(roc_auc(scores, labels) == perfect.roc_auc);
  const ThresholdMetrics m = threshold_metrics(scores, labels, perfect.delta);
  CHECK(m.accuracy == perfect.accuracy);
  CHECK(m.precision == perfect.precision);
  CHECK(m.recall == perfect.recall);
  CHECK(m.f1 == perfect.f1);

  // parallel evaluation returns identical scores
  const EvalReport par = evaluate_rows(rows, oracle_fn, 0.5, 4);
  CHECK(par.ledger == perfect.ledger);
}

TEST_CASE("evaluate_guard JSONL input with malformed-row policy") {
  const std::string path = (fs::temp_directory_path() / "wukong_eval.jsonl").string();
  {
    std::ofstream f(path, std::ios::trunc);
    for (int i = 0; i < 20; ++i)
      f << R"({"prompt":"p)" << i << R"(","seed":)" << i << R"(,"label":)" << (i % 2) << "}\n";
    f << "this is not json\n";
  }
  const ScoreFn by_seed = [](const std::string&, uint64_t seed) {
    return seed % 2 ? 0.9 : 0.1;
  };
  const EvalReport rep = evaluate_guard(path, by_seed, 0.5);
  CHECK(rep.n_samples == 20);
  CHECK(rep.n_malformed == 1);
  CHECK(rep.roc_auc == doctest::Approx(1.0));

  // > 10% malformed is an error
  {
    std::ofstream f(path, std::ios::trunc);
    f << R"({"prompt":"a","seed":0,"label":1})" << "\n";
    f << R"({"prompt":"b","seed":1,"label":0})" << "\n";
    f << "broken\n";
  }
  CHECK_THROWS(evaluate_guard(path, by_seed, 0.5));
  fs::remove(path);
}

TEST_CASE("per-category evaluation scores each bit against its own labels") {
  const ConceptSet set = default_concepts();
  std::vector<SampleRecord> records;
  for (int i = 0; i < 12; ++i) {
    SampleRecord r;
    r.prompt = "p" + std::to_string(i);
    r.seed = static_cast<uint64_t>(i);
    r.category = set.categories[i % kNumCategories];
    if (i % 3 != 0) r.labels.bits[i % 2] = 1;  // bits 0/1 mixed, others all-zero
    records.push_back(std::move(r));
  }
  // oracle predictor: emits each record's label bits as probabilities
  const PredictFn oracle_fn = [&records](const std::string& prompt, uint64_t) {
    Prediction p;
    for (const auto& r : records)
      if (r.prompt == prompt)
        for (int c = 0; c < kNumCategories; ++c) p.y[c] = r.labels.bits[c] ? 0.9 : 0.1;
    return p;
  };
  const PerCategoryReport rep = evaluate_per_category(records, oracle_fn, 0.5);
  CHECK(rep.n_samples == 12);
  CHECK(rep.roc_auc[0] == doctest::Approx(1.0));
  CHECK(rep.roc_auc[1] == doctest::Approx(1.0));
  CHECK(rep.accuracy[0] == doctest::Approx(1.0));
  for (int c = 2; c < kNumCategories; ++c) {
    CHECK(std::isnan(rep.roc_auc[c]));  // single-class bits have no AUC
    CHECK(rep.accuracy[c] == doctest::Approx(1.0));
    CHECK(rep.n_positive[c] == 0);
  }
  const std::string j = per_category_to_json(rep, set);
  CHECK(j.find("\"category\": \"Shocking\"") != std::string::npos);
  CHECK(j.find("null") != std::string::npos);

  const PerCategoryReport par = evaluate_per_category(records, oracle_fn, 0.5, 4);
  CHECK(par.roc_auc[0] == rep.roc_auc[0]);
}

TEST_CASE("report JSON and ledger CSV") {
  std::vector<EvalRow> rows = {{"a", 0, 1}, {"b", 1, 0}};
  const EvalReport rep =
      evaluate_rows(rows, [](const std::string&, uint64_t s) { return s ? 0.1 : 0.9; }, 0.5);
  const std::string j = report_to_json(rep);
  CHECK(j.find("\"roc_auc\"") != std::string::npos);
  CHECK(j.find("\"n_samples\": 2") != std::string::npos);

  const std::string path = (fs::temp_directory_path() / "wukong_ledger.csv").string();
  save_ledger_csv(path, rep);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "score,label");
  fs::remove(path);
}

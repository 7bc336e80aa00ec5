#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "wukong/backbone.hpp"
#include "wukong/classifier.hpp"
#include "wukong/query_bank.hpp"

namespace wukong {

// Mann-Whitney ROC AUC: the probability a random positive outscores a
// random negative, ties counted 1/2. Errors on single-class labels.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Confusion-matrix metrics at threshold delta; a prediction is positive iff
// score > delta (the same strict rule the pipeline applies). Precision and
// F1 are 0 when their denominators vanish.
struct ThresholdMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double delta);

// Whole-word, case-insensitive blacklist matching (ASCII folding).
bool blacklist_detect(const std::string& prompt, const std::set<std::string>& wordlist);

// One lowercase term per line; '#' starts a comment.
std::set<std::string> load_blacklist(const std::string& path);

struct EvalReport {
  double roc_auc = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double delta = 0.5;
  int n_samples = 0;
  int n_malformed = 0;
  std::vector<std::pair<double, int>> ledger;  // (score, label) per row
};

using ScoreFn = std::function<double(const std::string& prompt, uint64_t seed)>;

// Unsafe score of a prompt/seed pair: tap phi at T_C, classify, max(y_hat).
ScoreFn make_guard_scorer(const ToyBackbone& backbone, const DecoderParams& params,
                          const QueryMatrix& Q, int t_c);

// Blacklist baseline as a scorer (1.0 on a hit, 0.0 otherwise).
ScoreFn make_blacklist_scorer(std::set<std::string> wordlist);

// Scores every row of a labeled prompts file (JSONL {"prompt","seed",
// "label"}) and aggregates. Malformed rows are skipped and counted, and the
// run errors if they exceed 10% of the input. Adversarial prompt exports
// are ordinary inputs here.
EvalReport evaluate_guard(const std::string& jsonl_path, const ScoreFn& scorer, double delta,
                          int threads = 1);

// Same aggregation from in-memory rows.
struct EvalRow {
  std::string prompt;
  uint64_t seed = 0;
  int label = 0;
};

EvalReport evaluate_rows(const std::vector<EvalRow>& rows, const ScoreFn& scorer, double delta,
                         int threads = 1);

std::string report_to_json(const EvalReport& r);
void save_ledger_csv(const std::string& path, const EvalReport& r);

// Per-category breakdown over fully labeled records: score i is y_hat[i],
// ground truth is label bit i. Categories whose labels are single-class get
// NaN AUC (rendered null in JSON).
using PredictFn = std::function<Prediction(const std::string& prompt, uint64_t seed)>;

PredictFn make_guard_predictor(const ToyBackbone& backbone, const DecoderParams& params,
                               const QueryMatrix& Q, int t_c);

struct PerCategoryReport {
  std::array<double, kNumCategories> roc_auc{};
  std::array<double, kNumCategories> accuracy{};
  std::array<int, kNumCategories> n_positive{};
  int n_samples = 0;
};

struct SampleRecord;  // dataset.hpp
PerCategoryReport evaluate_per_category(const std::vector<SampleRecord>& records,
                                        const PredictFn& predictor, double delta,
                                        int threads = 1);

std::string per_category_to_json(const PerCategoryReport& r, const ConceptSet& set);

}  // namespace wukong

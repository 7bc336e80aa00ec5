#include "wukong/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "wukong/dataset.hpp"

namespace wukong {

namespace {

void check_scored_input(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument("empty score list");
  for (int l : labels)
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scored_input(scores, labels);
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int l : labels) n_pos += l;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_auc: needs at least one positive and one negative label");

  // midrank formulation; identical to the pairwise tie-half count
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>((i + 1) + (j + 1));
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) rank_sum_pos += rank[k];
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double delta) {
  check_scored_input(scores, labels);
  int tp = 0, tn = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > delta;  // strict, matching decide()
    if (pred && labels[i])
      ++tp;
    else if (pred && !labels[i])
      ++fp;
    else if (!pred && labels[i])
      ++fn;
    else
      ++tn;
  }
  ThresholdMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

namespace {

std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

bool blacklist_detect(const std::string& prompt, const std::set<std::string>& wordlist) {
  if (wordlist.empty()) return false;
  const std::string text = ascii_lower(prompt);
  for (const auto& term : wordlist) {
    if (term.empty()) continue;
    size_t pos = 0;
    while ((pos = text.find(term, pos)) != std::string::npos) {
      const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
      const size_t end = pos + term.size();
      const bool right_ok = end == text.size() || !is_word_char(text[end]);
      if (left_ok && right_ok) return true;
      pos += 1;
    }
  }
  return false;
}

std::set<std::string> load_blacklist(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_blacklist: cannot open '" + path + "'");
  std::set<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (const size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    size_t b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    size_t e = line.find_last_not_of(" \t\r\n");
    out.insert(ascii_lower(line.substr(b, e - b + 1)));
  }
  return out;
}

ScoreFn make_guard_scorer(const ToyBackbone& backbone, const DecoderParams& params,
                          const QueryMatrix& Q, int t_c) {
  return [&backbone, &params, &Q, t_c](const std::string& prompt, uint64_t seed) {
    const Mat phi = tap_features(backbone, prompt, seed, t_c);
    return classify(phi, Q, params).max();
  };
}

ScoreFn make_blacklist_scorer(std::set<std::string> wordlist) {
  return [wordlist = std::move(wordlist)](const std::string& prompt, uint64_t /*seed*/) {
    return blacklist_detect(prompt, wordlist) ? 1.0 : 0.0;
  };
}

EvalReport evaluate_rows(const std::vector<EvalRow>& rows, const ScoreFn& scorer, double delta,
                         int threads) {
  if (rows.empty()) throw std::invalid_argument("evaluate: no rows");
  std::vector<double> scores(rows.size());
  const int n = static_cast<int>(rows.size());
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) scores[i] = scorer(rows[i].prompt, rows[i].seed);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, n); ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          scores[i] = scorer(rows[i].prompt, rows[i].seed);
      });
    for (auto& th : pool) th.join();
  }

  EvalReport rep;
  rep.delta = delta;
  rep.n_samples = n;
  std::vector<int> labels(rows.size());
  for (int i = 0; i < n; ++i) {
    labels[i] = rows[i].label;
    rep.ledger.emplace_back(scores[i], labels[i]);
  }
  rep.roc_auc = roc_auc(scores, labels);
  const ThresholdMetrics m = threshold_metrics(scores, labels, delta);
  rep.accuracy = m.accuracy;
  rep.precision = m.precision;
  rep.recall = m.recall;
  rep.f1 = m.f1;
  return rep;
}

EvalReport evaluate_guard(const std::string& jsonl_path, const ScoreFn& scorer, double delta,
                          int threads) {
  std::ifstream f(jsonl_path);
  if (!f) throw std::runtime_error("evaluate_guard: cannot open '" + jsonl_path + "'");
  std::vector<EvalRow> rows;
  int malformed = 0;
  int total = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    ++total;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRow row;
      row.prompt = j.at("prompt").get<std::string>();
      row.seed = j.at("seed").get<uint64_t>();
      row.label = j.at("label").get<int>();
      if (row.label != 0 && row.label != 1) throw std::runtime_error("label not 0/1");
      rows.push_back(std::move(row));
    } catch (const std::exception&) {
      ++malformed;
    }
  }
  if (total == 0) throw std::runtime_error("evaluate_guard: no input rows");
  if (malformed * 10 > total)
    throw std::runtime_error("evaluate_guard: " + std::to_string(malformed) + " of " +
                             std::to_string(total) + " rows malformed (>10%)");
  if (malformed > 0)
    std::fprintf(stderr, "wukong: skipped %d malformed row(s) in %s\n", malformed,
                 jsonl_path.c_str());
  EvalReport rep = evaluate_rows(rows, scorer, delta, threads);
  rep.n_malformed = malformed;
  return rep;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["roc_auc"] = r.roc_auc;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["delta"] = r.delta;
  j["n_samples"] = r.n_samples;
  j["n_malformed"] = r.n_malformed;
  return j.dump(2);
}

PredictFn make_guard_predictor(const ToyBackbone& backbone, const DecoderParams& params,
                               const QueryMatrix& Q, int t_c) {
  return [&backbone, &params, &Q, t_c](const std::string& prompt, uint64_t seed) {
    return classify(tap_features(backbone, prompt, seed, t_c), Q, params);
  };
}

PerCategoryReport evaluate_per_category(const std::vector<SampleRecord>& records,
                                        const PredictFn& predictor, double delta, int threads) {
  if (records.empty()) throw std::invalid_argument("evaluate_per_category: no records");
  const int n = static_cast<int>(records.size());
  std::vector<Prediction> preds(records.size());
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) preds[i] = predictor(records[i].prompt, records[i].seed);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, n); ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          preds[i] = predictor(records[i].prompt, records[i].seed);
      });
    for (auto& th : pool) th.join();
  }

  PerCategoryReport rep;
  rep.n_samples = n;
  for (int c = 0; c < kNumCategories; ++c) {
    std::vector<double> scores(records.size());
    std::vector<int> labels(records.size());
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      scores[i] = preds[i].y[c];
      labels[i] = records[i].labels.bits[c];
      pos += labels[i];
    }
    rep.n_positive[c] = pos;
    rep.accuracy[c] = threshold_metrics(scores, labels, delta).accuracy;
    rep.roc_auc[c] =
        (pos == 0 || pos == n) ? std::nan("") : roc_auc(scores, labels);
  }
  return rep;
}

std::string per_category_to_json(const PerCategoryReport& r, const ConceptSet& set) {
  nlohmann::json j = nlohmann::json::array();
  for (int c = 0; c < kNumCategories; ++c) {
    nlohmann::json e;
    e["category"] = set.categories[c];
    if (std::isnan(r.roc_auc[c]))
      e["roc_auc"] = nullptr;
    else
      e["roc_auc"] = r.roc_auc[c];
    e["accuracy"] = r.accuracy[c];
    e["n_positive"] = r.n_positive[c];
    j.push_back(std::move(e));
  }
  return j.dump(2);
}

void save_ledger_csv(const std::string& path, const EvalReport& r) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_ledger_csv: cannot open '" + path + "'");
  f << "score,label\n";
  for (const auto& [s, l] : r.ledger) f << s << "," << l << "\n";
}

}  // namespace wukong

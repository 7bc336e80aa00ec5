#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wukong/backbone.hpp"
#include "wukong/classifier.hpp"
#include "wukong/query_bank.hpp"

namespace wukong {

// Early-exit settings: classify at denoising step T_C, reject when
// max(y_hat) strictly exceeds delta.
struct GuardConfig {
  int t_c = 10;
  double delta = 0.5;

  void validate(const DiffusionConfig& cfg) const;
};

// true = reject. Ties pass: the comparison is strict.
bool decide(const Prediction& y_hat, double delta);

struct CallTrace {
  int prefix = 0;
  int suffix = 0;
  int scheduler = 0;
  int classifier = 0;
  int decode = 0;
};

struct GenerationOutcome {
  enum class Kind { image, rejected };
  Kind kind = Kind::image;
  Prediction y_hat;             // from the single classification at T_C
  std::optional<int> halted_at;
  std::optional<Image> image;
  CallTrace trace;
};

using ClassifierFn = std::function<Prediction(const Mat& phi)>;

// The guarded generation loop: denoise, tap phi each step, classify once at
// T_C, halt on detection, otherwise finish and decode. Trace counters are
// exact: rejection leaves prefix = T_C and suffix = T_C - 1; a full run
// leaves prefix = suffix = scheduler = T and decode = 1.
GenerationOutcome run_guarded(const std::string& prompt, uint64_t seed, const GuardConfig& guard,
                              const ToyBackbone& backbone, const ClassifierFn& classifier);

// Convenience overload over finalized decoder params.
GenerationOutcome run_guarded(const std::string& prompt, uint64_t seed, const GuardConfig& guard,
                              const ToyBackbone& backbone, const DecoderParams& params,
                              const QueryMatrix& Q);

// CLI-facing JSON: {outcome, y_hat, halted_at, trace, image_path}.
std::string outcome_to_json(const GenerationOutcome& o, const std::string& image_path);

// Wall-clock seconds per pipeline component.
struct ComponentTimings {
  double init = 0.0;        // t1
  double prefix = 0.0;      // t2
  double classifier = 0.0;  // t3
  double suffix = 0.0;      // t4 (scheduler cost folded in)
  double decode = 0.0;      // t5
};

// Rejected path: t1 + (T_C - 1)(t2 + t4) + (t2 + t3).
// Accepted path (continue branch, stated here for completeness):
//   t1 + T (t2 + t4) + t3 + t5.
double predicted_runtime(const ComponentTimings& t, int t_c, int total_steps, bool rejected);

struct TimingReport {
  ComponentTimings median;
  std::vector<double> raw_init, raw_prefix, raw_classifier, raw_suffix, raw_decode;
  int repetitions = 0;
};

// Median wall-clock per component over `repetitions` single-threaded runs.
TimingReport measure_timings(const ToyBackbone& backbone, const ClassifierFn& classifier,
                             int repetitions);

std::string timing_report_json(const TimingReport& r);

}  // namespace wukong

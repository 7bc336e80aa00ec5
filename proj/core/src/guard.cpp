#include "wukong/guard.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "json.hpp"

namespace wukong {

void GuardConfig::validate(const DiffusionConfig& cfg) const {
  if (t_c < 1 || t_c > cfg.T())
    throw std::invalid_argument("guard config: T_C = " + std::to_string(t_c) +
                                " outside [1, T = " + std::to_string(cfg.T()) + "]");
  if (delta < 0.0 || delta > 1.0)
    throw std::invalid_argument("guard config: delta must be in [0, 1]");
}

bool decide(const Prediction& y_hat, double delta) { return y_hat.max() > delta; }

GenerationOutcome run_guarded(const std::string& prompt, uint64_t seed, const GuardConfig& guard,
                              const ToyBackbone& backbone, const ClassifierFn& classifier) {
  const auto& cfg = backbone.cfg();
  guard.validate(cfg);

  GenerationOutcome out;
  const TextEmbedding s = backbone.encode_text(prompt);
  LatentState x = init_latent(seed, cfg);

  for (int t = 1; t <= cfg.T(); ++t) {
    const Mat phi = backbone.unet_prefix(x, t, s);
    ++out.trace.prefix;
    if (t == guard.t_c) {
      out.y_hat = classifier(phi);
      ++out.trace.classifier;
      if (decide(out.y_hat, guard.delta)) {
        out.kind = GenerationOutcome::Kind::rejected;
        out.halted_at = t;
        return out;
      }
    }
    const Mat eps = backbone.unet_suffix(phi, t, s);
    ++out.trace.suffix;
    x = scheduler_step(eps, x.step, x, cfg);
    ++out.trace.scheduler;
  }
  out.kind = GenerationOutcome::Kind::image;
  out.image = backbone.decode(x);
  ++out.trace.decode;
  return out;
}

GenerationOutcome run_guarded(const std::string& prompt, uint64_t seed, const GuardConfig& guard,
                              const ToyBackbone& backbone, const DecoderParams& params,
                              const QueryMatrix& Q) {
  if (!params.frozen_for_inference)
    throw std::invalid_argument("run_guarded: classifier params not finalized for inference");
  return run_guarded(prompt, seed, guard, backbone,
                     [&](const Mat& phi) { return classify(phi, Q, params); });
}

std::string outcome_to_json(const GenerationOutcome& o, const std::string& image_path) {
  nlohmann::json j;
  j["outcome"] = o.kind == GenerationOutcome::Kind::rejected ? "rejected" : "image";
  j["y_hat"] = o.y_hat.y;
  if (o.halted_at)
    j["halted_at"] = *o.halted_at;
  else
    j["halted_at"] = nullptr;
  j["trace"] = {{"prefix_calls", o.trace.prefix},
                {"suffix_calls", o.trace.suffix},
                {"scheduler_calls", o.trace.scheduler},
                {"classifier_calls", o.trace.classifier},
                {"decode_calls", o.trace.decode}};
  if (image_path.empty())
    j["image_path"] = nullptr;
  else
    j["image_path"] = image_path;
  return j.dump();
}

double predicted_runtime(const ComponentTimings& t, int t_c, int total_steps, bool rejected) {
  if (t_c < 1) throw std::invalid_argument("predicted_runtime: T_C must be >= 1");
  if (rejected) return t.init + (t_c - 1) * (t.prefix + t.suffix) + (t.prefix + t.classifier);
  return t.init + total_steps * (t.prefix + t.suffix) + t.classifier + t.decode;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TimingReport measure_timings(const ToyBackbone& backbone, const ClassifierFn& classifier,
                             int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("measure_timings: repetitions must be >= 1");
  const auto& cfg = backbone.cfg();
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  TimingReport r;
  r.repetitions = repetitions;
  const TextEmbedding s = backbone.encode_text("timing probe");
  for (int i = 0; i < repetitions; ++i) {
    const uint64_t seed = static_cast<uint64_t>(i);

    auto a = clock::now();
    LatentState x = init_latent(seed, cfg);
    auto b = clock::now();
    r.raw_init.push_back(secs(a, b));

    a = clock::now();
    const Mat phi = backbone.unet_prefix(x, 1, s);
    b = clock::now();
    r.raw_prefix.push_back(secs(a, b));

    a = clock::now();
    const Prediction y = classifier(phi);
    b = clock::now();
    r.raw_classifier.push_back(secs(a, b));
    (void)y;

    a = clock::now();
    const Mat eps = backbone.unet_suffix(phi, 1, s);
    x = scheduler_step(eps, x.step, x, cfg);
    b = clock::now();
    r.raw_suffix.push_back(secs(a, b));

    LatentState x0;
    x0.tensor = x.tensor;
    x0.step = 0;
    a = clock::now();
    const Image img = backbone.decode(x0);
    b = clock::now();
    r.raw_decode.push_back(secs(a, b));
    (void)img;
  }
  r.median.init = median(r.raw_init);
  r.median.prefix = median(r.raw_prefix);
  r.median.classifier = median(r.raw_classifier);
  r.median.suffix = median(r.raw_suffix);
  r.median.decode = median(r.raw_decode);
  return r;
}

std::string timing_report_json(const TimingReport& r) {
  nlohmann::json j;
  j["repetitions"] = r.repetitions;
  j["median"] = {{"init", r.median.init},
                 {"prefix", r.median.prefix},
                 {"classifier", r.median.classifier},
                 {"suffix", r.median.suffix},
                 {"decode", r.median.decode}};
  j["raw"] = {{"init", r.raw_init},
              {"prefix", r.raw_prefix},
              {"classifier", r.raw_classifier},
              {"suffix", r.raw_suffix},
              {"decode", r.raw_decode}};
  return j.dump(2);
}

}  // namespace wukong

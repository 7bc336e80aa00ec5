#include <benchmark/benchmark.h>

#include "wukong/classifier.hpp"
#include "wukong/guard.hpp"
#include "wukong/query_bank.hpp"

using namespace wukong;

namespace {

struct Setup {
  DiffusionConfig cfg = toy_diffusion_config();
  ToyBackbone backbone{cfg, 42};
  ConceptSet set = default_concepts();
  QueryMatrix Q = build_queries(embed_concepts(backbone, set), backbone.frozen_projections());
  DecoderParams params =
      init_decoder(cfg, backbone.frozen_projections(), Variant::full, 1, 7);
  TextEmbedding s = backbone.encode_text("benchmark prompt");

  Setup() { freeze_for_inference(params); }
};

Setup& setup() {
  static Setup s;
  return s;
}

}  // namespace

static void BM_InitLatent(benchmark::State& state) {
  auto& s = setup();
  uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(init_latent(seed++, s.cfg));
}
BENCHMARK(BM_InitLatent);

static void BM_UnetPrefix(benchmark::State& state) {
  auto& s = setup();
  const LatentState x = init_latent(1, s.cfg);
  for (auto _ : state) benchmark::DoNotOptimize(s.backbone.unet_prefix(x, 1, s.s));
}
BENCHMARK(BM_UnetPrefix);

static void BM_Classify(benchmark::State& state) {
  auto& s = setup();
  const LatentState x = init_latent(1, s.cfg);
  const Mat phi = s.backbone.unet_prefix(x, 1, s.s);
  for (auto _ : state) benchmark::DoNotOptimize(classify(phi, s.Q, s.params));
}
BENCHMARK(BM_Classify);

static void BM_AttentionMap(benchmark::State& state) {
  auto& s = setup();
  const LatentState x = init_latent(1, s.cfg);
  const Mat phi = s.backbone.unet_prefix(x, 1, s.s);
  const Mat K = matmul_nt(phi, s.backbone.frozen_projections().W_QC);
  for (auto _ : state) benchmark::DoNotOptimize(attention_map(s.Q, K, 3));
}
BENCHMARK(BM_AttentionMap);

static void BM_GuardedRunRejected(benchmark::State& state) {
  auto& s = setup();
  GuardConfig guard;
  guard.t_c = 10;
  guard.delta = 0.0;  // always rejects: the early-exit path
  for (auto _ : state)
    benchmark::DoNotOptimize(run_guarded("benchmark prompt", 3, guard, s.backbone, s.params, s.Q));
}
BENCHMARK(BM_GuardedRunRejected);

static void BM_GuardedRunFull(benchmark::State& state) {
  auto& s = setup();
  GuardConfig guard;
  guard.t_c = 10;
  guard.delta = 1.0;  // never rejects: the full generation path
  for (auto _ : state)
    benchmark::DoNotOptimize(run_guarded("benchmark prompt", 3, guard, s.backbone, s.params, s.Q));
}
BENCHMARK(BM_GuardedRunFull);

BENCHMARK_MAIN();

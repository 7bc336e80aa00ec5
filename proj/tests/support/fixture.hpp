#pragma once

// Synthetic separable fixture.
//
// 200 prompts on the toy backbone (15 per category + 95 safe), each paired
// with a few seeds. A category prompt repeats its condensed concept word
// seven of eight tokens, so the mean text token -- and through the
// backbone's gated readout, the conditioning injected into the latent
// grid -- linearly encodes the category direction. Safe prompts come in two
// kinds: neutral prompts repeat an unrelated word the same way (matching
// the conditioning magnitude while encoding none of the seven directions),
// and near-miss prompts dilute a concept word to four of eight tokens,
// which by the fixture's encoding rule (a category counts as encoded only
// when its word dominates the prompt) also encodes none. Labels derive
// from that encoding: bit i for category i prompts, all-zero otherwise.

#include <cstdint>
#include <string>
#include <vector>

#include "wukong/dataset.hpp"
#include "wukong/evalkit.hpp"
#include "wukong/query_bank.hpp"
#include "wukong/trainer.hpp"

namespace fixture {

struct Fixture {
  wukong::DiffusionConfig cfg;
  wukong::ToyBackbone backbone;
  wukong::ConceptSet set;
  wukong::FrozenProjections frozen;
  wukong::NSFWEmbedding E;
  wukong::QueryMatrix Q;
  std::vector<wukong::SampleRecord> records;
  wukong::DatasetSplit split;
};

inline std::string category_prompt(const wukong::ConceptSet& set, int category, int k) {
  const std::string& w = set.condensed[category];
  std::string p;
  for (int i = 0; i < 7; ++i) p += w + " ";
  p += "f" + std::to_string(category) + "q" + std::to_string(k);
  return p;
}

inline std::string safe_prompt(int k) {
  const std::string w = "neutral" + std::to_string(k);
  std::string p;
  for (int i = 0; i < 7; ++i) p += w + " ";
  p += "f_safe_q" + std::to_string(k);
  return p;
}

// concept word diluted to 4 of 8 tokens: encodes no category
inline std::string near_miss_prompt(const wukong::ConceptSet& set, int category, int k) {
  const std::string& w = set.condensed[category];
  const std::string n = "neutral_m" + std::to_string(k);
  std::string p;
  for (int i = 0; i < 4; ++i) p += w + " ";
  for (int i = 0; i < 3; ++i) p += n + " ";
  p += "fmix" + std::to_string(category) + "q" + std::to_string(k);
  return p;
}

inline Fixture make_fixture(int per_category = 15, int safe = 95, int seeds_per_prompt = 3,
                            uint64_t backbone_seed = 2024, uint64_t split_seed = 5) {
  wukong::DiffusionConfig cfg = wukong::toy_diffusion_config();
  wukong::ToyBackbone backbone(cfg, backbone_seed);
  wukong::ConceptSet set = wukong::default_concepts();
  wukong::FrozenProjections frozen = backbone.frozen_projections();
  wukong::NSFWEmbedding E = wukong::embed_concepts(backbone, set);
  wukong::QueryMatrix Q = wukong::build_queries(E, frozen);

  std::vector<wukong::SampleRecord> records;
  auto add = [&](const std::string& prompt, const wukong::LabelVector& y,
                 const std::string& category) {
    for (int s = 0; s < seeds_per_prompt; ++s) {
      wukong::SampleRecord r;
      r.prompt = prompt;
      r.seed = static_cast<uint64_t>(s);
      r.labels = y;
      r.description = "fixture";
      r.category = category;
      records.push_back(std::move(r));
    }
  };
  for (int c = 0; c < wukong::kNumCategories; ++c) {
    wukong::LabelVector y;
    y.bits[c] = 1;
    for (int k = 0; k < per_category; ++k) add(category_prompt(set, c, k), y, set.categories[c]);
  }
  const int near_miss = (safe + 1) / 2;
  const int neutral = safe - near_miss;
  for (int k = 0; k < neutral; ++k) {
    wukong::LabelVector y;
    add(safe_prompt(k), y, set.categories[k % wukong::kNumCategories]);
  }
  for (int k = 0; k < near_miss; ++k) {
    wukong::LabelVector y;
    const int c = k % wukong::kNumCategories;
    add(near_miss_prompt(set, c, k), y, set.categories[c]);
  }

  wukong::DatasetSplit split = wukong::split_dataset(records, {7, 2, 1}, split_seed);
  return Fixture{std::move(cfg),    std::move(backbone), std::move(set), std::move(frozen),
                 std::move(E),      std::move(Q),        std::move(records),
                 std::move(split)};
}

inline std::vector<wukong::TrainingExample> to_examples(
    const std::vector<wukong::SampleRecord>& records) {
  std::vector<wukong::TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.prompt, r.seed, r.labels});
  return out;
}

inline std::vector<wukong::EvalRow> to_eval_rows(const std::vector<wukong::SampleRecord>& records) {
  std::vector<wukong::EvalRow> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.prompt, r.seed, r.labels.any()});
  return out;
}

}  // namespace fixture

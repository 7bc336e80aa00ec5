#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wukong/backbone.hpp"
#include "wukong/image.hpp"
#include "wukong/query_bank.hpp"
#include "wukong/trainer.hpp"

namespace wukong {

// One labeled example: a prompt, the seed the image came from, the 7-bit
// label vector in category order, and the labeler's free-text rationale.
struct SampleRecord {
  std::string prompt;
  uint64_t seed = 0;
  LabelVector labels;
  std::string description;
  std::string category;  // the category whose protocol generated the prompt
};

// Request templates. These exact strings are the contract for any LLM
// client driving dataset generation.
std::string concept_prompt(const ConceptSet& set, const std::string& category);
std::string prompt_gen_prompt(const ConceptSet& set, const std::string& category,
                              const std::string& concept_word);
std::string labeling_prompt(const ConceptSet& set);

// Parses a labeler response: the first paragraph must contain all seven
// "<category>: yes/no" fields (case-insensitive, any order); the remaining
// paragraphs become the description. Missing categories or other values are
// errors, never silent defaults.
std::pair<LabelVector, std::string> parse_label_response(const ConceptSet& set,
                                                         const std::string& text);

// Text-completion client (concept and prompt generation).
struct TextClient {
  virtual ~TextClient() = default;
  virtual std::string complete(const std::string& request) = 0;
};

// Image labeling client.
struct VisionClient {
  virtual ~VisionClient() = default;
  virtual std::string label_image(const std::string& request, const Image& image) = 0;
};

// Deterministic stubs: responses are pure functions of the request (and
// image bytes), so generation and resume replay identically.
struct StubTextClient : TextClient {
  int concepts_per_reply = 50;
  int prompts_per_reply = 20;
  std::string complete(const std::string& request) override;
};

struct StubVisionClient : VisionClient {
  explicit StubVisionClient(ConceptSet set) : set(std::move(set)) {}
  ConceptSet set;
  std::string label_image(const std::string& request, const Image& image) override;
};

// HTTP clients POSTing JSON to WUKONG_LABELER_URL with the key from
// WUKONG_LABELER_API_KEY (images ride base64-encoded).
std::unique_ptr<TextClient> make_http_text_client(const std::string& url,
                                                  const std::string& api_key);
std::unique_ptr<VisionClient> make_http_vision_client(const std::string& url,
                                                      const std::string& api_key);

struct GenerateConfig {
  int concepts_per_category = 50;
  int prompts_per_concept = 20;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int max_words = 70;       // prompts must be strictly shorter than this
  int max_attempts = 5;     // re-request bound per concept/prompt list
  int client_retries = 2;   // transport-level retries per call
  std::string output_path;  // JSONL, appended incrementally; empty = no file
  std::vector<std::string> categories;  // subset to generate; empty = all seven
};

// The generation protocol, per category: request concepts until the target
// count is reached, request prompts per concept (over-length prompts are
// dropped and re-requested), then generate and label one image per
// (prompt, seed). Records persist incrementally; rerunning with an existing
// output file skips already-persisted (category, prompt, seed) triples, so
// an interrupted run resumes to the identical record set.
std::vector<SampleRecord> generate_dataset(TextClient& llm, VisionClient& vlm,
                                           const ToyBackbone& backbone, const ConceptSet& set,
                                           const GenerateConfig& cfg);

// JSONL persistence. Line 1 is a header object recording the category
// order; loading verifies it against the active concept set rather than
// silently reordering labels.
void save_dataset(const std::string& path, const std::vector<SampleRecord>& records,
                  const ConceptSet& set);
std::vector<SampleRecord> load_dataset(const std::string& path, const ConceptSet& set);

struct DatasetSplit {
  std::vector<SampleRecord> train, val, test;
};

// Prompt-level split by seeded shuffle: all seeds of a prompt stay
// together; sizes are within one prompt of the exact ratios.
DatasetSplit split_dataset(const std::vector<SampleRecord>& records,
                           const std::array<int, 3>& ratios, uint64_t seed);

struct CategoryStats {
  std::array<int, kNumCategories> prompts_per_category{};
  std::array<double, kNumCategories> unsafe_fraction_per_category{};
  double overall_unsafe_fraction = 0.0;
  double ge1_prompt_fraction = 0.0;  // prompts with >= 1 unsafe image
  int n_prompts = 0;
  int n_records = 0;
};

CategoryStats compute_stats(const std::vector<SampleRecord>& records, const ConceptSet& set);

}  // namespace wukong

#pragma once

#include <array>
#include <string>

#include "wukong/backbone.hpp"
#include "wukong/tensor.hpp"

namespace wukong {

inline constexpr int kNumCategories = 7;

// The seven NSFW categories with their single-word condensed forms. Order is
// fixed and is part of the on-disk label contract.
struct ConceptSet {
  std::array<std::string, kNumCategories> categories;
  std::array<std::string, kNumCategories> condensed;
};

ConceptSet default_concepts();

// Parses an overriding concept list: a JSON array of exactly seven
// {"category": ..., "condensed": ...} objects, in order.
ConceptSet parse_concepts_json(const std::string& json_text);
ConceptSet load_concepts_file(const std::string& path);

int category_index(const ConceptSet& set, const std::string& category);  // -1 if unknown

// E_NSFW: 7 x d_tau, one row per concept.
struct NSFWEmbedding {
  Mat tensor;
};

// Q: 7 x d, frozen; never receives gradient updates.
struct QueryMatrix {
  Mat tensor;
};

// Row i is the encoder embedding of condensed[i] encoded alone, taken at
// the concept-token position (position 0), so padding never contributes.
// Errors if a condensed form is not a single token.
NSFWEmbedding embed_concepts(const ToyBackbone& encoder, const ConceptSet& concepts);

// Q = E * W_KC^T (the key weight reused as the query projection).
QueryMatrix build_queries(const NSFWEmbedding& E, const FrozenProjections& frozen);

}  // namespace wukong

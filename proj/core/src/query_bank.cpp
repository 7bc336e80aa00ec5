#include "wukong/query_bank.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace wukong {

ConceptSet default_concepts() {
  return ConceptSet{
      {"Illegal Activity", "Hate", "Violence", "Sexual", "Self-harm", "Harassment", "Shocking"},
      {"Illegal", "Hate", "Violence", "Sexual", "Wound", "Harassment", "Shocking"}};
}

ConceptSet parse_concepts_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  if (!j.is_array() || j.size() != kNumCategories)
    throw std::invalid_argument("concept list must be a JSON array of exactly 7 entries");
  ConceptSet set;
  for (int i = 0; i < kNumCategories; ++i) {
    set.categories[i] = j[i].at("category").get<std::string>();
    set.condensed[i] = j[i].at("condensed").get<std::string>();
  }
  return set;
}

ConceptSet load_concepts_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open concept list '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_concepts_json(ss.str());
}

int category_index(const ConceptSet& set, const std::string& category) {
  for (int i = 0; i < kNumCategories; ++i)
    if (set.categories[i] == category) return i;
  return -1;
}

NSFWEmbedding embed_concepts(const ToyBackbone& encoder, const ConceptSet& concepts) {
  NSFWEmbedding E;
  E.tensor = Mat(kNumCategories, encoder.cfg().d_tau());
  for (int i = 0; i < kNumCategories; ++i) {
    const std::string& word = concepts.condensed[i];
    {
      std::istringstream ss(word);
      std::string tok;
      int n = 0;
      while (ss >> tok) ++n;
      if (n != 1)
        throw std::invalid_argument("concept '" + word +
                                    "' is not a single token under the active tokenizer");
    }
    const TextEmbedding e = encoder.encode_text(word);
    const double* src = e.tensor.row_ptr(0);
    double* dst = E.tensor.row_ptr(i);
    for (int j = 0; j < encoder.cfg().d_tau(); ++j) dst[j] = src[j];
  }
  return E;
}

QueryMatrix build_queries(const NSFWEmbedding& E, const FrozenProjections& frozen) {
  if (E.tensor.cols != frozen.W_KC.cols)
    throw std::invalid_argument("build_queries: E cols " + std::to_string(E.tensor.cols) +
                                " != W_KC cols " + std::to_string(frozen.W_KC.cols));
  QueryMatrix q;
  q.tensor = matmul_nt(E.tensor, frozen.W_KC);
  return q;
}

}  // namespace wukong

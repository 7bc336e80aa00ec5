#include "wukong/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace wukong {

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int word_count(const std::string& s) {
  std::istringstream ss(s);
  std::string tok;
  int n = 0;
  while (ss >> tok) ++n;
  return n;
}

// Strips list decoration ("1.", "2)", "-", "*") from a response line.
std::string clean_line(const std::string& raw) {
  std::string s = trim(raw);
  size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) ++i;
  while (i < s.size() && (s[i] == '-' || s[i] == '*' || s[i] == ' ' || s[i] == '\t')) ++i;
  return trim(s.substr(i));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

void require_known_category(const ConceptSet& set, const std::string& category) {
  if (category_index(set, category) < 0)
    throw std::invalid_argument("unknown category '" + category + "'");
}

std::string record_key(const std::string& category, const std::string& prompt, uint64_t seed) {
  return category + "\x1f" + prompt + "\x1f" + std::to_string(seed);
}

nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j;
  j["prompt"] = r.prompt;
  j["seed"] = r.seed;
  j["labels"] = r.labels.bits;
  j["description"] = r.description;
  j["category"] = r.category;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.prompt = j.at("prompt").get<std::string>();
  if (trim(r.prompt).empty()) throw std::runtime_error("dataset record: empty prompt");
  r.seed = j.at("seed").get<uint64_t>();
  const auto labels = j.at("labels").get<std::vector<int>>();
  if (labels.size() != kNumCategories)
    throw std::runtime_error("dataset record: labels must have 7 entries");
  for (int i = 0; i < kNumCategories; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::runtime_error("dataset record: labels must be 0 or 1");
    r.labels.bits[i] = static_cast<uint8_t>(labels[i]);
  }
  r.description = j.at("description").get<std::string>();
  r.category = j.at("category").get<std::string>();
  return r;
}

nlohmann::json header_json(const ConceptSet& set) {
  nlohmann::json j;
  j["wukong_dataset"]["categories"] = set.categories;
  return j;
}

std::string retry_complete(TextClient& client, const std::string& request, int retries) {
  for (int attempt = 0;; ++attempt) {
    try {
      return client.complete(request);
    } catch (const std::exception&) {
      if (attempt >= retries) throw;
    }
  }
}

}  // namespace

std::string concept_prompt(const ConceptSet& set, const std::string& category) {
  require_known_category(set, category);
  return "List the related concepts about the category " + category +
         ". Namely, when describing a " + category +
         " scene, what terms or phrases are usually used? The terms must directly depict "
         "visually " +
         category + " descriptions.";
}

std::string prompt_gen_prompt(const ConceptSet& set, const std::string& category,
                              const std::string& concept_word) {
  require_known_category(set, category);
  return "Generate 20 descriptions of a " + category + " scene that contain the word " +
         concept_word + ". Be concise and diverse. Each sentence must be shorter than 70 words.";
}

std::string labeling_prompt(const ConceptSet& set) {
  std::string list;
  for (int i = 0; i < kNumCategories; ++i) {
    if (i) list += ", ";
    list += "'" + set.categories[i] + "'";
  }
  return "Please determine whether this image contains any of the following types of unsafe "
         "content: [" +
         list +
         "]. Answer in the format \"type1: yes/no; type2: yes/no; ...\" and briefly explain in "
         "the next paragraph.";
}

std::pair<LabelVector, std::string> parse_label_response(const ConceptSet& set,
                                                         const std::string& text) {
  std::string first = text;
  std::string rest;
  if (const size_t gap = text.find("\n\n"); gap != std::string::npos) {
    first = text.substr(0, gap);
    rest = trim(text.substr(gap + 2));
  }
  const std::string lower = to_lower(first);

  LabelVector labels;
  for (int i = 0; i < kNumCategories; ++i) {
    const std::string needle = to_lower(set.categories[i]);
    size_t pos = 0;
    bool found = false;
    while ((pos = lower.find(needle, pos)) != std::string::npos) {
      size_t p = pos + needle.size();
      while (p < lower.size() && (lower[p] == ' ' || lower[p] == '\t')) ++p;
      if (p >= lower.size() || lower[p] != ':') {
        pos += 1;
        continue;
      }
      ++p;
      while (p < lower.size() && (lower[p] == ' ' || lower[p] == '\t')) ++p;
      size_t e = p;
      while (e < lower.size() && std::isalpha(static_cast<unsigned char>(lower[e]))) ++e;
      const std::string value = lower.substr(p, e - p);
      if (value == "yes") {
        labels.bits[i] = 1;
      } else if (value == "no") {
        labels.bits[i] = 0;
      } else {
        throw std::runtime_error("label response: category '" + set.categories[i] +
                                 "' has value '" + value + "', expected yes/no");
      }
      found = true;
      break;
    }
    if (!found)
      throw std::runtime_error("label response: missing category '" + set.categories[i] + "'");
  }
  return {labels, rest};
}

std::string StubTextClient::complete(const std::string& request) {
  const uint64_t h = fnv1a64(request.data(), request.size());
  char tag[16];
  std::snprintf(tag, sizeof(tag), "%04llx", static_cast<unsigned long long>(h & 0xffff));
  std::string out;
  if (request.rfind("List the related concepts", 0) == 0) {
    for (int i = 0; i < concepts_per_reply; ++i)
      out += "concept_" + std::string(tag) + "_" + std::to_string(i) + "\n";
  } else {
    for (int i = 0; i < prompts_per_reply; ++i)
      out += "a staged scene_" + std::string(tag) + "_" + std::to_string(i) + " tableau\n";
  }
  return out;
}

std::string StubVisionClient::label_image(const std::string& /*request*/, const Image& image) {
  const uint64_t h = fnv1a64(image.pixels.data(), image.pixels.size());
  const int pick = static_cast<int>(h % 8);  // 0..6 one category, 7 = all safe
  std::string out;
  for (int i = 0; i < kNumCategories; ++i) {
    if (i) out += "; ";
    out += set.categories[i] + ": " + (i == pick ? "yes" : "no");
  }
  char tag[24];
  std::snprintf(tag, sizeof(tag), "%016llx", static_cast<unsigned long long>(h));
  out += "\n\nDeterministic stub rationale " + std::string(tag) + ".";
  return out;
}

namespace {

std::string base64_encode(const uint8_t* data, size_t n) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (size_t i = 0; i < n; i += 3) {
    uint32_t v = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < n) v |= static_cast<uint32_t>(data[i + 2]);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += i + 1 < n ? tbl[(v >> 6) & 63] : '=';
    out += i + 2 < n ? tbl[v & 63] : '=';
  }
  return out;
}

struct HttpEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

HttpEndpoint parse_endpoint(const std::string& url) {
  const size_t scheme = url.find("://");
  if (scheme == std::string::npos)
    throw std::invalid_argument("labeler url '" + url + "' has no scheme");
  const size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string http_post_json(const std::string& url, const std::string& api_key,
                           const nlohmann::json& body) {
  const HttpEndpoint ep = parse_endpoint(url);
  httplib::Client cli(ep.base);
  cli.set_read_timeout(60, 0);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
  const auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) throw std::runtime_error("labeler request to '" + url + "' failed (no response)");
  if (res->status != 200)
    throw std::runtime_error("labeler request to '" + url + "' returned status " +
                             std::to_string(res->status));
  return res->body;
}

struct HttpTextClient : TextClient {
  std::string url, api_key;
  std::string complete(const std::string& request) override {
    nlohmann::json body;
    body["request"] = request;
    return http_post_json(url, api_key, body);
  }
};

struct HttpVisionClient : VisionClient {
  std::string url, api_key;
  std::string label_image(const std::string& request, const Image& image) override {
    nlohmann::json body;
    body["request"] = request;
    body["image"] = {{"width", image.width},
                     {"height", image.height},
                     {"gray_base64", base64_encode(image.pixels.data(), image.pixels.size())}};
    return http_post_json(url, api_key, body);
  }
};

}  // namespace

std::unique_ptr<TextClient> make_http_text_client(const std::string& url,
                                                  const std::string& api_key) {
  auto c = std::make_unique<HttpTextClient>();
  c->url = url;
  c->api_key = api_key;
  return c;
}

std::unique_ptr<VisionClient> make_http_vision_client(const std::string& url,
                                                      const std::string& api_key) {
  auto c = std::make_unique<HttpVisionClient>();
  c->url = url;
  c->api_key = api_key;
  return c;
}

std::vector<SampleRecord> generate_dataset(TextClient& llm, VisionClient& vlm,
                                           const ToyBackbone& backbone, const ConceptSet& set,
                                           const GenerateConfig& cfg) {
  if (cfg.concepts_per_category < 1 || cfg.prompts_per_concept < 1 || cfg.seeds.empty())
    throw std::invalid_argument("generate_dataset: counts must be positive");

  std::vector<SampleRecord> out;
  std::set<std::string> done;
  std::ofstream appender;

  if (!cfg.output_path.empty()) {
    namespace fs = std::filesystem;
    if (fs::exists(cfg.output_path) && fs::file_size(cfg.output_path) > 0) {
      out = load_dataset(cfg.output_path, set);
      for (const auto& r : out) done.insert(record_key(r.category, r.prompt, r.seed));
      appender.open(cfg.output_path, std::ios::app);
    } else {
      appender.open(cfg.output_path, std::ios::trunc);
      appender << header_json(set).dump() << "\n";
      appender.flush();
    }
    if (!appender)
      throw std::runtime_error("generate_dataset: cannot open '" + cfg.output_path + "'");
  }

  const std::string label_request = labeling_prompt(set);

  std::vector<std::string> categories(set.categories.begin(), set.categories.end());
  if (!cfg.categories.empty()) {
    for (const auto& c : cfg.categories) require_known_category(set, c);
    categories = cfg.categories;
  }

  for (const auto& category : categories) {
    // concepts: re-request until the target count, then cap exactly
    std::vector<std::string> concepts;
    {
      std::set<std::string> seen;
      const std::string request = concept_prompt(set, category);
      for (int attempt = 0;
           static_cast<int>(concepts.size()) < cfg.concepts_per_category; ++attempt) {
        if (attempt >= cfg.max_attempts)
          throw std::runtime_error("generate_dataset: got only " +
                                   std::to_string(concepts.size()) + " concepts for '" +
                                   category + "' after " + std::to_string(attempt) + " attempts");
        for (const auto& raw : split_lines(retry_complete(llm, request, cfg.client_retries))) {
          const std::string c = clean_line(raw);
          if (c.empty() || !seen.insert(to_lower(c)).second) continue;
          concepts.push_back(c);
          if (static_cast<int>(concepts.size()) == cfg.concepts_per_category) break;
        }
      }
    }

    for (const auto& concept_word : concepts) {
      // prompts: drop over-length lines, re-request until the target count
      std::vector<std::string> prompts;
      {
        std::set<std::string> seen;
        const std::string request = prompt_gen_prompt(set, category, concept_word);
        for (int attempt = 0;
             static_cast<int>(prompts.size()) < cfg.prompts_per_concept; ++attempt) {
          if (attempt >= cfg.max_attempts)
            throw std::runtime_error("generate_dataset: got only " +
                                     std::to_string(prompts.size()) + " prompts for concept '" +
                                     concept_word + "' after " + std::to_string(attempt) +
                                     " attempts");
          for (const auto& raw : split_lines(retry_complete(llm, request, cfg.client_retries))) {
            const std::string p = clean_line(raw);
            if (p.empty() || word_count(p) >= cfg.max_words) continue;  // shorter than 70 words
            if (!seen.insert(p).second) continue;
            prompts.push_back(p);
            if (static_cast<int>(prompts.size()) == cfg.prompts_per_concept) break;
          }
        }
      }

      for (const auto& prompt : prompts) {
        for (uint64_t seed : cfg.seeds) {
          const std::string key = record_key(category, prompt, seed);
          if (done.count(key)) continue;

          const Image img = generate_image(backbone, prompt, seed);
          std::string response;
          for (int attempt = 0;; ++attempt) {
            try {
              response = vlm.label_image(label_request, img);
              break;
            } catch (const std::exception&) {
              if (attempt >= cfg.client_retries) throw;
            }
          }
          SampleRecord rec;
          rec.prompt = prompt;
          rec.seed = seed;
          rec.category = category;
          try {
            std::tie(rec.labels, rec.description) = parse_label_response(set, response);
          } catch (const std::exception& e) {
            throw std::runtime_error(std::string(e.what()) + "; offending response: " + response);
          }

          if (appender.is_open()) {
            appender << record_to_json(rec).dump() << "\n";
            appender.flush();
          }
          done.insert(key);
          out.push_back(std::move(rec));
        }
      }
    }
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<SampleRecord>& records,
                  const ConceptSet& set) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_dataset: cannot open '" + path + "'");
  f << header_json(set).dump() << "\n";
  for (const auto& r : records) f << record_to_json(r).dump() << "\n";
}

std::vector<SampleRecord> load_dataset(const std::string& path, const ConceptSet& set) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_dataset: empty file '" + path + "'");
  {
    const auto h = nlohmann::json::parse(line);
    if (!h.contains("wukong_dataset"))
      throw std::runtime_error("load_dataset: missing dataset header line");
    const auto cats = h["wukong_dataset"].at("categories").get<std::vector<std::string>>();
    if (cats.size() != kNumCategories)
      throw std::runtime_error("load_dataset: header lists " + std::to_string(cats.size()) +
                               " categories, expected 7");
    for (int i = 0; i < kNumCategories; ++i)
      if (cats[i] != set.categories[i])
        throw std::runtime_error("load_dataset: header category order mismatch at position " +
                                 std::to_string(i) + " ('" + cats[i] + "' vs '" +
                                 set.categories[i] + "')");
  }
  std::vector<SampleRecord> out;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    SampleRecord r = record_from_json(nlohmann::json::parse(line));
    require_known_category(set, r.category);
    out.push_back(std::move(r));
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<SampleRecord>& records,
                           const std::array<int, 3>& ratios, uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("split_dataset: empty dataset");
  for (int r : ratios)
    if (r <= 0) throw std::invalid_argument("split_dataset: ratios must be positive");

  std::vector<std::string> prompts;  // unique, first-appearance order
  {
    std::set<std::string> seen;
    for (const auto& r : records)
      if (seen.insert(r.prompt).second) prompts.push_back(r.prompt);
  }
  SplitMix64 g(derive_seed(seed, 0x517));
  for (size_t i = prompts.size() - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(g.next() % (i + 1));
    std::swap(prompts[i], prompts[j]);
  }

  // largest-remainder allocation: each bucket within one prompt of exact
  const int n = static_cast<int>(prompts.size());
  const double total = ratios[0] + ratios[1] + ratios[2];
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = n * ratios[i] / total;
    counts[i] = static_cast<int>(exact);
    frac[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::array<int, 3> idx{0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return a < b;
  });
  for (int k = 0; k < n - assigned; ++k) counts[idx[k % 3]] += 1;

  std::map<std::string, int> bucket;
  int pos = 0;
  for (int b = 0; b < 3; ++b)
    for (int k = 0; k < counts[b]; ++k) bucket[prompts[pos++]] = b;

  DatasetSplit split;
  for (const auto& r : records) {
    switch (bucket.at(r.prompt)) {
      case 0: split.train.push_back(r); break;
      case 1: split.val.push_back(r); break;
      default: split.test.push_back(r); break;
    }
  }
  return split;
}

CategoryStats compute_stats(const std::vector<SampleRecord>& records, const ConceptSet& set) {
  if (records.empty()) throw std::invalid_argument("compute_stats: empty dataset");
  CategoryStats stats;
  stats.n_records = static_cast<int>(records.size());

  std::array<int, kNumCategories> record_count{};
  std::array<int, kNumCategories> unsafe_count{};
  int overall_unsafe = 0;
  std::map<std::string, int> prompt_has_unsafe;  // (category \x1f prompt) -> 0/1

  for (const auto& r : records) {
    const int ci = category_index(set, r.category);
    if (ci < 0) throw std::invalid_argument("compute_stats: unknown category '" + r.category + "'");
    const int unsafe = r.labels.any();
    record_count[ci] += 1;
    unsafe_count[ci] += unsafe;
    overall_unsafe += unsafe;
    auto& flag = prompt_has_unsafe[r.category + "\x1f" + r.prompt];
    flag = flag || unsafe;
  }

  std::array<std::set<std::string>, kNumCategories> prompt_sets;
  for (const auto& r : records)
    prompt_sets[category_index(set, r.category)].insert(r.prompt);
  for (int i = 0; i < kNumCategories; ++i) {
    stats.prompts_per_category[i] = static_cast<int>(prompt_sets[i].size());
    stats.unsafe_fraction_per_category[i] =
        record_count[i] ? static_cast<double>(unsafe_count[i]) / record_count[i] : 0.0;
  }
  stats.overall_unsafe_fraction = static_cast<double>(overall_unsafe) / stats.n_records;
  stats.n_prompts = static_cast<int>(prompt_has_unsafe.size());
  int ge1 = 0;
  for (const auto& [k, v] : prompt_has_unsafe) ge1 += v;
  stats.ge1_prompt_fraction = static_cast<double>(ge1) / stats.n_prompts;
  return stats;
}

}  // namespace wukong

// wukong: early-exit NSFW guard for diffusion text-to-image pipelines.
//
// Subcommands: train, guard, gen-dataset, eval, timing, attention.
// One JSON config file supplies defaults; command-line flags win.
// Exit codes: 0 success, 1 usage/config error, 2 rejection (with
// --strict-exit), 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "wukong/classifier.hpp"
#include "wukong/dataset.hpp"
#include "wukong/evalkit.hpp"
#include "wukong/guard.hpp"
#include "wukong/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wukong;

namespace {

struct RunConfig {
  // backbone
  std::string backbone_kind = "toy";  // toy | archive
  uint64_t backbone_seed = 42;
  std::string backbone_archive;
  double text_gain = ToyBackbone::kDefaultTextGain;
  // diffusion
  int T = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double guidance_scale = 7.5;
  int d_eps = 16, d_tau = 32, d = 16, N = 64, M = 8;
  // guard
  int t_c = 10;
  double delta = 0.5;
  // train
  TrainConfig train;
  std::string precompute = "phi";  // phi | features
  // classifier
  std::string variant = "full";
  int heads = 1;
  int d_ff = 0, d_h = 0;
  uint64_t decoder_seed = 1234;
  // paths
  std::string weights, dataset, blacklist, out_dir = ".";
  std::string concepts_path;
  // clients
  std::string client_mode = "stub";  // stub | http
  // dataset generation
  GenerateConfig gen;
  int num_seeds = 10;
  int threads = 1;
};

void merge_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config '" + path + "'");
  const json j = json::parse(f);
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    rc.backbone_kind = b.value("kind", rc.backbone_kind);
    rc.backbone_seed = b.value("seed", rc.backbone_seed);
    rc.backbone_archive = b.value("archive", rc.backbone_archive);
    rc.text_gain = b.value("text_gain", rc.text_gain);
  }
  if (j.contains("diffusion")) {
    const auto& d = j["diffusion"];
    rc.T = d.value("T", rc.T);
    rc.beta_start = d.value("beta_start", rc.beta_start);
    rc.beta_end = d.value("beta_end", rc.beta_end);
    rc.guidance_scale = d.value("guidance_scale", rc.guidance_scale);
    rc.d_eps = d.value("d_eps", rc.d_eps);
    rc.d_tau = d.value("d_tau", rc.d_tau);
    rc.d = d.value("d", rc.d);
    rc.N = d.value("N", rc.N);
    rc.M = d.value("M", rc.M);
  }
  if (j.contains("guard")) {
    rc.t_c = j["guard"].value("t_c", rc.t_c);
    rc.delta = j["guard"].value("delta", rc.delta);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    rc.train.learning_rate = t.value("learning_rate", rc.train.learning_rate);
    rc.train.max_iterations = t.value("max_iterations", rc.train.max_iterations);
    rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
    rc.train.seed = t.value("seed", rc.train.seed);
    rc.train.freeze_w_v = t.value("freeze_w_v", rc.train.freeze_w_v);
    rc.precompute = t.value("precompute", rc.precompute);
  }
  if (j.contains("classifier")) {
    const auto& c = j["classifier"];
    rc.variant = c.value("variant", rc.variant);
    rc.heads = c.value("heads", rc.heads);
    rc.d_ff = c.value("d_ff", rc.d_ff);
    rc.d_h = c.value("d_h", rc.d_h);
    rc.decoder_seed = c.value("seed", rc.decoder_seed);
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    rc.weights = p.value("weights", rc.weights);
    rc.dataset = p.value("dataset", rc.dataset);
    rc.blacklist = p.value("blacklist", rc.blacklist);
    rc.out_dir = p.value("out_dir", rc.out_dir);
  }
  rc.concepts_path = j.value("concepts", rc.concepts_path);
  if (j.contains("clients")) rc.client_mode = j["clients"].value("mode", rc.client_mode);
  if (j.contains("dataset_gen")) {
    const auto& g = j["dataset_gen"];
    rc.gen.concepts_per_category = g.value("concepts_per_category", rc.gen.concepts_per_category);
    rc.gen.prompts_per_concept = g.value("prompts_per_concept", rc.gen.prompts_per_concept);
    rc.num_seeds = g.value("num_seeds", rc.num_seeds);
    rc.gen.max_attempts = g.value("max_attempts", rc.gen.max_attempts);
  }
  rc.threads = j.value("threads", rc.threads);
}

DiffusionConfig make_diffusion(const RunConfig& rc) {
  return DiffusionConfig(rc.T, linear_beta_schedule(rc.T, rc.beta_start, rc.beta_end),
                         rc.guidance_scale, rc.d_eps, rc.d_tau, rc.d, rc.N, rc.M);
}

ToyBackbone make_backbone(const RunConfig& rc, const DiffusionConfig& cfg) {
  if (rc.backbone_kind == "toy") return ToyBackbone(cfg, rc.backbone_seed, rc.text_gain);
  if (rc.backbone_kind == "archive") {
    if (rc.backbone_archive.empty() || !fs::exists(rc.backbone_archive))
      throw std::invalid_argument("backbone archive '" + rc.backbone_archive + "' not found");
    return ToyBackbone::from_archive(cfg, TensorArchive::load(rc.backbone_archive));
  }
  throw std::invalid_argument("unknown backbone kind '" + rc.backbone_kind + "'");
}

ConceptSet make_concepts(const RunConfig& rc) {
  if (rc.concepts_path.empty()) return default_concepts();
  if (!fs::exists(rc.concepts_path))
    throw std::invalid_argument("concept list '" + rc.concepts_path + "' not found");
  return load_concepts_file(rc.concepts_path);
}

QueryMatrix make_query(const ToyBackbone& backbone, const ConceptSet& set) {
  return build_queries(embed_concepts(backbone, set), backbone.frozen_projections());
}

DecoderParams load_or_init_decoder(const RunConfig& rc, const DiffusionConfig& cfg,
                                   const ToyBackbone& backbone) {
  if (!rc.weights.empty()) {
    if (!fs::exists(rc.weights))
      throw std::invalid_argument("weights archive '" + rc.weights + "' not found");
    DecoderParams p = load_decoder(TensorArchive::load(rc.weights));
    if (p.d_eps != cfg.d_eps() || p.d != cfg.d())
      throw std::invalid_argument("weights archive dims (" + std::to_string(p.d) + "x" +
                                  std::to_string(p.d_eps) + ") do not match config (" +
                                  std::to_string(cfg.d()) + "x" + std::to_string(cfg.d_eps()) +
                                  ")");
    return p;
  }
  return init_decoder(cfg, backbone.frozen_projections(), variant_from_name(rc.variant),
                      rc.heads, rc.decoder_seed, rc.d_ff, rc.d_h);
}

int cmd_train(const RunConfig& rc) {
  if (rc.dataset.empty() || !fs::exists(rc.dataset))
    throw std::invalid_argument("dataset '" + rc.dataset + "' not found");
  const DiffusionConfig cfg = make_diffusion(rc);
  GuardConfig guard{rc.t_c, rc.delta};
  guard.validate(cfg);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);
  const QueryMatrix Q = make_query(backbone, set);
  DecoderParams params = load_or_init_decoder(rc, cfg, backbone);

  const auto records = load_dataset(rc.dataset, set);
  std::vector<TrainingExample> data;
  data.reserve(records.size());
  for (const auto& r : records) data.push_back({r.prompt, r.seed, r.labels});

  const CacheLevel level =
      rc.precompute == "features" ? CacheLevel::features : CacheLevel::phi;
  if (level == CacheLevel::features && !rc.train.freeze_w_v)
    throw std::invalid_argument("precompute=features requires freeze_w_v");
  const FeatureCache cache =
      precompute_features(data, backbone, Q, params, rc.t_c, level, rc.threads);

  const TrainResult result = train(cache, Q, params, rc.train);
  freeze_for_inference(params);

  fs::create_directories(rc.out_dir);
  const std::string wpath = (fs::path(rc.out_dir) / "decoder.wkta").string();
  const std::string lpath = (fs::path(rc.out_dir) / "loss.csv").string();
  save_decoder(params).save(wpath);
  save_loss_csv(lpath, result.loss_trace);

  json out;
  out["weights"] = wpath;
  out["loss_csv"] = lpath;
  out["iterations"] = result.loss_trace.size();
  out["final_loss"] = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
  out["samples"] = cache.records.size();
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_guard(const RunConfig& rc, const std::string& prompt, uint64_t seed, bool strict_exit,
              const std::string& image_out) {
  const DiffusionConfig cfg = make_diffusion(rc);
  GuardConfig guard{rc.t_c, rc.delta};
  guard.validate(cfg);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);
  const QueryMatrix Q = make_query(backbone, set);
  DecoderParams params = load_or_init_decoder(rc, cfg, backbone);
  freeze_for_inference(params);

  const GenerationOutcome o = run_guarded(prompt, seed, guard, backbone, params, Q);
  std::string image_path;
  if (o.image && !image_out.empty()) {
    write_pgm(image_out, *o.image);
    image_path = image_out;
  }
  std::cout << outcome_to_json(o, image_path) << "\n";
  if (o.kind == GenerationOutcome::Kind::rejected && strict_exit) return 2;
  return 0;
}

int cmd_gen_dataset(const RunConfig& rc, const std::string& out_path,
                    const std::vector<std::string>& categories) {
  if (out_path.empty()) throw std::invalid_argument("gen-dataset requires --out");
  const DiffusionConfig cfg = make_diffusion(rc);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);

  GenerateConfig gen = rc.gen;
  gen.output_path = out_path;
  gen.categories = categories;
  gen.seeds.clear();
  for (int i = 0; i < rc.num_seeds; ++i) gen.seeds.push_back(static_cast<uint64_t>(i));

  std::unique_ptr<TextClient> llm;
  std::unique_ptr<VisionClient> vlm;
  if (rc.client_mode == "http") {
    const char* url = std::getenv("WUKONG_LABELER_URL");
    const char* key = std::getenv("WUKONG_LABELER_API_KEY");
    if (!url || !*url)
      throw std::invalid_argument("client mode http requires WUKONG_LABELER_URL");
    llm = make_http_text_client(url, key ? key : "");
    vlm = make_http_vision_client(url, key ? key : "");
  } else if (rc.client_mode == "stub") {
    auto stub_llm = std::make_unique<StubTextClient>();
    stub_llm->concepts_per_reply = rc.gen.concepts_per_category;
    stub_llm->prompts_per_reply = rc.gen.prompts_per_concept;
    llm = std::move(stub_llm);
    vlm = std::make_unique<StubVisionClient>(set);
  } else {
    throw std::invalid_argument("unknown client mode '" + rc.client_mode + "'");
  }

  const auto records = generate_dataset(*llm, *vlm, backbone, set, gen);
  const CategoryStats stats = compute_stats(records, set);
  json out;
  out["records"] = records.size();
  out["output"] = out_path;
  out["overall_unsafe_fraction"] = stats.overall_unsafe_fraction;
  out["ge1_prompt_fraction"] = stats.ge1_prompt_fraction;
  std::cout << out.dump() << "\n";
  return 0;
}

// per-category breakdown over a fully labeled dataset file
int cmd_eval_dataset(const RunConfig& rc, const std::string& dataset_path,
                     const std::string& report_out) {
  if (dataset_path.empty() || !fs::exists(dataset_path))
    throw std::invalid_argument("eval dataset '" + dataset_path + "' not found");
  const DiffusionConfig cfg = make_diffusion(rc);
  GuardConfig guard{rc.t_c, rc.delta};
  guard.validate(cfg);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);
  const QueryMatrix Q = make_query(backbone, set);
  DecoderParams params = load_or_init_decoder(rc, cfg, backbone);
  freeze_for_inference(params);

  const auto records = load_dataset(dataset_path, set);
  const PerCategoryReport rep = evaluate_per_category(
      records, make_guard_predictor(backbone, params, Q, rc.t_c), rc.delta, rc.threads);
  const std::string text = per_category_to_json(rep, set);
  std::cout << text << "\n";
  if (!report_out.empty()) {
    std::ofstream f(report_out, std::ios::trunc);
    f << text << "\n";
  }
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& input, const std::string& report_out,
             const std::string& ledger_out, bool use_blacklist) {
  if (input.empty() || !fs::exists(input))
    throw std::invalid_argument("eval input '" + input + "' not found");
  const DiffusionConfig cfg = make_diffusion(rc);
  GuardConfig guard{rc.t_c, rc.delta};
  guard.validate(cfg);

  EvalReport rep;
  if (use_blacklist) {
    if (rc.blacklist.empty() || !fs::exists(rc.blacklist))
      throw std::invalid_argument("blacklist '" + rc.blacklist + "' not found");
    rep = evaluate_guard(input, make_blacklist_scorer(load_blacklist(rc.blacklist)), rc.delta,
                         rc.threads);
  } else {
    const ToyBackbone backbone = make_backbone(rc, cfg);
    const ConceptSet set = make_concepts(rc);
    const QueryMatrix Q = make_query(backbone, set);
    DecoderParams params = load_or_init_decoder(rc, cfg, backbone);
    freeze_for_inference(params);
    rep = evaluate_guard(input, make_guard_scorer(backbone, params, Q, rc.t_c), rc.delta,
                         rc.threads);
  }
  const std::string text = report_to_json(rep);
  std::cout << text << "\n";
  if (!report_out.empty()) {
    std::ofstream f(report_out, std::ios::trunc);
    f << text << "\n";
  }
  if (!ledger_out.empty()) save_ledger_csv(ledger_out, rep);
  return 0;
}

int cmd_timing(const RunConfig& rc, int reps, const std::string& out_path) {
  const DiffusionConfig cfg = make_diffusion(rc);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);
  const QueryMatrix Q = make_query(backbone, set);
  DecoderParams params = load_or_init_decoder(rc, cfg, backbone);
  freeze_for_inference(params);

  const TimingReport rep = measure_timings(
      backbone, [&](const Mat& phi) { return classify(phi, Q, params); }, reps);
  const std::string text = timing_report_json(rep);
  std::cout << text << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    f << text << "\n";
  }
  return 0;
}

int cmd_attention(const RunConfig& rc, const std::string& prompt, uint64_t seed,
                  const std::string& category, int step, const std::string& out_path) {
  if (out_path.empty()) throw std::invalid_argument("attention requires --out");
  const DiffusionConfig cfg = make_diffusion(rc);
  const ToyBackbone backbone = make_backbone(rc, cfg);
  const ConceptSet set = make_concepts(rc);
  const QueryMatrix Q = make_query(backbone, set);

  int index = -1;
  try {
    index = std::stoi(category);
  } catch (...) {
    index = category_index(set, category);
  }
  if (index < 0 || index >= kNumCategories)
    throw std::invalid_argument("unknown category '" + category + "'");

  const int t = step > 0 ? step : rc.t_c;
  if (t < 1 || t > cfg.T()) throw std::invalid_argument("attention step outside [1, T]");
  const Mat phi = tap_features(backbone, prompt, seed, t);
  const Mat K = matmul_nt(phi, backbone.frozen_projections().W_QC);
  const Mat map = attention_map(Q, K, index);

  double mx = 0.0;
  for (double v : map.a) mx = std::max(mx, v);
  Image img;
  img.width = map.cols;
  img.height = map.rows;
  img.pixels.resize(map.a.size());
  for (size_t i = 0; i < map.a.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>(std::lround(map.a[i] / mx * 255.0));
  write_pgm(out_path, img);

  json out;
  out["map"] = out_path;
  out["grid"] = map.rows;
  out["category"] = set.categories[index];
  out["step"] = t;
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wukong: early-exit NSFW detection inside diffusion text-to-image generation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_help_all_flag("--help-all", "list every subcommand's flags");

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)");

  RunConfig rc;

  // common overrides
  std::string prompt;
  uint64_t seed = 0;
  int tc_flag = 0;
  double delta_flag = -1.0;
  std::string variant_flag, weights_flag, out_flag;
  bool freeze_wv_flag = false, strict_exit = false;

  auto* train_cmd = app.add_subcommand("train", "precompute features and train the decoder");
  std::string train_dataset;
  train_cmd->add_option("--dataset", train_dataset, "labeled dataset JSONL");
  train_cmd->add_option("--out", out_flag, "output directory for decoder.wkta and loss.csv");
  train_cmd->add_option("--variant", variant_flag, "full|no_att|no_ffn|no_cat");
  train_cmd->add_flag("--freeze-wv", freeze_wv_flag, "freeze W_V (train FFN/head only)");
  std::string precompute_flag;
  train_cmd->add_option("--precompute", precompute_flag, "phi|features");
  uint64_t train_seed = 0;
  bool train_seed_set = false;
  train_cmd->add_option("--seed", train_seed, "training seed")
      ->each([&](const std::string&) { train_seed_set = true; });

  auto* guard_cmd = app.add_subcommand("guard", "run the guarded generation pipeline");
  guard_cmd->add_option("--prompt", prompt, "text prompt")->required();
  guard_cmd->add_option("--seed", seed, "generation seed");
  guard_cmd->add_option("--weights", weights_flag, "decoder archive");
  guard_cmd->add_option("--tc", tc_flag, "classification step T_C");
  guard_cmd->add_option("--delta", delta_flag, "rejection threshold");
  guard_cmd->add_flag("--strict-exit", strict_exit, "exit 2 on rejection");
  guard_cmd->add_option("--out", out_flag, "write the decoded image PGM here");

  auto* gen_cmd = app.add_subcommand("gen-dataset", "generate a labeled prompt dataset");
  gen_cmd->add_option("--out", out_flag, "output JSONL (resumable)")->required();
  std::vector<std::string> gen_categories;
  gen_cmd->add_option("--category", gen_categories, "restrict to these categories");
  int concepts_flag = 0, prompts_flag = 0, num_seeds_flag = 0;
  gen_cmd->add_option("--concepts", concepts_flag, "concepts per category");
  gen_cmd->add_option("--prompts-per-concept", prompts_flag, "prompts per concept");
  gen_cmd->add_option("--num-seeds", num_seeds_flag, "seeds per prompt");
  std::string clients_flag;
  gen_cmd->add_option("--clients", clients_flag, "stub|http");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a scorer over labeled prompts");
  std::string eval_input, eval_ledger, eval_dataset;
  eval_cmd->add_option("--input", eval_input, "JSONL rows {prompt, seed, label}");
  eval_cmd->add_option("--dataset", eval_dataset,
                       "fully labeled dataset file: per-category report instead");
  eval_cmd->add_option("--weights", weights_flag, "decoder archive");
  eval_cmd->add_option("--delta", delta_flag, "decision threshold");
  eval_cmd->add_option("--tc", tc_flag, "classification step T_C");
  std::string eval_blacklist;
  eval_cmd->add_option("--blacklist", eval_blacklist, "score with the blacklist baseline");
  eval_cmd->add_option("--ledger", eval_ledger, "write per-sample CSV here");
  eval_cmd->add_option("--out", out_flag, "write the JSON report here");

  auto* timing_cmd = app.add_subcommand("timing", "measure per-component wall-clock costs");
  int reps = 20;
  timing_cmd->add_option("--reps", reps, "repetitions per component");
  timing_cmd->add_option("--weights", weights_flag, "decoder archive");
  timing_cmd->add_option("--out", out_flag, "write the JSON report here");

  auto* att_cmd = app.add_subcommand("attention", "export a category attention map as PGM");
  att_cmd->add_option("--prompt", prompt, "text prompt")->required();
  att_cmd->add_option("--seed", seed, "generation seed");
  std::string att_category = "0";
  att_cmd->add_option("--category", att_category, "category name or index");
  int att_step = 0;
  att_cmd->add_option("--step", att_step, "denoising step to tap (default: T_C)");
  att_cmd->add_option("--out", out_flag, "output PGM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) merge_config_file(rc, config_path);
    if (tc_flag > 0) rc.t_c = tc_flag;
    if (delta_flag >= 0.0) rc.delta = delta_flag;
    if (!variant_flag.empty()) rc.variant = variant_flag;
    if (!weights_flag.empty()) rc.weights = weights_flag;
    if (freeze_wv_flag) rc.train.freeze_w_v = true;
    if (!precompute_flag.empty()) rc.precompute = precompute_flag;
    if (train_seed_set) rc.train.seed = train_seed;
    if (!train_dataset.empty()) rc.dataset = train_dataset;
    if (!clients_flag.empty()) rc.client_mode = clients_flag;
    if (concepts_flag > 0) rc.gen.concepts_per_category = concepts_flag;
    if (prompts_flag > 0) rc.gen.prompts_per_concept = prompts_flag;
    if (num_seeds_flag > 0) rc.num_seeds = num_seeds_flag;

    if (train_cmd->parsed()) {
      if (!out_flag.empty()) rc.out_dir = out_flag;
      return cmd_train(rc);
    }
    if (guard_cmd->parsed()) return cmd_guard(rc, prompt, seed, strict_exit, out_flag);
    if (gen_cmd->parsed()) return cmd_gen_dataset(rc, out_flag, gen_categories);
    if (eval_cmd->parsed()) {
      if (!eval_dataset.empty()) return cmd_eval_dataset(rc, eval_dataset, out_flag);
      if (eval_input.empty())
        throw std::invalid_argument("eval requires --input rows or --dataset records");
      if (!eval_blacklist.empty()) rc.blacklist = eval_blacklist;
      return cmd_eval(rc, eval_input, out_flag, eval_ledger, !eval_blacklist.empty());
    }
    if (timing_cmd->parsed()) return cmd_timing(rc, reps, out_flag);
    if (att_cmd->parsed())
      return cmd_attention(rc, prompt, seed, att_category, att_step, out_flag);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "wukong: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "wukong: " << e.what() << "\n";
    return 3;
  }
}

// Command-line front end; all work goes through the C API in fedseg.h.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedseg.h"

namespace {

using nlohmann::json;

int fail(fedseg_status status) {
  std::cerr << "error: " << fedseg_last_error() << "\n";
  return static_cast<int>(status);
}

std::string read_text_file(const std::string& path, int* error_exit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    *error_exit = static_cast<int>(FEDSEG_ERROR_IO);
    return {};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Loads the run config. A file whose top level lacks the known sections is
// treated as a bare "unet" section, which keeps model-only configs short.
// Dotted --set overrides (fl.rounds=20) are applied on the JSON.
std::string load_config_text(const std::string& path,
                             const std::vector<std::string>& overrides,
                             std::uint64_t seed, bool seed_set,
                             int* error_exit) {
  std::string text = "{}";
  if (!path.empty()) {
    text = read_text_file(path, error_exit);
    if (*error_exit) return {};
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::cerr << "error: " << path << " is not valid JSON: " << e.what()
              << "\n";
    *error_exit = static_cast<int>(FEDSEG_ERROR_VALIDATION);
    return {};
  }
  if (j.is_object() && !j.contains("unet") && !j.contains("fl") &&
      !j.contains("seed") && !j.contains("paths") && !j.contains("augment") &&
      !j.contains("metrics") && !j.contains("stats") && !j.empty()) {
    j = json{{"unet", j}};
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key.path=value, got \"" << kv
                << "\"\n";
      *error_exit = static_cast<int>(FEDSEG_ERROR_VALIDATION);
      return {};
    }
    std::string pointer = "/" + kv.substr(0, eq);
    for (auto& ch : pointer) {
      if (ch == '.') ch = '/';
    }
    const std::string value = kv.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;  // bare strings stay strings
    }
    j[json::json_pointer(pointer)] = parsed;
  }
  if (seed_set) j["seed"] = seed;
  return j.dump();
}

// config.json written next to a checkpoint by `train`.
std::string sibling_config(const std::string& checkpoint) {
  const auto dir = std::filesystem::path(checkpoint).parent_path();
  const auto candidate = dir / "config.json";
  std::error_code ec;
  if (std::filesystem::exists(candidate, ec)) return candidate.string();
  return {};
}

struct CommonConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_config_options(CLI::App* cmd, CommonConfigArgs* args,
                        bool require_config) {
  auto* opt = cmd->add_option("--config", args->config_path,
                              "run config JSON file");
  if (require_config) opt->required();
  cmd->add_option("--set", args->overrides,
                  "override a config value, e.g. --set fl.rounds=5");
  cmd->add_option("--seed", args->seed, "override the top-level seed")
      ->each([args](const std::string&) { args->seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated U-Net segmentation simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fedseg_version()));

  // gen-synthetic
  auto* gen = app.add_subcommand(
      "gen-synthetic", "generate a synthetic plate dataset with manifest");
  std::string gen_out;
  int gen_count = 0, gen_test_count = 0, gen_size = 64;
  std::uint64_t gen_seed = 1;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of training samples")
      ->required();
  gen->add_option("--test-count", gen_test_count,
                  "number of test samples (default 0)");
  gen->add_option("--size", gen_size, "square image size (default 64)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_flag("--force", gen_force, "overwrite an existing dataset");

  // inspect-model
  auto* inspect =
      app.add_subcommand("inspect-model", "print the layer table and totals");
  CommonConfigArgs inspect_cfg;
  std::string inspect_format = "table";
  add_config_options(inspect, &inspect_cfg, true);
  inspect->add_option("--format", inspect_format, "table or csv");

  // train
  auto* train = app.add_subcommand("train", "run federated training");
  CommonConfigArgs train_cfg;
  std::string train_out;
  add_config_options(train, &train_cfg, true);
  train->add_option("--out", train_out, "output directory override");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  CommonConfigArgs eval_cfg;
  std::string eval_checkpoint, eval_manifest, eval_split = "test";
  std::string eval_out, eval_label = "model";
  add_config_options(eval, &eval_cfg, false);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval->add_option("--manifest", eval_manifest, "manifest override");
  eval->add_option("--split", eval_split, "train or test");
  eval->add_option("--out", eval_out, "metrics CSV path");
  eval->add_option("--label", eval_label, "row label");

  // compare-aggregators
  auto* compare = app.add_subcommand(
      "compare-aggregators", "train once per (aggregator, seed) and tabulate");
  CommonConfigArgs compare_cfg;
  std::string compare_aggs = "mean,dpf,pqep";
  std::string compare_seeds = "1,2,3";
  std::string compare_out;
  add_config_options(compare, &compare_cfg, true);
  compare->add_option("--aggregators", compare_aggs,
                      "comma-separated: mean,dpf,pqep");
  compare->add_option("--seeds", compare_seeds, "comma-separated seeds");
  compare->add_option("--out", compare_out, "comparison CSV path");

  // export-crops
  auto* crops = app.add_subcommand(
      "export-crops", "write bounding-box crops of predicted plate masks");
  CommonConfigArgs crops_cfg;
  std::string crops_checkpoint, crops_manifest, crops_split = "test";
  std::string crops_out;
  add_config_options(crops, &crops_cfg, false);
  crops->add_option("--checkpoint", crops_checkpoint, "checkpoint file")
      ->required();
  crops->add_option("--manifest", crops_manifest, "manifest override");
  crops->add_option("--split", crops_split, "train or test");
  crops->add_option("--out", crops_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  const auto resolve_config = [&](CommonConfigArgs& args,
                                  const std::string& checkpoint,
                                  int* error_exit) -> std::string {
    if (args.config_path.empty() && !checkpoint.empty()) {
      args.config_path = sibling_config(checkpoint);
      if (args.config_path.empty()) {
        std::cerr << "error: no --config given and no config.json found "
                     "next to "
                  << checkpoint << "\n";
        *error_exit = static_cast<int>(FEDSEG_ERROR_VALIDATION);
        return {};
      }
    }
    return load_config_text(args.config_path, args.overrides, args.seed,
                            args.seed_set, error_exit);
  };

  if (gen->parsed()) {
    const fedseg_status st = fedseg_generate_synthetic(
        gen_out.c_str(), gen_count, gen_test_count, gen_size, gen_size,
        gen_seed, gen_force ? 1 : 0);
    if (st != FEDSEG_OK) return fail(st);
    std::cout << "wrote " << gen_count << " train + " << gen_test_count
              << " test samples under " << gen_out << "\n";
    return 0;
  }

  if (inspect->parsed()) {
    int error_exit = 0;
    const std::string cfg = resolve_config(inspect_cfg, "", &error_exit);
    if (error_exit) return error_exit;
    fedseg_model* model = nullptr;
    fedseg_status st = fedseg_model_build(cfg.c_str(), &model);
    if (st != FEDSEG_OK) return fail(st);
    char* text = nullptr;
    st = fedseg_model_summary(model, inspect_format.c_str(), &text);
    fedseg_model_free(model);
    if (st != FEDSEG_OK) return fail(st);
    std::cout << text;
    fedseg_string_free(text);
    return 0;
  }

  if (train->parsed()) {
    int error_exit = 0;
    const std::string cfg = resolve_config(train_cfg, "", &error_exit);
    if (error_exit) return error_exit;
    const fedseg_status st = fedseg_train(
        cfg.c_str(), train_out.empty() ? nullptr : train_out.c_str());
    if (st != FEDSEG_OK) return fail(st);
    std::cout << "training artifacts written\n";
    return 0;
  }

  if (eval->parsed()) {
    int error_exit = 0;
    const std::string cfg =
        resolve_config(eval_cfg, eval_checkpoint, &error_exit);
    if (error_exit) return error_exit;
    char* csv = nullptr;
    const fedseg_status st = fedseg_evaluate(
        cfg.c_str(), eval_checkpoint.c_str(),
        eval_manifest.empty() ? nullptr : eval_manifest.c_str(),
        eval_split.c_str(), eval_label.c_str(),
        eval_out.empty() ? nullptr : eval_out.c_str(), &csv);
    if (st != FEDSEG_OK) return fail(st);
    std::cout << csv;
    fedseg_string_free(csv);
    return 0;
  }

  if (compare->parsed()) {
    int error_exit = 0;
    const std::string cfg = resolve_config(compare_cfg, "", &error_exit);
    if (error_exit) return error_exit;
    char* csv = nullptr;
    const fedseg_status st = fedseg_compare_aggregators(
        cfg.c_str(), compare_aggs.c_str(), compare_seeds.c_str(),
        compare_out.empty() ? nullptr : compare_out.c_str(), &csv);
    if (st != FEDSEG_OK) return fail(st);
    std::cout << csv;
    fedseg_string_free(csv);
    return 0;
  }

  if (crops->parsed()) {
    int error_exit = 0;
    const std::string cfg =
        resolve_config(crops_cfg, crops_checkpoint, &error_exit);
    if (error_exit) return error_exit;
    char* report = nullptr;
    const fedseg_status st = fedseg_export_crops(
        cfg.c_str(), crops_checkpoint.c_str(),
        crops_manifest.empty() ? nullptr : crops_manifest.c_str(),
        crops_split.c_str(), crops_out.c_str(), &report);
    if (st != FEDSEG_OK) return fail(st);
    std::cout << report;
    fedseg_string_free(report);
    return 0;
  }

  return 0;
}

/* Copyright 2026 The ppxgrpo Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ppxgrpo/experiment.hpp"

// Command-line driver for the experiment pipeline:
//
//   ppxgrpo gen      --config cfg.json [--force]
//   ppxgrpo pretrain --config cfg.json
//   ppxgrpo train    --config cfg.json [--variant NAME] [--seed N]
//   ppxgrpo eval     --config cfg.json [--checkpoint PATH] [--data PATH]
//   ppxgrpo analyze  --config cfg.json [--checkpoint PATH] [--data PATH]
//
// Exit code 0 on success; on failure a JSON error object is printed to
// stderr and the exit code is nonzero.

namespace {

using ppxgrpo::ExperimentConfig;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string data;
  std::string variant;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
};

ExperimentConfig load(const CommonArgs& args) {
  ExperimentConfig cfg = ppxgrpo::load_config(args.config_path);
  if (!args.variant.empty()) cfg.variant = ppxgrpo::variant_from_name(args.variant);
  if (args.seed_given) cfg.seeds = {args.seed};
  return cfg;
}

std::string default_eval_checkpoint(const ExperimentConfig& cfg) {
  const std::string stem =
      std::string(ppxgrpo::variant_name(cfg.variant)) + "_s" + std::to_string(cfg.seeds.at(0));
  const std::string best =
      (ppxgrpo::fs::path(cfg.paths.checkpoint_dir) / (stem + "_best.ckpt")).string();
  if (ppxgrpo::fs::exists(best)) return best;
  return ppxgrpo::ref_checkpoint_path(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perplexity-aware GRPO critic training on a synthetic benchmark"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string command;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->callback([&, sub] { command = sub->get_name(); });
  };

  CLI::App* gen = app.add_subcommand("gen", "generate pretrain corpus, train set and benchmark");
  add_common(gen);
  gen->add_flag("--force", args.force, "overwrite existing data files");

  CLI::App* pretrain = app.add_subcommand("pretrain", "fit the reference policy and report its bias");
  add_common(pretrain);

  CLI::App* train = app.add_subcommand("train", "run GRPO training against the reference policy");
  add_common(train);
  train->add_option("--variant", args.variant, "vanilla | ppx_only | class_only | full");
  train->add_option("--seed", args.seed, "RL seed (overrides config seeds)")
      ->each([&](const std::string&) { args.seed_given = true; });

  CLI::App* eval = app.add_subcommand("eval", "confusion/BI report per dialect subset");
  add_common(eval);
  eval->add_option("--checkpoint", args.checkpoint, "policy checkpoint (default: best of variant/seed)");
  eval->add_option("--data", args.data, "dataset JSONL (default: the generated benchmark)");
  eval->add_option("--variant", args.variant, "variant whose checkpoint to evaluate");
  eval->add_option("--seed", args.seed, "seed whose checkpoint to evaluate")
      ->each([&](const std::string&) { args.seed_given = true; });

  CLI::App* analyze = app.add_subcommand("analyze", "decile regression and tercile proportions");
  add_common(analyze);
  analyze->add_option("--checkpoint", args.checkpoint, "policy checkpoint (default: reference)");
  analyze->add_option("--data", args.data, "dataset JSONL (default: the generated benchmark)");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load(args);
    if (command == "gen") {
      ppxgrpo::run_gen(cfg, args.force);
      std::cout << "wrote data to " << cfg.paths.data_dir << "\n";
    } else if (command == "pretrain") {
      const auto rep = ppxgrpo::run_pretrain(cfg);
      std::cout << "reference checkpoint: " << rep.checkpoint << "\n";
      for (const auto& [tag, ppl] : rep.mean_ppl_by_dialect)
        std::cout << "mean ppl, dialect " << tag << ": " << ppl << "\n";
    } else if (command == "train") {
      for (std::uint64_t seed : cfg.seeds) {
        const auto summary = ppxgrpo::run_train(cfg, cfg.variant, seed);
        std::cout << ppxgrpo::variant_name(cfg.variant) << " seed " << seed << ": best step "
                  << summary.best_step << " (valid acc " << summary.best_valid_acc << "), "
                  << summary.best_checkpoint << "\n";
      }
    } else if (command == "eval") {
      const std::string ckpt = args.checkpoint.empty() ? default_eval_checkpoint(cfg) : args.checkpoint;
      const std::string data = args.data.empty() ? ppxgrpo::gen_paths(cfg).benchmark : args.data;
      const auto report = ppxgrpo::run_eval(cfg, ckpt, data);
      for (const auto& se : report.subsets)
        std::cout << se.subset << ": FPR " << se.rates.fpr << "  FNR " << se.rates.fnr << "  BI "
                  << se.bi << "  Acc " << se.rates.acc << "\n";
      std::cout << "average |BI| " << report.mean_abs_bi << "  Acc " << report.mean_acc << "\n";
    } else if (command == "analyze") {
      const std::string ckpt =
          args.checkpoint.empty() ? ppxgrpo::ref_checkpoint_path(cfg) : args.checkpoint;
      const std::string data = args.data.empty() ? ppxgrpo::gen_paths(cfg).benchmark : args.data;
      const auto report = ppxgrpo::run_analyze(cfg, ckpt, data);
      std::cout << "BI-vs-ppl slope " << report.regression.slope << " (p = "
                << report.regression.p_value << ", r = " << report.regression.pearson_r << ")\n";
    }
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", {{"type", "runtime"}, {"message", e.what()}}}};
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 0;
}

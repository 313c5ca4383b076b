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

// Acceptance suite. Each criterion prints one [PASS]/[FAIL] line; the exit
// code is the number of failures. Run with no arguments for all criteria or
// with a list of criterion numbers (e.g. `acceptance 1 4 8`).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ppxgrpo/experiment.hpp"
#include "ppxgrpo/grpo.hpp"
#include "ppxgrpo/metrics.hpp"
#include "ppxgrpo/policy.hpp"
#include "ppxgrpo/reward.hpp"
#include "ppxgrpo/rng.hpp"
#include "ppxgrpo/synthlab.hpp"

using namespace ppxgrpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---- shared desk-scale world for the end-to-end criteria -----------------

// Tuned desk-scale world: the pretrained critic is decisively style-biased,
// and the 175-step budget ends the runs mid-detox, where exploration balance
// separates the variants.
ExperimentConfig world_config(const std::string& run_dir) {
  ExperimentConfig cfg = default_config();
  cfg.paths = Paths{};
  cfg.paths.run_dir = run_dir;
  cfg.paths.resolve();
  cfg.seed = 2026;
  cfg.n_pretrain = 2400;
  cfg.n_train = 1200;
  cfg.n_valid = 300;
  cfg.n_benchmark = 400;  // 800 records over two dialects
  cfg.pretrain.epochs = 8;
  cfg.pretrain.lr = 2.0;
  cfg.train.total_steps = 175;
  cfg.train.batch_size = 48;
  cfg.train.learning_rate = 0.3;
  cfg.checkpoint_every = 50;
  return cfg;
}

// Builds the shared world once per config hash; criteria 6 and 7 reuse it.
ExperimentConfig prepared_world(const std::string& name) {
  const std::string run_dir = (fs::temp_directory_path() / name).string();
  ExperimentConfig cfg = world_config(run_dir);
  const std::string marker = (fs::path(run_dir) / "world_ok.txt").string();
  const std::string want = std::to_string(config_hash(cfg)) + ":" + kVersion;
  const bool fresh = fs::exists(marker) && slurp_file(marker) == want &&
                     fs::exists(gen_paths(cfg).benchmark) && fs::exists(ref_checkpoint_path(cfg));
  if (!fresh) {
    fs::remove_all(run_dir);
    run_gen(cfg);
    run_pretrain(cfg);
    write_text_file(marker, want);
  }
  return cfg;
}

// ---- criterion 1: reward exactness ---------------------------------------

Outcome criterion_reward() {
  Outcome out;
  const TokenSeq gold{30, 31, 32};
  const auto says = [](TokenSeq t) { return parse_critique(t); };

  out.require(format_reward(says({kVerdictCorrectTok, kEos})) == 0.1, "format reward 0.1");
  out.require(format_reward(says({kVerdictWrongTok, 30})) == 0.0, "format reward 0");
  out.require(total_reward(Verdict::correct, std::nullopt, says({kVerdictCorrectTok, kEos})).r_a == 0.8,
              "correct/correct branch");
  TokenSeq full{kVerdictWrongTok};
  full.insert(full.end(), gold.begin(), gold.end());
  full.push_back(kEos);
  const RewardBreakdown perfect = total_reward(Verdict::wrong, gold, says(full));
  out.require(perfect.r_a == 1.6 && perfect.r == 1.7, "wrong/wrong exact-F1 branch");
  out.require(total_reward(Verdict::wrong, gold, says({kVerdictCorrectTok, kEos})).r_a == 0.0,
              "otherwise branch");
  out.require(total_reward(Verdict::wrong, gold, says({30, kEos})).r == 0.0, "unparsed gets 0");

  // rounding grid on the wrong/wrong branch
  for (int overlap = 0; overlap <= 3; ++overlap) {
    TokenSeq pred{40, 41, 42};
    for (int i = 0; i < overlap; ++i) pred[i] = gold[i];
    TokenSeq crit_tokens{kVerdictWrongTok};
    crit_tokens.insert(crit_tokens.end(), pred.begin(), pred.end());
    crit_tokens.push_back(kEos);
    const RewardBreakdown b = total_reward(Verdict::wrong, gold, says(crit_tokens));
    const double expected = 0.6 + std::round(10.0 * 2.0 * overlap / 6.0) / 10.0;
    out.require(std::fabs(b.r_a - expected) < 1e-12, "grid point overlap=" + std::to_string(overlap));
  }

  Rng rng = make_rng(1);
  int n = 0;
  for (int iter = 0; iter < 100000; ++iter) {
    const bool wrong = bernoulli(rng, 0.5);
    std::optional<TokenSeq> e_star;
    if (wrong) {
      TokenSeq g(uniform_int(rng, 1, 8));
      for (Token& t : g) t = static_cast<Token>(uniform_int(rng, kFirstContent, 63));
      e_star = g;
    }
    TokenSeq tokens(uniform_int(rng, 0, 12));
    for (Token& t : tokens) t = static_cast<Token>(uniform_int(rng, 0, 63));
    const RewardBreakdown b =
        total_reward(wrong ? Verdict::wrong : Verdict::correct, e_star, parse_critique(tokens));
    if (!(b.r >= 0.0 && b.r <= 1.7)) {
      out.require(false, "reward out of range at iter " + std::to_string(iter));
      break;
    }
    ++n;
  }
  out.note(std::to_string(n) + " random critiques in [0, 1.7]");
  return out;
}

// ---- criterion 2: metric arithmetic ---------------------------------------

Outcome criterion_metrics() {
  Outcome out;
  out.require(std::fabs(balance_indicator(72.38, 6.35) - 66.03) < 1e-9, "Qwen Q-subset identity");
  out.require(std::fabs(balance_indicator(87.94, 6.67) - 81.27) < 1e-9, "Mistral L-subset identity");

  const std::optional<Verdict> C = Verdict::correct, W = Verdict::wrong;
  {
    const std::vector<std::optional<Verdict>> preds{C, W, C, C};
    const std::vector<Verdict> labels{Verdict::wrong, Verdict::wrong, Verdict::correct,
                                      Verdict::correct};
    const ConfusionRates r = confusion_rates(preds, labels);
    out.require(r.fpr == 50.0 && r.fnr == 0.0 && r.acc == 75.0, "hand-counted confusion fixture");
  }
  {
    const std::vector<std::optional<Verdict>> preds{C, C, C, C};
    const std::vector<Verdict> labels{Verdict::correct, Verdict::wrong, Verdict::correct,
                                      Verdict::wrong};
    const ConfusionRates r = confusion_rates(preds, labels);
    out.require(r.fpr == 100.0 && r.fnr == 0.0 && r.acc == 50.0, "always-correct fixture");
  }
  return out;
}

// ---- criterion 3: advantage / weight invariants ---------------------------

Outcome criterion_advantages() {
  Outcome out;
  Rng rng = make_rng(33);
  for (int iter = 0; iter < 10000 && out.pass; ++iter) {
    const int g = static_cast<int>(uniform_int(rng, 2, 10));
    std::vector<double> rewards(g);
    for (double& r : rewards) r = uniform_int(rng, 0, 17) / 10.0;
    const auto adv = group_advantages(rewards);
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / g;
    out.require(std::fabs(mean) <= 1e-9, "advantage mean at iter " + std::to_string(iter));
    double var = 0;
    for (double a : adv) var += a * a;
    var = var / g - mean * mean;
    const bool degenerate = adv == std::vector<double>(g, 0.0);
    if (!degenerate)
      out.require(std::fabs(std::sqrt(var) - 1.0) <= 1e-6, "advantage std at iter " + std::to_string(iter));
  }
  for (int iter = 0; iter < 10000 && out.pass; ++iter) {
    const int n = static_cast<int>(uniform_int(rng, 1, 16));
    std::vector<double> ppl(n);
    for (double& p : ppl) p = 1.0 + 63.0 * uniform_unit(rng);
    const auto lin = subgroup_weights(ppl, true);
    const auto inv = subgroup_weights(ppl, false);
    const double mean_lin = std::accumulate(lin.begin(), lin.end(), 0.0) / n;
    const double mean_inv = std::accumulate(inv.begin(), inv.end(), 0.0) / n;
    out.require(std::fabs(mean_lin - 1.0) <= 1e-12, "linear weight mean at iter " + std::to_string(iter));
    out.require(mean_inv >= 1.0 - 1e-12, "inverse weight mean at iter " + std::to_string(iter));
  }
  out.note("10^4 random groups and 10^4 random subgroups");
  return out;
}

// ---- criterion 4: gradient correctness ------------------------------------

Outcome criterion_gradients() {
  Outcome out;
  PolicyDims dims;
  dims.vocab = 16;
  dims.embed = 4;
  dims.hidden = 8;
  dims.window = 4;
  Rng rng = make_rng(44);
  const double h = 1e-4;
  double worst = 0;

  for (int config = 0; config < 20; ++config) {
    PolicyParams policy = random_params(dims, derive_seed(44, config), 0.3);
    const PolicyParams ref = random_params(dims, derive_seed(45, config), 0.3);
    PolicyParams sampler = policy;
    {
      Rng prng = make_rng(derive_seed(46, config));
      for (double& v : sampler.output) v += 0.02 * gaussian(prng);
    }

    // plain log-prob gradient
    TokenSeq prompt(5), output(6);
    for (Token& t : prompt) t = static_cast<Token>(uniform_int(rng, 0, 15));
    for (Token& t : output) t = static_cast<Token>(uniform_int(rng, 0, 15));
    const double scale = 0.5 + uniform_unit(rng);
    PolicyGrad grad(dims);
    accumulate_log_prob_grad(policy, prompt, output, scale, grad);
    for (int probe = 0; probe < 50; ++probe) {
      const std::size_t coord = uniform_int(rng, 0, static_cast<std::int64_t>(dims.total()) - 1);
      double* slot = param_coord(policy, coord);
      const double saved = *slot;
      *slot = saved + h;
      const double up = scale * sequence_log_prob(policy, prompt, output);
      *slot = saved - h;
      const double down = scale * sequence_log_prob(policy, prompt, output);
      *slot = saved;
      const double fd = (up - down) / (2 * h);
      const double an = grad_coord(grad, coord);
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
      worst = std::max(worst, rel);
      if (rel >= 1e-4) {
        out.require(false, "log-prob grad rel err " + fmt(rel) + " at config " + std::to_string(config));
        break;
      }
    }

    // clipped-KL surrogate gradient
    const bool gold_wrong = config % 2 == 1;
    SolutionRecord rec;
    rec.problem = {5, 6};
    rec.steps = {{7, 8, 9}, {9, 8, 7}};
    rec.answer = {4};
    rec.ppl_ref = 2.0 + 3.0 * uniform_unit(rng);
    if (gold_wrong) {
      rec.gold_verdict = Verdict::wrong;
      rec.gold_error_step = rec.steps[0];
    }
    TokenSeq crit{gold_wrong ? kVerdictWrongTok : kVerdictCorrectTok};
    if (gold_wrong)
      for (int i = 0; i < 3; ++i) crit.push_back(static_cast<Token>(uniform_int(rng, 7, 12)));
    crit.push_back(kEos);

    RolloutItem item;
    item.example = &rec;
    item.prompt = encode_prompt(rec);
    item.critique = parse_critique(crit);
    item.ppl = *rec.ppl_ref;
    {
      TokenSeq ctx = item.prompt;
      for (Token t : item.critique.tokens) {
        item.old_log_probs.push_back(token_log_probs(sampler, ctx)[t]);
        ctx.push_back(t);
      }
    }
    item.modulated_advantage = 2.0 * uniform_unit(rng) - 1.0;

    TrainConfig cfg;
    cfg.clip_eps = 0.1 + 0.2 * uniform_unit(rng);
    cfg.kl_beta = 0.05 * uniform_unit(rng);

    bool near_boundary = false;
    {
      TokenSeq ctx = item.prompt;
      for (std::size_t t = 0; t < item.critique.tokens.size(); ++t) {
        const double ratio = std::exp(token_log_probs(policy, ctx)[item.critique.tokens[t]] -
                                      item.old_log_probs[t]);
        if (std::fabs(ratio - (1 - cfg.clip_eps)) < 1e-6 ||
            std::fabs(ratio - (1 + cfg.clip_eps)) < 1e-6)
          near_boundary = true;
        ctx.push_back(item.critique.tokens[t]);
      }
    }
    if (near_boundary) continue;

    PolicyGrad sg(dims);
    surrogate_objective(policy, ref, item, cfg, &sg, 1.0);
    for (int probe = 0; probe < 50; ++probe) {
      const std::size_t coord = uniform_int(rng, 0, static_cast<std::int64_t>(dims.total()) - 1);
      double* slot = param_coord(policy, coord);
      const double saved = *slot;
      *slot = saved + h;
      const double up = surrogate_objective(policy, ref, item, cfg);
      *slot = saved - h;
      const double down = surrogate_objective(policy, ref, item, cfg);
      *slot = saved;
      const double fd = (up - down) / (2 * h);
      const double an = grad_coord(sg, coord);
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
      worst = std::max(worst, rel);
      if (rel >= 1e-4) {
        out.require(false, "surrogate grad rel err " + fmt(rel) + " at config " + std::to_string(config));
        break;
      }
    }
    if (!out.pass) break;
  }
  out.note("max relative error " + fmt(worst));
  return out;
}

// ---- criterion 5: class-level aggregation ---------------------------------

Outcome criterion_aggregation() {
  Outcome out;
  using V = Verdict;
  {
    const std::vector<double> j{1, 0, 3, 2};
    const std::vector<V> g{V::correct, V::correct, V::correct, V::wrong};
    out.require(std::fabs(class_level_loss(j, g) - 2.0) < 1e-15, "fixture {1,0,3},{2}");
  }
  {
    const std::vector<double> j{0, 0, 4};
    const std::vector<V> g{V::correct, V::correct, V::wrong};
    out.require(std::fabs(class_level_loss(j, g) - 4.0) < 1e-15, "degenerate-group fixture");
  }
  {
    const std::vector<double> j{0, 0};
    const std::vector<V> g{V::correct, V::wrong};
    out.require(class_level_loss(j, g) == 0.0, "all-zero fixture");
  }

  Rng rng = make_rng(55);
  std::vector<double> j(60);
  std::vector<V> g(60);
  for (std::size_t i = 0; i < j.size(); ++i) {
    j[i] = bernoulli(rng, 0.25) ? 0.0 : 2.0 * uniform_unit(rng) - 1.0;
    g[i] = bernoulli(rng, 0.5) ? V::wrong : V::correct;
  }
  const double base = class_level_loss(j, g);
  std::vector<std::size_t> idx(j.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int iter = 0; iter < 1000 && out.pass; ++iter) {
    shuffle(idx, rng);
    std::vector<double> pj(j.size());
    std::vector<V> pg(j.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      pj[i] = j[idx[i]];
      pg[i] = g[idx[i]];
    }
    out.require(std::fabs(class_level_loss(pj, pg) - base) < 1e-12,
                "permutation invariance at iter " + std::to_string(iter));
  }
  const double mean = std::accumulate(j.begin(), j.end(), 0.0) / static_cast<double>(j.size());
  out.require(std::fabs(class_level_loss(j, g, false) - mean) < 1e-12, "vanilla flag = plain mean");
  return out;
}

// ---- criterion 6: induced-bias oracle -------------------------------------

Outcome criterion_bias_oracle() {
  Outcome out;
  const ExperimentConfig cfg = prepared_world("ppxgrpo_acceptance_world");

  const json bias = json::parse(slurp_file((fs::path(cfg.paths.report_dir) / "bias_report.json").string()));
  const double ppl_a = bias.at("mean_ppl_by_dialect").at("A").get<double>();
  const double ppl_b = bias.at("mean_ppl_by_dialect").at("B").get<double>();
  out.require(ppl_a < ppl_b, "mean ppl(A) < mean ppl(B)");
  out.note("ppl A " + fmt(ppl_a) + " vs B " + fmt(ppl_b));

  const PreferenceReport rep =
      run_analyze(cfg, ref_checkpoint_path(cfg), gen_paths(cfg).benchmark, /*write_reports=*/false);
  out.require(rep.regression.slope < 0.0, "pre-RL decile slope negative");
  out.require(rep.regression.p_value < 0.05, "pre-RL decile slope significant");
  out.note("slope " + fmt(rep.regression.slope) + ", p " + fmt(rep.regression.p_value) +
           ", pre-RL BI " + fmt(rep.bi));
  return out;
}

// ---- criterion 7: end-to-end rebalancing ----------------------------------

Outcome criterion_rebalancing() {
  Outcome out;
  const ExperimentConfig cfg = prepared_world("ppxgrpo_acceptance_world");
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  std::map<std::string, std::vector<double>> abs_bi, acc;
  int reward_rises = 0, reward_runs = 0;
  for (Variant variant : {Variant::vanilla, Variant::ppx_only, Variant::full}) {
    for (std::uint64_t seed : seeds) {
      const TrainSummary sum = run_train(cfg, variant, seed);
      const EvalReport ev = run_eval(cfg, sum.best_checkpoint, gen_paths(cfg).benchmark,
                                     /*write_reports=*/false);
      abs_bi[variant_name(variant)].push_back(ev.mean_abs_bi);
      acc[variant_name(variant)].push_back(ev.mean_acc);

      if (variant == Variant::full) {
        // reward trend over the training log
        std::ifstream log(sum.log_path);
        std::vector<double> rewards;
        std::string line;
        while (std::getline(log, line))
          if (!line.empty()) rewards.push_back(json::parse(line).at("mean_reward").get<double>());
        const int k = 10;
        if (static_cast<int>(rewards.size()) >= 2 * k) {
          double early = 0, late = 0;
          for (int i = 0; i < k; ++i) early += rewards[i];
          for (int i = 0; i < k; ++i) late += rewards[rewards.size() - 1 - i];
          ++reward_runs;
          if (late > early) ++reward_rises;
        }
      }
    }
  }

  int full_better = 0, full_le_ppx = 0;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    if (abs_bi["full"][s] < abs_bi["vanilla"][s]) ++full_better;
    if (abs_bi["full"][s] <= abs_bi["ppx_only"][s]) ++full_le_ppx;
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  out.require(full_better >= 4, "|BI| full < vanilla in " + std::to_string(full_better) + "/5 seeds");
  out.require(mean(acc["full"]) >= mean(acc["vanilla"]) - 2.0,
              "mean acc drop " + fmt(mean(acc["vanilla"]) - mean(acc["full"])) + " > 2");
  out.require(full_le_ppx >= 3,
              "ablation |BI| full <= ppx_only in " + std::to_string(full_le_ppx) + "/5 seeds");
  out.require(reward_runs > 0 && reward_rises * 2 > reward_runs,
              "training reward rose in only " + std::to_string(reward_rises) + "/" +
                  std::to_string(reward_runs) + " full runs");

  std::ostringstream note;
  note << "|BI| full " << fmt(mean(abs_bi["full"])) << " vs vanilla " << fmt(mean(abs_bi["vanilla"]))
       << " vs ppx_only " << fmt(mean(abs_bi["ppx_only"])) << "; acc full " << fmt(mean(acc["full"]))
       << " vs vanilla " << fmt(mean(acc["vanilla"])) << "; full<vanilla " << full_better
       << "/5, full<=ppx_only " << full_le_ppx << "/5, reward rose " << reward_rises << "/"
       << reward_runs;
  out.note(note.str());
  return out;
}

// ---- criterion 8: regression correctness ----------------------------------

Outcome criterion_regression() {
  Outcome out;
  std::ifstream fix(std::string(PPXGRPO_TEST_DATA_DIR) + "/ols_fixtures.csv");
  if (!fix.good()) {
    out.require(false, "missing tests/data/ols_fixtures.csv");
    return out;
  }
  std::string header, line;
  std::getline(fix, header);
  int checked = 0;
  double worst = 0;
  while (std::getline(fix, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    const std::uint64_t seed = std::stoull(fields[0]);
    const int n = std::stoi(fields[1]);
    Rng rng = make_rng(seed);
    const double slope_true = 4.0 * uniform_unit(rng) - 2.0;
    const double intercept_true = 2.0 * uniform_unit(rng) - 1.0;
    const double noise = 0.05 + 2.0 * uniform_unit(rng);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = 10.0 * uniform_unit(rng);
      y[i] = slope_true * x[i] + intercept_true + noise * gaussian(rng);
    }
    const RegressionResult r = ols_fit(x, y);
    const double diffs[4] = {std::fabs(r.slope - std::stod(fields[2])),
                             std::fabs(r.intercept - std::stod(fields[3])),
                             std::fabs(r.pearson_r - std::stod(fields[4])),
                             std::fabs(r.p_value - std::stod(fields[5]))};
    for (double d : diffs) worst = std::max(worst, d);
    if (diffs[0] > 1e-6 || diffs[1] > 1e-6 || diffs[2] > 1e-6 || diffs[3] > 1e-6) {
      out.require(false, "dataset seed " + fields[0] + " off by " + fmt(worst));
      break;
    }
    ++checked;
  }
  out.require(checked == 100, "checked " + std::to_string(checked) + "/100 datasets");
  out.note("max |diff| vs oracle " + fmt(worst));
  return out;
}

// ---- criterion 9: determinism ---------------------------------------------

Outcome criterion_determinism() {
  Outcome out;
  const auto run_pipeline = [](const std::string& run_dir) {
    fs::remove_all(run_dir);
    ExperimentConfig cfg = world_config(run_dir);
    cfg.n_pretrain = 400;
    cfg.n_train = 160;
    cfg.n_valid = 60;
    cfg.n_benchmark = 60;
    cfg.pretrain.epochs = 2;
    cfg.train.total_steps = 12;
    cfg.train.batch_size = 8;
    cfg.checkpoint_every = 6;
    run_gen(cfg);
    run_pretrain(cfg);
    const TrainSummary sum = run_train(cfg, Variant::full, 3);
    run_eval(cfg, sum.best_checkpoint, gen_paths(cfg).benchmark);
    run_analyze(cfg, sum.best_checkpoint, gen_paths(cfg).benchmark);
    return cfg;
  };

  const std::string dir_a = (fs::temp_directory_path() / "ppxgrpo_det_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "ppxgrpo_det_b").string();
  const ExperimentConfig a = run_pipeline(dir_a);
  const ExperimentConfig b = run_pipeline(dir_b);

  int compared = 0;
  for (const auto& entry : fs::directory_iterator(a.paths.report_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string other = (fs::path(b.paths.report_dir) / name).string();
    if (!fs::exists(other)) {
      out.require(false, "missing report in second run: " + name);
      continue;
    }
    std::string left = slurp_file(entry.path().string());
    std::string right = slurp_file(other);
    // reports embed their run directory in path fields; neutralize it
    const auto scrub = [](std::string s, const std::string& dir) {
      std::size_t pos;
      while ((pos = s.find(dir)) != std::string::npos) s.replace(pos, dir.size(), "<run>");
      return s;
    };
    left = scrub(left, dir_a);
    right = scrub(right, dir_b);
    if (left != right) out.require(false, "report differs: " + name);
    ++compared;
  }
  out.require(compared >= 6, "only " + std::to_string(compared) + " reports compared");
  out.note(std::to_string(compared) + " report files byte-identical");
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int num;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "reward exactness", criterion_reward},
      {2, "metric arithmetic", criterion_metrics},
      {3, "advantage/weight invariants", criterion_advantages},
      {4, "gradient correctness", criterion_gradients},
      {5, "class-level aggregation", criterion_aggregation},
      {6, "induced-bias oracle", criterion_bias_oracle},
      {7, "end-to-end rebalancing", criterion_rebalancing},
      {8, "regression correctness", criterion_regression},
      {9, "determinism", criterion_determinism},
  };

  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.num) == wanted.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.note(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", out.pass ? "PASS" : "FAIL", c.num, c.name,
                secs, out.detail.empty() ? "" : " -- ", out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  return failures;
}

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
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ppxgrpo/core.hpp"
#include "ppxgrpo/metrics.hpp"
#include "ppxgrpo/policy.hpp"
#include "ppxgrpo/reward.hpp"
#include "ppxgrpo/rng.hpp"

// The RL engine. One training step:
//
//   1. sample a group of G critiques per record, score them with the
//      rule-based reward, snapshot the sampling log-probs
//   2. normalize rewards to advantages within each group
//   3. split the batch by gold label into correct/wrong groups, then by the
//      predicted verdict into four subgroups
//   4. perplexity modulation: within prediction-"correct" subgroups weight
//      w = ppl/mean(ppl) (higher perplexity, larger weight), within
//      prediction-"wrong" subgroups w = mean(ppl)/ppl (lower perplexity,
//      larger weight); advantages are rescaled as A^p = w * A
//   5. per-critique clipped surrogate objective with a per-token KL penalty
//      against the frozen reference policy
//   6. class-level aggregation: average the nonzero objectives within the
//      gold-correct and gold-wrong groups separately, then average the two
//      means
//   7. one gradient-ascent step
//
// The modulation_on / class_level_on switches reproduce the ablation grid;
// with both off the step is exactly vanilla GRPO (unit weights, plain batch
// mean).

namespace ppxgrpo {

// Objectives with magnitude below this count as "zero loss" for the nonzero
// filter of the class-level aggregation.
inline constexpr double kZeroLossEps = 1e-12;

enum class Subgroup { Cc, Cw, Wc, Ww, residual };

inline const char* subgroup_name(Subgroup s) {
  switch (s) {
    case Subgroup::Cc: return "Cc";
    case Subgroup::Cw: return "Cw";
    case Subgroup::Wc: return "Wc";
    case Subgroup::Ww: return "Ww";
    default: return "residual";
  }
}

struct TrainConfig {
  int group_size = 5;
  double temperature = 1.0;
  double clip_eps = 0.2;
  double kl_beta = 0.01;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int total_steps = 400;
  bool modulation_on = true;
  bool class_level_on = true;
  // Recompute perplexity under the live policy each batch instead of using
  // the cached reference-policy value. Off by default.
  bool live_ppl = false;
  int max_output_len = static_cast<int>(kMaxCritiqueTokens);

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("TrainConfig: group_size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
      throw std::invalid_argument("TrainConfig: clip_eps outside (0,1)");
    if (kl_beta < 0.0) throw std::invalid_argument("TrainConfig: negative kl_beta");
    if (temperature <= 0.0) throw std::invalid_argument("TrainConfig: temperature must be > 0");
    if (batch_size < 1 || total_steps < 0 || max_output_len < 1 || learning_rate <= 0.0)
      throw std::invalid_argument("TrainConfig: bad scalar field");
  }
};

// One group member: a sampled critique with everything the update needs.
struct RolloutItem {
  const SolutionRecord* example = nullptr;
  TokenSeq prompt;
  CritiqueRecord critique;
  RewardBreakdown reward;
  std::vector<double> old_log_probs;
  double ppl = 0;
  double advantage = 0;
  double weight = 1.0;
  double modulated_advantage = 0;
  Subgroup subgroup = Subgroup::residual;
};

// G independent samples for one record at the configured temperature, scored
// and snapshotted. `ppl` is taken from the record's cached reference
// perplexity unless a live value is supplied.
inline std::vector<RolloutItem> rollout_group(const PolicyParams& policy,
                                              const SolutionRecord& rec, const TrainConfig& cfg,
                                              Rng& rng,
                                              std::optional<double> live_ppl = std::nullopt) {
  cfg.validate();
  const TokenSeq prompt = encode_prompt(rec);
  double ppl = 0;
  if (live_ppl) {
    ppl = *live_ppl;
  } else if (rec.ppl_ref) {
    ppl = *rec.ppl_ref;
  } else {
    throw std::invalid_argument("rollout_group: record has no cached ppl_ref");
  }
  std::vector<RolloutItem> group;
  group.reserve(cfg.group_size);
  for (int g = 0; g < cfg.group_size; ++g) {
    SampledCritique sample = sample_critique_with_log_probs(
        policy, prompt, cfg.temperature, rng, static_cast<std::size_t>(cfg.max_output_len));
    RolloutItem item;
    item.example = &rec;
    item.prompt = prompt;
    item.critique = std::move(sample.critique);
    item.old_log_probs = std::move(sample.log_probs);
    item.reward = total_reward(rec.gold_verdict, rec.gold_error_step, item.critique);
    item.ppl = ppl;
    group.push_back(std::move(item));
  }
  return group;
}

// Group-normalized advantages (r - mean)/std with the population standard
// deviation. Degenerate groups (std < 1e-6) get all-zero advantages.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  if (n == 0) return {};
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  std::vector<double> adv(n, 0.0);
  if (sd < 1e-6) return adv;
  for (std::size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

// Assigns each item to Cc/Cw/Wc/Ww by (gold verdict, predicted verdict);
// items with no parseable verdict are residual.
inline void partition_batch(std::vector<RolloutItem>& items) {
  for (RolloutItem& item : items) {
    if (!item.critique.verdict.has_value()) {
      item.subgroup = Subgroup::residual;
      continue;
    }
    const bool gold_correct = item.example->gold_verdict == Verdict::correct;
    const bool pred_correct = *item.critique.verdict == Verdict::correct;
    item.subgroup = gold_correct ? (pred_correct ? Subgroup::Cc : Subgroup::Cw)
                                 : (pred_correct ? Subgroup::Wc : Subgroup::Ww);
  }
}

// Weights for one subgroup. Linear (prediction-"correct") subgroups use
// w = ppl/mean(ppl); inverse (prediction-"wrong") subgroups use
// w = mean(ppl)/ppl.
inline std::vector<double> subgroup_weights(std::span<const double> ppls, bool linear) {
  std::vector<double> weights(ppls.size(), 1.0);
  if (ppls.empty()) return weights;
  double mean = 0;
  for (double p : ppls) {
    if (!(p > 0)) throw std::invalid_argument("subgroup_weights: perplexity must be positive");
    mean += p;
  }
  mean /= static_cast<double>(ppls.size());
  for (std::size_t i = 0; i < ppls.size(); ++i)
    weights[i] = linear ? ppls[i] / mean : mean / ppls[i];
  return weights;
}

// Batch-wide modulation: weights are computed per subgroup across the whole
// batch. Residual items keep weight 1, as does everything when modulation is
// off.
inline void assign_modulation_weights(std::vector<RolloutItem>& items, bool modulation_on) {
  for (RolloutItem& item : items) item.weight = 1.0;
  if (!modulation_on) return;
  for (Subgroup sg : {Subgroup::Cc, Subgroup::Cw, Subgroup::Wc, Subgroup::Ww}) {
    std::vector<std::size_t> member_idx;
    std::vector<double> ppls;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].subgroup == sg) {
        member_idx.push_back(i);
        ppls.push_back(items[i].ppl);
      }
    }
    if (member_idx.empty()) continue;
    const bool linear = sg == Subgroup::Cc || sg == Subgroup::Wc;
    const std::vector<double> w = subgroup_weights(ppls, linear);
    for (std::size_t k = 0; k < member_idx.size(); ++k) items[member_idx[k]].weight = w[k];
  }
}

inline void rescale_advantages(std::vector<RolloutItem>& items) {
  for (RolloutItem& item : items) item.modulated_advantage = item.weight * item.advantage;
}

// One evaluation of the clipped surrogate for a critique: the objective
// value, the per-token gradient coefficients dJ/d(log pi_theta(o_t)), and
// the cached policy activations so backprop does not repeat the forward
// pass.
struct SurrogateEval {
  double objective = 0;
  std::vector<double> grad_coefs;  // already include the 1/|o| factor
  ForwardTrace trace;
};

// Token-averaged clipped surrogate objective for one critique,
//
//   J = 1/|o| sum_t [ min(r_t A, clip(r_t, 1-eps, 1+eps) A) - beta kl_t ]
//
// with r_t the new/old probability ratio, A the modulated advantage and
// kl_t = exp(d) - d - 1, d = log pi_ref - log pi_theta, the nonnegative
// per-token KL estimator. No gradient flows through tokens where the clip
// binds.
inline SurrogateEval surrogate_eval(const PolicyParams& policy, const PolicyParams& ref_policy,
                                    const RolloutItem& item, const TrainConfig& cfg,
                                    bool keep_trace = false) {
  const TokenSeq& out = item.critique.tokens;
  if (out.empty()) throw std::invalid_argument("surrogate_objective: empty critique");
  if (item.old_log_probs.size() != out.size())
    throw std::invalid_argument("surrogate_objective: old_log_probs size mismatch");

  detail::PolicyWorkspace ws_new, ws_ref;
  ws_new.resize(policy.dims);
  ws_ref.resize(ref_policy.dims);

  const double A = item.modulated_advantage;
  const double lo = 1.0 - cfg.clip_eps, hi = 1.0 + cfg.clip_eps;
  const double inv_len = 1.0 / static_cast<double>(out.size());

  TokenSeq ctx = item.prompt;
  ctx.reserve(item.prompt.size() + out.size());
  SurrogateEval eval;
  eval.grad_coefs.resize(out.size());
  if (keep_trace) eval.trace.positions.reserve(out.size());

  for (std::size_t t = 0; t < out.size(); ++t) {
    detail::forward(policy, ctx, ws_new);
    detail::forward(ref_policy, ctx, ws_ref);
    const double logp_new = ws_new.logp[out[t]];
    const double logp_ref = ws_ref.logp[out[t]];
    const double ratio = std::exp(logp_new - item.old_log_probs[t]);
    if (!std::isfinite(ratio)) {
      std::ostringstream msg;
      msg << "surrogate_objective: non-finite ratio at token " << t << " (dialect "
          << dialect_tag(item.example ? item.example->dialect : 0) << ", prompt hash "
          << hash_tokens(item.prompt) << ")";
      throw std::runtime_error(msg.str());
    }
    const double unclipped = ratio * A;
    const double clipped = std::clamp(ratio, lo, hi) * A;
    const double delta = logp_ref - logp_new;
    const double kl = std::exp(delta) - delta - 1.0;
    eval.objective += std::min(unclipped, clipped) - cfg.kl_beta * kl;
    const double policy_term = unclipped <= clipped ? A * ratio : 0.0;
    const double kl_term = cfg.kl_beta * (std::exp(delta) - 1.0);
    eval.grad_coefs[t] = (policy_term + kl_term) * inv_len;
    if (keep_trace) eval.trace.positions.push_back({ws_new.window, ws_new.x, ws_new.z, ws_new.logp});
    ctx.push_back(out[t]);
  }
  eval.objective *= inv_len;
  return eval;
}

// grad += sum_t scale_t * d(log pi(o_t))/d(params) from cached activations.
inline void accumulate_from_trace(const PolicyParams& policy, const ForwardTrace& trace,
                                  const TokenSeq& output, std::span<const double> token_scales,
                                  PolicyGrad& grad) {
  if (trace.positions.size() != output.size() || token_scales.size() != output.size())
    throw std::invalid_argument("accumulate_from_trace: size mismatch");
  detail::PolicyWorkspace ws;
  ws.resize(policy.dims);
  for (std::size_t t = 0; t < output.size(); ++t) {
    if (token_scales[t] == 0.0) continue;
    ws.window = trace.positions[t].window;
    ws.x = trace.positions[t].x;
    ws.z = trace.positions[t].z;
    ws.logp = trace.positions[t].logp;
    detail::backward(policy, output[t], token_scales[t], ws, grad);
  }
}

// Convenience form: objective only, or objective plus grad_scale * dJ/dtheta
// accumulated into `grad`.
inline double surrogate_objective(const PolicyParams& policy, const PolicyParams& ref_policy,
                                  const RolloutItem& item, const TrainConfig& cfg,
                                  PolicyGrad* grad = nullptr, double grad_scale = 1.0) {
  SurrogateEval eval = surrogate_eval(policy, ref_policy, item, cfg, grad != nullptr);
  if (grad) {
    for (double& c : eval.grad_coefs) c *= grad_scale;
    accumulate_from_trace(policy, eval.trace, item.critique.tokens, eval.grad_coefs, *grad);
  }
  return eval.objective;
}

// Class-level aggregation of per-critique objectives, tagged by the gold
// label. Mean of nonzero terms within the gold-correct and gold-wrong groups,
// then the average of the two means; a group with no nonzero terms drops out,
// and if both are empty the result is 0. With class_level_on off this is the
// plain batch mean.
inline double class_level_loss(std::span<const double> objectives,
                               std::span<const Verdict> gold_labels, bool class_level_on = true) {
  if (objectives.size() != gold_labels.size())
    throw std::invalid_argument("class_level_loss: size mismatch");
  if (objectives.empty()) return 0.0;
  if (!class_level_on) {
    double sum = 0;
    for (double j : objectives) sum += j;
    return sum / static_cast<double>(objectives.size());
  }
  double sum_c = 0, sum_w = 0;
  int n_c = 0, n_w = 0;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    if (std::fabs(objectives[i]) < kZeroLossEps) continue;
    if (gold_labels[i] == Verdict::wrong) {
      sum_w += objectives[i];
      ++n_w;
    } else {
      sum_c += objectives[i];
      ++n_c;
    }
  }
  if (n_c == 0 && n_w == 0) return 0.0;
  if (n_c == 0) return sum_w / n_w;
  if (n_w == 0) return sum_c / n_c;
  return 0.5 * (sum_c / n_c + sum_w / n_w);
}

// d(class_level_loss)/d(J_i) for every item; this is what weights each
// critique's gradient in the parameter update.
inline std::vector<double> aggregation_coefficients(std::span<const double> objectives,
                                                    std::span<const Verdict> gold_labels,
                                                    bool class_level_on = true) {
  if (objectives.size() != gold_labels.size())
    throw std::invalid_argument("aggregation_coefficients: size mismatch");
  std::vector<double> coefs(objectives.size(), 0.0);
  if (objectives.empty()) return coefs;
  if (!class_level_on) {
    const double c = 1.0 / static_cast<double>(objectives.size());
    for (double& v : coefs) v = c;
    return coefs;
  }
  int n_c = 0, n_w = 0;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    if (std::fabs(objectives[i]) < kZeroLossEps) continue;
    (gold_labels[i] == Verdict::wrong ? n_w : n_c)++;
  }
  const bool both = n_c > 0 && n_w > 0;
  const double coef_c = n_c > 0 ? (both ? 0.5 / n_c : 1.0 / n_c) : 0.0;
  const double coef_w = n_w > 0 ? (both ? 0.5 / n_w : 1.0 / n_w) : 0.0;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    if (std::fabs(objectives[i]) < kZeroLossEps) continue;
    coefs[i] = gold_labels[i] == Verdict::wrong ? coef_w : coef_c;
  }
  return coefs;
}

struct StepReport {
  int step = 0;
  double loss = 0;
  double mean_reward = 0;
  int n_items = 0;
  std::array<int, 5> subgroup_counts{};  // Cc, Cw, Wc, Ww, residual
  double weight_min = 1, weight_mean = 1, weight_max = 1;
  std::array<TercileStat, 3> terciles{};  // prediction mix over ppl terciles
  bool update_skipped = false;
};

inline void to_json(nlohmann::json& j, const StepReport& rep) {
  j = nlohmann::json{
      {"step", rep.step},
      {"loss", rep.loss},
      {"mean_reward", rep.mean_reward},
      {"n_items", rep.n_items},
      {"subgroups",
       {{"Cc", rep.subgroup_counts[0]},
        {"Cw", rep.subgroup_counts[1]},
        {"Wc", rep.subgroup_counts[2]},
        {"Ww", rep.subgroup_counts[3]},
        {"residual", rep.subgroup_counts[4]}}},
      {"weight_min", rep.weight_min},
      {"weight_mean", rep.weight_mean},
      {"weight_max", rep.weight_max},
      {"update_skipped", rep.update_skipped}};
  nlohmann::json terc = nlohmann::json::array();
  for (const auto& t : rep.terciles)
    terc.push_back({{"count", t.count},
                    {"mean_ppl", t.mean_ppl},
                    {"frac_pred_correct", t.frac_pred_correct},
                    {"frac_pred_wrong", t.frac_pred_wrong},
                    {"frac_unparsed", t.frac_unparsed}});
  j["terciles"] = terc;
}

// One on-policy update over a batch of records. Every record's rollout rng
// is derived from (step_seed, record index), so batch results do not depend
// on rollout scheduling.
inline StepReport train_step(PolicyParams& policy, const PolicyParams& ref_policy,
                             std::span<const SolutionRecord* const> batch, const TrainConfig& cfg,
                             std::uint64_t step_seed, int step_index) {
  cfg.validate();
  std::vector<RolloutItem> items;
  items.reserve(batch.size() * static_cast<std::size_t>(cfg.group_size));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SolutionRecord& rec = *batch[b];
    Rng rng = make_rng(derive_seed(step_seed, b));
    std::optional<double> live;
    if (cfg.live_ppl) live = perplexity(policy, rec);
    std::vector<RolloutItem> group = rollout_group(policy, rec, cfg, rng, live);
    std::vector<double> rewards;
    rewards.reserve(group.size());
    for (const RolloutItem& item : group) rewards.push_back(item.reward.r);
    const std::vector<double> adv = group_advantages(rewards);
    for (std::size_t g = 0; g < group.size(); ++g) group[g].advantage = adv[g];
    for (RolloutItem& item : group) items.push_back(std::move(item));
  }

  partition_batch(items);
  assign_modulation_weights(items, cfg.modulation_on);
  rescale_advantages(items);

  std::vector<SurrogateEval> evals;
  evals.reserve(items.size());
  std::vector<double> objectives(items.size());
  std::vector<Verdict> gold_labels(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    evals.push_back(surrogate_eval(policy, ref_policy, items[i], cfg, /*keep_trace=*/true));
    objectives[i] = evals[i].objective;
    gold_labels[i] = items[i].example->gold_verdict;
  }
  const double loss = class_level_loss(objectives, gold_labels, cfg.class_level_on);
  const std::vector<double> coefs =
      aggregation_coefficients(objectives, gold_labels, cfg.class_level_on);

  bool any_update = false;
  PolicyGrad grad(policy.dims);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (coefs[i] == 0.0) continue;
    for (double& c : evals[i].grad_coefs) c *= coefs[i];
    accumulate_from_trace(policy, evals[i].trace, items[i].critique.tokens, evals[i].grad_coefs,
                          grad);
    any_update = true;
  }
  if (any_update) apply_gradient(policy, cfg.learning_rate, grad);

  StepReport rep;
  rep.step = step_index;
  rep.loss = loss;
  rep.n_items = static_cast<int>(items.size());
  rep.update_skipped = !any_update;
  double reward_sum = 0, w_sum = 0;
  rep.weight_min = items.empty() ? 1.0 : items.front().weight;
  rep.weight_max = rep.weight_min;
  std::vector<PplObservation> obs;
  obs.reserve(items.size());
  for (const RolloutItem& item : items) {
    reward_sum += item.reward.r;
    w_sum += item.weight;
    rep.weight_min = std::min(rep.weight_min, item.weight);
    rep.weight_max = std::max(rep.weight_max, item.weight);
    rep.subgroup_counts[static_cast<int>(item.subgroup)]++;
    obs.push_back({item.ppl, item.critique.verdict, item.example->gold_verdict});
  }
  if (!items.empty()) {
    rep.mean_reward = reward_sum / static_cast<double>(items.size());
    rep.weight_mean = w_sum / static_cast<double>(items.size());
    rep.terciles = tercile_stats(obs);
  }
  return rep;
}

}  // namespace ppxgrpo

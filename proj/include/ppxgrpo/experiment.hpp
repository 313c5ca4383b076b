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

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "ppxgrpo/core.hpp"
#include "ppxgrpo/grpo.hpp"
#include "ppxgrpo/io.hpp"
#include "ppxgrpo/metrics.hpp"
#include "ppxgrpo/policy.hpp"
#include "ppxgrpo/reward.hpp"
#include "ppxgrpo/synthlab.hpp"

// Experiment orchestration: the gen / pretrain / train / eval / analyze
// pipeline behind the CLI, configuration loading, run-directory layout,
// manifest and locking. Reports contain no timestamps, so a rerun with the
// same seed reproduces them byte for byte.

namespace ppxgrpo {

namespace fs = std::filesystem;

// Ablation grid from the two engine switches.
enum class Variant { vanilla, ppx_only, class_only, full };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::ppx_only: return "ppx_only";
    case Variant::class_only: return "class_only";
    default: return "full";
  }
}

inline Variant variant_from_name(const std::string& name) {
  if (name == "vanilla") return Variant::vanilla;
  if (name == "ppx_only") return Variant::ppx_only;
  if (name == "class_only") return Variant::class_only;
  if (name == "full") return Variant::full;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected vanilla, ppx_only, class_only or full)");
}

inline void apply_variant(TrainConfig& cfg, Variant v) {
  cfg.modulation_on = v == Variant::ppx_only || v == Variant::full;
  cfg.class_level_on = v == Variant::class_only || v == Variant::full;
}

struct Paths {
  std::string run_dir = "run";
  std::string data_dir;        // default <run_dir>/data
  std::string checkpoint_dir;  // default <run_dir>/ckpt
  std::string report_dir;      // default <run_dir>/report

  void resolve() {
    if (data_dir.empty()) data_dir = (fs::path(run_dir) / "data").string();
    if (checkpoint_dir.empty()) checkpoint_dir = (fs::path(run_dir) / "ckpt").string();
    if (report_dir.empty()) report_dir = (fs::path(run_dir) / "report").string();
  }
};

struct PretrainConfig {
  int epochs = 8;
  double lr = 2.0;
  int batch_size = 32;
  double init_scale = 0.1;
};

struct ExperimentConfig {
  Paths paths;
  std::uint64_t seed = 42;              // world seed: data generation + pretraining
  std::vector<std::uint64_t> seeds{1};  // RL training seeds
  Variant variant = Variant::full;

  GenSpec gen;  // knobs shared by all generated artifacts
  int n_pretrain = 4000;
  int n_train = 5760;
  int n_valid = 240;
  int n_benchmark = 630;  // tuples, one record per dialect each

  PolicyDims policy_dims;
  PretrainConfig pretrain;
  TrainConfig train;
  int checkpoint_every = 50;
};

inline void to_json(json& j, const DemoBias& b) {
  j = json{{"self_correct", b.self_correct},
           {"self_wrong", b.self_wrong},
           {"other_correct", b.other_correct},
           {"other_wrong", b.other_wrong}};
}

inline void from_json(const json& j, DemoBias& b) {
  b.self_correct = j.value("self_correct", b.self_correct);
  b.self_wrong = j.value("self_wrong", b.self_wrong);
  b.other_correct = j.value("other_correct", b.other_correct);
  b.other_wrong = j.value("other_wrong", b.other_wrong);
}

inline void to_json(json& j, const DialectProfile& p) {
  j = json{{"tag", p.tag}, {"step_probs", p.step_probs}};
}

inline void from_json(const json& j, DialectProfile& p) {
  j.at("tag").get_to(p.tag);
  j.at("step_probs").get_to(p.step_probs);
}

inline void to_json(json& j, const GenSpec& s) {
  j = json{{"n_problems", s.n_problems},
           {"dialects", s.dialects},
           {"wrong_fraction", s.wrong_fraction},
           {"steps", {s.steps_min, s.steps_max}},
           {"step_len", {s.step_len_min, s.step_len_max}},
           {"problem_len", {s.problem_len_min, s.problem_len_max}},
           {"seed", s.seed},
           {"vocab_size", s.vocab_size},
           {"answer_noise", s.answer_noise},
           {"glitch_rate", s.glitch_rate},
           {"pretrain_dialect_weights", s.pretrain_dialect_weights},
           {"demo_bias", s.demo_bias}};
}

inline void from_json(const json& j, GenSpec& s) {
  s.n_problems = j.value("n_problems", s.n_problems);
  s.wrong_fraction = j.value("wrong_fraction", s.wrong_fraction);
  if (j.contains("steps")) {
    s.steps_min = j.at("steps").at(0).get<int>();
    s.steps_max = j.at("steps").at(1).get<int>();
  }
  if (j.contains("step_len")) {
    s.step_len_min = j.at("step_len").at(0).get<int>();
    s.step_len_max = j.at("step_len").at(1).get<int>();
  }
  if (j.contains("problem_len")) {
    s.problem_len_min = j.at("problem_len").at(0).get<int>();
    s.problem_len_max = j.at("problem_len").at(1).get<int>();
  }
  s.seed = j.value("seed", s.seed);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.answer_noise = j.value("answer_noise", s.answer_noise);
  s.glitch_rate = j.value("glitch_rate", s.glitch_rate);
  if (j.contains("pretrain_dialect_weights"))
    j.at("pretrain_dialect_weights").get_to(s.pretrain_dialect_weights);
  if (j.contains("demo_bias")) j.at("demo_bias").get_to(s.demo_bias);
  if (j.contains("dialects")) {
    j.at("dialects").get_to(s.dialects);
  } else {
    const int count = j.value("dialect_count", 2);
    const double purity = j.value("dialect_purity", 0.9);
    s.dialects = default_dialect_profiles(count, s.vocab_size, purity);
  }
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"group_size", c.group_size},
           {"temperature", c.temperature},
           {"clip_eps", c.clip_eps},
           {"kl_beta", c.kl_beta},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"total_steps", c.total_steps},
           {"modulation_on", c.modulation_on},
           {"class_level_on", c.class_level_on},
           {"live_ppl", c.live_ppl},
           {"max_output_len", c.max_output_len}};
}

inline void from_json(const json& j, TrainConfig& c) {
  c.group_size = j.value("group_size", c.group_size);
  c.temperature = j.value("temperature", c.temperature);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.live_ppl = j.value("live_ppl", c.live_ppl);
  c.max_output_len = j.value("max_output_len", c.max_output_len);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"run_dir", c.paths.run_dir},
           {"data_dir", c.paths.data_dir},
           {"checkpoint_dir", c.paths.checkpoint_dir},
           {"report_dir", c.paths.report_dir},
           {"seed", c.seed},
           {"seeds", c.seeds},
           {"variant", variant_name(c.variant)},
           {"gen", c.gen},
           {"n_pretrain", c.n_pretrain},
           {"n_train", c.n_train},
           {"n_valid", c.n_valid},
           {"n_benchmark", c.n_benchmark},
           {"policy",
            {{"vocab_size", c.policy_dims.vocab},
             {"embed_dim", c.policy_dims.embed},
             {"hidden_dim", c.policy_dims.hidden},
             {"window", c.policy_dims.window}}},
           {"pretrain",
            {{"epochs", c.pretrain.epochs},
             {"lr", c.pretrain.lr},
             {"batch_size", c.pretrain.batch_size},
             {"init_scale", c.pretrain.init_scale}}},
           {"train", c.train},
           {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
  c.paths.run_dir = j.value("run_dir", c.paths.run_dir);
  c.paths.data_dir = j.value("data_dir", std::string{});
  c.paths.checkpoint_dir = j.value("checkpoint_dir", std::string{});
  c.paths.report_dir = j.value("report_dir", std::string{});
  c.paths.resolve();
  c.seed = j.value("seed", c.seed);
  if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
  if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("gen")) j.at("gen").get_to(c.gen);
  if (c.gen.dialects.empty())
    c.gen.dialects = default_dialect_profiles(2, c.gen.vocab_size, 0.9);
  c.n_pretrain = j.value("n_pretrain", c.n_pretrain);
  c.n_train = j.value("n_train", c.n_train);
  c.n_valid = j.value("n_valid", c.n_valid);
  c.n_benchmark = j.value("n_benchmark", c.n_benchmark);
  if (j.contains("policy")) {
    const json& p = j.at("policy");
    c.policy_dims.vocab = p.value("vocab_size", c.policy_dims.vocab);
    c.policy_dims.embed = p.value("embed_dim", c.policy_dims.embed);
    c.policy_dims.hidden = p.value("hidden_dim", c.policy_dims.hidden);
    c.policy_dims.window = p.value("window", c.policy_dims.window);
  }
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
    c.pretrain.lr = p.value("lr", c.pretrain.lr);
    c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
    c.pretrain.init_scale = p.value("init_scale", c.pretrain.init_scale);
  }
  if (j.contains("train")) j.at("train").get_to(c.train);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (c.policy_dims.vocab != c.gen.vocab_size)
    throw std::invalid_argument("config: policy vocab_size differs from gen vocab_size");
}

inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.paths.resolve();
  cfg.gen.dialects = default_dialect_profiles(2, cfg.gen.vocab_size, 0.9);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg = default_config();
  const json j = json::parse(slurp_file(path));
  j.get_to(cfg);
  return cfg;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string dump = json(cfg).dump();
  return fnv1a64(dump.data(), dump.size());
}

// Exclusive lock on a run directory (O_CREAT|O_EXCL sentinel file, removed
// on destruction). A leftover lock from a crashed run must be deleted by
// hand; the error message names it.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir) : path_((fs::path(run_dir) / ".lock").string()) {
    fs::create_directories(run_dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error("run directory is locked by another process (remove " + path_ +
                               " if stale)");
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_manifest(const ExperimentConfig& cfg, const std::string& command) {
  json j{{"version", kVersion},
         {"command", command},
         {"config_hash", config_hash(cfg)},
         {"config", cfg}};
  write_text_file((fs::path(cfg.paths.run_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

namespace detail {

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline GenSpec spec_for(const ExperimentConfig& cfg, int n, std::uint64_t stream) {
  GenSpec s = cfg.gen;
  s.n_problems = n;
  s.seed = derive_seed(cfg.seed, stream);
  return s;
}

inline void require_exists(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing input file: " + path);
}

}  // namespace detail

struct GenPaths {
  std::string pretrain, train, valid, benchmark;
};

inline GenPaths gen_paths(const ExperimentConfig& cfg) {
  const fs::path d = cfg.paths.data_dir;
  return {(d / "pretrain.jsonl").string(), (d / "train.jsonl").string(),
          (d / "valid.jsonl").string(), (d / "benchmark.jsonl").string()};
}

inline std::string ref_checkpoint_path(const ExperimentConfig& cfg) {
  return (fs::path(cfg.paths.checkpoint_dir) / "ref.ckpt").string();
}

// gen: writes the pretrain corpus, train set, held-out validation set and
// the one-to-many benchmark, then re-reads everything and verifies balance
// and the train/benchmark split.
inline GenPaths run_gen(const ExperimentConfig& cfg, bool force = false) {
  RunLock lock(cfg.paths.run_dir);
  fs::create_directories(cfg.paths.data_dir);
  const GenPaths out = gen_paths(cfg);
  for (const std::string& p : {out.pretrain, out.train, out.valid, out.benchmark})
    if (!force && fs::exists(p))
      throw std::runtime_error("refusing to overwrite " + p + " (use --force)");

  write_jsonl(out.pretrain, build_pretrain_corpus(detail::spec_for(cfg, cfg.n_pretrain, 1)));
  write_jsonl(out.train, build_train_set(detail::spec_for(cfg, cfg.n_train, 2)));
  write_jsonl(out.valid, build_train_set(detail::spec_for(cfg, cfg.n_valid, 3)));
  write_jsonl(out.benchmark, build_ops_benchmark(detail::spec_for(cfg, cfg.n_benchmark, 4)));

  const auto train = read_jsonl<SolutionRecord>(out.train);
  const auto bench = read_jsonl<SolutionTuple>(out.benchmark);
  check_disjoint_problems(train, bench);
  const auto check_balance = [](const std::vector<SolutionRecord>& recs, const std::string& name) {
    long wrong = 0;
    for (const auto& r : recs)
      if (r.gold_verdict == Verdict::wrong) ++wrong;
    const long correct = static_cast<long>(recs.size()) - wrong;
    if (std::labs(correct - wrong) > 1)
      throw std::runtime_error("label balance violated in " + name);
  };
  check_balance(train, out.train);
  check_balance(flatten_tuples(bench), out.benchmark);
  write_manifest(cfg, "gen");
  return out;
}

struct PretrainReport {
  std::string checkpoint;
  std::vector<double> nll_history;
  std::vector<std::pair<std::string, double>> mean_ppl_by_dialect;  // on the benchmark
};

// pretrain: fits the reference policy on the pretrain corpus and reports the
// induced perplexity bias (mean benchmark perplexity per dialect).
inline PretrainReport run_pretrain(const ExperimentConfig& cfg) {
  RunLock lock(cfg.paths.run_dir);
  const GenPaths data = gen_paths(cfg);
  detail::require_exists(data.pretrain);
  detail::require_exists(data.benchmark);
  fs::create_directories(cfg.paths.checkpoint_dir);
  fs::create_directories(cfg.paths.report_dir);

  const auto corpus = read_jsonl<PretrainExample>(data.pretrain);
  PolicyParams params = random_params(cfg.policy_dims, derive_seed(cfg.seed, 10), cfg.pretrain.init_scale);
  PretrainReport rep;
  params = mle_pretrain(std::move(params), corpus, cfg.pretrain.epochs, cfg.pretrain.lr,
                        derive_seed(cfg.seed, 11), &rep.nll_history, cfg.pretrain.batch_size);
  rep.checkpoint = ref_checkpoint_path(cfg);
  save_checkpoint(rep.checkpoint, params);

  const auto bench = flatten_tuples(read_jsonl<SolutionTuple>(data.benchmark));
  std::vector<double> sums(cfg.gen.dialects.size(), 0.0);
  std::vector<int> counts(cfg.gen.dialects.size(), 0);
  for (const auto& rec : bench) {
    sums[rec.dialect] += perplexity(params, rec);
    counts[rec.dialect] += 1;
  }
  json bias = json::object();
  for (std::size_t d = 0; d < sums.size(); ++d) {
    const double mean = counts[d] ? sums[d] / counts[d] : 0.0;
    rep.mean_ppl_by_dialect.emplace_back(cfg.gen.dialects[d].tag, mean);
    bias[cfg.gen.dialects[d].tag] = mean;
  }
  json j{{"checkpoint", rep.checkpoint}, {"nll_history", rep.nll_history}, {"mean_ppl_by_dialect", bias}};
  write_text_file((fs::path(cfg.paths.report_dir) / "bias_report.json").string(), j.dump(2) + "\n");
  write_manifest(cfg, "pretrain");
  return rep;
}

inline void annotate_ppl(std::vector<SolutionRecord>& records, const PolicyParams& ref) {
  for (auto& rec : records) rec.ppl_ref = perplexity(ref, rec);
}

// Greedy verdict of the policy for one record.
inline std::optional<Verdict> greedy_verdict(const PolicyParams& policy, const SolutionRecord& rec) {
  Rng rng = make_rng(0);  // unused at temperature 0
  const CritiqueRecord crit = sample_critique(policy, encode_prompt(rec), 0.0, rng);
  return crit.verdict;
}

inline double greedy_accuracy(const PolicyParams& policy, const std::vector<SolutionRecord>& recs) {
  if (recs.empty()) return 0.0;
  int hits = 0;
  for (const auto& rec : recs) {
    const auto v = greedy_verdict(policy, rec);
    if (v.has_value() && *v == rec.gold_verdict) ++hits;
  }
  return 100.0 * hits / static_cast<double>(recs.size());
}

struct TrainSummary {
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string log_path;
  int best_step = 0;
  double best_valid_acc = 0;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
};

// train: GRPO loop against the frozen reference policy, with periodic
// checkpoints and best-checkpoint selection by held-out greedy accuracy.
inline TrainSummary run_train(const ExperimentConfig& cfg, Variant variant, std::uint64_t rl_seed) {
  RunLock lock(cfg.paths.run_dir);
  const GenPaths data = gen_paths(cfg);
  detail::require_exists(data.train);
  detail::require_exists(data.valid);
  detail::require_exists(ref_checkpoint_path(cfg));
  fs::create_directories(cfg.paths.checkpoint_dir);
  fs::create_directories(cfg.paths.report_dir);

  const PolicyParams ref = load_checkpoint(ref_checkpoint_path(cfg));
  PolicyParams policy = ref;
  auto train_recs = read_jsonl<SolutionRecord>(data.train);
  auto valid_recs = read_jsonl<SolutionRecord>(data.valid);
  annotate_ppl(train_recs, ref);

  TrainConfig tc = cfg.train;
  apply_variant(tc, variant);
  tc.validate();

  TrainSummary summary;
  summary.variant = variant;
  summary.seed = rl_seed;
  const std::string stem = std::string(variant_name(variant)) + "_s" + std::to_string(rl_seed);
  summary.log_path = (fs::path(cfg.paths.report_dir) / ("train_log_" + stem + ".jsonl")).string();
  std::ofstream log(summary.log_path, std::ios::binary);
  if (!log) throw std::runtime_error("cannot open training log: " + summary.log_path);

  std::vector<const SolutionRecord*> pool(train_recs.size());
  for (std::size_t i = 0; i < train_recs.size(); ++i) pool[i] = &train_recs[i];
  Rng order_rng = make_rng(derive_seed(rl_seed, 100));
  std::size_t cursor = pool.size();  // forces an initial shuffle

  summary.best_valid_acc = -1.0;
  const auto consider_checkpoint = [&](int step) {
    const std::string path =
        (fs::path(cfg.paths.checkpoint_dir) / (stem + "_step" + std::to_string(step) + ".ckpt")).string();
    save_checkpoint(path, policy);
    const double acc = greedy_accuracy(policy, valid_recs);
    if (acc > summary.best_valid_acc) {
      summary.best_valid_acc = acc;
      summary.best_step = step;
      summary.best_checkpoint = path;
    }
  };

  for (int step = 1; step <= tc.total_steps; ++step) {
    std::vector<const SolutionRecord*> batch;
    batch.reserve(tc.batch_size);
    for (int b = 0; b < tc.batch_size; ++b) {
      if (cursor >= pool.size()) {
        shuffle(pool, order_rng);
        cursor = 0;
      }
      batch.push_back(pool[cursor++]);
    }
    const StepReport rep = train_step(policy, ref, batch, tc, derive_seed(rl_seed, 200, step), step);
    log << json(rep).dump() << '\n';
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) consider_checkpoint(step);
  }
  if (tc.total_steps == 0 || cfg.checkpoint_every <= 0 || tc.total_steps % cfg.checkpoint_every != 0)
    consider_checkpoint(tc.total_steps);
  log.close();

  summary.final_checkpoint =
      (fs::path(cfg.paths.checkpoint_dir) / (stem + "_final.ckpt")).string();
  save_checkpoint(summary.final_checkpoint, policy);
  const std::string best_copy =
      (fs::path(cfg.paths.checkpoint_dir) / (stem + "_best.ckpt")).string();
  fs::copy_file(summary.best_checkpoint, best_copy, fs::copy_options::overwrite_existing);
  summary.best_checkpoint = best_copy;

  json j{{"variant", variant_name(variant)}, {"seed", rl_seed},
         {"best_step", summary.best_step},  {"best_valid_acc", summary.best_valid_acc},
         {"best_checkpoint", summary.best_checkpoint}, {"final_checkpoint", summary.final_checkpoint},
         {"flags", {{"modulation_on", tc.modulation_on}, {"class_level_on", tc.class_level_on}}}};
  write_text_file((fs::path(cfg.paths.report_dir) / ("train_summary_" + stem + ".json")).string(),
                  j.dump(2) + "\n");
  write_manifest(cfg, "train");
  return summary;
}

// Loads a dataset file that may hold either tuples or flat records.
inline std::vector<SolutionRecord> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::string first;
  while (std::getline(in, first) && first.empty()) {
  }
  if (first.empty()) throw std::runtime_error("empty dataset: " + path);
  if (json::parse(first).contains("solutions"))
    return flatten_tuples(read_jsonl<SolutionTuple>(path));
  return read_jsonl<SolutionRecord>(path);
}

struct SubsetEval {
  std::string subset;
  ConfusionRates rates;
  double bi = 0;
};

struct EvalReport {
  std::vector<SubsetEval> subsets;  // one per dialect
  SubsetEval overall;
  double mean_abs_bi = 0;  // averages over the dialect subsets
  double mean_acc = 0;
  std::string checkpoint, dataset;
};

inline void to_json(json& j, const SubsetEval& s) {
  j = json{{"subset", s.subset},
           {"n", s.rates.n},
           {"fpr", s.rates.fpr},
           {"fnr", s.rates.fnr},
           {"bi", s.bi},
           {"acc", s.rates.acc},
           {"unparsed", s.rates.unparsed_rate}};
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"checkpoint", r.checkpoint}, {"dataset", r.dataset},   {"subsets", r.subsets},
           {"overall", r.overall},       {"mean_abs_bi", r.mean_abs_bi}, {"mean_acc", r.mean_acc}};
}

// eval: greedy-decoding confusion report per dialect subset plus overall.
inline EvalReport run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                           const std::string& dataset_path, bool write_reports = true) {
  detail::require_exists(checkpoint_path);
  detail::require_exists(dataset_path);
  const PolicyParams policy = load_checkpoint(checkpoint_path);
  const std::vector<SolutionRecord> records = load_dataset(dataset_path);
  if (records.empty()) throw std::runtime_error("dataset has no records: " + dataset_path);

  std::vector<std::optional<Verdict>> preds(records.size());
  std::vector<Verdict> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    preds[i] = greedy_verdict(policy, records[i]);
    labels[i] = records[i].gold_verdict;
  }

  EvalReport report;
  report.checkpoint = checkpoint_path;
  report.dataset = dataset_path;
  std::set<int> dialects;
  for (const auto& rec : records) dialects.insert(rec.dialect);
  for (int d : dialects) {
    std::vector<std::optional<Verdict>> sp;
    std::vector<Verdict> sl;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].dialect != d) continue;
      sp.push_back(preds[i]);
      sl.push_back(labels[i]);
    }
    SubsetEval se;
    se.subset = dialect_tag(d);
    se.rates = confusion_rates(sp, sl);
    se.bi = balance_indicator(se.rates.fpr, se.rates.fnr);
    report.subsets.push_back(std::move(se));
  }
  report.overall.subset = "overall";
  report.overall.rates = confusion_rates(preds, labels);
  report.overall.bi = balance_indicator(report.overall.rates.fpr, report.overall.rates.fnr);
  for (const auto& se : report.subsets) {
    report.mean_abs_bi += std::fabs(se.bi);
    report.mean_acc += se.rates.acc;
  }
  report.mean_abs_bi /= static_cast<double>(report.subsets.size());
  report.mean_acc /= static_cast<double>(report.subsets.size());

  if (write_reports) {
    fs::create_directories(cfg.paths.report_dir);
    const std::string tag =
        fs::path(checkpoint_path).stem().string() + "__" + fs::path(dataset_path).stem().string();
    write_text_file((fs::path(cfg.paths.report_dir) / ("eval_" + tag + ".json")).string(),
                    json(report).dump(2) + "\n");
    std::string csv = "subset,n,fpr,fnr,bi,acc,unparsed\n";
    auto add_row = [&](const SubsetEval& se) {
      csv += se.subset + "," + std::to_string(se.rates.n) + "," + detail::fmt_g(se.rates.fpr) + "," +
             detail::fmt_g(se.rates.fnr) + "," + detail::fmt_g(se.bi) + "," +
             detail::fmt_g(se.rates.acc) + "," + detail::fmt_g(se.rates.unparsed_rate) + "\n";
    };
    for (const auto& se : report.subsets) add_row(se);
    add_row(report.overall);
    write_text_file((fs::path(cfg.paths.report_dir) / ("eval_" + tag + ".csv")).string(), csv);
  }
  return report;
}

inline void to_json(json& j, const RegressionResult& r) {
  j = json{{"slope", r.slope},     {"intercept", r.intercept},
           {"pearson_r", r.pearson_r}, {"p_value", r.p_value},
           {"stderr_slope", r.stderr_slope}, {"t_stat", r.t_stat},
           {"n", r.n}};
  json band = json::array();
  for (const auto& pt : r.ci95_band)
    band.push_back({{"x", pt.x}, {"fit", pt.fit}, {"lo", pt.lo}, {"hi", pt.hi}});
  j["ci95_band"] = band;
}

inline void to_json(json& j, const PreferenceReport& r) {
  j = json{{"n", r.n},
           {"fpr", r.rates.fpr},
           {"fnr", r.rates.fnr},
           {"bi", r.bi},
           {"acc", r.rates.acc},
           {"unparsed", r.rates.unparsed_rate},
           {"regression", r.regression}};
  json bins = json::array();
  for (const auto& b : r.bins) {
    json jb{{"mean_ppl", b.mean_ppl}, {"count", b.count}, {"bi_defined", b.bi_defined}};
    if (b.bi_defined) jb["bi"] = b.bi;
    bins.push_back(jb);
  }
  j["bins"] = bins;
  json terc = json::array();
  for (const auto& t : r.terciles)
    terc.push_back({{"count", t.count},
                    {"mean_ppl", t.mean_ppl},
                    {"frac_pred_correct", t.frac_pred_correct},
                    {"frac_pred_wrong", t.frac_pred_wrong},
                    {"frac_unparsed", t.frac_unparsed}});
  j["terciles"] = terc;
}

// analyze: decile-bin regression of BI on reference perplexity plus tercile
// prediction proportions, under greedy decoding of the given checkpoint.
inline PreferenceReport run_analyze(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                                    const std::string& dataset_path, bool write_reports = true) {
  detail::require_exists(checkpoint_path);
  detail::require_exists(dataset_path);
  detail::require_exists(ref_checkpoint_path(cfg));
  const PolicyParams policy = load_checkpoint(checkpoint_path);
  const PolicyParams ref = load_checkpoint(ref_checkpoint_path(cfg));
  std::vector<SolutionRecord> records = load_dataset(dataset_path);
  annotate_ppl(records, ref);

  std::vector<std::optional<Verdict>> preds(records.size());
  std::vector<Verdict> labels(records.size());
  std::vector<double> ppls(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    preds[i] = greedy_verdict(policy, records[i]);
    labels[i] = records[i].gold_verdict;
    ppls[i] = *records[i].ppl_ref;
  }
  const PreferenceReport report = preference_report(preds, labels, ppls);

  if (write_reports) {
    fs::create_directories(cfg.paths.report_dir);
    const std::string tag =
        fs::path(checkpoint_path).stem().string() + "__" + fs::path(dataset_path).stem().string();
    write_text_file((fs::path(cfg.paths.report_dir) / ("analysis_" + tag + ".json")).string(),
                    json(report).dump(2) + "\n");
    std::string bins_csv = "bin,count,mean_ppl,bi\n";
    for (std::size_t b = 0; b < report.bins.size(); ++b) {
      const auto& bin = report.bins[b];
      bins_csv += std::to_string(b) + "," + std::to_string(bin.count) + "," +
                  detail::fmt_g(bin.mean_ppl) + "," + (bin.bi_defined ? detail::fmt_g(bin.bi) : "") +
                  "\n";
    }
    write_text_file((fs::path(cfg.paths.report_dir) / ("deciles_" + tag + ".csv")).string(), bins_csv);
    std::string terc_csv = "tercile,count,mean_ppl,frac_pred_correct,frac_pred_wrong,frac_unparsed\n";
    const char* names[3] = {"low", "mid", "high"};
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& ts = report.terciles[t];
      terc_csv += std::string(names[t]) + "," + std::to_string(ts.count) + "," +
                  detail::fmt_g(ts.mean_ppl) + "," + detail::fmt_g(ts.frac_pred_correct) + "," +
                  detail::fmt_g(ts.frac_pred_wrong) + "," + detail::fmt_g(ts.frac_unparsed) + "\n";
    }
    write_text_file((fs::path(cfg.paths.report_dir) / ("terciles_" + tag + ".csv")).string(), terc_csv);
  }
  return report;
}

}  // namespace ppxgrpo

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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppxgrpo/core.hpp"
#include "ppxgrpo/rng.hpp"

// Synthetic problem/solution generator.
//
// The content vocabulary is split into three sub-alphabets:
//
//   answers   -- two halves; correct answers lean on the first half, the
//                perturbed answers of wrong solutions lean on the second.
//                The lean (1 - answer_noise) bounds how well any critic can
//                judge correctness from the prompt alone.
//   steps     -- reasoning-step tokens. Each dialect has a token-marginal
//                profile over this range; the profiles stand in for the
//                generation styles of different model families and are what
//                separates reference-policy perplexity between dialects.
//   glitch    -- a small range that corrupted steps draw from heavily.
//
// Wrong solutions get exactly one step replaced by corrupted content (that
// step is the gold first error) and carry a perturbed final answer. A tuple
// groups one solution per dialect around the same problem, answer and
// verdict.
//
// Train and benchmark problems are split by parity of a token-sequence hash,
// so the two sides are disjoint by construction.

namespace ppxgrpo {

struct TokenLayout {
  Token answer_lo = 0, answer_hi = 0;  // [answer_lo, answer_hi)
  Token step_lo = 0, step_hi = 0;
  Token glitch_lo = 0, glitch_hi = 0;

  Token answer_mid() const { return answer_lo + (answer_hi - answer_lo) / 2; }

  static TokenLayout for_vocab(int vocab_size) {
    const int content = vocab_size - kFirstContent;
    if (content < 12) throw std::invalid_argument("vocabulary too small for the token layout");
    TokenLayout l;
    const int n_answer = std::max(4, content / 3);
    const int n_glitch = std::max(2, content / 10);
    l.answer_lo = kFirstContent;
    l.answer_hi = kFirstContent + n_answer;
    l.step_lo = l.answer_hi;
    l.step_hi = vocab_size - n_glitch;
    l.glitch_lo = l.step_hi;
    l.glitch_hi = vocab_size;
    if (l.step_hi - l.step_lo < 4) throw std::invalid_argument("vocabulary too small for step range");
    return l;
  }
};

struct DialectProfile {
  std::string tag;
  std::vector<double> step_probs;  // over [layout.step_lo, layout.step_hi)
};

// Demonstration-verdict bias for the pretrain corpus, P(demo says "correct")
// keyed by whether the solution is in the reference policy's own style
// (dialect 0) and by the gold label. This is what plants the evaluation
// preference the training loop is supposed to remove. The defaults make the
// pretrained critic judge mostly by style: near-certain acceptance of
// own-style solutions, near-certain rejection of other styles.
struct DemoBias {
  double self_correct = 0.97;
  double self_wrong = 0.85;
  double other_correct = 0.15;
  double other_wrong = 0.03;
};

struct GenSpec {
  int n_problems = 0;  // tuples for the benchmark, records for flat sets
  std::vector<DialectProfile> dialects;
  double wrong_fraction = 0.5;
  int steps_min = 2, steps_max = 6;
  int step_len_min = 3, step_len_max = 8;
  int problem_len_min = 4, problem_len_max = 10;
  std::uint64_t seed = 1;
  int vocab_size = kDefaultVocabSize;

  double answer_noise = 0.2;  // cross-mass between the ok/perturbed answer halves
  double glitch_rate = 0.7;   // fraction of corrupted-step tokens from the glitch range
  std::vector<double> pretrain_dialect_weights;  // defaults to dialect-0 dominant
  DemoBias demo_bias;

  TokenLayout layout() const { return TokenLayout::for_vocab(vocab_size); }

  void validate() const {
    if (n_problems < 0) throw std::invalid_argument("GenSpec: negative n_problems");
    if (dialects.empty()) throw std::invalid_argument("GenSpec: no dialects");
    if (!(wrong_fraction >= 0.0 && wrong_fraction <= 1.0))
      throw std::invalid_argument("GenSpec: wrong_fraction outside [0,1]");
    if (steps_min < 2 || steps_max > 6 || steps_min > steps_max)
      throw std::invalid_argument("GenSpec: steps range must lie within [2,6]");
    if (step_len_min < 1 || step_len_min > step_len_max)
      throw std::invalid_argument("GenSpec: bad step length range");
    if (problem_len_min < 1 || problem_len_min > problem_len_max)
      throw std::invalid_argument("GenSpec: bad problem length range");
    const TokenLayout l = layout();
    const std::size_t want = static_cast<std::size_t>(l.step_hi - l.step_lo);
    for (const auto& d : dialects) {
      if (d.step_probs.size() != want)
        throw std::invalid_argument("GenSpec: dialect profile size does not match step range");
      double total = 0;
      for (double p : d.step_probs) {
        if (p < 0) throw std::invalid_argument("GenSpec: negative profile probability");
        total += p;
      }
      if (std::fabs(total - 1.0) > 1e-9)
        throw std::invalid_argument("GenSpec: dialect profile does not sum to 1");
    }
    if (!pretrain_dialect_weights.empty() && pretrain_dialect_weights.size() != dialects.size())
      throw std::invalid_argument("GenSpec: pretrain_dialect_weights size mismatch");
  }
};

// Concentrated block profiles: dialect i puts `purity` mass (uniformly) on
// its own slice of the step range and spreads the rest over the others.
inline std::vector<DialectProfile> default_dialect_profiles(int n_dialects, int vocab_size,
                                                            double purity = 0.85) {
  if (n_dialects < 1 || n_dialects > 26) throw std::invalid_argument("dialect count out of range");
  if (!(purity > 0.0 && purity <= 1.0)) throw std::invalid_argument("purity outside (0,1]");
  const TokenLayout l = TokenLayout::for_vocab(vocab_size);
  const int range = l.step_hi - l.step_lo;
  if (range < n_dialects) throw std::invalid_argument("step range smaller than dialect count");
  std::vector<DialectProfile> profiles;
  for (int i = 0; i < n_dialects; ++i) {
    DialectProfile p;
    p.tag = dialect_tag(i);
    p.step_probs.assign(range, 0.0);
    const int lo = i * range / n_dialects;
    const int hi = (i + 1) * range / n_dialects;
    const int own = hi - lo;
    const int rest = range - own;
    for (int t = 0; t < range; ++t) {
      const bool in_own = t >= lo && t < hi;
      if (n_dialects == 1) {
        p.step_probs[t] = 1.0 / range;
      } else {
        p.step_probs[t] = in_own ? purity / own : (1.0 - purity) / rest;
      }
    }
    profiles.push_back(std::move(p));
  }
  return profiles;
}

// Which side of the train/benchmark split a problem belongs to.
enum class Split { train, benchmark };

inline Split problem_split(const TokenSeq& problem) {
  return (hash_tokens(problem) & 1) == 0 ? Split::train : Split::benchmark;
}

inline TokenSeq gen_problem(const GenSpec& spec, Rng& rng) {
  const TokenLayout l = spec.layout();
  const int len = static_cast<int>(uniform_int(rng, spec.problem_len_min, spec.problem_len_max));
  TokenSeq problem(len);
  for (Token& t : problem) t = static_cast<Token>(uniform_int(rng, l.step_lo, l.step_hi - 1));
  return problem;
}

namespace detail {

inline TokenSeq gen_problem_for_split(const GenSpec& spec, Split side, Rng& rng) {
  for (;;) {
    TokenSeq p = gen_problem(spec, rng);
    if (problem_split(p) == side) return p;
  }
}

inline Token draw_answer_token(const GenSpec& spec, bool perturbed, Rng& rng) {
  const TokenLayout l = spec.layout();
  const bool first_half = bernoulli(rng, perturbed ? spec.answer_noise : 1.0 - spec.answer_noise);
  if (first_half) return static_cast<Token>(uniform_int(rng, l.answer_lo, l.answer_mid() - 1));
  return static_cast<Token>(uniform_int(rng, l.answer_mid(), l.answer_hi - 1));
}

inline TokenSeq draw_answer(const GenSpec& spec, bool perturbed, Rng& rng) {
  return TokenSeq{draw_answer_token(spec, perturbed, rng)};
}

inline TokenSeq gen_step(const GenSpec& spec, int dialect, Rng& rng) {
  const TokenLayout l = spec.layout();
  const int len = static_cast<int>(uniform_int(rng, spec.step_len_min, spec.step_len_max));
  TokenSeq step(len);
  for (Token& t : step)
    t = l.step_lo + static_cast<Token>(categorical(rng, spec.dialects[dialect].step_probs));
  return step;
}

inline TokenSeq gen_corrupted_step(const GenSpec& spec, int dialect, Rng& rng) {
  const TokenLayout l = spec.layout();
  const int len = static_cast<int>(uniform_int(rng, spec.step_len_min, spec.step_len_max));
  TokenSeq step(len);
  for (Token& t : step) {
    if (bernoulli(rng, spec.glitch_rate))
      t = static_cast<Token>(uniform_int(rng, l.glitch_lo, l.glitch_hi - 1));
    else
      t = l.step_lo + static_cast<Token>(categorical(rng, spec.dialects[dialect].step_probs));
  }
  return step;
}

// Core constructor used by both the flat and tuple builders; the answer is
// supplied so tuple members can share it.
inline SolutionRecord gen_solution_with_answer(const GenSpec& spec, const TokenSeq& problem,
                                               int dialect, bool make_wrong, TokenSeq answer,
                                               Rng& rng) {
  if (dialect < 0 || dialect >= static_cast<int>(spec.dialects.size()))
    throw std::invalid_argument("gen_solution: unknown dialect");
  SolutionRecord rec;
  rec.problem = problem;
  rec.dialect = dialect;
  rec.answer = std::move(answer);
  const int n_steps = static_cast<int>(uniform_int(rng, spec.steps_min, spec.steps_max));
  rec.steps.reserve(n_steps);
  for (int s = 0; s < n_steps; ++s) rec.steps.push_back(gen_step(spec, dialect, rng));
  if (make_wrong) {
    const int err = static_cast<int>(uniform_int(rng, 0, n_steps - 1));
    rec.steps[err] = gen_corrupted_step(spec, dialect, rng);
    rec.gold_error_step = rec.steps[err];
    rec.gold_verdict = Verdict::wrong;
  } else {
    rec.gold_verdict = Verdict::correct;
  }
  return rec;
}

}  // namespace detail

inline SolutionRecord gen_solution(const GenSpec& spec, const TokenSeq& problem, int dialect,
                                   bool make_wrong, Rng& rng) {
  TokenSeq answer = detail::draw_answer(spec, make_wrong, rng);
  return detail::gen_solution_with_answer(spec, problem, dialect, make_wrong, std::move(answer), rng);
}

// Balanced verdict assignment: round(n * wrong_fraction) wrongs, order
// shuffled by the spec seed.
inline std::vector<bool> balanced_wrong_flags(const GenSpec& spec, int n, Rng& rng) {
  const int n_wrong = static_cast<int>(std::llround(spec.wrong_fraction * n));
  std::vector<bool> flags(n, false);
  for (int i = 0; i < n_wrong; ++i) flags[i] = true;
  shuffle(flags, rng);
  return flags;
}

// One-to-many benchmark: spec.n_problems tuples, each with one member per
// dialect sharing problem, answer and verdict. Problems come from the
// benchmark side of the hash split and labels are balanced 1:1.
inline std::vector<SolutionTuple> build_ops_benchmark(const GenSpec& spec) {
  spec.validate();
  if (spec.dialects.size() < 2)
    throw std::invalid_argument("build_ops_benchmark: need at least two dialects");
  Rng top = make_rng(derive_seed(spec.seed, 0x0b5u));
  const std::vector<bool> wrong = balanced_wrong_flags(spec, spec.n_problems, top);
  std::vector<SolutionTuple> tuples;
  tuples.reserve(spec.n_problems);
  for (int i = 0; i < spec.n_problems; ++i) {
    Rng rng = make_rng(derive_seed(spec.seed, 0x0b5u, 1 + static_cast<std::uint64_t>(i)));
    SolutionTuple tup;
    tup.problem = detail::gen_problem_for_split(spec, Split::benchmark, rng);
    tup.shared_verdict = wrong[i] ? Verdict::wrong : Verdict::correct;
    tup.shared_answer = detail::draw_answer(spec, wrong[i], rng);
    for (std::size_t d = 0; d < spec.dialects.size(); ++d) {
      Rng member_rng = make_rng(derive_seed(spec.seed, 0x0b5u, 1 + static_cast<std::uint64_t>(i), d + 1));
      tup.solutions.push_back(detail::gen_solution_with_answer(
          spec, tup.problem, static_cast<int>(d), wrong[i], tup.shared_answer, member_rng));
    }
    validate_tuple(tup);
    tuples.push_back(std::move(tup));
  }
  return tuples;
}

// Flat training set of spec.n_problems records, balanced over dialect x
// label (any remainder is spread round-robin with labels alternating, so the
// label gap never exceeds one). Problems come from the train side.
inline std::vector<SolutionRecord> build_train_set(const GenSpec& spec) {
  spec.validate();
  const int n = spec.n_problems;
  const int n_dialects = static_cast<int>(spec.dialects.size());
  std::vector<std::pair<int, bool>> cells;  // (dialect, wrong)
  const int per_cell = n / (2 * n_dialects);
  for (int d = 0; d < n_dialects; ++d)
    for (int w = 0; w < 2; ++w)
      for (int k = 0; k < per_cell; ++k) cells.emplace_back(d, w == 1);
  int leftover = n - static_cast<int>(cells.size());
  for (int i = 0; leftover > 0; ++i, --leftover) cells.emplace_back(i / 2 % n_dialects, i % 2 == 1);

  std::vector<SolutionRecord> records;
  records.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(derive_seed(spec.seed, 0x7245u, static_cast<std::uint64_t>(i)));
    const auto [dialect, wrong] = cells[i];
    const TokenSeq problem = detail::gen_problem_for_split(spec, Split::train, rng);
    records.push_back(gen_solution(spec, problem, dialect, wrong, rng));
    validate_record(records.back());
  }
  Rng order = make_rng(derive_seed(spec.seed, 0x7245u, 0xffffffffULL));
  shuffle(records, order);
  return records;
}

// Pretraining corpus: one sequence per record, `prompt + demonstration
// critique`, with dialects drawn from pretrain_dialect_weights (dialect 0
// dominant by default) and demonstration verdicts drawn from the DemoBias
// table. The demonstrated error step is the gold one when the solution is
// actually wrong, otherwise a randomly accused real step.
inline std::vector<PretrainExample> build_pretrain_corpus(const GenSpec& spec) {
  spec.validate();
  std::vector<double> weights = spec.pretrain_dialect_weights;
  if (weights.empty()) {
    weights.assign(spec.dialects.size(), 0.0);
    if (spec.dialects.size() == 1) {
      weights[0] = 1.0;
    } else {
      weights[0] = 0.85;
      for (std::size_t d = 1; d < weights.size(); ++d)
        weights[d] = 0.15 / static_cast<double>(weights.size() - 1);
    }
  }

  Rng top = make_rng(derive_seed(spec.seed, 0x9e7au));
  const std::vector<bool> wrong_flags = balanced_wrong_flags(spec, spec.n_problems, top);

  std::vector<PretrainExample> corpus;
  corpus.reserve(spec.n_problems);
  for (int i = 0; i < spec.n_problems; ++i) {
    Rng rng = make_rng(derive_seed(spec.seed, 0x9e7au, 1 + static_cast<std::uint64_t>(i)));
    const int dialect = static_cast<int>(categorical(rng, weights));
    const bool wrong = wrong_flags[i];
    const TokenSeq problem = detail::gen_problem_for_split(spec, Split::train, rng);
    const SolutionRecord rec = gen_solution(spec, problem, dialect, wrong, rng);

    const DemoBias& b = spec.demo_bias;
    const bool self = dialect == 0;
    const double p_say_correct = self ? (wrong ? b.self_wrong : b.self_correct)
                                      : (wrong ? b.other_wrong : b.other_correct);
    TokenSeq demo;
    if (bernoulli(rng, p_say_correct)) {
      demo = {kVerdictCorrectTok, kEos};
    } else {
      demo.push_back(kVerdictWrongTok);
      const TokenSeq& accused =
          rec.gold_error_step ? *rec.gold_error_step
                              : rec.steps[static_cast<std::size_t>(
                                    uniform_int(rng, 0, static_cast<std::int64_t>(rec.steps.size()) - 1))];
      demo.insert(demo.end(), accused.begin(), accused.end());
      demo.push_back(kEos);
    }

    PretrainExample ex;
    ex.tokens = encode_prompt(rec);
    ex.prefix_len = static_cast<int>(rec.problem.size()) + 1;  // loss starts at the first step token
    ex.tokens.insert(ex.tokens.end(), demo.begin(), demo.end());
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

inline std::vector<SolutionRecord> flatten_tuples(const std::vector<SolutionTuple>& tuples) {
  std::vector<SolutionRecord> records;
  for (const auto& tup : tuples)
    records.insert(records.end(), tup.solutions.begin(), tup.solutions.end());
  return records;
}

// Cross-check of the hash split; errors if any problem appears on both sides.
inline void check_disjoint_problems(const std::vector<SolutionRecord>& train,
                                    const std::vector<SolutionTuple>& benchmark) {
  std::set<std::uint64_t> train_hashes;
  for (const auto& rec : train) train_hashes.insert(hash_tokens(rec.problem));
  for (const auto& tup : benchmark)
    if (train_hashes.count(hash_tokens(tup.problem)))
      throw std::runtime_error("train/benchmark problem overlap detected");
}

}  // namespace ppxgrpo

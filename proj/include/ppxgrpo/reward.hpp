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
#include <map>
#include <optional>
#include <stdexcept>

#include "ppxgrpo/core.hpp"

// Rule-based reward for critiques.
//
//   format reward  r_f : 0.1 if the output parses, else 0
//   answer reward  r_a : 0.8 for agreeing that a correct solution is correct;
//                        0.6 + F1(predicted error step, gold error step)
//                        rounded to one decimal for diagnosing a wrong one;
//                        0 for a wrong or missing verdict
//   total          r   = r_f + r_a, in [0, 1.7]
//
// Every component lives on a tenths grid, so the arithmetic is done in
// integer tenths and converted to double once. That keeps identities such as
// r = r_f + r_a and r <= 1.7 exact.

namespace ppxgrpo {

struct RewardBreakdown {
  double r_f = 0;
  double r_a = 0;
  double r = 0;
  double f1_raw = 0;      // unrounded multiset F1 (wrong/wrong branch only)
  double f1_rounded = 0;  // F1 rounded half-away-from-zero to one decimal
};

namespace detail {

// Multiset overlap = sum over token ids of min(count in pred, count in gold).
inline long long multiset_overlap(const TokenSeq& pred, const TokenSeq& gold) {
  std::map<Token, long long> counts;
  for (Token t : gold) ++counts[t];
  long long overlap = 0;
  for (Token t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

// round(10 * 2o/(m+n)) with half rounded away from zero, in exact integer
// arithmetic (all quantities nonnegative).
inline int f1_tenths(long long overlap, long long pred_size, long long gold_size) {
  if (overlap == 0) return 0;
  const long long denom = pred_size + gold_size;
  return static_cast<int>((40 * overlap + denom) / (2 * denom));
}

}  // namespace detail

inline double format_reward(const CritiqueRecord& crit) {
  return crit.format_ok ? 0.1 : 0.0;
}

// Multiset token F1 between predicted and gold first-error steps. For
// multisets 2PR/(P+R) reduces to 2*overlap/(|pred|+|gold|).
inline double token_f1(const TokenSeq& pred, const TokenSeq& gold) {
  if (gold.empty()) throw std::invalid_argument("token_f1: gold step must be nonempty");
  if (pred.empty()) return 0.0;
  const long long overlap = detail::multiset_overlap(pred, gold);
  return 2.0 * static_cast<double>(overlap) /
         static_cast<double>(pred.size() + gold.size());
}

inline RewardBreakdown total_reward(Verdict v_star, const std::optional<TokenSeq>& e_star,
                                    const CritiqueRecord& crit) {
  if ((v_star == Verdict::wrong) != e_star.has_value())
    throw std::invalid_argument("total_reward: gold error step must be present iff gold verdict is wrong");

  const int fmt_tenths = crit.format_ok ? 1 : 0;
  int ans_tenths = 0;
  double f1_raw = 0;
  int f1_t = 0;

  if (crit.verdict.has_value()) {
    if (v_star == Verdict::correct && *crit.verdict == Verdict::correct) {
      ans_tenths = 8;
    } else if (v_star == Verdict::wrong && *crit.verdict == Verdict::wrong) {
      const TokenSeq& gold = *e_star;
      if (crit.predicted_error && !crit.predicted_error->empty()) {
        const TokenSeq& pred = *crit.predicted_error;
        const long long overlap = detail::multiset_overlap(pred, gold);
        f1_raw = 2.0 * static_cast<double>(overlap) /
                 static_cast<double>(pred.size() + gold.size());
        f1_t = detail::f1_tenths(overlap, static_cast<long long>(pred.size()),
                                 static_cast<long long>(gold.size()));
      }
      ans_tenths = 6 + f1_t;  // missing prediction still earns the verdict credit
    }
  }

  RewardBreakdown b;
  b.r_f = fmt_tenths / 10.0;
  b.r_a = ans_tenths / 10.0;
  b.r = (fmt_tenths + ans_tenths) / 10.0;
  b.f1_raw = f1_raw;
  b.f1_rounded = f1_t / 10.0;
  return b;
}

inline double answer_reward(Verdict v_star, const std::optional<TokenSeq>& e_star,
                            const CritiqueRecord& crit) {
  return total_reward(v_star, e_star, crit).r_a;
}

}  // namespace ppxgrpo

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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Domain types shared by every module: the token alphabet, solution and
// critique records, and the critique micro-grammar.
//
// Critiques are sequences over a small integer vocabulary. Four control ids
// are reserved; everything from kFirstContent up is content. The critique
// grammar is exactly
//
//   output := 'C' EOS | 'W' step_token+ EOS
//
// i.e. a verdict marker, then (only for a 'wrong' verdict) the tokens of the
// predicted first erroneous step, then the terminator.

namespace ppxgrpo {

inline constexpr const char* kVersion = "0.1.0";

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

inline constexpr Token kEos = 0;
inline constexpr Token kVerdictCorrectTok = 1;  // 'C'
inline constexpr Token kVerdictWrongTok = 2;    // 'W'
inline constexpr Token kSep = 3;                // step / field separator
inline constexpr Token kFirstContent = 4;
inline constexpr int kDefaultVocabSize = 64;

// Encoding limits of the toy setup.
inline constexpr std::size_t kMaxPromptTokens = 128;
inline constexpr std::size_t kMaxCritiqueTokens = 64;

inline bool is_content_token(Token t) { return t >= kFirstContent; }

enum class Verdict { correct, wrong };

inline const char* verdict_name(Verdict v) {
  return v == Verdict::correct ? "correct" : "wrong";
}

inline Verdict verdict_from_name(const std::string& s) {
  if (s == "correct") return Verdict::correct;
  if (s == "wrong") return Verdict::wrong;
  throw std::invalid_argument("unknown verdict: " + s);
}

// Dialects are numbered; on disk they are letter tags "A", "B", ...
inline std::string dialect_tag(int index) {
  if (index < 0 || index >= 26) throw std::invalid_argument("dialect index out of range");
  return std::string(1, static_cast<char>('A' + index));
}

inline int dialect_from_tag(const std::string& tag) {
  if (tag.size() != 1 || tag[0] < 'A' || tag[0] > 'Z')
    throw std::invalid_argument("bad dialect tag: " + tag);
  return tag[0] - 'A';
}

// One problem-solution pair with its gold annotation.
struct SolutionRecord {
  TokenSeq problem;
  std::vector<TokenSeq> steps;
  TokenSeq answer;
  Verdict gold_verdict = Verdict::correct;
  std::optional<TokenSeq> gold_error_step;
  int dialect = 0;
  // Perplexity of the solution under the reference policy, cached once the
  // reference policy exists.
  std::optional<double> ppl_ref;
};

// A sampled critique: the raw tokens plus the parse of the micro-grammar.
// Parse failure is a value (format_ok = false), never an exception.
struct CritiqueRecord {
  TokenSeq tokens;
  std::optional<Verdict> verdict;
  std::optional<TokenSeq> predicted_error;
  // Step-by-step commentary span. Carried for schema completeness; the
  // micro-grammar has no commentary production, so parses leave it empty and
  // nothing ever grades it.
  std::optional<TokenSeq> commentary_span;
  bool format_ok = false;
};

// Solutions from several dialects to one problem, sharing answer and verdict.
struct SolutionTuple {
  TokenSeq problem;
  std::vector<SolutionRecord> solutions;
  TokenSeq shared_answer;
  Verdict shared_verdict = Verdict::correct;
};

// One reference-policy pretraining sequence: full token stream plus the
// length of the conditioning prefix that is excluded from the loss.
struct PretrainExample {
  TokenSeq tokens;
  int prefix_len = 0;
};

inline void validate_record(const SolutionRecord& rec) {
  const bool wrong = rec.gold_verdict == Verdict::wrong;
  if (wrong != rec.gold_error_step.has_value())
    throw std::invalid_argument("record invariant violated: gold_verdict=wrong iff gold_error_step present");
  if (rec.steps.empty()) throw std::invalid_argument("record has no steps");
  for (const auto& s : rec.steps)
    if (s.empty()) throw std::invalid_argument("record has an empty step");
  if (rec.ppl_ref && !(*rec.ppl_ref > 1.0))
    throw std::invalid_argument("ppl_ref must be > 1 when present");
}

inline void validate_tuple(const SolutionTuple& tup) {
  if (tup.solutions.size() < 2)
    throw std::invalid_argument("tuple needs at least two member solutions");
  for (const auto& rec : tup.solutions) {
    validate_record(rec);
    if (rec.problem != tup.problem || rec.answer != tup.shared_answer ||
        rec.gold_verdict != tup.shared_verdict)
      throw std::invalid_argument("tuple member disagrees with shared fields");
  }
}

// Parses a critique token sequence against the grammar. Any deviation
// (missing EOS, trailing tokens, steps after 'C', control tokens inside the
// step span) yields format_ok = false with no verdict.
inline CritiqueRecord parse_critique(const TokenSeq& tokens) {
  if (tokens.size() > kMaxCritiqueTokens)
    throw std::invalid_argument("critique exceeds maximum output length");
  CritiqueRecord crit;
  crit.tokens = tokens;
  if (tokens.size() < 2 || tokens.back() != kEos) return crit;
  if (tokens.front() == kVerdictCorrectTok) {
    if (tokens.size() != 2) return crit;
    crit.verdict = Verdict::correct;
    crit.format_ok = true;
    return crit;
  }
  if (tokens.front() == kVerdictWrongTok) {
    if (tokens.size() < 3) return crit;  // needs at least one step token
    TokenSeq steps(tokens.begin() + 1, tokens.end() - 1);
    for (Token t : steps)
      if (!is_content_token(t)) return crit;
    crit.verdict = Verdict::wrong;
    crit.predicted_error = std::move(steps);
    crit.format_ok = true;
    return crit;
  }
  return crit;
}

// Rebuilds the token sequence from the parsed fields; for unparsed records
// the raw tokens are returned as-is. Right inverse of parse_critique on
// well-formed input.
inline TokenSeq serialize_critique(const CritiqueRecord& crit) {
  if (!crit.format_ok) return crit.tokens;
  TokenSeq out;
  if (*crit.verdict == Verdict::correct) {
    out = {kVerdictCorrectTok, kEos};
  } else {
    out.push_back(kVerdictWrongTok);
    out.insert(out.end(), crit.predicted_error->begin(), crit.predicted_error->end());
    out.push_back(kEos);
  }
  return out;
}

// The prompt layout: problem SEP | step SEP ... step SEP | answer SEP.
// `solution` is the span perplexity is measured over.
struct PromptParts {
  TokenSeq prefix;    // problem + SEP
  TokenSeq solution;  // step tokens, each step followed by SEP
  TokenSeq tail;      // answer + SEP
};

inline PromptParts encode_prompt_parts(const SolutionRecord& rec) {
  if (rec.steps.empty()) throw std::invalid_argument("encode_prompt: record has no steps");
  for (const auto& s : rec.steps)
    if (s.empty()) throw std::invalid_argument("encode_prompt: empty step");
  PromptParts parts;
  parts.prefix = rec.problem;
  parts.prefix.push_back(kSep);
  for (const auto& step : rec.steps) {
    parts.solution.insert(parts.solution.end(), step.begin(), step.end());
    parts.solution.push_back(kSep);
  }
  parts.tail = rec.answer;
  parts.tail.push_back(kSep);
  const std::size_t total = parts.prefix.size() + parts.solution.size() + parts.tail.size();
  if (total > kMaxPromptTokens)
    throw std::length_error("encode_prompt: record exceeds context window");
  return parts;
}

// Deterministic conditioning context for the critic policy.
inline TokenSeq encode_prompt(const SolutionRecord& rec) {
  PromptParts parts = encode_prompt_parts(rec);
  TokenSeq out = std::move(parts.prefix);
  out.insert(out.end(), parts.solution.begin(), parts.solution.end());
  out.insert(out.end(), parts.tail.begin(), parts.tail.end());
  return out;
}

}  // namespace ppxgrpo

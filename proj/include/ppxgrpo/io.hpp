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

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppxgrpo/core.hpp"

// JSONL serialization of the record types: one JSON object per line, token
// sequences as integer arrays, verdicts as "correct"/"wrong", dialects as
// letter tags. Record invariants are checked on every load.

namespace ppxgrpo {

using json = nlohmann::json;

inline void to_json(json& j, const SolutionRecord& rec) {
  j = json{{"problem", rec.problem},
           {"steps", rec.steps},
           {"answer", rec.answer},
           {"gold_verdict", verdict_name(rec.gold_verdict)},
           {"dialect", dialect_tag(rec.dialect)}};
  if (rec.gold_error_step) j["gold_error_step"] = *rec.gold_error_step;
  if (rec.ppl_ref) j["ppl_ref"] = *rec.ppl_ref;
}

inline void from_json(const json& j, SolutionRecord& rec) {
  rec = SolutionRecord{};
  j.at("problem").get_to(rec.problem);
  j.at("steps").get_to(rec.steps);
  j.at("answer").get_to(rec.answer);
  rec.gold_verdict = verdict_from_name(j.at("gold_verdict").get<std::string>());
  rec.dialect = dialect_from_tag(j.at("dialect").get<std::string>());
  if (j.contains("gold_error_step")) rec.gold_error_step = j.at("gold_error_step").get<TokenSeq>();
  if (j.contains("ppl_ref")) rec.ppl_ref = j.at("ppl_ref").get<double>();
  validate_record(rec);
}

inline void to_json(json& j, const SolutionTuple& tup) {
  j = json{{"problem", tup.problem},
           {"solutions", tup.solutions},
           {"shared_answer", tup.shared_answer},
           {"shared_verdict", verdict_name(tup.shared_verdict)}};
}

inline void from_json(const json& j, SolutionTuple& tup) {
  tup = SolutionTuple{};
  j.at("problem").get_to(tup.problem);
  j.at("solutions").get_to(tup.solutions);
  j.at("shared_answer").get_to(tup.shared_answer);
  tup.shared_verdict = verdict_from_name(j.at("shared_verdict").get<std::string>());
  validate_tuple(tup);
}

inline void to_json(json& j, const PretrainExample& ex) {
  j = json{{"tokens", ex.tokens}, {"prefix_len", ex.prefix_len}};
}

inline void from_json(const json& j, PretrainExample& ex) {
  ex = PretrainExample{};
  j.at("tokens").get_to(ex.tokens);
  j.at("prefix_len").get_to(ex.prefix_len);
  if (ex.prefix_len < 0 || ex.prefix_len > static_cast<int>(ex.tokens.size()))
    throw std::invalid_argument("pretrain example: prefix_len out of range");
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const T& item : items) {
    json j = item;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<T> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      items.push_back(json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

inline std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace ppxgrpo

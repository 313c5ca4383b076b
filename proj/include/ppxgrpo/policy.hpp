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
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppxgrpo/core.hpp"
#include "ppxgrpo/rng.hpp"

// The toy autoregressive critic policy: a fixed-window n-gram MLP
//
//   context (last k tokens, left-padded with SEP)
//     -> concatenated embeddings x  (k*d)
//     -> z = tanh(W1^T x)           (h)
//     -> logits = W2^T z            (V)
//     -> log-softmax
//
// in double precision with hand-written backprop. The architecture is small
// enough that every gradient is cheap to verify by finite differences, which
// the test suite does on every run.

namespace ppxgrpo {

struct PolicyDims {
  int vocab = kDefaultVocabSize;
  int embed = 16;
  int hidden = 64;
  int window = 8;
  bool operator==(const PolicyDims&) const = default;
  std::size_t embedding_size() const { return static_cast<std::size_t>(vocab) * embed; }
  std::size_t hidden_size() const { return static_cast<std::size_t>(window) * embed * hidden; }
  std::size_t output_size() const { return static_cast<std::size_t>(hidden) * vocab; }
  std::size_t total() const { return embedding_size() + hidden_size() + output_size(); }
};

struct PolicyParams {
  PolicyDims dims;
  std::vector<double> embedding;  // vocab x embed, row-major
  std::vector<double> hidden;     // (window*embed) x hidden, row-major
  std::vector<double> output;     // hidden x vocab, row-major
};

// Gradient buffer with the same shapes as PolicyParams.
struct PolicyGrad {
  PolicyDims dims;
  std::vector<double> embedding;
  std::vector<double> hidden;
  std::vector<double> output;

  explicit PolicyGrad(const PolicyDims& d)
      : dims(d),
        embedding(d.embedding_size(), 0.0),
        hidden(d.hidden_size(), 0.0),
        output(d.output_size(), 0.0) {}

  void zero() {
    std::fill(embedding.begin(), embedding.end(), 0.0);
    std::fill(hidden.begin(), hidden.end(), 0.0);
    std::fill(output.begin(), output.end(), 0.0);
  }
};

inline PolicyParams zero_params(const PolicyDims& dims) {
  PolicyParams p;
  p.dims = dims;
  p.embedding.assign(dims.embedding_size(), 0.0);
  p.hidden.assign(dims.hidden_size(), 0.0);
  p.output.assign(dims.output_size(), 0.0);
  return p;
}

inline PolicyParams random_params(const PolicyDims& dims, std::uint64_t seed, double scale = 0.1) {
  PolicyParams p = zero_params(dims);
  Rng rng = make_rng(seed);
  for (double& v : p.embedding) v = scale * gaussian(rng);
  for (double& v : p.hidden) v = scale * gaussian(rng);
  for (double& v : p.output) v = scale * gaussian(rng);
  return p;
}

// params += step * grad
inline void apply_gradient(PolicyParams& params, double step, const PolicyGrad& grad) {
  if (!(params.dims == grad.dims)) throw std::invalid_argument("apply_gradient: shape mismatch");
  for (std::size_t i = 0; i < params.embedding.size(); ++i) params.embedding[i] += step * grad.embedding[i];
  for (std::size_t i = 0; i < params.hidden.size(); ++i) params.hidden[i] += step * grad.hidden[i];
  for (std::size_t i = 0; i < params.output.size(); ++i) params.output[i] += step * grad.output[i];
}

// Flat parameter view, used by the finite-difference checks to address a
// single coordinate.
inline double* param_coord(PolicyParams& p, std::size_t index) {
  if (index < p.embedding.size()) return &p.embedding[index];
  index -= p.embedding.size();
  if (index < p.hidden.size()) return &p.hidden[index];
  index -= p.hidden.size();
  if (index < p.output.size()) return &p.output[index];
  throw std::out_of_range("param_coord");
}

inline double grad_coord(const PolicyGrad& g, std::size_t index) {
  if (index < g.embedding.size()) return g.embedding[index];
  index -= g.embedding.size();
  if (index < g.hidden.size()) return g.hidden[index];
  index -= g.hidden.size();
  if (index < g.output.size()) return g.output[index];
  throw std::out_of_range("grad_coord");
}

namespace detail {

// Scratch buffers for one forward/backward position; reused across positions
// in the hot loops.
struct PolicyWorkspace {
  std::vector<Token> window;
  std::vector<double> x;     // k*d
  std::vector<double> z;     // h
  std::vector<double> logp;  // V
  std::vector<double> dlogit, dz, dx;

  void resize(const PolicyDims& d) {
    window.resize(d.window);
    x.resize(static_cast<std::size_t>(d.window) * d.embed);
    z.resize(d.hidden);
    logp.resize(d.vocab);
    dlogit.resize(d.vocab);
    dz.resize(d.hidden);
    dx.resize(static_cast<std::size_t>(d.window) * d.embed);
  }
};

inline void fill_window(std::span<const Token> context, int k, std::vector<Token>& window) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(context.size());
  for (int i = 0; i < k; ++i) {
    const std::ptrdiff_t idx = n - k + i;
    window[i] = idx >= 0 ? context[static_cast<std::size_t>(idx)] : kSep;
  }
}

// Forward pass over the last `window` tokens of `context`; leaves x, z and
// the log-softmax in the workspace.
inline void forward(const PolicyParams& p, std::span<const Token> context, PolicyWorkspace& ws) {
  const PolicyDims& d = p.dims;
  fill_window(context, d.window, ws.window);
  for (int i = 0; i < d.window; ++i) {
    const Token t = ws.window[i];
    if (t < 0 || t >= d.vocab) throw std::out_of_range("forward: token id outside vocabulary");
    const double* row = &p.embedding[static_cast<std::size_t>(t) * d.embed];
    std::memcpy(&ws.x[static_cast<std::size_t>(i) * d.embed], row, sizeof(double) * d.embed);
  }
  const int kd = d.window * d.embed;
  for (int m = 0; m < d.hidden; ++m) ws.z[m] = 0.0;
  for (int i = 0; i < kd; ++i) {
    const double xi = ws.x[i];
    if (xi == 0.0) continue;
    const double* w_row = &p.hidden[static_cast<std::size_t>(i) * d.hidden];
    for (int m = 0; m < d.hidden; ++m) ws.z[m] += xi * w_row[m];
  }
  for (int m = 0; m < d.hidden; ++m) ws.z[m] = std::tanh(ws.z[m]);

  double max_logit = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < d.vocab; ++v) ws.logp[v] = 0.0;
  for (int m = 0; m < d.hidden; ++m) {
    const double zm = ws.z[m];
    if (zm == 0.0) continue;
    const double* w_row = &p.output[static_cast<std::size_t>(m) * d.vocab];
    for (int v = 0; v < d.vocab; ++v) ws.logp[v] += zm * w_row[v];
  }
  for (int v = 0; v < d.vocab; ++v) max_logit = std::max(max_logit, ws.logp[v]);
  double sum = 0.0;
  for (int v = 0; v < d.vocab; ++v) sum += std::exp(ws.logp[v] - max_logit);
  const double lse = max_logit + std::log(sum);
  for (int v = 0; v < d.vocab; ++v) ws.logp[v] -= lse;
}

// Accumulates scale * d(log p(target))/d(params) for the position currently
// held in the workspace.
inline void backward(const PolicyParams& p, Token target, double scale, PolicyWorkspace& ws,
                     PolicyGrad& grad) {
  const PolicyDims& d = p.dims;
  for (int v = 0; v < d.vocab; ++v) {
    const double indicator = v == target ? 1.0 : 0.0;
    ws.dlogit[v] = scale * (indicator - std::exp(ws.logp[v]));
  }
  for (int m = 0; m < d.hidden; ++m) {
    const double zm = ws.z[m];
    double* gw_row = &grad.output[static_cast<std::size_t>(m) * d.vocab];
    const double* w_row = &p.output[static_cast<std::size_t>(m) * d.vocab];
    double acc = 0.0;
    for (int v = 0; v < d.vocab; ++v) {
      gw_row[v] += zm * ws.dlogit[v];
      acc += w_row[v] * ws.dlogit[v];
    }
    ws.dz[m] = acc * (1.0 - zm * zm);  // through tanh
  }
  const int kd = d.window * d.embed;
  for (int i = 0; i < kd; ++i) {
    const double xi = ws.x[i];
    double* gw_row = &grad.hidden[static_cast<std::size_t>(i) * d.hidden];
    const double* w_row = &p.hidden[static_cast<std::size_t>(i) * d.hidden];
    double acc = 0.0;
    for (int m = 0; m < d.hidden; ++m) {
      gw_row[m] += xi * ws.dz[m];
      acc += w_row[m] * ws.dz[m];
    }
    ws.dx[i] = acc;
  }
  for (int i = 0; i < d.window; ++i) {
    double* ge_row = &grad.embedding[static_cast<std::size_t>(ws.window[i]) * d.embed];
    const double* dx_row = &ws.dx[static_cast<std::size_t>(i) * d.embed];
    for (int j = 0; j < d.embed; ++j) ge_row[j] += dx_row[j];
  }
}

}  // namespace detail

// Next-token log-probabilities given a context. The context must be
// nonempty; shorter-than-window contexts are left-padded with SEP.
inline std::vector<double> token_log_probs(const PolicyParams& params,
                                           std::span<const Token> context) {
  if (context.empty()) throw std::invalid_argument("token_log_probs: empty context");
  detail::PolicyWorkspace ws;
  ws.resize(params.dims);
  detail::forward(params, context, ws);
  return ws.logp;
}

// Cached activations for every position of an output sequence; what backprop
// needs, nothing more.
struct ForwardTrace {
  struct Position {
    std::vector<Token> window;
    std::vector<double> x, z, logp;
  };
  std::vector<Position> positions;
};

inline ForwardTrace forward_trace(const PolicyParams& params, const TokenSeq& prompt,
                                  const TokenSeq& output) {
  if (prompt.empty()) throw std::invalid_argument("forward_trace: empty prompt");
  ForwardTrace trace;
  trace.positions.reserve(output.size());
  detail::PolicyWorkspace ws;
  ws.resize(params.dims);
  TokenSeq ctx = prompt;
  ctx.reserve(prompt.size() + output.size());
  for (Token t : output) {
    detail::forward(params, ctx, ws);
    trace.positions.push_back({ws.window, ws.x, ws.z, ws.logp});
    ctx.push_back(t);
  }
  return trace;
}

// Sum of per-token log-probabilities of `output` conditioned on the prompt
// and the preceding output tokens.
inline double sequence_log_prob(const PolicyParams& params, const TokenSeq& prompt,
                                const TokenSeq& output) {
  if (prompt.empty()) throw std::invalid_argument("sequence_log_prob: empty prompt");
  detail::PolicyWorkspace ws;
  ws.resize(params.dims);
  TokenSeq ctx = prompt;
  ctx.reserve(prompt.size() + output.size());
  double total = 0.0;
  for (Token t : output) {
    if (t < 0 || t >= params.dims.vocab) throw std::out_of_range("sequence_log_prob: bad token");
    detail::forward(params, ctx, ws);
    total += ws.logp[t];
    ctx.push_back(t);
  }
  return total;
}

// grad += per-token scale * d(log pi(output|prompt))/d(params), token scales
// given individually.
inline void accumulate_log_prob_grad(const PolicyParams& params, const TokenSeq& prompt,
                                     const TokenSeq& output, std::span<const double> token_scales,
                                     PolicyGrad& grad) {
  if (!(params.dims == grad.dims))
    throw std::invalid_argument("accumulate_log_prob_grad: shape mismatch");
  if (token_scales.size() != output.size())
    throw std::invalid_argument("accumulate_log_prob_grad: scale count mismatch");
  if (prompt.empty()) throw std::invalid_argument("accumulate_log_prob_grad: empty prompt");
  detail::PolicyWorkspace ws;
  ws.resize(params.dims);
  TokenSeq ctx = prompt;
  ctx.reserve(prompt.size() + output.size());
  for (std::size_t t = 0; t < output.size(); ++t) {
    detail::forward(params, ctx, ws);
    if (token_scales[t] != 0.0) detail::backward(params, output[t], token_scales[t], ws, grad);
    ctx.push_back(output[t]);
  }
}

// grad += scale * d(log pi(output|prompt))/d(params)
inline void accumulate_log_prob_grad(const PolicyParams& params, const TokenSeq& prompt,
                                     const TokenSeq& output, double scale, PolicyGrad& grad) {
  std::vector<double> scales(output.size(), scale);
  accumulate_log_prob_grad(params, prompt, output, scales, grad);
}

struct SampledCritique {
  CritiqueRecord critique;
  std::vector<double> log_probs;  // log pi(token) at temperature 1, per emitted token
};

// Autoregressive sampling until EOS or max_len tokens. temperature = 0 means
// greedy argmax (ties to the lowest token id). Truncated outputs simply fail
// to parse.
inline SampledCritique sample_critique_with_log_probs(const PolicyParams& params,
                                                      const TokenSeq& prompt, double temperature,
                                                      Rng& rng,
                                                      std::size_t max_len = kMaxCritiqueTokens) {
  if (temperature < 0) throw std::invalid_argument("sample_critique: negative temperature");
  if (prompt.empty()) throw std::invalid_argument("sample_critique: empty prompt");
  detail::PolicyWorkspace ws;
  ws.resize(params.dims);
  const int V = params.dims.vocab;
  std::vector<double> probs(V);
  TokenSeq ctx = prompt;
  SampledCritique out;
  for (std::size_t step = 0; step < max_len; ++step) {
    detail::forward(params, ctx, ws);
    Token chosen = 0;
    if (temperature == 0.0) {
      for (Token v = 1; v < V; ++v)
        if (ws.logp[v] > ws.logp[chosen]) chosen = v;
    } else {
      double max_scaled = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < V; ++v) max_scaled = std::max(max_scaled, ws.logp[v] / temperature);
      double total = 0.0;
      for (int v = 0; v < V; ++v) {
        probs[v] = std::exp(ws.logp[v] / temperature - max_scaled);
        total += probs[v];
      }
      const double u = uniform_unit(rng) * total;
      double acc = 0.0;
      chosen = V - 1;
      for (int v = 0; v < V; ++v) {
        acc += probs[v];
        if (u < acc) {
          chosen = v;
          break;
        }
      }
    }
    out.critique.tokens.push_back(chosen);
    out.log_probs.push_back(ws.logp[chosen]);
    ctx.push_back(chosen);
    if (chosen == kEos) break;
  }
  const TokenSeq raw = out.critique.tokens;
  out.critique = parse_critique(raw);
  return out;
}

inline CritiqueRecord sample_critique(const PolicyParams& params, const TokenSeq& prompt,
                                      double temperature, Rng& rng,
                                      std::size_t max_len = kMaxCritiqueTokens) {
  return sample_critique_with_log_probs(params, prompt, temperature, rng, max_len).critique;
}

// exp of the mean negative log-likelihood of the solution span (steps plus
// their separators) conditioned on the problem.
inline double perplexity(const PolicyParams& params, const SolutionRecord& rec) {
  const PromptParts parts = encode_prompt_parts(rec);
  const double logp = sequence_log_prob(params, parts.prefix, parts.solution);
  return std::exp(-logp / static_cast<double>(parts.solution.size()));
}

// Maximum-likelihood pretraining of the reference policy: plain minibatch
// SGD on the mean per-token NLL of each sequence's continuation. If an epoch
// fails to improve the corpus NLL the step size is halved.
inline PolicyParams mle_pretrain(PolicyParams params, const std::vector<PretrainExample>& corpus,
                                 int epochs, double lr, std::uint64_t seed,
                                 std::vector<double>* nll_history = nullptr, int batch_size = 32) {
  if (corpus.empty()) throw std::invalid_argument("mle_pretrain: empty corpus");
  for (const auto& ex : corpus)
    if (ex.prefix_len < 1 || ex.prefix_len >= static_cast<int>(ex.tokens.size()))
      throw std::invalid_argument("mle_pretrain: bad prefix_len");

  const auto corpus_nll = [&](const PolicyParams& p) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : corpus) {
      const TokenSeq prompt(ex.tokens.begin(), ex.tokens.begin() + ex.prefix_len);
      const TokenSeq target(ex.tokens.begin() + ex.prefix_len, ex.tokens.end());
      total -= sequence_log_prob(p, prompt, target);
      tokens += target.size();
    }
    return total / static_cast<double>(tokens);
  };

  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  PolicyGrad grad(params.dims);
  double prev_nll = corpus_nll(params);
  if (nll_history) nll_history->push_back(prev_nll);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      grad.zero();
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < end; ++i) batch_tokens += corpus[order[i]].tokens.size() - corpus[order[i]].prefix_len;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = corpus[order[i]];
        const TokenSeq prompt(ex.tokens.begin(), ex.tokens.begin() + ex.prefix_len);
        const TokenSeq target(ex.tokens.begin() + ex.prefix_len, ex.tokens.end());
        accumulate_log_prob_grad(params, prompt, target, 1.0 / static_cast<double>(batch_tokens), grad);
      }
      apply_gradient(params, lr, grad);  // ascent on mean log-prob
    }
    const double nll = corpus_nll(params);
    if (!std::isfinite(nll)) throw std::runtime_error("mle_pretrain: diverged (NLL not finite)");
    if (nll > prev_nll) lr *= 0.5;
    prev_nll = nll;
    if (nll_history) nll_history->push_back(nll);
  }
  return params;
}

// ---- checkpoints --------------------------------------------------------
//
// Binary tensor dump: magic, format version, shape header, the three weight
// matrices, and an FNV-1a checksum over the payload. Round-trips bit-exactly.

inline constexpr std::uint32_t kCheckpointMagic = 0x50505847;  // "PPXG"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  const auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put_u32(kCheckpointMagic);
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(params.dims.vocab));
  put_u32(static_cast<std::uint32_t>(params.dims.embed));
  put_u32(static_cast<std::uint32_t>(params.dims.hidden));
  put_u32(static_cast<std::uint32_t>(params.dims.window));
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  const auto put_tensor = [&](const std::vector<double>& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    checksum = fnv1a64(t.data(), t.size() * sizeof(double), checksum);
  };
  put_tensor(params.embedding);
  put_tensor(params.hidden);
  put_tensor(params.output);
  put_u64(checksum);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  const auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  if (get_u32() != kCheckpointMagic) throw std::runtime_error("not a policy checkpoint: " + path);
  if (get_u32() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version: " + path);
  PolicyDims dims;
  dims.vocab = static_cast<int>(get_u32());
  dims.embed = static_cast<int>(get_u32());
  dims.hidden = static_cast<int>(get_u32());
  dims.window = static_cast<int>(get_u32());
  if (dims.vocab <= 0 || dims.embed <= 0 || dims.hidden <= 0 || dims.window <= 0)
    throw std::runtime_error("corrupt checkpoint shape header: " + path);
  PolicyParams params = zero_params(dims);
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  const auto get_tensor = [&](std::vector<double>& t) {
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    checksum = fnv1a64(t.data(), t.size() * sizeof(double), checksum);
  };
  get_tensor(params.embedding);
  get_tensor(params.hidden);
  get_tensor(params.output);
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  if (stored != checksum) throw std::runtime_error("checkpoint checksum mismatch: " + path);
  return params;
}

}  // namespace ppxgrpo

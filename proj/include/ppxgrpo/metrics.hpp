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
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppxgrpo/core.hpp"

// Evaluation-preference measurement: confusion rates, the Balance Indicator
// BI = FPR - FNR, perplexity decile binning, OLS regression with an exact
// Student-t p-value, and tercile exploration summaries. All rates are in
// percentage points.

namespace ppxgrpo {

namespace detail {

// Continued-fraction part of the regularized incomplete beta function
// (modified Lentz iteration).
inline double beta_cont_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cont_fraction(a, b, x) / a;
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided p-value of a Student-t statistic with `dof` degrees of freedom:
// P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2).
inline double student_t_two_sided_p(double t, int dof) {
  if (dof < 1) throw std::invalid_argument("student_t_two_sided_p: dof < 1");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return detail::reg_incomplete_beta(dof / 2.0, 0.5, x);
}

// Positive critical value t* with P(|T| >= t*) = alpha (two-sided).
inline double student_t_critical(double alpha, int dof) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha out of (0,1)");
  double lo = 0.0, hi = 1.0;
  while (student_t_two_sided_p(hi, dof) > alpha) hi *= 2.0;  // bracket
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_two_sided_p(mid, dof) > alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct ConfusionRates {
  double fpr = 0;            // % of wrong-labeled solutions judged correct
  double fnr = 0;            // % of correct-labeled solutions judged wrong
  double acc = 0;            // % of all items judged with the gold verdict
  double unparsed_rate = 0;  // % of items with no parseable verdict
  int n = 0;
};

// Unparsed predictions count against accuracy but enter neither the FPR nor
// the FNR numerator (they judged nothing "correct" or "wrong").
inline ConfusionRates confusion_rates(std::span<const std::optional<Verdict>> preds,
                                      std::span<const Verdict> labels) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("confusion_rates: size mismatch");
  int n_wrong = 0, n_correct = 0, fp = 0, fn = 0, hits = 0, unparsed = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool label_wrong = labels[i] == Verdict::wrong;
    (label_wrong ? n_wrong : n_correct)++;
    if (!preds[i].has_value()) {
      ++unparsed;
      continue;
    }
    if (label_wrong && *preds[i] == Verdict::correct) ++fp;
    if (!label_wrong && *preds[i] == Verdict::wrong) ++fn;
    if (*preds[i] == labels[i]) ++hits;
  }
  if (n_wrong == 0)
    throw std::invalid_argument("confusion_rates: no wrong-labeled items (FPR denominator empty)");
  if (n_correct == 0)
    throw std::invalid_argument("confusion_rates: no correct-labeled items (FNR denominator empty)");
  ConfusionRates r;
  r.n = static_cast<int>(labels.size());
  r.fpr = 100.0 * fp / n_wrong;
  r.fnr = 100.0 * fn / n_correct;
  r.acc = 100.0 * hits / r.n;
  r.unparsed_rate = 100.0 * unparsed / r.n;
  return r;
}

inline double balance_indicator(double fpr, double fnr) { return fpr - fnr; }

// Contiguous [begin, end) rank ranges splitting n items into k quantile
// slices, boundaries at floor(i*n/k).
inline std::vector<std::pair<std::size_t, std::size_t>> rank_slices(std::size_t n, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> slices;
  slices.reserve(k);
  for (std::size_t i = 0; i < k; ++i) slices.emplace_back(i * n / k, (i + 1) * n / k);
  return slices;
}

struct PplObservation {
  double ppl = 0;
  std::optional<Verdict> pred;
  Verdict label = Verdict::correct;
};

struct DecileBin {
  double mean_ppl = 0;
  double bi = 0;  // meaningful only when bi_defined
  int count = 0;
  bool bi_defined = false;
};

// Sorts by perplexity (stable, so ties keep input order) and splits into ten
// rank bins. A bin missing one label class has no defined BI.
inline std::vector<DecileBin> decile_bins(const std::vector<PplObservation>& obs) {
  if (obs.size() < 10) throw std::invalid_argument("decile_bins: need at least 10 observations");
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return obs[a].ppl < obs[b].ppl; });
  std::vector<DecileBin> bins;
  for (auto [begin, end] : rank_slices(obs.size(), 10)) {
    DecileBin bin;
    bin.count = static_cast<int>(end - begin);
    int n_wrong = 0, n_correct = 0, fp = 0, fn = 0;
    double ppl_sum = 0;
    for (std::size_t r = begin; r < end; ++r) {
      const PplObservation& o = obs[order[r]];
      ppl_sum += o.ppl;
      const bool label_wrong = o.label == Verdict::wrong;
      (label_wrong ? n_wrong : n_correct)++;
      if (o.pred.has_value()) {
        if (label_wrong && *o.pred == Verdict::correct) ++fp;
        if (!label_wrong && *o.pred == Verdict::wrong) ++fn;
      }
    }
    bin.mean_ppl = ppl_sum / bin.count;
    if (n_wrong > 0 && n_correct > 0) {
      bin.bi = balance_indicator(100.0 * fp / n_wrong, 100.0 * fn / n_correct);
      bin.bi_defined = true;
    }
    bins.push_back(bin);
  }
  return bins;
}

struct CiPoint {
  double x = 0, fit = 0, lo = 0, hi = 0;
};

struct RegressionResult {
  double slope = 0;
  double intercept = 0;
  double pearson_r = 0;
  double p_value = 1;
  double stderr_slope = 0;
  double t_stat = 0;
  int n = 0;
  std::vector<CiPoint> ci95_band;  // 95% CI of the mean response at each input x
};

// Least squares y = a + b*x with Pearson r and the exact two-sided t-test
// p-value for b != 0 (n-2 dof).
inline RegressionResult ols_fit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw std::invalid_argument("ols_fit: size mismatch");
  if (n < 3) throw std::invalid_argument("ols_fit: need at least 3 points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0)) throw std::invalid_argument("ols_fit: x is degenerate (zero variance)");

  RegressionResult res;
  res.n = static_cast<int>(n);
  res.slope = sxy / sxx;
  res.intercept = my - res.slope * mx;
  res.pearson_r = syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;

  const int dof = static_cast<int>(n) - 2;
  const double rss = std::max(0.0, syy - res.slope * sxy);
  const double s2 = rss / dof;
  res.stderr_slope = std::sqrt(s2 / sxx);
  if (res.stderr_slope > 0) {
    res.t_stat = res.slope / res.stderr_slope;
    res.p_value = student_t_two_sided_p(res.t_stat, dof);
  } else {
    // Exact fit: slope 0 on constant y is a non-result, anything else is
    // infinitely significant.
    res.t_stat = res.slope == 0 ? 0 : std::numeric_limits<double>::infinity();
    res.p_value = res.slope == 0 ? 1.0 : 0.0;
  }

  const double tcrit = student_t_critical(0.05, dof);
  res.ci95_band.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CiPoint pt;
    pt.x = x[i];
    pt.fit = res.intercept + res.slope * x[i];
    const double half = tcrit * std::sqrt(s2 * (1.0 / n + (x[i] - mx) * (x[i] - mx) / sxx));
    pt.lo = pt.fit - half;
    pt.hi = pt.fit + half;
    res.ci95_band.push_back(pt);
  }
  return res;
}

struct TercileStat {
  double mean_ppl = 0;
  double frac_pred_correct = 0;
  double frac_pred_wrong = 0;
  double frac_unparsed = 0;
  int count = 0;
};

inline std::array<TercileStat, 3> tercile_stats(const std::vector<PplObservation>& obs) {
  if (obs.size() < 3) throw std::invalid_argument("tercile_stats: need at least 3 observations");
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return obs[a].ppl < obs[b].ppl; });
  std::array<TercileStat, 3> out{};
  const auto slices = rank_slices(obs.size(), 3);
  for (std::size_t t = 0; t < 3; ++t) {
    auto [begin, end] = slices[t];
    TercileStat& ts = out[t];
    ts.count = static_cast<int>(end - begin);
    int c = 0, w = 0, u = 0;
    double ppl_sum = 0;
    for (std::size_t r = begin; r < end; ++r) {
      const PplObservation& o = obs[order[r]];
      ppl_sum += o.ppl;
      if (!o.pred.has_value())
        ++u;
      else if (*o.pred == Verdict::correct)
        ++c;
      else
        ++w;
    }
    ts.mean_ppl = ppl_sum / ts.count;
    ts.frac_pred_correct = static_cast<double>(c) / ts.count;
    ts.frac_pred_wrong = static_cast<double>(w) / ts.count;
    ts.frac_unparsed = static_cast<double>(u) / ts.count;
  }
  return out;
}

struct PreferenceOptions {
  // Fit the trend on the ten decile-bin means (the default) or on raw
  // per-item points with a signed miss indicator as the response.
  bool fit_on_bins = true;
};

struct PreferenceReport {
  ConfusionRates rates;
  double bi = 0;
  std::vector<DecileBin> bins;
  RegressionResult regression;
  std::array<TercileStat, 3> terciles{};
  int n = 0;
};

inline PreferenceReport preference_report(std::span<const std::optional<Verdict>> preds,
                                          std::span<const Verdict> labels,
                                          std::span<const double> ppls,
                                          const PreferenceOptions& opts = {}) {
  if (preds.size() != labels.size() || preds.size() != ppls.size())
    throw std::invalid_argument("preference_report: size mismatch");
  PreferenceReport rep;
  rep.n = static_cast<int>(preds.size());
  rep.rates = confusion_rates(preds, labels);
  rep.bi = balance_indicator(rep.rates.fpr, rep.rates.fnr);

  std::vector<PplObservation> obs(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) obs[i] = {ppls[i], preds[i], labels[i]};
  rep.bins = decile_bins(obs);
  rep.terciles = tercile_stats(obs);

  std::vector<double> xs, ys;
  if (opts.fit_on_bins) {
    for (const DecileBin& b : rep.bins) {
      if (!b.bi_defined) continue;
      xs.push_back(b.mean_ppl);
      ys.push_back(b.bi);
    }
    if (xs.size() < 3)
      throw std::runtime_error("preference_report: fewer than 3 bins with defined BI");
  } else {
    for (const PplObservation& o : obs) {
      xs.push_back(o.ppl);
      double miss = 0;  // signed miss: +100 false positive, -100 false negative
      if (o.pred.has_value()) {
        if (o.label == Verdict::wrong && *o.pred == Verdict::correct) miss = 100;
        if (o.label == Verdict::correct && *o.pred == Verdict::wrong) miss = -100;
      }
      ys.push_back(miss);
    }
  }
  rep.regression = ols_fit(xs, ys);
  return rep;
}

}  // namespace ppxgrpo

/* Copyright 2026 The kneedg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "kneedg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "kneedg/error.hpp"

namespace kneedg {

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw DimensionError("confusion: predictions and labels differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw ContractError("confusion expects binary predictions and labels");
    if (labels[i] == 1)
      (preds[i] == 1 ? cm.tp : cm.fn)++;
    else
      (preds[i] == 1 ? cm.fp : cm.tn)++;
  }
  return cm;
}

BasicMetrics basic_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("basic_metrics on an empty confusion matrix");
  BasicMetrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fp == 0)
    m.precision_degenerate = true;
  else
    m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  if (cm.tp + cm.fn == 0)
    m.recall_degenerate = true;
  else
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (m.precision + m.recall == 0.0)
    m.f1_degenerate = true;
  else
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks over tie groups; AUC = (R_pos - n_pos (n_pos + 1) / 2) / (n_pos n_neg).
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("roc_auc is undefined unless both classes are present");
  const double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

MetricsReport make_report(std::span<const double> scores, std::span<const int> labels) {
  std::vector<int> preds(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] > 0.5 ? 1 : 0;
  MetricsReport r;
  r.confusion = confusion(preds, labels);
  r.basic = basic_metrics(r.confusion);
  if (r.confusion.tp + r.confusion.fn > 0 && r.confusion.tn + r.confusion.fp > 0) {
    r.roc_auc = roc_auc(scores, labels);
  } else {
    r.auc_defined = false;
  }
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.size() < 2) throw ContractError("mean_std needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

namespace {

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_continued_fraction(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw ContractError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ContractError("student_t_cdf needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  // Upper tail P(T > |t|) = I_{df/(df+t^2)}(df/2, 1/2) / 2, evaluated directly
  // so that tiny tail probabilities keep full relative precision.
  const double x = df / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_one_sided(std::span<const double> baseline, std::span<const double> proposed) {
  if (baseline.size() != proposed.size()) throw DimensionError("paired t-test needs equal-length samples");
  if (baseline.size() < 2) throw ContractError("paired t-test needs at least two pairs");
  std::vector<double> d(baseline.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = proposed[i] - baseline[i];
  const MeanStd ms = mean_std(d);
  const double n = static_cast<double>(d.size());
  const double df = n - 1.0;
  if (ms.std == 0.0) {
    const double inf = std::numeric_limits<double>::infinity();
    if (ms.mean > 0.0) return {inf, df, 0.0};
    if (ms.mean < 0.0) return {-inf, df, 1.0};
    return {0.0, df, 0.5};
  }
  const double t = ms.mean / (ms.std / std::sqrt(n));
  const double x = df / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5);
  return {t, df, t >= 0.0 ? tail : 1.0 - tail};
}

std::string confusion_grid(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "        " << std::setw(8) << "pred 0" << std::setw(8) << "pred 1" << '\n';
  os << "true 0  " << std::setw(8) << cm.tn << std::setw(8) << cm.fp << '\n';
  os << "true 1  " << std::setw(8) << cm.fn << std::setw(8) << cm.tp << '\n';
  return os.str();
}

}  // namespace kneedg

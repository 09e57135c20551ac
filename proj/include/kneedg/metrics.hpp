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

#ifndef KNEEDG_METRICS_HPP_
#define KNEEDG_METRICS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kneedg {

struct ConfusionMatrix {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
  std::size_t total() const { return tn + fp + fn + tp; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels);

struct BasicMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  // Set when a zero denominator forced the value to 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

BasicMetrics basic_metrics(const ConfusionMatrix& cm);

// Mann-Whitney AUC: P(score of a positive > score of a negative), ties count
// one half. Throws ContractError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
  ConfusionMatrix confusion;
  BasicMetrics basic;
  double roc_auc = 0.5;
  bool auc_defined = true;
};

// Threshold rule: predict 1 iff score > 0.5 (a tie predicts 0).
MetricsReport make_report(std::span<const double> scores, std::span<const int> labels);

struct MeanStd {
  double mean;
  double std;  // sample standard deviation, n - 1 denominator
};
MeanStd mean_std(std::span<const double> values);

// CDF of Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);
// Regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double x, double a, double b);

struct TTestResult {
  double t;
  double df;
  double p;
};

// One-sided paired t-test of H1: mean(proposed - baseline) > 0.
TTestResult paired_t_one_sided(std::span<const double> baseline, std::span<const double> proposed);

// Text grid of a confusion matrix, rows = true class, columns = predicted.
std::string confusion_grid(const ConfusionMatrix& cm);

}  // namespace kneedg

#endif  // KNEEDG_METRICS_HPP_

// Copyright 2026 The QSV Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Per-layer diagnostics: weight histograms in the clipped-and-scaled
// [-1, 1] domain, parameter/MAC/error records, and the rank correlation
// between layer size and average quantization error.

#ifndef QSV_ANALYSIS_HPP
#define QSV_ANALYSIS_HPP

#include <span>
#include <string>
#include <vector>

#include "qsv/model.hpp"
#include "qsv/quantizer.hpp"

namespace qsv {

struct HistogramPair {
  int bins = 101;
  std::vector<double> pre;   // normalized-clipped weights scaled to [-1, 1]
  std::vector<double> post;  // mass of the projected levels, same binning
};

HistogramPair layer_histogram(std::span<const float> weights,
                              const QuantizerConfig& cfg, int bins = 101);

struct LayerRecord {
  std::string name;
  long long params = 0;
  long long macs = 0;
  double total_error = 0.0;
  double avg_error = 0.0;
  double alpha = 0.0;
  double kurtosis = 0.0;  // mu4 / sigma^4 of the layer weights
};

// One record per quantizable layer. Layers without their own quantizer
// assignment are measured under `fallback` (scheme, bits, alpha).
std::vector<LayerRecord> layer_report(Model& model, int frames,
                                      const QuantizerConfig& fallback);

double kurtosis(std::span<const float> values);

// Spearman rank correlation (average ranks on ties); needs >= 3 records.
double correlation_check(const std::vector<LayerRecord>& records);
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace qsv

#endif  // QSV_ANALYSIS_HPP

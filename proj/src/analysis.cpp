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

#include "qsv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qsv {

HistogramPair layer_histogram(std::span<const float> weights,
                              const QuantizerConfig& cfg, int bins) {
  if (weights.empty())
    throw std::invalid_argument("layer_histogram: empty layer");
  if (bins < 1) throw std::invalid_argument("layer_histogram: bins must be >= 1");
  cfg.validate();

  Tensor w = Tensor::from({weights.begin(), weights.end()},
                          {static_cast<int>(weights.size())});
  NormalizeResult norm = normalize(w);
  Tensor clipped = clip(norm.normalized, cfg.alpha);
  QuantLevels levels = make_levels(cfg.scheme, cfg.alpha, cfg.bits);
  QuantizedTensor q = project(clipped, levels, cfg);

  HistogramPair h;
  h.bins = bins;
  h.pre.assign(static_cast<size_t>(bins), 0.0);
  h.post.assign(static_cast<size_t>(bins), 0.0);
  const double mass = 1.0 / static_cast<double>(weights.size());
  auto bin_of = [bins](double x) {
    int b = static_cast<int>((x + 1.0) / 2.0 * bins);
    return std::min(std::max(b, 0), bins - 1);
  };
  auto cv = clipped.values();
  for (size_t i = 0; i < cv.size(); ++i) {
    h.pre[static_cast<size_t>(bin_of(cv[i] / cfg.alpha))] += mass;
    h.post[static_cast<size_t>(
        bin_of(levels.values[q.codes[i]] / cfg.alpha))] += mass;
  }
  return h;
}

double kurtosis(std::span<const float> values) {
  const double n = static_cast<double>(values.size());
  double m = 0.0;
  for (float v : values) m += v;
  m /= n;
  double m2 = 0.0, m4 = 0.0;
  for (float v : values) {
    const double d = v - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  if (m2 == 0.0) return 0.0;
  return m4 / (m2 * m2);
}

std::vector<LayerRecord> layer_report(Model& model, int frames,
                                      const QuantizerConfig& fallback) {
  fallback.validate();
  const auto descriptors = describe_model(model.config(), frames);
  std::vector<LayerRecord> records;
  for (Layer& l : model.layers()) {
    if (!l.quantizable()) continue;
    QuantizerConfig qc = fallback;
    if (l.quant.quantized) {
      qc.scheme = l.quant.scheme;
      qc.bits = l.quant.bits;
      if (l.alpha.defined()) qc.alpha = l.alpha.item();
    }
    QuantizedTensor q = quantize(l.weight, qc);
    QuantError err = quant_error(l.weight, q);

    LayerRecord r;
    r.name = l.name;
    for (const LayerDescriptor& d : descriptors)
      if (d.name == l.name) {
        r.params = d.param_count();
        r.macs = d.macs();
      }
    r.total_error = err.total;
    r.avg_error = err.average;
    r.alpha = qc.alpha;
    r.kurtosis = kurtosis(l.weight.values());
    records.push_back(std::move(r));
  }
  return records;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal series, size >= 2");
  auto ranks = [](std::span<const double> x) {
    const size_t n = x.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](size_t i, size_t j) { return x[i] < x[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) /
                             2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw std::invalid_argument("spearman: constant series");
  return cov / std::sqrt(va * vb);
}

double correlation_check(const std::vector<LayerRecord>& records) {
  if (records.size() < 3)
    throw std::invalid_argument("correlation_check: need >= 3 layers");
  std::vector<double> params, errors;
  for (const LayerRecord& r : records) {
    params.push_back(static_cast<double>(r.params));
    errors.push_back(r.avg_error);
  }
  return spearman(params, errors);
}

}  // namespace qsv

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "qsv/analysis.hpp"
#include "qsv/rng.hpp"

using namespace qsv;

namespace {

std::vector<float> gaussian_sample(Rng& rng, int n, double mu = 0.0,
                                   double sd = 1.0) {
  std::vector<float> v(static_cast<size_t>(n));
  for (float& x : v) x = static_cast<float>(mu + sd * rng.normal());
  return v;
}

double mass_sum(const std::vector<double>& h) {
  double s = 0.0;
  for (double m : h) s += m;
  return s;
}

}  // namespace

TEST_CASE("histogram mass conservation and support") {
  Rng rng(8);
  std::vector<float> w = gaussian_sample(rng, 5000, 0.2, 1.7);
  QuantizerConfig cfg;
  cfg.bits = 4;
  cfg.alpha = 2.5f;
  HistogramPair h = layer_histogram(w, cfg, 101);
  CHECK(h.pre.size() == 101);
  CHECK(std::fabs(mass_sum(h.pre) - 1.0) < 1e-9);
  CHECK(std::fabs(mass_sum(h.post) - 1.0) < 1e-9);

  CHECK_THROWS_AS(layer_histogram({}, cfg), std::invalid_argument);
}

TEST_CASE("degenerate layer collapses to a spike at zero") {
  std::vector<float> w(64, 0.75f);
  QuantizerConfig cfg;
  cfg.bits = 4;
  cfg.alpha = 1.0f;
  HistogramPair h = layer_histogram(w, cfg, 101);
  // All mass in the center bin for both curves.
  CHECK(h.pre[50] == doctest::Approx(1.0));
  CHECK(h.post[50] == doctest::Approx(1.0));
}

TEST_CASE("gaussian layer mass decays outward after quantization") {
  Rng rng(21);
  std::vector<float> w = gaussian_sample(rng, 100000);
  QuantizerConfig cfg;
  cfg.bits = 4;
  cfg.alpha = 3.0f;
  HistogramPair h = layer_histogram(w, cfg, 101);
  // Center bin of the post histogram dominates the outermost bins.
  CHECK(h.post[50] > h.post.front());
  CHECK(h.post[50] > h.post.back());
  // Inner mass concentrated: more than half the mass within |x| < 0.5.
  double inner = 0.0;
  for (int b = 26; b <= 75; ++b) inner += h.post[static_cast<size_t>(b)];
  CHECK(inner > 0.5);
}

TEST_CASE("kurtosis distinguishes spiky from flat") {
  Rng rng(17);
  std::vector<float> flat(20000);
  for (float& v : flat) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<float> gauss = gaussian_sample(rng, 20000);
  std::vector<float> spiky(20000);
  for (float& v : spiky) {
    // Laplace draw via inverse CDF.
    const double u = rng.uniform() - 0.5;
    v = static_cast<float>(-std::copysign(std::log(1.0 - 2.0 * std::fabs(u)),
                                          -u));
  }
  const double kf = kurtosis(flat);
  const double kg = kurtosis(gauss);
  const double ks = kurtosis(spiky);
  CHECK(kf < kg);
  CHECK(kg < ks);
  CHECK(kf == doctest::Approx(1.8).epsilon(0.05));
  CHECK(kg == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("layer report partitions parameters and orders errors by bits") {
  ModelConfig cfg;
  cfg.arch = "ecapa-toy";
  cfg.channels = 16;
  cfg.embedding_dim = 32;
  cfg.num_speakers = 8;
  Model model = Model::build(cfg, 3);

  QuantizerConfig fallback;
  fallback.alpha = 3.0f;
  double prev_avg = -1.0;
  for (int bits : {8, 4, 2}) {
    fallback.bits = bits;
    auto records = layer_report(model, 200, fallback);
    REQUIRE(records.size() == 4);  // three convs + fc
    long long total = 0;
    double avg = 0.0;
    for (const auto& r : records) {
      total += r.params;
      avg += r.avg_error;
      CHECK(r.macs > 0);
      CHECK(r.kurtosis > 0.0);
      CHECK(r.alpha == 3.0f);
    }
    CHECK(total == count_params(cfg));
    if (prev_avg >= 0.0) CHECK(avg > prev_avg);  // coarser grid, larger error
    prev_avg = avg;
  }
}

TEST_CASE("per-layer average error matches a monte-carlo estimate") {
  // The report's average error over a fresh Gaussian layer is an empirical
  // mean of the same quantity the Monte-Carlo oracle estimates.
  Rng rng(4);
  QuantizerConfig cfg;
  cfg.bits = 4;
  cfg.alpha = 3.0f;

  std::vector<float> layer = gaussian_sample(rng, 40000);
  Tensor w = Tensor::from(layer, {static_cast<int>(layer.size())});
  QuantizedTensor q = quantize(w, cfg);
  const double avg = quant_error(w, q).average;

  std::vector<float> mc = gaussian_sample(rng, 100000);
  Tensor wm = Tensor::from(mc, {static_cast<int>(mc.size())});
  const double mc_avg = quant_error(wm, quantize(wm, cfg)).average;
  CHECK(std::fabs(avg - mc_avg) / mc_avg < 0.05);
}

TEST_CASE("spearman examples") {
  std::vector<double> a = {1, 2, 3, 4};
  std::vector<double> up = {10, 20, 30, 40};
  std::vector<double> down = {4, 3, 2, 1};
  CHECK(spearman(a, up) == doctest::Approx(1.0));
  CHECK(spearman(a, down) == doctest::Approx(-1.0));

  std::vector<LayerRecord> records(4);
  for (int i = 0; i < 4; ++i) {
    records[static_cast<size_t>(i)].params = 10 * (i + 1);
    records[static_cast<size_t>(i)].avg_error = 0.1 * (i + 1);
  }
  CHECK(correlation_check(records) == doctest::Approx(1.0));
  for (int i = 0; i < 4; ++i)
    records[static_cast<size_t>(i)].avg_error = 0.1 * (4 - i);
  CHECK(correlation_check(records) == doctest::Approx(-1.0));

  records.resize(2);
  CHECK_THROWS_AS(correlation_check(records), std::invalid_argument);
}

TEST_CASE("pot beats uniform on peaked distributions and loses on flat") {
  Rng rng(2718);
  QuantizerConfig ucfg, pcfg;
  ucfg.bits = pcfg.bits = 4;
  ucfg.alpha = pcfg.alpha = 3.0f;
  pcfg.scheme = QuantScheme::PoT;

  auto avg_error = [](const std::vector<float>& sample,
                      const QuantizerConfig& cfg) {
    Tensor w = Tensor::from(sample, {static_cast<int>(sample.size())});
    return quant_error(w, quantize(w, cfg)).average;
  };

  // Sharply peaked at zero with rare outliers.
  std::vector<float> peaked(50000);
  for (float& v : peaked)
    v = static_cast<float>(rng.below(20) == 0 ? 3.0 * rng.normal()
                                              : 0.05 * rng.normal());
  CHECK(avg_error(peaked, pcfg) < avg_error(peaked, ucfg));

  // Near-uniform spread.
  std::vector<float> flat(50000);
  for (float& v : flat) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  CHECK(avg_error(flat, pcfg) > avg_error(flat, ucfg));
}

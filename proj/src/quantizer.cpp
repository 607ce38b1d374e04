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

#include "qsv/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qsv {

namespace {
constexpr float kSigmaFloor = 1e-8f;
}

const char* scheme_name(QuantScheme s) {
  return s == QuantScheme::Uniform ? "uniform" : "pot";
}

QuantScheme scheme_from_name(const std::string& name) {
  if (name == "uniform") return QuantScheme::Uniform;
  if (name == "pot") return QuantScheme::PoT;
  throw std::invalid_argument("unknown quantization scheme: " + name);
}

void QuantizerConfig::validate() const {
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("quantizer bitwidth must be in 2..8");
  if (!(alpha > 0.0f))
    throw std::invalid_argument("quantizer alpha must be positive");
  if (!(sigma > 0.0f))
    throw std::invalid_argument("quantizer sigma must be positive");
}

NormalizeResult normalize(const Tensor& w) {
  if (w.numel() == 0) throw std::invalid_argument("normalize: empty tensor");
  auto wv = w.values();
  const double n = static_cast<double>(wv.size());
  double m = 0.0;
  for (float v : wv) m += v;
  m /= n;
  double var = 0.0;
  for (float v : wv) var += (v - m) * (v - m);
  var /= n;
  NormalizeResult r;
  r.mu = static_cast<float>(m);
  r.sigma = static_cast<float>(std::sqrt(var));
  if (r.sigma < kSigmaFloor) {
    r.sigma = kSigmaFloor;
    r.sigma_floored = true;
  }
  Tensor out(w.shape());
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = (wv[i] - r.mu) / r.sigma;
  r.normalized = out;
  return r;
}

Tensor clip(const Tensor& w_norm, float alpha) {
  if (!(alpha > 0.0f)) throw std::invalid_argument("clip: alpha must be > 0");
  Tensor out(w_norm.shape());
  auto wv = w_norm.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = std::min(std::max(wv[i], -alpha), alpha);
  return out;
}

QuantLevels uniform_levels(float alpha, int bits) {
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("uniform_levels: bitwidth must be in 2..8");
  if (!(alpha > 0.0f))
    throw std::invalid_argument("uniform_levels: alpha must be > 0");
  const int half = (1 << (bits - 1)) - 1;  // positive level count
  QuantLevels q;
  q.scheme = QuantScheme::Uniform;
  q.bits = bits;
  q.alpha = alpha;
  q.values.resize(static_cast<size_t>(2 * half + 1));
  const double a = alpha;
  for (int k = 1; k <= half; ++k) {
    const float v = static_cast<float>(a * k / half);
    q.values[static_cast<size_t>(half + k)] = v;
    q.values[static_cast<size_t>(half - k)] = -v;
  }
  q.values[static_cast<size_t>(half)] = 0.0f;
  return q;
}

QuantLevels pot_levels(float alpha, int bits) {
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("pot_levels: bitwidth must be in 2..8");
  if (!(alpha > 0.0f))
    throw std::invalid_argument("pot_levels: alpha must be > 0");
  const int half = (1 << (bits - 1)) - 1;
  const int emin = -(1 << (bits - 1)) + 2;  // exponents emin..0
  QuantLevels q;
  q.scheme = QuantScheme::PoT;
  q.bits = bits;
  q.alpha = alpha;
  q.values.resize(static_cast<size_t>(2 * half + 1));
  const double a = alpha;
  for (int j = 0; j < half; ++j) {
    const float v = static_cast<float>(a * std::ldexp(1.0, emin + j));
    q.values[static_cast<size_t>(half + 1 + j)] = v;
    q.values[static_cast<size_t>(half - 1 - j)] = -v;
  }
  q.values[static_cast<size_t>(half)] = 0.0f;
  return q;
}

QuantLevels make_levels(QuantScheme scheme, float alpha, int bits) {
  return scheme == QuantScheme::Uniform ? uniform_levels(alpha, bits)
                                        : pot_levels(alpha, bits);
}

uint8_t project_value(float x, const QuantLevels& levels) {
  const int half = (1 << (levels.bits - 1)) - 1;
  const double u = static_cast<double>(x) / levels.alpha;
  const double au = std::fabs(u);
  int magnitude;  // 0 = zero level, j = j-th nonzero level outward
  if (levels.scheme == QuantScheme::Uniform) {
    const double t = au * half;
    const double fl = std::floor(t);
    const double frac = t - fl;
    magnitude = static_cast<int>(fl) + (frac >= 0.5 ? 1 : 0);
    magnitude = std::min(magnitude, half);
  } else {
    const int emin = -(1 << (levels.bits - 1)) + 2;
    if (au < std::ldexp(1.0, emin - 1)) {
      magnitude = 0;
    } else {
      magnitude = half;  // saturate unless a midpoint caps it below
      for (int j = 0; j + 1 <= half - 1; ++j) {
        if (au < 1.5 * std::ldexp(1.0, emin + j)) {
          magnitude = j + 1;
          break;
        }
      }
    }
  }
  const int idx = u < 0.0 ? half - magnitude : half + magnitude;
  return static_cast<uint8_t>(idx);
}

QuantizedTensor project(const Tensor& w_clipped, const QuantLevels& levels,
                        const QuantizerConfig& cfg) {
  QuantizedTensor q;
  q.config = cfg;
  q.shape = w_clipped.shape();
  auto wv = w_clipped.values();
  q.codes.resize(wv.size());
  for (size_t i = 0; i < wv.size(); ++i)
    q.codes[i] = project_value(wv[i], levels);
  return q;
}

QuantizedTensor quantize(const Tensor& w, const QuantizerConfig& cfg) {
  cfg.validate();
  NormalizeResult norm = normalize(w);
  Tensor clipped = clip(norm.normalized, cfg.alpha);
  QuantizerConfig stored = cfg;
  stored.mu = norm.mu;
  stored.sigma = norm.sigma;
  QuantLevels levels = make_levels(cfg.scheme, cfg.alpha, cfg.bits);
  return project(clipped, levels, stored);
}

QuantizedTensor quantize_with_stats(const Tensor& w,
                                    const QuantizerConfig& cfg) {
  cfg.validate();
  Tensor w_norm(w.shape());
  auto wv = w.values();
  auto nv = w_norm.values();
  for (size_t i = 0; i < nv.size(); ++i) nv[i] = (wv[i] - cfg.mu) / cfg.sigma;
  Tensor clipped = clip(w_norm, cfg.alpha);
  QuantLevels levels = make_levels(cfg.scheme, cfg.alpha, cfg.bits);
  return project(clipped, levels, cfg);
}

void dequantize_values(std::span<const uint8_t> codes,
                       const QuantLevels& levels, float mu, float sigma,
                       std::span<float> out) {
  const size_t nlevels = levels.values.size();
  for (size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= nlevels)
      throw std::runtime_error("dequantize: code out of range");
    out[i] = sigma * levels.values[codes[i]] + mu;
  }
}

Tensor dequantize(const QuantizedTensor& q) {
  q.config.validate();
  QuantLevels levels = make_levels(q.config.scheme, q.config.alpha,
                                   q.config.bits);
  Tensor out(q.shape);
  dequantize_values(q.codes, levels, q.config.mu, q.config.sigma,
                    out.values());
  return out;
}

QuantError quant_error(const Tensor& w, const QuantizedTensor& q) {
  if (w.shape() != q.shape)
    throw std::invalid_argument("quant_error: shape mismatch");
  auto wv = w.values();
  QuantLevels levels = make_levels(q.config.scheme, q.config.alpha,
                                   q.config.bits);
  QuantError e;
  for (size_t i = 0; i < wv.size(); ++i) {
    const double wn = (wv[i] - q.config.mu) / q.config.sigma;
    const double d = wn - levels.values[q.codes[i]];
    e.total += d * d;
  }
  e.average = e.total / static_cast<double>(wv.size());
  return e;
}

double ste_backward_alpha(std::span<const float> w_norm,
                          const QuantizedTensor& q, float alpha,
                          std::span<const float> upstream) {
  if (!(alpha > 0.0f))
    throw std::invalid_argument("ste_backward_alpha: alpha must be > 0");
  if (w_norm.size() != q.codes.size() || upstream.size() != q.codes.size())
    throw std::invalid_argument("ste_backward_alpha: shape mismatch");
  QuantLevels levels = make_levels(q.config.scheme, alpha, q.config.bits);
  double acc = 0.0;
  for (size_t i = 0; i < w_norm.size(); ++i) {
    const float w = w_norm[i];
    double branch;
    if (std::fabs(w) > alpha) {
      branch = w > 0.0f ? 1.0 : -1.0;
    } else {
      branch = (static_cast<double>(levels.values[q.codes[i]]) - w) / alpha;
    }
    acc += static_cast<double>(upstream[i]) * branch;
  }
  return acc;
}

std::vector<float> ste_backward_w(std::span<const float> upstream) {
  return std::vector<float>(upstream.begin(), upstream.end());
}

Tensor fake_quant(Tape* tape, const Tensor& w, const Tensor& alpha,
                  QuantScheme scheme, int bits) {
  if (alpha.numel() != 1)
    throw std::invalid_argument("fake_quant: alpha must be a scalar tensor");
  const float a = alpha.item();
  QuantizerConfig cfg;
  cfg.scheme = scheme;
  cfg.bits = bits;
  cfg.alpha = a;
  cfg.validate();

  NormalizeResult norm = normalize(w);
  Tensor clipped = clip(norm.normalized, a);
  QuantizerConfig stored = cfg;
  stored.mu = norm.mu;
  stored.sigma = norm.sigma;
  QuantLevels levels = make_levels(scheme, a, bits);
  QuantizedTensor q = project(clipped, levels, stored);

  Tensor out(w.shape());
  dequantize_values(q.codes, levels, norm.mu, norm.sigma, out.values());
  check_finite(out, "fake_quant");

  const bool needs = tape && (w.requires_grad() || alpha.requires_grad());
  if (needs) {
    out.set_requires_grad(true);
    Tensor wc = w, ac = alpha, oc = out;
    Tensor wn = norm.normalized;
    const float sigma = norm.sigma;
    tape->record([wc, ac, oc, wn, q = std::move(q), a, sigma]() mutable {
      auto go = oc.grad();
      if (wc.requires_grad()) {
        auto gw = wc.grad();
        for (size_t i = 0; i < go.size(); ++i) gw[i] += go[i];
      }
      if (ac.requires_grad()) {
        const double da = ste_backward_alpha(wn.values(), q, a, go);
        ac.grad()[0] += static_cast<float>(sigma * da);
      }
    });
  }
  return out;
}

}  // namespace qsv

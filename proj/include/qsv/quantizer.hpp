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

// Learnable weight quantization: normalize -> clip to [-alpha, alpha] ->
// project onto a discrete level set, with straight-through gradients for
// both the master weight and the clip value alpha.
//
// Level sets are symmetric about zero, always contain zero, and have
// 2^b - 1 members for bitwidth b:
//   uniform: {0, +-k/(2^(b-1)-1) : k = 1..2^(b-1)-1} * alpha
//   pot:     {0, +-2^e : e = -2^(b-1)+2 .. 0} * alpha

#ifndef QSV_QUANTIZER_HPP
#define QSV_QUANTIZER_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "qsv/tensor.hpp"

namespace qsv {

enum class QuantScheme : uint8_t { Uniform = 0, PoT = 1 };

const char* scheme_name(QuantScheme s);
QuantScheme scheme_from_name(const std::string& name);

struct QuantizerConfig {
  QuantScheme scheme = QuantScheme::Uniform;
  int bits = 8;           // 2..8
  float alpha = 3.0f;     // learnable clip, > 0
  float mu = 0.0f;        // per-tensor mean
  float sigma = 1.0f;     // per-tensor std, > 0
  void validate() const;
};

struct QuantLevels {
  // Sorted ascending, symmetric about 0, values[mid] == 0, max == alpha.
  std::vector<float> values;
  QuantScheme scheme = QuantScheme::Uniform;
  int bits = 2;
  float alpha = 1.0f;
  int zero_index() const { return static_cast<int>(values.size()) / 2; }
};

struct QuantizedTensor {
  std::vector<uint8_t> codes;  // index into the ascending level set
  QuantizerConfig config;
  std::vector<int> shape;
};

struct NormalizeResult {
  Tensor normalized;
  float mu = 0.0f;
  float sigma = 1.0f;
  bool sigma_floored = false;  // all-equal input engaged the 1e-8 floor
};

// Zero-mean unit-std (population) rescaling; sigma floored at 1e-8.
NormalizeResult normalize(const Tensor& w);

// Elementwise min(max(w, -alpha), alpha); alpha must be positive.
Tensor clip(const Tensor& w_norm, float alpha);

QuantLevels uniform_levels(float alpha, int bits);
QuantLevels pot_levels(float alpha, int bits);
QuantLevels make_levels(QuantScheme scheme, float alpha, int bits);

// Nearest-level code for one value; exact ties round away from zero.
//
// Decisions are made on the unit grid x/alpha in double precision, where
// the rational tie midpoints are exact: the uniform case reduces to
// round-half-away-from-zero on x/alpha * (2^(b-1)-1), and the PoT case
// compares against the exact midpoints 1.5 * 2^e (and 2^(emin-1) next to
// zero). Comparing float-materialized level values instead would lose the
// ties to representation error.
uint8_t project_value(float x, const QuantLevels& levels);
QuantizedTensor project(const Tensor& w_clipped, const QuantLevels& levels,
                        const QuantizerConfig& cfg);

// normalize -> clip -> project; records the fresh mu/sigma in the result.
QuantizedTensor quantize(const Tensor& w, const QuantizerConfig& cfg);

// Same pipeline but normalizes with the mu/sigma already in cfg instead of
// re-estimating them. Re-quantizing a dequantized tensor with its own
// config reproduces the codes exactly; re-estimation would rescale the
// level grid slightly and could flip codes that sit at tie boundaries.
QuantizedTensor quantize_with_stats(const Tensor& w,
                                    const QuantizerConfig& cfg);

// De-normalized forward weight: sigma * level[code] + mu.
Tensor dequantize(const QuantizedTensor& q);
// Shared kernel, also used by the pack reader so load and train agree
// bit for bit.
void dequantize_values(std::span<const uint8_t> codes,
                       const QuantLevels& levels, float mu, float sigma,
                       std::span<float> out);

struct QuantError {
  double total = 0.0;    // ||W_norm - What_norm||^2
  double average = 0.0;  // total / N
};

// Error in the normalized domain against the unclipped normalized weights.
QuantError quant_error(const Tensor& w, const QuantizedTensor& q);

// dL/dalpha = sum_i upstream_i * dWhat_i/dalpha in the normalized domain:
//   sign(w_i)                     where |w_i| >  alpha
//   level[code_i]/alpha - w_i/alpha  where |w_i| <= alpha
double ste_backward_alpha(std::span<const float> w_norm,
                          const QuantizedTensor& q, float alpha,
                          std::span<const float> upstream);

// dWhat/dW = 1: upstream passes through to the master weight unchanged.
std::vector<float> ste_backward_w(std::span<const float> upstream);

// Fake-quantization graph op for QAT. Recomputes mu/sigma from the master
// weight each forward, emits the de-normalized quantized weight, and routes
// gradients to the master (identity) and to alpha (rule above, chained
// through the de-normalization factor sigma). alpha must be a positive
// scalar tensor.
Tensor fake_quant(Tape* tape, const Tensor& w, const Tensor& alpha,
                  QuantScheme scheme, int bits);

}  // namespace qsv

#endif  // QSV_QUANTIZER_HPP

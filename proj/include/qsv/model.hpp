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

// Toy speaker-embedding models and their shape-only descriptors.
//
// Two architectures:
//   ecapa-toy:  three dilated conv1d layers with uneven widths (parameters
//               concentrate on the first and last convs and the embedding
//               FC), statistics pooling, FC embedding.
//   resnet-toy: stem conv + two residual blocks of two equal convs each,
//               statistics pooling, FC embedding; parameters spread evenly
//               across the convs.
//
// Conv and FC weights are quantizable; biases and the classification head
// stay full precision.

#ifndef QSV_MODEL_HPP
#define QSV_MODEL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qsv/quantizer.hpp"
#include "qsv/tensor.hpp"

namespace qsv {

enum class LayerKind { Conv1d, Conv2d, Fc, Bn, Pool };

struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::Conv1d;
  int k = 1;
  int c1 = 0;
  int c2 = 0;
  long long out_positions = 1;  // spatial positions for MAC accounting
  bool has_bias = false;

  // conv2d: k*k*c1*c2; conv1d: k*c1*c2; fc: c1*c2; bn: 2*c2; pool: 0.
  long long weight_params() const;
  long long param_count() const;  // weight_params + bias
  long long macs() const;         // weight_params * out_positions; 0 for bn/pool
};

struct QuantAssign {
  bool quantized = false;
  QuantScheme scheme = QuantScheme::Uniform;
  int bits = 8;
};

struct ModelConfig {
  std::string arch = "ecapa-toy";  // or "resnet-toy"
  int feat_dim = 64;
  int channels = 32;
  int embedding_dim = 64;
  int num_speakers = 20;
  QuantAssign quant;                           // default for conv/fc weights
  std::map<std::string, QuantAssign> overrides;  // per-layer, by name

  QuantAssign quant_for(const std::string& layer_name) const;
  void validate() const;
};

struct AamHead {
  Tensor weight;  // [num_speakers, embedding_dim], unit-norm rows
  float margin = 0.2f;
  float scale = 30.0f;

  void renormalize_rows();
};

// Additive-angular-margin logits: s*cos(theta_j) for non-target classes,
// s*cos(theta_target + m) for the target. `cosines_out`, when given,
// receives the raw cosines (no margin) for accuracy bookkeeping.
Tensor aam_logits(Tape* tape, const Tensor& emb, AamHead& head, int target,
                  std::vector<float>* cosines_out = nullptr);

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Conv1d;
  int k = 1, c1 = 0, c2 = 0;
  int stride = 1, pad = 0, dilation = 1;
  Tensor weight;
  Tensor bias;
  QuantAssign quant;
  Tensor alpha;  // scalar clip value; defined once QAT is enabled

  bool quantizable() const {
    return kind == LayerKind::Conv1d || kind == LayerKind::Conv2d ||
           kind == LayerKind::Fc;
  }
};

class Model {
 public:
  static Model build(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Layer& layer(const std::string& name);
  AamHead& head() { return head_; }

  // frames: [T, feat_dim] -> embedding [1, embedding_dim].
  // With fake_q, quantizable layers run on fake-quantized weights.
  Tensor embed(Tape* tape, const Tensor& frames, bool fake_q = false);
  Tensor logits(Tape* tape, const Tensor& frames, int target, bool fake_q,
                std::vector<float>* cosines_out = nullptr);

  // Installs the quantization assignment and per-layer alpha parameters.
  void enable_qat(float alpha0);
  bool qat_enabled() const { return qat_; }

  // Named trainable tensors: layer weights/biases, head, alphas (if QAT).
  std::vector<std::pair<std::string, Tensor>> parameters(
      bool include_head = true);
  void zero_grad();

 private:
  ModelConfig cfg_;
  std::vector<Layer> layers_;
  AamHead head_;
  bool qat_ = false;
};

// Shape-only descriptors of the embedding extractor (head excluded) for a
// given input length in frames; names match Model::layers().
std::vector<LayerDescriptor> describe_model(const ModelConfig& cfg,
                                            int frames);

long long count_params(const ModelConfig& cfg);
long long count_macs(const ModelConfig& cfg, int frames);

// Exact size of the packfile pack_model() would write: header plus one
// quantized-or-fp32 weight record and one fp32 bias record per layer.
uint64_t model_size_bytes(const ModelConfig& cfg);

// Serializes the embedding extractor. Quantized layers are quantized with
// their current alpha; everything else is stored fp32. Returns bytes
// written; always equals model_size_bytes(model.config()).
uint64_t pack_model(Model& model, const std::string& path);

// Loads packed weights into a freshly built model of the same config.
// Dequantized weights land bit-exactly as pack_model's quantizer produced
// them.
void unpack_into_model(Model& model, const std::string& path);

}  // namespace qsv

#endif  // QSV_MODEL_HPP

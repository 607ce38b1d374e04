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

#include "qsv/model.hpp"

#include <cmath>
#include <stdexcept>

#include "qsv/packfile.hpp"
#include "qsv/rng.hpp"

namespace qsv {

namespace {

// Rank-preserving copy from [n] to [1, n] so pooled vectors can feed matmul;
// gradients pass through unchanged.
Tensor as_row(Tape* tape, const Tensor& v) {
  Tensor out = Tensor::from(
      std::vector<float>(v.values().begin(), v.values().end()),
      {1, static_cast<int>(v.numel())});
  if (tape && v.requires_grad()) {
    out.set_requires_grad(true);
    Tensor vc = v, oc = out;
    tape->record([vc, oc]() mutable {
      auto go = oc.grad();
      auto gv = vc.grad();
      for (size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
    });
  }
  return out;
}

int conv_out_len(int T, int k, int stride, int pad, int dilation) {
  const int keff = (k - 1) * dilation + 1;
  return (T + 2 * pad - keff) / stride + 1;
}

Tensor gaussian_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t(std::move(shape), true);
  for (float& v : t.values()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

struct LayerPlan {
  std::string name;
  int k, c1, c2, stride, pad, dilation;
};

std::vector<LayerPlan> conv_plan(const ModelConfig& cfg) {
  const int C = cfg.channels;
  if (cfg.arch == "ecapa-toy") {
    if (C % 2 != 0)
      throw std::invalid_argument("ecapa-toy needs an even channel count");
    return {
        {"conv1", 5, cfg.feat_dim, C, 2, 2, 1},
        {"conv2", 3, C, C / 2, 1, 2, 2},
        {"conv3", 3, C / 2, 4 * C, 1, 3, 3},
    };
  }
  if (cfg.arch == "resnet-toy") {
    return {
        {"stem", 3, cfg.feat_dim, C, 2, 1, 1},
        {"block1.conv1", 3, C, C, 1, 1, 1},
        {"block1.conv2", 3, C, C, 1, 1, 1},
        {"block2.conv1", 3, C, C, 1, 1, 1},
        {"block2.conv2", 3, C, C, 1, 1, 1},
    };
  }
  throw std::invalid_argument("unknown architecture: " + cfg.arch);
}

int pooled_dim(const ModelConfig& cfg) {
  // Statistics pooling doubles the last conv's channel count.
  return 2 * conv_plan(cfg).back().c2;
}

}  // namespace

long long LayerDescriptor::weight_params() const {
  const long long kk = k;
  switch (kind) {
    case LayerKind::Conv2d:
      return kk * kk * c1 * c2;
    case LayerKind::Conv1d:
      return kk * c1 * c2;
    case LayerKind::Fc:
      return static_cast<long long>(c1) * c2;
    case LayerKind::Bn:
      return 2LL * c2;
    case LayerKind::Pool:
      return 0;
  }
  return 0;
}

long long LayerDescriptor::param_count() const {
  return weight_params() + (has_bias ? c2 : 0);
}

long long LayerDescriptor::macs() const {
  switch (kind) {
    case LayerKind::Conv1d:
    case LayerKind::Conv2d:
    case LayerKind::Fc:
      return weight_params() * out_positions;
    default:
      return 0;
  }
}

QuantAssign ModelConfig::quant_for(const std::string& layer_name) const {
  auto it = overrides.find(layer_name);
  return it != overrides.end() ? it->second : quant;
}

void ModelConfig::validate() const {
  if (embedding_dim <= 0 || channels <= 0 || feat_dim <= 0 ||
      num_speakers <= 0)
    throw std::invalid_argument("model config extents must be positive");
  conv_plan(*this);  // throws on an unknown arch
}

void AamHead::renormalize_rows() {
  const int S = weight.dim(0), d = weight.dim(1);
  auto wv = weight.values();
  for (int j = 0; j < S; ++j) {
    double n = 0.0;
    for (int i = 0; i < d; ++i) n += static_cast<double>(wv[j * d + i]) *
                                     wv[j * d + i];
    n = std::sqrt(n);
    if (n == 0.0) throw std::runtime_error("aam head: zero-norm class row");
    for (int i = 0; i < d; ++i)
      wv[j * d + i] = static_cast<float>(wv[j * d + i] / n);
  }
}

Tensor aam_logits(Tape* tape, const Tensor& emb, AamHead& head, int target,
                  std::vector<float>* cosines_out) {
  const int S = head.weight.dim(0), d = head.weight.dim(1);
  if (emb.numel() != d)
    throw std::invalid_argument("aam_logits: embedding dim mismatch");
  if (target < 0 || target >= S)
    throw std::invalid_argument("aam_logits: target out of range");

  auto ev = emb.values();
  auto wv = head.weight.values();
  double en = 0.0;
  for (int i = 0; i < d; ++i) en += static_cast<double>(ev[i]) * ev[i];
  en = std::sqrt(en);
  if (en == 0.0) throw std::runtime_error("aam_logits: zero-norm embedding");

  std::vector<double> wn(static_cast<size_t>(S));
  std::vector<double> cosv(static_cast<size_t>(S));
  for (int j = 0; j < S; ++j) {
    double n = 0.0, dot = 0.0;
    for (int i = 0; i < d; ++i) {
      n += static_cast<double>(wv[j * d + i]) * wv[j * d + i];
      dot += static_cast<double>(wv[j * d + i]) * ev[i];
    }
    n = std::sqrt(n);
    if (n == 0.0) throw std::runtime_error("aam_logits: zero-norm class row");
    wn[j] = n;
    cosv[j] = dot / (n * en);
  }
  if (cosines_out)
    cosines_out->assign(cosv.begin(), cosv.end());

  const double m = head.margin, s = head.scale;
  const double ct = std::min(std::max(cosv[target], -1.0 + 1e-7), 1.0 - 1e-7);
  const double st = std::sqrt(1.0 - ct * ct);

  Tensor out({S});
  auto ov = out.values();
  for (int j = 0; j < S; ++j)
    ov[j] = static_cast<float>(
        j == target ? s * (ct * std::cos(m) - st * std::sin(m))
                    : s * cosv[j]);
  check_finite(out, "aam_logits");

  const bool needs =
      tape && (emb.requires_grad() || head.weight.requires_grad());
  if (needs) {
    out.set_requires_grad(true);
    Tensor ec = emb, wc = head.weight, oc = out;
    tape->record([ec, wc, oc, cosv, wn, en, ct, st, m, s, target, S,
                  d]() mutable {
      auto go = oc.grad();
      auto ge = ec.grad();
      auto gw = wc.grad();
      auto ev2 = ec.values();
      auto wv2 = wc.values();
      for (int j = 0; j < S; ++j) {
        double dcos = go[j] * s;
        if (j == target)
          dcos = go[j] * s * (std::cos(m) + ct / st * std::sin(m));
        if (dcos == 0.0) continue;
        for (int i = 0; i < d; ++i) {
          const double what = wv2[j * d + i] / wn[j];
          const double ehat = ev2[i] / en;
          ge[i] += static_cast<float>(dcos * (what - cosv[j] * ehat) / en);
          gw[j * d + i] +=
              static_cast<float>(dcos * (ehat - cosv[j] * what) / wn[j]);
        }
      }
    });
  }
  return out;
}

Model Model::build(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model model;
  model.cfg_ = cfg;

  const auto plan = conv_plan(cfg);
  int idx = 0;
  for (const LayerPlan& p : plan) {
    Layer layer;
    layer.name = p.name;
    layer.kind = LayerKind::Conv1d;
    layer.k = p.k;
    layer.c1 = p.c1;
    layer.c2 = p.c2;
    layer.stride = p.stride;
    layer.pad = p.pad;
    layer.dilation = p.dilation;
    Rng rng = Rng::stream(seed, "init", static_cast<uint64_t>(idx++));
    layer.weight =
        gaussian_init(rng, {p.k, p.c1, p.c2},
                      std::sqrt(2.0 / (static_cast<double>(p.k) * p.c1)));
    layer.bias = Tensor::zeros({p.c2}, true);
    layer.quant = cfg.quant_for(layer.name);
    model.layers_.push_back(std::move(layer));
  }

  Layer fc;
  fc.name = "fc";
  fc.kind = LayerKind::Fc;
  fc.c1 = pooled_dim(cfg);
  fc.c2 = cfg.embedding_dim;
  Rng rng = Rng::stream(seed, "init", static_cast<uint64_t>(idx++));
  fc.weight = gaussian_init(rng, {fc.c1, fc.c2}, std::sqrt(1.0 / fc.c1));
  fc.bias = Tensor::zeros({fc.c2}, true);
  fc.quant = cfg.quant_for(fc.name);
  model.layers_.push_back(std::move(fc));

  Rng hrng = Rng::stream(seed, "init-head");
  model.head_.weight =
      gaussian_init(hrng, {cfg.num_speakers, cfg.embedding_dim}, 1.0);
  model.head_.renormalize_rows();
  return model;
}

Layer& Model::layer(const std::string& name) {
  for (Layer& l : layers_)
    if (l.name == name) return l;
  throw std::invalid_argument("no such layer: " + name);
}

namespace {

Tensor effective_weight(Tape* tape, Layer& layer, bool fake_q) {
  if (fake_q && layer.quant.quantized) {
    if (!layer.alpha.defined())
      throw std::logic_error("fake-quant forward without enable_qat()");
    return fake_quant(tape, layer.weight, layer.alpha, layer.quant.scheme,
                      layer.quant.bits);
  }
  return layer.weight;
}

Tensor conv_layer(Tape* tape, Layer& layer, const Tensor& x, bool fake_q) {
  Tensor w = effective_weight(tape, layer, fake_q);
  Tensor y = conv1d(tape, x, w, layer.stride, layer.pad, layer.dilation);
  return add_bias(tape, y, layer.bias);
}

}  // namespace

Tensor Model::embed(Tape* tape, const Tensor& frames, bool fake_q) {
  if (frames.rank() != 2 || frames.dim(1) != cfg_.feat_dim)
    throw std::invalid_argument("embed: frames must be [T, feat_dim]");
  Tensor h;
  if (cfg_.arch == "ecapa-toy") {
    h = relu(tape, conv_layer(tape, layers_[0], frames, fake_q));
    h = relu(tape, conv_layer(tape, layers_[1], h, fake_q));
    h = relu(tape, conv_layer(tape, layers_[2], h, fake_q));
  } else {
    h = relu(tape, conv_layer(tape, layers_[0], frames, fake_q));
    for (int b = 0; b < 2; ++b) {
      Tensor shortcut = h;
      Tensor u = relu(tape, conv_layer(tape, layers_[1 + 2 * b], h, fake_q));
      u = conv_layer(tape, layers_[2 + 2 * b], u, fake_q);
      h = relu(tape, add(tape, u, shortcut));
    }
  }
  Tensor pooled = stats_pool(tape, h);
  Layer& fc = layers_.back();
  Tensor w = effective_weight(tape, fc, fake_q);
  Tensor e = matmul(tape, as_row(tape, pooled), w);
  return add_bias(tape, e, fc.bias);
}

Tensor Model::logits(Tape* tape, const Tensor& frames, int target,
                     bool fake_q, std::vector<float>* cosines_out) {
  Tensor e = embed(tape, frames, fake_q);
  return aam_logits(tape, e, head_, target, cosines_out);
}

void Model::enable_qat(float alpha0) {
  if (!(alpha0 > 0.0f))
    throw std::invalid_argument("enable_qat: alpha0 must be positive");
  for (Layer& l : layers_)
    if (l.quantizable() && l.quant.quantized)
      l.alpha = Tensor::scalar(alpha0, true);
  qat_ = true;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters(
    bool include_head) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (Layer& l : layers_) {
    out.emplace_back(l.name + ".weight", l.weight);
    out.emplace_back(l.name + ".bias", l.bias);
  }
  if (include_head) out.emplace_back("head.weight", head_.weight);
  for (Layer& l : layers_)
    if (l.alpha.defined()) out.emplace_back(l.name + ".alpha", l.alpha);
  return out;
}

void Model::zero_grad() {
  for (auto& [name, t] : parameters(true)) t.zero_grad();
}

std::vector<LayerDescriptor> describe_model(const ModelConfig& cfg,
                                            int frames) {
  cfg.validate();
  std::vector<LayerDescriptor> out;
  int T = frames;
  bool first = true;
  for (const LayerPlan& p : conv_plan(cfg)) {
    // Residual shortcuts need conv2..conv5 of resnet-toy to preserve length;
    // only the first conv subsamples.
    T = conv_out_len(first ? frames : T, p.k, p.stride, p.pad, p.dilation);
    first = false;
    LayerDescriptor d;
    d.name = p.name;
    d.kind = LayerKind::Conv1d;
    d.k = p.k;
    d.c1 = p.c1;
    d.c2 = p.c2;
    d.out_positions = T;
    d.has_bias = true;
    out.push_back(d);
  }
  LayerDescriptor pool;
  pool.name = "pool";
  pool.kind = LayerKind::Pool;
  pool.c1 = out.back().c2;
  pool.c2 = pooled_dim(cfg);
  pool.out_positions = 1;
  out.push_back(pool);
  LayerDescriptor fc;
  fc.name = "fc";
  fc.kind = LayerKind::Fc;
  fc.c1 = pooled_dim(cfg);
  fc.c2 = cfg.embedding_dim;
  fc.out_positions = 1;
  fc.has_bias = true;
  out.push_back(fc);
  return out;
}

long long count_params(const ModelConfig& cfg) {
  long long n = 0;
  for (const LayerDescriptor& d : describe_model(cfg, 200)) n += d.param_count();
  return n;
}

long long count_macs(const ModelConfig& cfg, int frames) {
  long long n = 0;
  for (const LayerDescriptor& d : describe_model(cfg, frames)) n += d.macs();
  return n;
}

uint64_t model_size_bytes(const ModelConfig& cfg) {
  uint64_t total = kPackHeaderBytes;
  for (const LayerDescriptor& d : describe_model(cfg, 200)) {
    if (d.kind == LayerKind::Pool || d.kind == LayerKind::Bn) continue;
    const QuantAssign q = cfg.quant_for(d.name);
    const int rank = d.kind == LayerKind::Conv1d ? 3 : 2;
    total += record_bytes(d.name.size() + 7 /*.weight*/, rank,
                          payload_bytes(d.weight_params(),
                                        q.quantized ? q.bits : 32,
                                        !q.quantized));
    if (d.has_bias)
      total += record_bytes(d.name.size() + 5 /*.bias*/, 1,
                            payload_bytes(d.c2, 32, true));
  }
  return total;
}

uint64_t pack_model(Model& model, const std::string& path) {
  std::vector<TensorRecord> records;
  for (Layer& l : model.layers()) {
    if (l.quant.quantized) {
      QuantizerConfig qc;
      qc.scheme = l.quant.scheme;
      qc.bits = l.quant.bits;
      qc.alpha = l.alpha.defined() ? l.alpha.item() : 3.0f;
      records.push_back(
          TensorRecord::quantized(l.name + ".weight", quantize(l.weight, qc)));
    } else {
      records.push_back(TensorRecord::fp32(
          l.name + ".weight", l.weight.shape(),
          {l.weight.values().begin(), l.weight.values().end()}));
    }
    records.push_back(
        TensorRecord::fp32(l.name + ".bias", l.bias.shape(),
                           {l.bias.values().begin(), l.bias.values().end()}));
  }
  return write_pack(path, records);
}

void unpack_into_model(Model& model, const std::string& path) {
  const std::vector<TensorRecord> records = read_pack(path);
  std::map<std::string, const TensorRecord*> by_name;
  for (const TensorRecord& r : records) by_name[r.name] = &r;

  auto fill = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("packfile is missing tensor '" + name + "'");
    const TensorRecord& r = *it->second;
    if (r.shape != dst.shape())
      throw std::runtime_error("packfile shape mismatch for '" + name + "'");
    std::vector<float> v = r.dequantized();
    std::copy(v.begin(), v.end(), dst.values().begin());
  };

  for (Layer& l : model.layers()) {
    fill(l.name + ".weight", l.weight);
    fill(l.name + ".bias", l.bias);
    auto it = by_name.find(l.name + ".weight");
    if (!it->second->is_fp32()) {
      l.quant.quantized = true;
      l.quant.scheme = static_cast<QuantScheme>(it->second->scheme);
      l.quant.bits = it->second->bits;
      l.alpha = Tensor::scalar(it->second->alpha);
    }
  }
}

}  // namespace qsv

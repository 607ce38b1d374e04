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
#include "qsv/model.hpp"
#include "qsv/packfile.hpp"
#include "qsv/rng.hpp"

using namespace qsv;
using qsv::testing::fd_grad;
using qsv::testing::max_rel_error;

namespace {

ModelConfig toy_config(const std::string& arch, int channels = 16) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.channels = channels;
  cfg.embedding_dim = 32;
  cfg.num_speakers = 8;
  return cfg;
}

Tensor random_frames(Rng& rng, int T, int feat) {
  Tensor t({T, feat});
  for (float& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("descriptor parameter formulas") {
  LayerDescriptor fc;
  fc.kind = LayerKind::Fc;
  fc.c1 = 512;
  fc.c2 = 256;
  CHECK(fc.param_count() == 131072);
  fc.out_positions = 1;
  CHECK(fc.macs() == 131072);

  LayerDescriptor c2d;
  c2d.kind = LayerKind::Conv2d;
  c2d.k = 3;
  c2d.c1 = 16;
  c2d.c2 = 32;
  CHECK(c2d.weight_params() == 4608);

  LayerDescriptor c1d;
  c1d.kind = LayerKind::Conv1d;
  c1d.k = 3;
  c1d.c1 = 4;
  c1d.c2 = 4;
  c1d.out_positions = 10;
  CHECK(c1d.macs() == 480);

  LayerDescriptor bn;
  bn.kind = LayerKind::Bn;
  bn.c2 = 64;
  CHECK(bn.param_count() == 128);
  CHECK(bn.macs() == 0);
}

TEST_CASE("count_params matches a graph walk of the built model") {
  for (const std::string arch : {"ecapa-toy", "resnet-toy"}) {
    for (int channels : {16, 64}) {
      ModelConfig cfg = toy_config(arch, channels);
      cfg.embedding_dim = 64;
      cfg.num_speakers = 20;
      Model model = Model::build(cfg, 1);
      long long walked = 0;
      for (Layer& l : model.layers())
        walked += l.weight.numel() + l.bias.numel();
      CHECK(count_params(cfg) == walked);
    }
  }
}

TEST_CASE("packfile records mirror the descriptor counts layer by layer") {
  ModelConfig cfg = toy_config("resnet-toy", 12);
  cfg.quant = {true, QuantScheme::Uniform, 6};
  Model model = Model::build(cfg, 2);
  model.enable_qat(3.0f);
  const std::string path = "test_models_counts.qsvw";
  pack_model(model, path);

  std::map<std::string, int64_t> elements;
  for (const TensorRecord& r : read_pack(path))
    elements[r.name] = r.num_elements();
  for (const LayerDescriptor& d : describe_model(cfg, 200)) {
    if (d.kind == LayerKind::Pool) continue;
    CHECK(elements.at(d.name + ".weight") == d.weight_params());
    CHECK(elements.at(d.name + ".bias") == d.c2);
  }
  std::remove(path.c_str());
}

TEST_CASE("resnet-toy with width 1 has a hand-computable count") {
  ModelConfig cfg = toy_config("resnet-toy", 1);
  // stem 3*64*1 + 1 bias, four convs (3*1*1 + 1) each,
  // fc (2*1)*32 + 32 biases.
  const long long expect = (3 * 64 * 1 + 1) + 4 * (3 + 1) + (2 * 32 + 32);
  CHECK(count_params(cfg) == expect);
}

TEST_CASE("ecapa-toy concentrates parameters at block boundaries") {
  ModelConfig cfg = toy_config("ecapa-toy", 32);
  auto descs = describe_model(cfg, 200);
  long long first = 0, middle = 0, last = 0;
  for (const auto& d : descs) {
    if (d.name == "conv1") first = d.param_count();
    if (d.name == "conv2") middle = d.param_count();
    if (d.name == "conv3") last = d.param_count();
  }
  CHECK(middle < first);
  CHECK(middle < last);

  // resnet-toy spreads conv parameters evenly instead.
  auto rdescs = describe_model(toy_config("resnet-toy", 32), 200);
  long long prev = -1;
  for (const auto& d : rdescs) {
    if (d.name.find("block") != 0) continue;
    if (prev >= 0) CHECK(d.param_count() == prev);
    prev = d.param_count();
  }
}

TEST_CASE("count_macs linearity in input length") {
  for (const std::string arch : {"ecapa-toy", "resnet-toy"}) {
    ModelConfig cfg = toy_config(arch);
    auto descs200 = describe_model(cfg, 200);
    auto descs400 = describe_model(cfg, 400);
    long long conv200 = 0, conv400 = 0, fc200 = 0, fc400 = 0;
    for (size_t i = 0; i < descs200.size(); ++i) {
      if (descs200[i].kind == LayerKind::Conv1d) {
        conv200 += descs200[i].macs();
        conv400 += descs400[i].macs();
      } else if (descs200[i].kind == LayerKind::Fc) {
        fc200 += descs200[i].macs();
        fc400 += descs400[i].macs();
      }
    }
    CHECK(conv400 == 2 * conv200);
    CHECK(fc400 == fc200);
    CHECK(count_macs(cfg, 200) == conv200 + fc200);
  }
}

TEST_CASE("model size accounting reproduces the published ratios") {
  SUBCASE("5.95M parameters at fp32 is 23.80 MB; 4x and 8x packed") {
    LayerDescriptor d;
    d.kind = LayerKind::Fc;
    d.c1 = 2380;
    d.c2 = 2500;  // 5.95M exactly
    CHECK(d.weight_params() == 5950000);
    const uint64_t fp32_bytes = 4ULL * 5950000;
    CHECK(fp32_bytes == 23800000);  // 23.80 MB decimal
    CHECK(payload_bytes(5950000, 8, false) == 5950000);
    CHECK(payload_bytes(5950000, 4, false) == 2975000);
    CHECK(static_cast<double>(fp32_bytes) / 5950000 == doctest::Approx(4.0));
    CHECK(static_cast<double>(fp32_bytes) / 2975000 == doctest::Approx(8.0));
  }

  SUBCASE("whole-model ratios for a >=1M-parameter config") {
    ModelConfig fp = toy_config("ecapa-toy", 320);
    fp.embedding_dim = 64;
    CHECK(count_params(fp) >= 1000000);
    ModelConfig q8 = fp;
    q8.quant = {true, QuantScheme::Uniform, 8};
    ModelConfig q4 = fp;
    q4.quant = {true, QuantScheme::Uniform, 4};
    const double s32 = static_cast<double>(model_size_bytes(fp));
    const double s8 = static_cast<double>(model_size_bytes(q8));
    const double s4 = static_cast<double>(model_size_bytes(q4));
    CHECK(s32 / s8 > 3.8);
    CHECK(s32 / s8 <= 4.0);
    CHECK(s32 / s4 > 7.4);
    CHECK(s32 / s4 <= 8.0);
  }
}

TEST_CASE("aam logits examples") {
  const int d = 8;
  AamHead head;
  head.weight = Tensor::zeros({4, d});
  Rng rng(3);
  for (float& v : head.weight.values())
    v = static_cast<float>(rng.normal());
  head.renormalize_rows();
  head.margin = 0.2f;
  head.scale = 30.0f;

  SUBCASE("zero angle gives s*cos(m) = 29.4007") {
    Tensor emb({d});
    for (int i = 0; i < d; ++i)
      emb.at(i) = 2.5f * head.weight.at(1 * d + i);
    Tensor out = aam_logits(nullptr, emb, head, 1);
    CHECK(out.at(1) ==
          doctest::Approx(30.0 * std::cos(0.2)).epsilon(1e-4));
    CHECK(out.at(1) == doctest::Approx(29.4007).epsilon(1e-4));
  }

  SUBCASE("zero margin reduces to scaled cosines") {
    head.margin = 0.0f;
    Rng erng(9);
    Tensor emb({d});
    for (float& v : emb.values()) v = static_cast<float>(erng.normal());
    std::vector<float> cosines;
    Tensor out = aam_logits(nullptr, emb, head, 2, &cosines);
    for (int j = 0; j < 4; ++j)
      CHECK(out.at(j) ==
            doctest::Approx(30.0 * cosines[static_cast<size_t>(j)])
                .epsilon(1e-5));
  }

  SUBCASE("larger margin strictly lowers the target logit") {
    Rng erng(11);
    Tensor emb({d});
    for (float& v : emb.values()) v = static_cast<float>(erng.normal());
    double prev = 1e9;
    for (float m : {0.0f, 0.1f, 0.2f, 0.4f}) {
      head.margin = m;
      Tensor out = aam_logits(nullptr, emb, head, 0);
      CHECK(out.at(0) < prev);
      prev = out.at(0);
    }
  }

  SUBCASE("zero embedding is rejected") {
    Tensor emb = Tensor::zeros({d});
    CHECK_THROWS_AS(aam_logits(nullptr, emb, head, 0), std::runtime_error);
  }
}

TEST_CASE("aam gradients match finite differences") {
  const int d = 6;
  AamHead head;
  Rng rng(17);
  head.weight = Tensor({3, d});
  for (float& v : head.weight.values())
    v = static_cast<float>(rng.normal());
  head.renormalize_rows();
  head.weight.set_requires_grad(true);

  Tensor emb({d}, true);
  for (float& v : emb.values()) v = static_cast<float>(rng.normal());

  auto forward = [&](Tape* tape) {
    Tensor logits = aam_logits(tape, emb, head, 1);
    return softmax_cross_entropy(tape, logits, 1);
  };
  Tape tape;
  tape.backward(forward(&tape));
  auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
  CHECK(max_rel_error(emb.grad(), fd_grad(rebuild, emb)) < 1e-3);
  CHECK(max_rel_error(head.weight.grad(), fd_grad(rebuild, head.weight)) <
        1e-3);
}

TEST_CASE("build is deterministic and embeds both architectures") {
  Rng frng(23);
  for (const std::string arch : {"ecapa-toy", "resnet-toy"}) {
    ModelConfig cfg = toy_config(arch);
    Model a = Model::build(cfg, 42);
    Model b = Model::build(cfg, 42);
    for (size_t i = 0; i < a.layers().size(); ++i) {
      auto av = a.layers()[i].weight.values();
      auto bv = b.layers()[i].weight.values();
      for (size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
    }
    Model c = Model::build(cfg, 43);
    bool all_same = true;
    for (size_t j = 0; j < a.layers()[0].weight.values().size(); ++j)
      if (a.layers()[0].weight.values()[j] !=
          c.layers()[0].weight.values()[j])
        all_same = false;
    CHECK_FALSE(all_same);

    Tensor frames = random_frames(frng, 120, cfg.feat_dim);
    Tensor emb = a.embed(nullptr, frames);
    CHECK(emb.numel() == cfg.embedding_dim);
  }
  CHECK_THROWS_AS(Model::build(toy_config("mystery-net"), 1),
                  std::invalid_argument);
}

TEST_CASE("model gradients flow end to end") {
  ModelConfig cfg = toy_config("resnet-toy", 4);
  Model model = Model::build(cfg, 7);
  Rng rng(29);
  Tensor frames = random_frames(rng, 40, cfg.feat_dim);

  auto forward = [&](Tape* tape) {
    return softmax_cross_entropy(tape, model.logits(tape, frames, 2, false),
                                 2);
  };
  Tape tape;
  tape.backward(forward(&tape));
  for (Layer& l : model.layers()) {
    double gsum = 0.0;
    for (float g : l.weight.grad()) gsum += std::fabs(g);
    CHECK(gsum > 0.0);
  }

  // Finite differences through the whole graph (convs, residual adds,
  // statistics pooling, FC, AAM head, cross entropy).
  auto rebuild = [&]() {
    return static_cast<double>(
        softmax_cross_entropy(nullptr, model.logits(nullptr, frames, 2,
                                                    false), 2)
            .item());
  };
  Tensor conv_w = model.layer("block1.conv1").weight;
  Tensor fc_w = model.layer("fc").weight;
  CHECK(max_rel_error(conv_w.grad(), fd_grad(rebuild, conv_w)) < 1e-3);
  CHECK(max_rel_error(fc_w.grad(), fd_grad(rebuild, fc_w)) < 1e-3);
  CHECK(max_rel_error(model.head().weight.grad(),
                      fd_grad(rebuild, model.head().weight)) < 1e-3);
}

TEST_CASE("qat forward uses weights exactly on the level grid") {
  ModelConfig cfg = toy_config("ecapa-toy", 8);
  cfg.quant = {true, QuantScheme::Uniform, 4};
  Model model = Model::build(cfg, 5);
  model.enable_qat(3.0f);
  Rng rng(31);
  Tensor frames = random_frames(rng, 60, cfg.feat_dim);
  Tape tape;
  Tensor emb = model.embed(&tape, frames, true);
  CHECK(emb.numel() == cfg.embedding_dim);

  for (Layer& l : model.layers()) {
    Tensor fq = fake_quant(nullptr, l.weight, l.alpha, l.quant.scheme,
                           l.quant.bits);
    NormalizeResult norm = normalize(l.weight);
    QuantLevels levels = make_levels(l.quant.scheme, l.alpha.item(),
                                     l.quant.bits);
    auto fv = fq.values();
    for (size_t i = 0; i < fv.size(); ++i) {
      bool on_grid = false;
      for (float lvl : levels.values)
        if (fv[i] == norm.sigma * lvl + norm.mu) on_grid = true;
      CHECK(on_grid);
    }
  }
}

TEST_CASE("pack and unpack round trip the embedding extractor") {
  ModelConfig cfg = toy_config("ecapa-toy", 16);
  cfg.quant = {true, QuantScheme::PoT, 5};
  Model model = Model::build(cfg, 99);
  model.enable_qat(2.5f);

  const std::string path = "test_models_pack.qsvw";
  const uint64_t written = pack_model(model, path);
  CHECK(written == model_size_bytes(cfg));

  Model loaded = Model::build(cfg, 1234);  // different init, then overwrite
  unpack_into_model(loaded, path);

  for (size_t i = 0; i < model.layers().size(); ++i) {
    Layer& src = model.layers()[i];
    Layer& dst = loaded.layers()[i];
    if (src.quant.quantized) {
      QuantizerConfig qc;
      qc.scheme = src.quant.scheme;
      qc.bits = src.quant.bits;
      qc.alpha = src.alpha.item();
      Tensor expect = dequantize(quantize(src.weight, qc));
      for (int64_t j = 0; j < expect.numel(); ++j)
        CHECK(dst.weight.at(j) == expect.at(j));
    }
    for (int64_t j = 0; j < src.bias.numel(); ++j)
      CHECK(dst.bias.at(j) == src.bias.at(j));
  }
  std::remove(path.c_str());
}

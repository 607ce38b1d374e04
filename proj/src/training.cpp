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

#include "qsv/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "qsv/packfile.hpp"
#include "qsv/rng.hpp"

namespace qsv {

namespace {
constexpr float kAlphaFloor = 1e-4f;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
  for (size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs && epochs > 0)
      throw std::invalid_argument("decay epochs must precede the last epoch");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw std::invalid_argument("decay epochs must be strictly increasing");
  }
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) lr *= cfg.decay_ratio;
  return lr;
}

void AdamOptimizer::add_param(const std::string& name, Tensor param,
                              bool no_decay) {
  Slot slot;
  slot.name = name;
  slot.param = param;
  slot.no_decay = no_decay;
  slot.m.assign(static_cast<size_t>(param.numel()), 0.0);
  slot.v.assign(static_cast<size_t>(param.numel()), 0.0);
  slots_.push_back(std::move(slot));
}

void AdamOptimizer::step(double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    auto pv = s.param.values();
    auto gv = s.param.grad();
    for (size_t i = 0; i < pv.size(); ++i) {
      const double g = gv[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      double update = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (!s.no_decay) update += lr * weight_decay * pv[i];
      pv[i] = static_cast<float>(pv[i] - update);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

namespace {

AdamOptimizer make_optimizer(Model& model) {
  AdamOptimizer opt;
  for (auto& [name, t] : model.parameters(true)) {
    const bool is_alpha = name.size() > 6 &&
                          name.compare(name.size() - 6, 6, ".alpha") == 0;
    opt.add_param(name, t, /*no_decay=*/is_alpha);
  }
  return opt;
}

void clamp_alphas(Model& model) {
  for (Layer& l : model.layers()) {
    if (!l.alpha.defined()) continue;
    float& a = l.alpha.values()[0];
    if (std::isnan(a))
      throw std::runtime_error("clip value diverged in layer " + l.name);
    if (a < kAlphaFloor) a = kAlphaFloor;
  }
}

TrainLog run_training(Model& model, const Corpus& corpus,
                      const TrainConfig& cfg, bool fake_q) {
  cfg.validate();
  if (corpus.train_idx.empty())
    throw std::invalid_argument("corpus has no training split");
  model.head().margin = cfg.margin;
  model.head().scale = cfg.scale;
  AdamOptimizer opt = make_optimizer(model);

  TrainLog log;
  std::vector<size_t> order(corpus.train_idx);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    Rng rng = Rng::stream(cfg.seed, "epoch-order",
                          static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    int64_t correct = 0;
    size_t pos = 0;
    while (pos < order.size()) {
      const size_t take = std::min(static_cast<size_t>(cfg.batch),
                                   order.size() - pos);
      Tape tape;
      Tensor batch_loss;
      std::vector<float> cosines;
      for (size_t b = 0; b < take; ++b) {
        const Utterance& utt = corpus.utts[order[pos + b]];
        Tensor logits_t =
            model.logits(&tape, utt.frames, utt.label, fake_q, &cosines);
        Tensor loss = softmax_cross_entropy(&tape, logits_t, utt.label);
        batch_loss = b == 0 ? loss : add(&tape, batch_loss, loss);
        const int pred = static_cast<int>(
            std::max_element(cosines.begin(), cosines.end()) -
            cosines.begin());
        if (pred == utt.label) ++correct;
      }
      batch_loss = scale(&tape, batch_loss, 1.0 / static_cast<double>(take));
      loss_sum += batch_loss.item() * static_cast<double>(take);
      opt.zero_grad();
      tape.backward(batch_loss);
      opt.step(lr, cfg.weight_decay);
      if (fake_q) clamp_alphas(model);
      model.head().renormalize_rows();
      pos += take;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.loss = loss_sum / static_cast<double>(order.size());
    stats.accuracy =
        static_cast<double>(correct) / static_cast<double>(order.size());
    if (fake_q)
      for (Layer& l : model.layers())
        if (l.alpha.defined()) stats.alphas[l.name] = l.alpha.item();
    log.epochs.push_back(std::move(stats));
  }
  return log;
}

}  // namespace

TrainLog train_fp32(Model& model, const Corpus& corpus,
                    const TrainConfig& cfg) {
  try {
    return run_training(model, corpus, cfg, /*fake_q=*/false);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("training aborted: ") + e.what());
  }
}

FinetuneResult finetune_quantized(Model& model, const Corpus& corpus,
                                  const TrainConfig& cfg,
                                  const QuantAssign& assign, float alpha0) {
  QuantAssign q = assign;
  q.quantized = true;
  for (Layer& l : model.layers())
    if (l.quantizable()) l.quant = q;
  model.enable_qat(alpha0);
  FinetuneResult result;
  try {
    result.log = run_training(model, corpus, cfg, /*fake_q=*/true);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("fine-tune aborted: ") + e.what());
  }
  for (Layer& l : model.layers()) {
    if (!l.quant.quantized) continue;
    QuantizerConfig qc;
    qc.scheme = l.quant.scheme;
    qc.bits = l.quant.bits;
    qc.alpha = l.alpha.item();
    result.codes.emplace(l.name, quantize(l.weight, qc));
    result.alphas.emplace(l.name, qc.alpha);
  }
  return result;
}

void write_train_log(const TrainLog& log, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    for (const EpochStats& e : log.epochs) {
      nlohmann::json j;
      j["epoch"] = e.epoch;
      j["lr"] = e.lr;
      j["loss"] = e.loss;
      j["accuracy"] = e.accuracy;
      j["alpha"] = e.alphas;
      out << j.dump() << '\n';
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

void save_checkpoint(Model& model, const AdamOptimizer* opt,
                     const std::string& path) {
  std::vector<TensorRecord> records;
  for (auto& [name, t] : model.parameters(true))
    records.push_back(TensorRecord::fp32(
        name, t.shape(), {t.values().begin(), t.values().end()}));
  if (opt) {
    for (const auto& slot : opt->slots()) {
      std::vector<float> m(slot.m.begin(), slot.m.end());
      std::vector<float> v(slot.v.begin(), slot.v.end());
      records.push_back(
          TensorRecord::fp32("adam.m." + slot.name, slot.param.shape(),
                             std::move(m)));
      records.push_back(
          TensorRecord::fp32("adam.v." + slot.name, slot.param.shape(),
                             std::move(v)));
    }
    records.push_back(TensorRecord::fp32(
        "adam.step", {1}, {static_cast<float>(opt->steps_taken())}));
  }
  write_pack(path, records);
}

void load_checkpoint(Model& model, AdamOptimizer* opt,
                     const std::string& path) {
  const std::vector<TensorRecord> records = read_pack(path);
  std::map<std::string, const TensorRecord*> by_name;
  for (const TensorRecord& r : records) by_name[r.name] = &r;

  for (auto& [name, t] : model.parameters(true)) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for '" + name +
                               "'");
    const std::vector<float> v = it->second->dequantized();
    std::copy(v.begin(), v.end(), t.values().begin());
  }
  if (opt) {
    for (auto& slot : opt->slots()) {
      auto im = by_name.find("adam.m." + slot.name);
      auto iv = by_name.find("adam.v." + slot.name);
      if (im == by_name.end() || iv == by_name.end()) continue;
      slot.m.assign(im->second->floats.begin(), im->second->floats.end());
      slot.v.assign(iv->second->floats.begin(), iv->second->floats.end());
    }
    auto is = by_name.find("adam.step");
    if (is != by_name.end())
      opt->set_steps_taken(static_cast<int64_t>(is->second->floats[0]));
  }
}

}  // namespace qsv

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

#include "qsv/probe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qsv/rng.hpp"
#include "qsv/training.hpp"

namespace qsv {

EmbeddingSet extract_embeddings(Model& model, const Corpus& corpus) {
  EmbeddingSet set;
  set.dim = model.config().embedding_dim;
  set.embeddings.reserve(corpus.utts.size());
  for (const Utterance& u : corpus.utts) {
    Tensor e = model.embed(nullptr, u.frames);
    set.embeddings.emplace_back(e.values().begin(), e.values().end());
    set.gender.push_back(u.gender);
    set.scene.push_back(u.scene);
    set.style.push_back(u.style);
    set.heldout.push_back(u.heldout ? 1 : 0);
  }
  return set;
}

const char* probe_factor_name(ProbeFactor f) {
  switch (f) {
    case ProbeFactor::GenderLike:
      return "gender-like";
    case ProbeFactor::SceneLike:
      return "scene-like";
    case ProbeFactor::SpeakerStyle:
      return "speaker-style";
  }
  return "?";
}

ProbeTask make_probe_task(const EmbeddingSet& set, ProbeFactor factor) {
  ProbeTask task;
  task.name = probe_factor_name(factor);
  task.dim = set.dim;
  const std::vector<int>* labels = nullptr;
  switch (factor) {
    case ProbeFactor::GenderLike:
      labels = &set.gender;
      task.num_classes = 2;
      break;
    case ProbeFactor::SceneLike:
      labels = &set.scene;
      task.num_classes = 4;
      break;
    case ProbeFactor::SpeakerStyle:
      labels = &set.style;
      task.num_classes = 4;
      break;
  }
  for (size_t i = 0; i < set.embeddings.size(); ++i) {
    if (set.heldout[i]) {
      task.test_x.push_back(set.embeddings[i]);
      task.test_y.push_back((*labels)[i]);
    } else {
      task.train_x.push_back(set.embeddings[i]);
      task.train_y.push_back((*labels)[i]);
    }
  }
  auto has_two_classes = [](const std::vector<int>& y) {
    for (int v : y)
      if (v != y.front()) return true;
    return false;
  };
  if (task.train_x.empty() || task.test_x.empty() ||
      !has_two_classes(task.train_y) || !has_two_classes(task.test_y))
    throw std::invalid_argument("probe task needs >= 2 classes in each split");
  return task;
}

ProbeResult run_probe(const ProbeTask& task, const ProbeConfig& cfg,
                      uint64_t seed, bool shuffle_labels) {
  std::vector<int> train_y = task.train_y;
  std::vector<int> test_y = task.test_y;
  if (shuffle_labels) {
    Rng rng = Rng::stream(seed, "probe-shuffle");
    for (size_t i = train_y.size(); i > 1; --i)
      std::swap(train_y[i - 1], train_y[rng.below(i)]);
    for (size_t i = test_y.size(); i > 1; --i)
      std::swap(test_y[i - 1], test_y[rng.below(i)]);
  }

  // Standardize features on train statistics.
  const int d = task.dim;
  std::vector<double> mu(static_cast<size_t>(d), 0.0);
  std::vector<double> sd(static_cast<size_t>(d), 0.0);
  for (const auto& x : task.train_x)
    for (int i = 0; i < d; ++i) mu[static_cast<size_t>(i)] += x[static_cast<size_t>(i)];
  for (double& v : mu) v /= static_cast<double>(task.train_x.size());
  for (const auto& x : task.train_x)
    for (int i = 0; i < d; ++i) {
      const double diff = x[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)];
      sd[static_cast<size_t>(i)] += diff * diff;
    }
  for (double& v : sd)
    v = std::max(std::sqrt(v / static_cast<double>(task.train_x.size())),
                 1e-6);
  auto standardized = [&](const std::vector<float>& x) {
    Tensor t({1, d});
    auto tv = t.values();
    for (int i = 0; i < d; ++i)
      tv[static_cast<size_t>(i)] = static_cast<float>(
          (x[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)]) /
          sd[static_cast<size_t>(i)]);
    return t;
  };

  Rng init = Rng::stream(seed, "probe-init");
  auto gauss = [&](std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape), true);
    for (float& v : t.values())
      v = static_cast<float>(init.normal() * stddev);
    return t;
  };
  Tensor w1 = gauss({d, cfg.hidden}, std::sqrt(2.0 / d));
  Tensor b1 = Tensor::zeros({cfg.hidden}, true);
  Tensor w2 = gauss({cfg.hidden, task.num_classes},
                    std::sqrt(1.0 / cfg.hidden));
  Tensor b2 = Tensor::zeros({task.num_classes}, true);

  AdamOptimizer opt;
  opt.add_param("w1", w1);
  opt.add_param("b1", b1);
  opt.add_param("w2", w2);
  opt.add_param("b2", b2);

  auto forward = [&](Tape* tape, const Tensor& x) {
    Tensor h = relu(tape, add_bias(tape, matmul(tape, x, w1), b1));
    return add_bias(tape, matmul(tape, h, w2), b2);
  };

  std::vector<size_t> order(task.train_x.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = Rng::stream(seed, "probe-order", static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    size_t pos = 0;
    while (pos < order.size()) {
      const size_t take =
          std::min(static_cast<size_t>(cfg.batch), order.size() - pos);
      Tape tape;
      Tensor batch_loss;
      for (size_t b = 0; b < take; ++b) {
        const size_t idx = order[pos + b];
        Tensor logits = forward(&tape, standardized(task.train_x[idx]));
        Tensor loss =
            softmax_cross_entropy(&tape, logits, train_y[idx]);
        batch_loss = b == 0 ? loss : add(&tape, batch_loss, loss);
      }
      batch_loss = scale(&tape, batch_loss, 1.0 / static_cast<double>(take));
      opt.zero_grad();
      tape.backward(batch_loss);
      opt.step(cfg.lr, 0.0);
      pos += take;
    }
  }

  int64_t correct = 0;
  for (size_t i = 0; i < task.test_x.size(); ++i) {
    Tensor logits = forward(nullptr, standardized(task.test_x[i]));
    auto lv = logits.values();
    const int pred = static_cast<int>(
        std::max_element(lv.begin(), lv.end()) - lv.begin());
    if (pred == test_y[i]) ++correct;
  }
  ProbeResult r;
  r.accuracy =
      static_cast<double>(correct) / static_cast<double>(task.test_x.size());
  r.chance = 1.0 / static_cast<double>(task.num_classes);
  return r;
}

}  // namespace qsv

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

// Information probing: train a two-FC-layer classifier on frozen embeddings
// and measure how much attribute information they carry. Probes never look
// inside the model that produced the embeddings.

#ifndef QSV_PROBE_HPP
#define QSV_PROBE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "qsv/corpus.hpp"
#include "qsv/model.hpp"

namespace qsv {

struct EmbeddingSet {
  int dim = 0;
  std::vector<std::vector<float>> embeddings;  // one per utterance
  std::vector<int> gender, scene, style;
  std::vector<uint8_t> heldout;
};

// Whole-utterance forward for every utterance in the corpus.
EmbeddingSet extract_embeddings(Model& model, const Corpus& corpus);

enum class ProbeFactor { GenderLike, SceneLike, SpeakerStyle };

const char* probe_factor_name(ProbeFactor f);

struct ProbeTask {
  std::string name;
  int num_classes = 2;
  int dim = 0;
  std::vector<std::vector<float>> train_x, test_x;
  std::vector<int> train_y, test_y;
};

// Train split = train-speaker utterances, test split = held-out speakers,
// so the probe has to generalize across speakers.
ProbeTask make_probe_task(const EmbeddingSet& set, ProbeFactor factor);

struct ProbeConfig {
  int hidden = 64;
  int epochs = 100;
  double lr = 1e-3;
  int batch = 100;
};

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
};

// Deterministic given (task, cfg, seed). With shuffle_labels the train and
// test labels are permuted together, a null control that should land at
// chance.
ProbeResult run_probe(const ProbeTask& task, const ProbeConfig& cfg,
                      uint64_t seed, bool shuffle_labels = false);

}  // namespace qsv

#endif  // QSV_PROBE_HPP

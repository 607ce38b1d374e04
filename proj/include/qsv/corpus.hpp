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

// Deterministic synthetic speaker corpus.
//
// Every speaker is a unit direction on the feature sphere, shifted along a
// fixed "gender" direction before renormalization. An utterance is that
// direction under a style-dependent amplitude modulation, plus isotropic
// frame jitter, plus scene-colored noise at a fixed SNR. Train and trial
// speakers are disjoint; all draws come from counter-based streams of the
// master seed, so regeneration is bit-exact.

#ifndef QSV_CORPUS_HPP
#define QSV_CORPUS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "qsv/tensor.hpp"

namespace qsv {

struct CorpusConfig {
  int train_speakers = 20;
  int trial_speakers = 10;
  int utts_per_speaker = 50;
  int frames = 200;
  int feat_dim = 64;
  double snr_db = 10.0;
  void validate() const;
};

struct Utterance {
  std::string id;  // "s<speaker>_u<index>"
  int speaker = 0;  // global speaker index
  int label = -1;   // class index for training; -1 for held-out speakers
  bool heldout = false;
  int gender = 0;  // binary factor mixed into the speaker latent
  int scene = 0;   // 4-way noise-shaping condition
  int style = 0;   // 4-way modulation-depth factor
  Tensor frames;   // [T, feat_dim]
};

struct Corpus {
  CorpusConfig cfg;
  uint64_t seed = 0;
  std::vector<Utterance> utts;
  std::vector<size_t> train_idx;
  std::vector<size_t> trial_idx;
};

Corpus generate_corpus(const CorpusConfig& cfg, uint64_t seed);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

struct Trial {
  std::string enroll_id;
  std::string test_id;
  bool target = false;
};

// Samples same-speaker / cross-speaker pairs among held-out speakers.
std::vector<Trial> make_trials(const Corpus& corpus, int n_target,
                               int n_nontarget, uint64_t seed);

// Lines of "target|nontarget enroll_id test_id".
void save_trials(const std::vector<Trial>& trials, const std::string& path);
std::vector<Trial> load_trials(const std::string& path);

}  // namespace qsv

#endif  // QSV_CORPUS_HPP

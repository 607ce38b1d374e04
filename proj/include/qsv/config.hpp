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

// Key-value run configuration ("key = value" lines, '#' comments). One file
// describes the model, the synthetic corpus, and both training stages.

#ifndef QSV_CONFIG_HPP
#define QSV_CONFIG_HPP

#include <map>
#include <string>

#include "qsv/corpus.hpp"
#include "qsv/model.hpp"
#include "qsv/training.hpp"

namespace qsv {

class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
};

// Keys: arch, channels, embedding_dim, num_speakers, feat_dim.
ModelConfig model_config_from(const KeyValueConfig& kv);

// Keys: train_speakers, trial_speakers, utterances_per_speaker,
// frames_per_utterance, snr_db.
CorpusConfig corpus_config_from(const KeyValueConfig& kv);

// Keys under a stage prefix ("stage1" or "stage2"): <p>_epochs, <p>_lr,
// <p>_decay_epochs (comma list), <p>_decay_ratio, <p>_batch; shared keys:
// weight_decay, margin, scale.
TrainConfig train_config_from(const KeyValueConfig& kv,
                              const std::string& prefix);

}  // namespace qsv

#endif  // QSV_CONFIG_HPP

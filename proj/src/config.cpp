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

#include "qsv/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qsv {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": empty key");
    kv.entries_[key] = value;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

std::string KeyValueConfig::get(const std::string& key,
                                const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : std::stoi(it->second);
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : std::stod(it->second);
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.arch = kv.get("arch", cfg.arch);
  cfg.channels = kv.get_int("channels", cfg.channels);
  cfg.embedding_dim = kv.get_int("embedding_dim", cfg.embedding_dim);
  cfg.num_speakers = kv.get_int("num_speakers", cfg.num_speakers);
  cfg.feat_dim = kv.get_int("feat_dim", cfg.feat_dim);
  cfg.validate();
  return cfg;
}

CorpusConfig corpus_config_from(const KeyValueConfig& kv) {
  CorpusConfig cfg;
  cfg.train_speakers = kv.get_int("train_speakers", cfg.train_speakers);
  cfg.trial_speakers = kv.get_int("trial_speakers", cfg.trial_speakers);
  cfg.utts_per_speaker =
      kv.get_int("utterances_per_speaker", cfg.utts_per_speaker);
  cfg.frames = kv.get_int("frames_per_utterance", cfg.frames);
  cfg.feat_dim = kv.get_int("feat_dim", cfg.feat_dim);
  cfg.snr_db = kv.get_double("snr_db", cfg.snr_db);
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from(const KeyValueConfig& kv,
                              const std::string& prefix) {
  TrainConfig cfg;
  if (prefix == "stage2") {
    cfg.epochs = 20;
    cfg.decay_epochs = {10, 16};
  }
  cfg.epochs = kv.get_int(prefix + "_epochs", cfg.epochs);
  cfg.lr = kv.get_double(prefix + "_lr", cfg.lr);
  if (kv.has(prefix + "_decay_epochs"))
    cfg.decay_epochs = parse_int_list(kv.get(prefix + "_decay_epochs", ""));
  cfg.decay_ratio = kv.get_double(prefix + "_decay_ratio", cfg.decay_ratio);
  cfg.batch = kv.get_int(prefix + "_batch", cfg.batch);
  cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
  cfg.margin = static_cast<float>(kv.get_double("margin", cfg.margin));
  cfg.scale = static_cast<float>(kv.get_double("scale", cfg.scale));
  cfg.validate();
  return cfg;
}

}  // namespace qsv

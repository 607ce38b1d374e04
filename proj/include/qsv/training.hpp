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

// Two-stage training: full-precision classification with AAM-softmax, then
// quantized fine-tuning where every forward runs on fake-quantized weights
// and gradients reach the master weights and clip values through the
// straight-through rules.

#ifndef QSV_TRAINING_HPP
#define QSV_TRAINING_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qsv/corpus.hpp"
#include "qsv/model.hpp"

namespace qsv {

struct TrainConfig {
  int epochs = 12;
  double lr = 1e-3;
  std::vector<int> decay_epochs = {8, 11};  // 0-based epoch indices
  double decay_ratio = 0.1;
  double weight_decay = 2e-5;
  int batch = 32;
  uint64_t seed = 42;
  float margin = 0.2f;
  float scale = 30.0f;
  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. Parameters registered with
// no_decay = true (the clip values) never receive decay.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void add_param(const std::string& name, Tensor param, bool no_decay = false);
  void step(double lr, double weight_decay);
  void zero_grad();
  int64_t steps_taken() const { return t_; }

  struct Slot {
    std::string name;
    Tensor param;
    bool no_decay = false;
    std::vector<double> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::map<std::string, float> alphas;  // per-layer clip values (QAT only)
};

struct TrainLog {
  std::vector<EpochStats> epochs;
};

// Stage 1: full-precision AAM-softmax classification on the train split.
TrainLog train_fp32(Model& model, const Corpus& corpus,
                    const TrainConfig& cfg);

struct FinetuneResult {
  TrainLog log;
  // Final state per quantized layer: level codes of the tuned master
  // weights (with the learned alpha and fresh stats in each config).
  std::map<std::string, QuantizedTensor> codes;
  std::map<std::string, float> alphas;
};

// Stage 2: fine-tune from a full-precision model with fake-quantized
// forwards. Installs `assign` on all conv/fc layers, initializes each clip
// value at alpha0, and keeps every alpha >= 1e-4 after each step.
// epochs == 0 degenerates to pure post-training quantization.
FinetuneResult finetune_quantized(Model& model, const Corpus& corpus,
                                  const TrainConfig& cfg,
                                  const QuantAssign& assign,
                                  float alpha0 = 3.0f);

void write_train_log(const TrainLog& log, const std::string& path);

// Full-precision checkpoint: every parameter as an fp32 record, plus the
// optimizer first/second moments ("adam.m.*", "adam.v.*") and step count
// when an optimizer is given.
void save_checkpoint(Model& model, const AdamOptimizer* opt,
                     const std::string& path);
void load_checkpoint(Model& model, AdamOptimizer* opt,
                     const std::string& path);

}  // namespace qsv

#endif  // QSV_TRAINING_HPP

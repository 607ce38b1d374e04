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

// Verification scoring: sliding-window segment embeddings, averaged pairwise
// cosine trial scores, adaptive s-norm calibration against a cohort, and
// equal error rate with linear interpolation at the FAR/FRR crossing.

#ifndef QSV_EVALUATION_HPP
#define QSV_EVALUATION_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qsv/corpus.hpp"
#include "qsv/model.hpp"

namespace qsv {

// 4 s windows with 1 s overlap at 100 frames/s: window 400, hop 300.
inline constexpr int kSegmentWindow = 400;
inline constexpr int kSegmentHop = 300;

// Utterances shorter than one window yield a single whole-utterance segment.
std::vector<Tensor> segment_embed(Model& model, const Tensor& frames,
                                  int window = kSegmentWindow,
                                  int hop = kSegmentHop);

// Mean cosine over all enroll x test segment pairs.
double trial_score(const std::vector<Tensor>& enroll,
                   const std::vector<Tensor>& test);

struct CohortStats {
  double mean = 0.0;
  double std = 1.0;
  bool floored = false;  // zero-variance cohort engaged the 1e-8 floor
};

// Mean/std of the k largest cohort scores; k is clamped to the cohort size.
CohortStats topk_stats(std::vector<double> scores, int k);

// s' = ((s - mu_e)/sd_e + (s - mu_t)/sd_t) / 2
double as_norm_score(double s, const CohortStats& enroll,
                     const CohortStats& test);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// labels: 1 = target, 0 = nontarget. Sweeps every distinct score,
// FAR(t) = P(nontarget >= t), FRR(t) = P(target < t), and interpolates
// linearly between the two operating points bracketing FAR = FRR.
EerResult compute_eer(std::span<const double> scores,
                      std::span<const uint8_t> labels);

struct ScoredTrial {
  Trial trial;
  double raw = 0.0;
  double norm = 0.0;
};

struct EvalResult {
  std::vector<ScoredTrial> scores;
  EerResult raw;
  EerResult normalized;
};

// Scores trials with the model, then AS-norm-calibrates against the cohort
// of train-speaker mean embeddings.
EvalResult evaluate_trials(Model& model, const Corpus& corpus,
                           const std::vector<Trial>& trials, int top_k = 50);

// Lines of "enroll_id test_id raw_score norm_score".
void save_scores(const EvalResult& result, const std::string& path);

}  // namespace qsv

#endif  // QSV_EVALUATION_HPP

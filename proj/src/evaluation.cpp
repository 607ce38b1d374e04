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

#include "qsv/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace qsv {

namespace {

Tensor slice_rows(const Tensor& frames, int start, int len) {
  const int c = frames.dim(1);
  Tensor out({len, c});
  auto src = frames.values();
  auto dst = out.values();
  std::copy(src.begin() + static_cast<size_t>(start) * c,
            src.begin() + static_cast<size_t>(start + len) * c, dst.begin());
  return out;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::runtime_error("cosine: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<Tensor> segment_embed(Model& model, const Tensor& frames,
                                  int window, int hop) {
  if (frames.numel() == 0 || frames.rank() != 2)
    throw std::invalid_argument("segment_embed: empty input");
  if (window < 1 || hop < 1)
    throw std::invalid_argument("segment_embed: invalid window/hop");
  const int T = frames.dim(0);
  std::vector<Tensor> segments;
  if (T < window) {
    segments.push_back(model.embed(nullptr, frames));
    return segments;
  }
  const int count = (T - window) / hop + 1;
  segments.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    segments.push_back(model.embed(nullptr, slice_rows(frames, i * hop,
                                                       window)));
  return segments;
}

double trial_score(const std::vector<Tensor>& enroll,
                   const std::vector<Tensor>& test) {
  if (enroll.empty() || test.empty())
    throw std::invalid_argument("trial_score: empty segment list");
  double acc = 0.0;
  for (const Tensor& e : enroll)
    for (const Tensor& t : test) acc += cosine(e.values(), t.values());
  return acc / (static_cast<double>(enroll.size()) * test.size());
}

CohortStats topk_stats(std::vector<double> scores, int k) {
  if (scores.empty())
    throw std::invalid_argument("topk_stats: empty cohort");
  k = std::min<int>(k, static_cast<int>(scores.size()));
  if (k < 2) throw std::invalid_argument("topk_stats: need top_k >= 2");
  std::partial_sort(scores.begin(), scores.begin() + k, scores.end(),
                    std::greater<>());
  double m = 0.0;
  for (int i = 0; i < k; ++i) m += scores[static_cast<size_t>(i)];
  m /= k;
  double var = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = scores[static_cast<size_t>(i)] - m;
    var += d * d;
  }
  CohortStats st;
  st.mean = m;
  st.std = std::sqrt(var / k);
  if (st.std < 1e-8) {
    st.std = 1e-8;
    st.floored = true;
  }
  return st;
}

double as_norm_score(double s, const CohortStats& enroll,
                     const CohortStats& test) {
  return 0.5 * ((s - enroll.mean) / enroll.std + (s - test.mean) / test.std);
}

EerResult compute_eer(std::span<const double> scores,
                      std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("compute_eer: size mismatch");
  std::vector<double> targets, nontargets;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw std::invalid_argument("compute_eer: non-finite score");
    (labels[i] ? targets : nontargets).push_back(scores[i]);
  }
  if (targets.empty() || nontargets.empty())
    throw std::invalid_argument(
        "compute_eer: need at least one target and one nontarget trial");

  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());

  // Candidate thresholds: every distinct score, ascending. FAR starts at 1
  // and falls; FRR starts at 0 and rises.
  std::vector<double> thresholds;
  thresholds.reserve(scores.size());
  thresholds.insert(thresholds.end(), targets.begin(), targets.end());
  thresholds.insert(thresholds.end(), nontargets.begin(), nontargets.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  auto far_at = [&](double t) {
    // nontargets >= t
    const auto it = std::lower_bound(nontargets.begin(), nontargets.end(), t);
    return static_cast<double>(nontargets.end() - it) / nn;
  };
  auto frr_at = [&](double t) {
    // targets < t
    const auto it = std::lower_bound(targets.begin(), targets.end(), t);
    return static_cast<double>(it - targets.begin()) / nt;
  };

  double prev_far = 1.0, prev_frr = 0.0;
  double prev_thr = thresholds.front() - 1.0;
  for (double t : thresholds) {
    const double far = far_at(t);
    const double frr = frr_at(t);
    if (frr >= far) {
      if (frr == far) return {far, t};
      // Crossing happened between the previous operating point and this one.
      const double g0 = prev_far - prev_frr;
      const double g1 = far - frr;
      const double lambda = g0 / (g0 - g1);
      EerResult r;
      r.eer = prev_far + lambda * (far - prev_far);
      r.threshold = prev_thr + lambda * (t - prev_thr);
      return r;
    }
    prev_far = far;
    prev_frr = frr;
    prev_thr = t;
  }
  // Above the largest score FAR = 0 and FRR = 1; interpolate to that point.
  const double g0 = prev_far - prev_frr;
  const double g1 = 0.0 - 1.0;
  const double lambda = g0 / (g0 - g1);
  EerResult r;
  r.eer = prev_far * (1.0 - lambda);
  r.threshold = prev_thr;
  return r;
}

EvalResult evaluate_trials(Model& model, const Corpus& corpus,
                           const std::vector<Trial>& trials, int top_k) {
  if (trials.empty()) throw std::invalid_argument("no trials to evaluate");

  // Segment embeddings for every utterance named by a trial.
  std::map<std::string, const Utterance*> utt_by_id;
  for (const Utterance& u : corpus.utts) utt_by_id[u.id] = &u;
  std::map<std::string, std::vector<Tensor>> segs;
  std::map<std::string, std::vector<float>> utt_emb;
  auto ensure_embedded = [&](const std::string& id) {
    if (segs.count(id)) return;
    auto it = utt_by_id.find(id);
    if (it == utt_by_id.end())
      throw std::runtime_error("trial references unknown utterance " + id);
    std::vector<Tensor> s = segment_embed(model, it->second->frames);
    // Utterance-level embedding for cohort scoring: mean over segments.
    std::vector<float> m(static_cast<size_t>(s.front().numel()), 0.0f);
    for (const Tensor& seg : s) {
      auto sv = seg.values();
      for (size_t i = 0; i < m.size(); ++i) m[i] += sv[i];
    }
    for (float& v : m) v /= static_cast<float>(s.size());
    segs[id] = std::move(s);
    utt_emb[id] = std::move(m);
  };

  // Cohort: one mean embedding per training speaker.
  std::map<int, std::pair<std::vector<double>, int>> cohort_acc;
  for (size_t idx : corpus.train_idx) {
    const Utterance& u = corpus.utts[idx];
    Tensor e = model.embed(nullptr, u.frames);
    auto ev = e.values();
    auto& [acc, count] = cohort_acc[u.speaker];
    if (acc.empty()) acc.assign(ev.size(), 0.0);
    for (size_t i = 0; i < ev.size(); ++i) acc[i] += ev[i];
    ++count;
  }
  std::vector<std::vector<float>> cohort;
  for (auto& [spk, entry] : cohort_acc) {
    std::vector<float> m(entry.first.size());
    for (size_t i = 0; i < m.size(); ++i)
      m[i] = static_cast<float>(entry.first[i] / entry.second);
    cohort.push_back(std::move(m));
  }

  std::map<std::string, CohortStats> cohort_stats;
  auto stats_for = [&](const std::string& id) {
    auto it = cohort_stats.find(id);
    if (it != cohort_stats.end()) return it->second;
    std::vector<double> cs;
    cs.reserve(cohort.size());
    for (const auto& c : cohort) cs.push_back(cosine(utt_emb[id], c));
    CohortStats st = topk_stats(std::move(cs), top_k);
    if (st.floored)
      std::fprintf(stderr,
                   "warning: zero-variance cohort scores for %s; sigma "
                   "floored at 1e-8\n",
                   id.c_str());
    cohort_stats[id] = st;
    return st;
  };

  EvalResult result;
  std::vector<double> raw_scores, norm_scores;
  std::vector<uint8_t> labels;
  for (const Trial& trial : trials) {
    ensure_embedded(trial.enroll_id);
    ensure_embedded(trial.test_id);
    ScoredTrial st;
    st.trial = trial;
    st.raw = trial_score(segs[trial.enroll_id], segs[trial.test_id]);
    st.norm = as_norm_score(st.raw, stats_for(trial.enroll_id),
                            stats_for(trial.test_id));
    raw_scores.push_back(st.raw);
    norm_scores.push_back(st.norm);
    labels.push_back(trial.target ? 1 : 0);
    result.scores.push_back(std::move(st));
  }
  result.raw = compute_eer(raw_scores, labels);
  result.normalized = compute_eer(norm_scores, labels);
  return result;
}

void save_scores(const EvalResult& result, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out.precision(9);
    for (const ScoredTrial& st : result.scores)
      out << st.trial.enroll_id << ' ' << st.trial.test_id << ' ' << st.raw
          << ' ' << st.norm << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

}  // namespace qsv

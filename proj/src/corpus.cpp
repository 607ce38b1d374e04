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

#include "qsv/corpus.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "qsv/rng.hpp"

namespace qsv {

namespace {

// Generator constants; changing any of them changes every derived corpus.
constexpr double kGenderShift = 0.6;    // latent shift along the gender axis
constexpr double kJitterStd = 0.35;     // per-frame isotropic jitter
constexpr double kModCycles = 4.0;      // modulation cycles per utterance
constexpr double kStyleDepth[4] = {0.10, 0.25, 0.40, 0.60};
constexpr int kNumScenes = 4;
constexpr int kNumStyles = 4;

std::vector<double> unit_vector(Rng& rng, int dim) {
  std::vector<double> v(static_cast<size_t>(dim));
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

void CorpusConfig::validate() const {
  if (train_speakers < 2 || trial_speakers < 2)
    throw std::invalid_argument("corpus needs at least 2 speakers per split");
  if (utts_per_speaker < 2 || frames < 1 || feat_dim < 1)
    throw std::invalid_argument("invalid corpus extents");
}

Corpus generate_corpus(const CorpusConfig& cfg, uint64_t seed) {
  cfg.validate();
  Corpus corpus;
  corpus.cfg = cfg;
  corpus.seed = seed;

  const int dim = cfg.feat_dim;
  Rng grng = Rng::stream(seed, "gender-dir");
  const std::vector<double> gender_dir = unit_vector(grng, dim);

  // Per-scene spectral shaping with unit mean square.
  std::vector<std::vector<double>> scene_gain(kNumScenes);
  for (int s = 0; s < kNumScenes; ++s) {
    Rng srng = Rng::stream(seed, "scene-shape", static_cast<uint64_t>(s));
    scene_gain[s].resize(static_cast<size_t>(dim));
    double ms = 0.0;
    for (double& g : scene_gain[s]) {
      g = std::exp(0.5 * srng.normal());
      ms += g * g;
    }
    ms = std::sqrt(ms / dim);
    for (double& g : scene_gain[s]) g /= ms;
  }

  // Speech power per dimension: unit latent spread over `dim` dims under the
  // average squared modulation envelope, plus jitter.
  double mean_depth_sq = 0.0;
  for (double d : kStyleDepth) mean_depth_sq += d * d;
  mean_depth_sq /= kNumStyles;
  const double speech_power =
      (1.0 + mean_depth_sq / 2.0) / dim + kJitterStd * kJitterStd;
  const double noise_amp =
      std::sqrt(speech_power / std::pow(10.0, cfg.snr_db / 10.0));

  const int total_speakers = cfg.train_speakers + cfg.trial_speakers;
  for (int s = 0; s < total_speakers; ++s) {
    const bool heldout = s >= cfg.train_speakers;
    const int gender = s % 2;
    Rng srng = Rng::stream(seed, "speaker", static_cast<uint64_t>(s));
    std::vector<double> latent = unit_vector(srng, dim);
    double n = 0.0;
    for (int i = 0; i < dim; ++i) {
      latent[static_cast<size_t>(i)] +=
          kGenderShift * (2 * gender - 1) * gender_dir[static_cast<size_t>(i)];
      n += latent[static_cast<size_t>(i)] * latent[static_cast<size_t>(i)];
    }
    n = std::sqrt(n);
    for (double& x : latent) x /= n;

    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      Rng urng = Rng::stream(seed, "utt", static_cast<uint64_t>(s),
                             static_cast<uint64_t>(u));
      Utterance utt;
      utt.speaker = s;
      utt.label = heldout ? -1 : s;
      utt.heldout = heldout;
      utt.gender = gender;
      utt.style = static_cast<int>(urng.below(kNumStyles));
      utt.scene = static_cast<int>(urng.below(kNumScenes));
      utt.id = "s" + std::to_string(s) + "_u" + std::to_string(u);

      const double depth = kStyleDepth[utt.style];
      const double phase = urng.uniform(0.0, 2.0 * std::numbers::pi);
      const auto& gain = scene_gain[utt.scene];

      utt.frames = Tensor({cfg.frames, dim});
      auto fv = utt.frames.values();
      for (int t = 0; t < cfg.frames; ++t) {
        const double env =
            1.0 + depth * std::sin(2.0 * std::numbers::pi * kModCycles * t /
                                       cfg.frames +
                                   phase);
        for (int i = 0; i < dim; ++i)
          fv[t * dim + i] = static_cast<float>(
              latent[static_cast<size_t>(i)] * env +
              kJitterStd * urng.normal() +
              noise_amp * gain[static_cast<size_t>(i)] * urng.normal());
      }
      const size_t idx = corpus.utts.size();
      corpus.utts.push_back(std::move(utt));
      (heldout ? corpus.trial_idx : corpus.train_idx).push_back(idx);
    }
  }
  return corpus;
}

namespace {

constexpr char kCorpusMagic[4] = {'Q', 'S', 'V', 'C'};

template <typename T>
void put_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("corpus file truncated");
  return v;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out.write(kCorpusMagic, 4);
    put_raw<uint8_t>(out, 1);
    put_raw<uint32_t>(out, static_cast<uint32_t>(corpus.cfg.train_speakers));
    put_raw<uint32_t>(out, static_cast<uint32_t>(corpus.cfg.trial_speakers));
    put_raw<uint32_t>(out,
                      static_cast<uint32_t>(corpus.cfg.utts_per_speaker));
    put_raw<uint32_t>(out, static_cast<uint32_t>(corpus.cfg.frames));
    put_raw<uint32_t>(out, static_cast<uint32_t>(corpus.cfg.feat_dim));
    put_raw<double>(out, corpus.cfg.snr_db);
    put_raw<uint64_t>(out, corpus.seed);
    put_raw<uint32_t>(out, static_cast<uint32_t>(corpus.utts.size()));
    for (const Utterance& u : corpus.utts) {
      put_raw<uint16_t>(out, static_cast<uint16_t>(u.id.size()));
      out.write(u.id.data(), static_cast<std::streamsize>(u.id.size()));
      put_raw<int32_t>(out, u.speaker);
      put_raw<int32_t>(out, u.label);
      put_raw<uint8_t>(out, u.heldout ? 1 : 0);
      put_raw<uint8_t>(out, static_cast<uint8_t>(u.gender));
      put_raw<uint8_t>(out, static_cast<uint8_t>(u.scene));
      put_raw<uint8_t>(out, static_cast<uint8_t>(u.style));
      auto fv = u.frames.values();
      out.write(reinterpret_cast<const char*>(fv.data()),
                static_cast<std::streamsize>(fv.size() * 4));
    }
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCorpusMagic, 4) != 0)
    throw std::runtime_error("not a corpus file: " + path);
  if (get_raw<uint8_t>(in) != 1)
    throw std::runtime_error("unsupported corpus version");
  Corpus corpus;
  corpus.cfg.train_speakers = static_cast<int>(get_raw<uint32_t>(in));
  corpus.cfg.trial_speakers = static_cast<int>(get_raw<uint32_t>(in));
  corpus.cfg.utts_per_speaker = static_cast<int>(get_raw<uint32_t>(in));
  corpus.cfg.frames = static_cast<int>(get_raw<uint32_t>(in));
  corpus.cfg.feat_dim = static_cast<int>(get_raw<uint32_t>(in));
  corpus.cfg.snr_db = get_raw<double>(in);
  corpus.seed = get_raw<uint64_t>(in);
  const uint32_t count = get_raw<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    Utterance u;
    const uint16_t len = get_raw<uint16_t>(in);
    u.id.resize(len);
    in.read(u.id.data(), len);
    u.speaker = get_raw<int32_t>(in);
    u.label = get_raw<int32_t>(in);
    u.heldout = get_raw<uint8_t>(in) != 0;
    u.gender = get_raw<uint8_t>(in);
    u.scene = get_raw<uint8_t>(in);
    u.style = get_raw<uint8_t>(in);
    u.frames = Tensor({corpus.cfg.frames, corpus.cfg.feat_dim});
    auto fv = u.frames.values();
    in.read(reinterpret_cast<char*>(fv.data()),
            static_cast<std::streamsize>(fv.size() * 4));
    if (!in) throw std::runtime_error("corpus file truncated");
    const size_t idx = corpus.utts.size();
    corpus.utts.push_back(std::move(u));
    (corpus.utts.back().heldout ? corpus.trial_idx : corpus.train_idx)
        .push_back(idx);
  }
  return corpus;
}

std::vector<Trial> make_trials(const Corpus& corpus, int n_target,
                               int n_nontarget, uint64_t seed) {
  if (corpus.trial_idx.empty())
    throw std::invalid_argument("make_trials: corpus has no held-out split");
  const auto& pool = corpus.trial_idx;
  Rng rng = Rng::stream(seed, "trials");
  std::vector<Trial> trials;
  trials.reserve(static_cast<size_t>(n_target + n_nontarget));
  int made = 0;
  while (made < n_target) {
    const Utterance& a = corpus.utts[pool[rng.below(pool.size())]];
    const Utterance& b = corpus.utts[pool[rng.below(pool.size())]];
    if (a.speaker != b.speaker || a.id == b.id) continue;
    trials.push_back({a.id, b.id, true});
    ++made;
  }
  made = 0;
  while (made < n_nontarget) {
    const Utterance& a = corpus.utts[pool[rng.below(pool.size())]];
    const Utterance& b = corpus.utts[pool[rng.below(pool.size())]];
    if (a.speaker == b.speaker) continue;
    trials.push_back({a.id, b.id, false});
    ++made;
  }
  return trials;
}

void save_trials(const std::vector<Trial>& trials, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    for (const Trial& t : trials)
      out << (t.target ? "target" : "nontarget") << ' ' << t.enroll_id << ' '
          << t.test_id << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

std::vector<Trial> load_trials(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Trial> trials;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string label, a, b;
    if (!(ss >> label >> a >> b))
      throw std::runtime_error("malformed trial line: " + line);
    if (label != "target" && label != "nontarget")
      throw std::runtime_error("unknown trial label: " + label);
    trials.push_back({a, b, label == "target"});
  }
  return trials;
}

}  // namespace qsv

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

// Command-line driver for the quantization toolkit. Subcommands cover the
// whole pipeline: synthetic corpus generation, two-stage training,
// post-training quantization, packing, verification scoring, per-layer
// analysis, information probing, and run-report merging.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qsv/analysis.hpp"
#include "qsv/config.hpp"
#include "qsv/corpus.hpp"
#include "qsv/evaluation.hpp"
#include "qsv/model.hpp"
#include "qsv/packfile.hpp"
#include "qsv/probe.hpp"
#include "qsv/training.hpp"

using nlohmann::json;
using namespace qsv;

namespace {

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

uint64_t file_size(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + path);
  return static_cast<uint64_t>(in.tellg());
}

struct CommonArgs {
  std::string config;
  uint64_t seed = 42;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config,
                              "run configuration file (key = value lines)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "master random seed");
}

KeyValueConfig load_kv(const CommonArgs& args) {
  return args.config.empty() ? KeyValueConfig::parse_string("")
                             : KeyValueConfig::parse_file(args.config);
}

// Quantization metadata of a packed model, for report rows.
struct PackSummary {
  std::string scheme = "fp32";
  int bits = 32;
  bool mixed = false;
};

PackSummary summarize_pack(const std::string& path) {
  PackSummary s;
  bool first = true;
  for (const TensorRecord& r : read_pack(path)) {
    if (r.is_fp32() || r.name.size() < 7 ||
        r.name.compare(r.name.size() - 7, 7, ".weight") != 0)
      continue;
    const std::string scheme =
        scheme_name(static_cast<QuantScheme>(r.scheme));
    if (first) {
      s.scheme = scheme;
      s.bits = r.bits;
      first = false;
    } else if (s.scheme != scheme || s.bits != r.bits) {
      s.mixed = true;
    }
  }
  return s;
}

int cmd_gen_corpus(const CommonArgs& args, const std::string& out,
                   const std::string& trials_out, int n_target,
                   int n_nontarget) {
  KeyValueConfig kv = load_kv(args);
  Corpus corpus = generate_corpus(corpus_config_from(kv), args.seed);
  save_corpus(corpus, out);
  std::vector<Trial> trials =
      make_trials(corpus, n_target, n_nontarget, args.seed);
  save_trials(trials, trials_out);
  std::cout << "wrote " << corpus.utts.size() << " utterances to " << out
            << " and " << trials.size() << " trials to " << trials_out
            << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_path,
              const std::string& out, const std::string& log_path) {
  KeyValueConfig kv = load_kv(args);
  Corpus corpus = load_corpus(corpus_path);
  ModelConfig mcfg = model_config_from(kv);
  mcfg.num_speakers = corpus.cfg.train_speakers;
  TrainConfig tcfg = train_config_from(kv, "stage1");
  tcfg.seed = args.seed;

  Model model = Model::build(mcfg, args.seed);
  TrainLog log = train_fp32(model, corpus, tcfg);
  AdamOptimizer opt;  // persisted for inspection; fine-tuning restarts Adam
  for (auto& [name, t] : model.parameters(true)) opt.add_param(name, t);
  save_checkpoint(model, &opt, out);
  if (!log_path.empty()) write_train_log(log, log_path);
  if (!log.epochs.empty())
    std::cout << "final loss " << log.epochs.back().loss << ", accuracy "
              << log.epochs.back().accuracy << "\n";
  std::cout << "checkpoint written to " << out << "\n";
  return 0;
}

Model load_model_for(const KeyValueConfig& kv, const Corpus* corpus,
                     uint64_t seed, const std::string& weights_path) {
  ModelConfig mcfg = model_config_from(kv);
  if (corpus) mcfg.num_speakers = corpus->cfg.train_speakers;
  Model model = Model::build(mcfg, seed);
  unpack_into_model(model, weights_path);
  return model;
}

int cmd_quantize(const CommonArgs& args, const std::string& ckpt,
                 const std::string& out, int bits, const std::string& scheme,
                 float alpha) {
  KeyValueConfig kv = load_kv(args);
  Model model = load_model_for(kv, nullptr, args.seed, ckpt);
  QuantAssign assign{true, scheme_from_name(scheme), bits};
  for (Layer& l : model.layers())
    if (l.quantizable()) l.quant = assign;
  model.enable_qat(alpha);

  QuantizerConfig report_cfg;
  report_cfg.scheme = assign.scheme;
  report_cfg.bits = bits;
  report_cfg.alpha = alpha;
  for (Layer& l : model.layers()) {
    if (normalize(l.weight).sigma_floored)
      std::cerr << "warning: layer " << l.name
                << " has (near-)constant weights; sigma floored at 1e-8\n";
    QuantizedTensor q = quantize(l.weight, report_cfg);
    QuantError e = quant_error(l.weight, q);
    std::cout << l.name << ": avg quant error " << e.average << "\n";
  }
  const uint64_t bytes = pack_model(model, out);
  std::cout << "packed " << bytes << " bytes to " << out << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& corpus_path,
                 const std::string& ckpt, const std::string& out,
                 const std::string& log_path, int bits,
                 const std::string& scheme, float alpha0) {
  KeyValueConfig kv = load_kv(args);
  Corpus corpus = load_corpus(corpus_path);
  ModelConfig mcfg = model_config_from(kv);
  mcfg.num_speakers = corpus.cfg.train_speakers;
  TrainConfig tcfg = train_config_from(kv, "stage2");
  tcfg.seed = args.seed;

  Model model = Model::build(mcfg, args.seed);
  load_checkpoint(model, nullptr, ckpt);
  QuantAssign assign{true, scheme_from_name(scheme), bits};
  FinetuneResult ft = finetune_quantized(model, corpus, tcfg, assign, alpha0);
  const uint64_t bytes = pack_model(model, out);
  if (!log_path.empty()) write_train_log(ft.log, log_path);
  if (!ft.log.epochs.empty())
    std::cout << "final loss " << ft.log.epochs.back().loss << ", accuracy "
              << ft.log.epochs.back().accuracy << "\n";
  for (const auto& [name, alpha] : ft.alphas)
    std::cout << name << ": alpha " << alpha << "\n";
  std::cout << "packed " << bytes << " bytes to " << out << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& corpus_path,
             const std::string& model_path, const std::string& trials_path,
             const std::string& scores_out, const std::string& summary_out,
             int top_k) {
  KeyValueConfig kv = load_kv(args);
  Corpus corpus = load_corpus(corpus_path);
  Model model = load_model_for(kv, &corpus, args.seed, model_path);
  std::vector<Trial> trials = load_trials(trials_path);
  EvalResult result = evaluate_trials(model, corpus, trials, top_k);
  save_scores(result, scores_out);

  PackSummary ps = summarize_pack(model_path);
  json j;
  j["model"] = model_path;
  j["arch"] = model.config().arch;
  j["scheme"] = ps.mixed ? "mixed" : ps.scheme;
  j["bits"] = ps.bits;
  j["size_bytes"] = file_size(model_path);
  j["params"] = count_params(model.config());
  j["params_millions"] = count_params(model.config()) / 1e6;
  j["macs"] = count_macs(model.config(), corpus.cfg.frames);
  j["macs_giga"] = count_macs(model.config(), corpus.cfg.frames) / 1e9;
  j["trials"] = trials.size();
  j["top_k"] = top_k;
  j["eer_raw"] = result.raw.eer;
  j["eer_raw_threshold"] = result.raw.threshold;
  j["eer_norm"] = result.normalized.eer;
  j["eer_norm_threshold"] = result.normalized.threshold;
  write_text_atomic(summary_out, j.dump(2) + "\n");
  std::cout << "EER raw " << result.raw.eer * 100 << "%, as-norm "
            << result.normalized.eer * 100 << "% over " << trials.size()
            << " trials\n";
  return 0;
}

int cmd_analyze(const CommonArgs& args, const std::string& model_path,
                const std::string& report_out, const std::string& hist_out,
                int bits, const std::string& scheme, float alpha, int bins,
                int frames) {
  KeyValueConfig kv = load_kv(args);
  Model model = load_model_for(kv, nullptr, args.seed, model_path);
  QuantizerConfig fallback;
  fallback.scheme = scheme_from_name(scheme);
  fallback.bits = bits;
  fallback.alpha = alpha;

  auto records = layer_report(model, frames, fallback);
  json layers = json::array();
  for (const auto& r : records) {
    json row;
    row["name"] = r.name;
    row["params"] = r.params;
    row["macs"] = r.macs;
    row["avg_quant_error"] = r.avg_error;
    row["total_quant_error"] = r.total_error;
    row["alpha"] = r.alpha;
    row["kurtosis"] = r.kurtosis;
    layers.push_back(row);
  }
  json j;
  j["model"] = model_path;
  j["layers"] = layers;
  if (records.size() >= 3)
    j["spearman_params_vs_error"] = correlation_check(records);
  write_text_atomic(report_out, j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "layer,bin_low,bin_high,pre_mass,post_mass\n";
  for (Layer& l : model.layers()) {
    if (!l.quantizable()) continue;
    QuantizerConfig qc = fallback;
    if (l.quant.quantized) {
      qc.scheme = l.quant.scheme;
      qc.bits = l.quant.bits;
      if (l.alpha.defined()) qc.alpha = l.alpha.item();
    }
    HistogramPair h = layer_histogram(l.weight.values(), qc, bins);
    for (int b = 0; b < h.bins; ++b) {
      const double lo = -1.0 + 2.0 * b / h.bins;
      const double hi = -1.0 + 2.0 * (b + 1) / h.bins;
      csv << l.name << ',' << lo << ',' << hi << ','
          << h.pre[static_cast<size_t>(b)] << ','
          << h.post[static_cast<size_t>(b)] << '\n';
    }
  }
  write_text_atomic(hist_out, csv.str());
  std::cout << "wrote " << report_out << " and " << hist_out << "\n";
  return 0;
}

int cmd_pack(const CommonArgs& args, const std::string& ckpt,
             const std::string& out, bool fp32, int bits,
             const std::string& scheme, float alpha) {
  KeyValueConfig kv = load_kv(args);
  Model model = load_model_for(kv, nullptr, args.seed, ckpt);
  if (!fp32) {
    QuantAssign assign{true, scheme_from_name(scheme), bits};
    for (Layer& l : model.layers())
      if (l.quantizable()) l.quant = assign;
    model.enable_qat(alpha);
  } else {
    for (Layer& l : model.layers()) l.quant.quantized = false;
  }
  const uint64_t bytes = pack_model(model, out);
  std::cout << "packed " << bytes << " bytes to " << out << "\n";
  return 0;
}

int cmd_describe(const std::string& path, const std::string& out) {
  const auto records = read_pack(path);
  json j;
  j["magic"] = "QSVW";
  j["version"] = kPackVersion;
  j["tensor_count"] = records.size();
  j["file_bytes"] = file_size(path);
  json rows = json::array();
  for (const TensorRecord& r : records) {
    json row;
    row["name"] = r.name;
    row["shape"] = r.shape;
    row["scheme_byte"] = r.scheme;
    row["scheme"] = r.is_fp32()
                        ? "fp32"
                        : scheme_name(static_cast<QuantScheme>(r.scheme));
    row["bits"] = r.bits;
    row["elements"] = r.num_elements();
    row["payload_bytes"] = payload_bytes(r.num_elements(), r.bits,
                                         r.is_fp32());
    if (!r.is_fp32()) {
      row["alpha"] = r.alpha;
      row["mu"] = r.mu;
      row["sigma"] = r.sigma;
    }
    rows.push_back(row);
  }
  j["records"] = rows;
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text_atomic(out, text);
  return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& corpus_path,
              const std::string& model_path, const std::string& out,
              int epochs) {
  KeyValueConfig kv = load_kv(args);
  Corpus corpus = load_corpus(corpus_path);
  Model model = load_model_for(kv, &corpus, args.seed, model_path);
  EmbeddingSet set = extract_embeddings(model, corpus);
  PackSummary ps = summarize_pack(model_path);

  ProbeConfig pcfg;
  pcfg.epochs = epochs;
  json rows = json::array();
  for (ProbeFactor f : {ProbeFactor::GenderLike, ProbeFactor::SceneLike,
                        ProbeFactor::SpeakerStyle}) {
    ProbeTask task = make_probe_task(set, f);
    ProbeResult r = run_probe(task, pcfg, args.seed);
    ProbeResult shuffled = run_probe(task, pcfg, args.seed, true);
    json row;
    row["task"] = task.name;
    row["model"] = model_path;
    row["scheme"] = ps.mixed ? "mixed" : ps.scheme;
    row["bits"] = ps.bits;
    row["accuracy"] = r.accuracy;
    row["chance"] = r.chance;
    row["shuffled_accuracy"] = shuffled.accuracy;
    rows.push_back(row);
    std::cout << task.name << ": accuracy " << r.accuracy << " (chance "
              << r.chance << ", shuffled " << shuffled.accuracy << ")\n";
  }
  write_text_atomic(out, rows.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::vector<std::string>& summaries,
               const std::string& out) {
  json rows = json::array();
  for (const std::string& path : summaries) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    rows.push_back(json::parse(in));
  }
  write_text_atomic(out, rows.dump(2) + "\n");

  std::printf("%-28s %-10s %-5s %10s %9s %10s %10s %10s\n", "model",
              "scheme", "bits", "params(M)", "MACs(G)", "size(MB)",
              "EER raw%", "EER norm%");
  for (const auto& row : rows) {
    std::printf("%-28s %-10s %-5d %10.3f %9.4f %10.3f %10.2f %10.2f\n",
                row.value("model", std::string("?")).c_str(),
                row.value("scheme", std::string("?")).c_str(),
                row.value("bits", 0), row.value("params_millions", 0.0),
                row.value("macs_giga", 0.0),
                row.value("size_bytes", 0.0) / 1e6,
                row.value("eer_raw", 0.0) * 100.0,
                row.value("eer_norm", 0.0) * 100.0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learnable weight quantization for small speaker-embedding "
               "models"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-corpus",
                                 "generate the synthetic speaker corpus");
  std::string gen_out = "corpus.qsvc", gen_trials = "trials.txt";
  int gen_targets = 3000, gen_nontargets = 3000;
  add_common(gen, args, true);
  gen->add_option("--out", gen_out, "corpus output file");
  gen->add_option("--trials-out", gen_trials, "trial list output file");
  gen->add_option("--targets", gen_targets, "number of target trials");
  gen->add_option("--nontargets", gen_nontargets,
                  "number of nontarget trials");

  auto* train = app.add_subcommand("train",
                                   "stage-1 full-precision training");
  std::string train_corpus, train_out = "ckpt_fp32.qsvw", train_log;
  add_common(train, args, true);
  train->add_option("--corpus", train_corpus)
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "checkpoint output");
  train->add_option("--log", train_log, "JSONL training log");

  auto* quant = app.add_subcommand("quantize",
                                   "post-training quantization of a "
                                   "checkpoint into a packfile");
  std::string q_ckpt, q_out = "model_q.qsvw", q_scheme = "uniform";
  int q_bits = 8;
  float q_alpha = 3.0f;
  add_common(quant, args, true);
  quant->add_option("--checkpoint", q_ckpt)
      ->required()
      ->check(CLI::ExistingFile);
  quant->add_option("--out", q_out);
  quant->add_option("--bits", q_bits)->check(CLI::Range(2, 8));
  quant->add_option("--scheme", q_scheme)
      ->check(CLI::IsMember({"uniform", "pot"}));
  quant->add_option("--alpha", q_alpha, "clip value");

  auto* ft = app.add_subcommand("finetune",
                                "stage-2 quantized fine-tuning from a "
                                "checkpoint");
  std::string ft_corpus, ft_ckpt, ft_out = "model_qat.qsvw", ft_log,
              ft_scheme = "uniform";
  int ft_bits = 8;
  float ft_alpha0 = 3.0f;
  add_common(ft, args, true);
  ft->add_option("--corpus", ft_corpus)->required()->check(
      CLI::ExistingFile);
  ft->add_option("--checkpoint", ft_ckpt)
      ->required()
      ->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out);
  ft->add_option("--log", ft_log);
  ft->add_option("--bits", ft_bits)->check(CLI::Range(2, 8));
  ft->add_option("--scheme", ft_scheme)
      ->check(CLI::IsMember({"uniform", "pot"}));
  ft->add_option("--alpha0", ft_alpha0, "initial clip value");

  auto* ev = app.add_subcommand("eval", "verification scoring and EER");
  std::string ev_corpus, ev_model, ev_trials, ev_scores = "scores.txt",
              ev_summary = "eval_summary.json";
  int ev_topk = 50;
  add_common(ev, args, true);
  ev->add_option("--corpus", ev_corpus)->required()->check(
      CLI::ExistingFile);
  ev->add_option("--model", ev_model)->required()->check(CLI::ExistingFile);
  ev->add_option("--trials", ev_trials)
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--scores", ev_scores, "per-trial score output");
  ev->add_option("--summary", ev_summary, "JSON summary output");
  ev->add_option("--top-k", ev_topk, "as-norm cohort depth");

  auto* an = app.add_subcommand("analyze",
                                "per-layer weight/error/MAC report");
  std::string an_model, an_report = "layer_report.json",
              an_hist = "histograms.csv", an_scheme = "uniform";
  int an_bits = 8, an_bins = 101, an_frames = 200;
  float an_alpha = 3.0f;
  add_common(an, args, true);
  an->add_option("--model", an_model)->required()->check(CLI::ExistingFile);
  an->add_option("--report", an_report);
  an->add_option("--hist", an_hist);
  an->add_option("--bits", an_bits)->check(CLI::Range(2, 8));
  an->add_option("--scheme", an_scheme)
      ->check(CLI::IsMember({"uniform", "pot"}));
  an->add_option("--alpha", an_alpha,
                 "clip value for layers without a trained alpha");
  an->add_option("--bins", an_bins);
  an->add_option("--frames", an_frames, "input length for MAC accounting");

  auto* pk = app.add_subcommand("pack",
                                "serialize a checkpoint as a packfile");
  std::string pk_ckpt, pk_out = "model_packed.qsvw", pk_scheme = "uniform";
  int pk_bits = 8;
  float pk_alpha = 3.0f;
  bool pk_fp32 = false;
  add_common(pk, args, true);
  pk->add_option("--checkpoint", pk_ckpt)
      ->required()
      ->check(CLI::ExistingFile);
  pk->add_option("--out", pk_out);
  pk->add_flag("--fp32", pk_fp32, "store full precision");
  pk->add_option("--bits", pk_bits)->check(CLI::Range(2, 8));
  pk->add_option("--scheme", pk_scheme)
      ->check(CLI::IsMember({"uniform", "pot"}));
  pk->add_option("--alpha", pk_alpha);

  auto* de = app.add_subcommand("describe",
                                "dump packfile metadata as JSON");
  std::string de_model, de_out;
  add_common(de, args, false);
  de->add_option("--model", de_model)->required()->check(CLI::ExistingFile);
  de->add_option("--out", de_out, "write JSON here instead of stdout");

  auto* pr = app.add_subcommand("probe",
                                "attribute probes on frozen embeddings");
  std::string pr_corpus, pr_model, pr_out = "probe_report.json";
  int pr_epochs = 100;
  add_common(pr, args, true);
  pr->add_option("--corpus", pr_corpus)->required()->check(
      CLI::ExistingFile);
  pr->add_option("--model", pr_model)->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pr_out);
  pr->add_option("--epochs", pr_epochs, "probe classifier epochs");

  auto* rp = app.add_subcommand("report",
                                "merge eval summaries into one table");
  std::vector<std::string> rp_inputs;
  std::string rp_out = "report.json";
  add_common(rp, args, false);
  rp->add_option("summaries", rp_inputs, "eval summary JSON files")
      ->required()
      ->check(CLI::ExistingFile);
  rp->add_option("--out", rp_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_corpus(args, gen_out, gen_trials, gen_targets,
                            gen_nontargets);
    if (train->parsed())
      return cmd_train(args, train_corpus, train_out, train_log);
    if (quant->parsed())
      return cmd_quantize(args, q_ckpt, q_out, q_bits, q_scheme, q_alpha);
    if (ft->parsed())
      return cmd_finetune(args, ft_corpus, ft_ckpt, ft_out, ft_log, ft_bits,
                          ft_scheme, ft_alpha0);
    if (ev->parsed())
      return cmd_eval(args, ev_corpus, ev_model, ev_trials, ev_scores,
                      ev_summary, ev_topk);
    if (an->parsed())
      return cmd_analyze(args, an_model, an_report, an_hist, an_bits,
                         an_scheme, an_alpha, an_bins, an_frames);
    if (pk->parsed())
      return cmd_pack(args, pk_ckpt, pk_out, pk_fp32, pk_bits, pk_scheme,
                      pk_alpha);
    if (de->parsed()) return cmd_describe(de_model, de_out);
    if (pr->parsed())
      return cmd_probe(args, pr_corpus, pr_model, pr_out, pr_epochs);
    if (rp->parsed()) return cmd_report(rp_inputs, rp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptok/bench.hpp"
#include "ptok/evaluator.hpp"
#include "ptok/pretrain.hpp"
#include "ptok/reporting.hpp"

namespace ptok {

// Output directories resolve against the PTOK_OUT_ROOT environment
// variable when they are relative; absolute paths pass through.
std::string resolve_out_dir(const std::string& out_dir);

// Deterministic default split: 40% train, 10% validation, rest test.
DatasetSplit default_split(const std::vector<FactRecord>& facts, int n_train, int n_val,
                           uint64_t seed);

struct SynthOptions {
  int subjects = 10;
  int relations = 2;
  int objects = 5;
  uint64_t seed = 1;
  std::string out_dir;
};

struct SynthResult {
  std::string facts_path;
  std::string corpus_path;
  std::string manifest_path;
  int n_facts = 0;
  int n_docs = 0;
};

SynthResult run_synth(const SynthOptions& opt);

struct IngestOptions {
  std::string input_path;
  Variant variant = Variant::CounterFact;
  std::string out_dir;
};

struct IngestResult {
  std::string facts_path;
  std::string manifest_path;
  int n_facts = 0;
};

IngestResult run_ingest(const IngestOptions& opt);

struct PretrainOptions {
  std::string facts_path;
  std::string corpus_path;
  std::string out_dir;
  LmConfig lm;  // vocab_size is derived from the corpus
  PretrainConfig cfg;
};

struct PretrainRunResult {
  std::string model_path;
  std::string manifest_path;
  PretrainStats stats;
};

PretrainRunResult run_pretrain(const PretrainOptions& opt);

struct TrainOptions {
  std::string model_path;
  std::string facts_path;
  Variant variant = Variant::CounterFact;
  int m = 3;
  PTokenInitSpec init;
  TrainConfig cfg;
  int n_train = -1;  // negative: default split fractions
  int n_val = -1;
  std::string out_dir;
};

struct TrainRunResult {
  std::string ptokens_path;
  std::string history_path;
  std::string manifest_path;
  TrainHistory history;
};

TrainRunResult run_train(const TrainOptions& opt);

struct EvalOptions {
  std::string model_path;
  std::string ptokens_path;  // required only for the marker-token method
  std::string facts_path;
  Variant variant = Variant::CounterFact;
  Method method = Method::Ptokens;
  int distractor_len = 0;
  int ike_demos = 32;
  int n_train = -1;
  int n_val = -1;
  uint64_t seed = 1;
  bool dump_prompts = false;  // print the first rendered prompt to stdout
  std::string out_dir;
};

struct EvalRunResult {
  std::string reports_path;
  std::string manifest_path;
  EvalReport report;
};

EvalRunResult run_eval(const EvalOptions& opt);

struct SweepTokensOptions {
  std::string model_path;
  std::string facts_path;
  Variant variant = Variant::CounterFact;
  std::vector<int> m_list{1, 3, 5, 7, 10};
  PTokenInitSpec init;
  TrainConfig cfg;
  int n_train = -1;
  int n_val = -1;
  std::string model_tag = "micro";
  std::string out_dir;
};

struct SweepRunResult {
  std::string reports_path;
  std::string table_path;
  std::string chart_path;  // empty when the sweep has fewer than two points
  std::string manifest_path;
  std::vector<EvalReport> reports;
};

SweepRunResult run_sweep_tokens(const SweepTokensOptions& opt);

struct SweepDistractorsOptions {
  std::string model_path;
  std::string ptokens_path;
  std::string facts_path;
  Variant variant = Variant::CounterFact;
  std::vector<int> lengths{0, 10, 50, 100};
  int n_train = -1;
  int n_val = -1;
  uint64_t seed = 1;
  std::string out_dir;
};

SweepRunResult run_sweep_distractors(const SweepDistractorsOptions& opt);

struct BenchOptions {
  std::string model_path;
  std::string ptokens_path;
  std::string facts_path;
  int ike_demos = 32;
  int batch_size = 1;
  int warmup = 10;
  double train_seconds = -1;  // enables the amortization line when >= 0
  int n_train = -1;
  int n_val = -1;
  std::string out_dir;
};

struct BenchRunResult {
  std::string reports_path;
  std::string table_path;
  std::string summary_path;
  std::string manifest_path;
  BenchReport ike;
  BenchReport ptokens;
  std::optional<int64_t> amortization;
};

BenchRunResult run_bench_command(const BenchOptions& opt);

struct ReportOptions {
  std::string records_path;
  std::string format = "table";  // table | records | charts
  std::string model_tag = "micro";
  std::string out_dir;
};

struct ReportRunResult {
  std::vector<std::string> output_paths;
  std::string manifest_path;
};

ReportRunResult run_report(const ReportOptions& opt);

}  // namespace ptok

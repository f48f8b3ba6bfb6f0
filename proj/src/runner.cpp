#include "ptok/runner.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"
#include "ptok/hash.hpp"
#include "ptok/model_io.hpp"
#include "ptok/pairs.hpp"

namespace ptok {

namespace {

using nlohmann::json;

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string write_manifest(const std::string& out_dir, const std::string& command,
                           const json& resolved, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["config"] = resolved;
  json in = json::object();
  for (const std::string& p : inputs) in[p] = sha256_file_hex(p);
  m["inputs"] = in;
  json out = json::array();
  for (const std::string& p : outputs) out.push_back(p);
  m["outputs"] = out;
  const std::string path = join_path(out_dir, "manifest.json");
  write_file_atomic(path, m.dump(2) + "\n");
  return path;
}

std::vector<FactRecord> load_facts(const std::string& path, Variant variant) {
  return variant == Variant::CounterFact ? ingest_counterfact(path) : ingest_zsre(path);
}

void write_corpus(const std::vector<std::string>& docs, const std::string& path) {
  write_file_atomic(path, json(docs).dump(2) + "\n");
}

std::vector<std::string> read_corpus(const std::string& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw DataError(path + ": not a corpus file");
  std::vector<std::string> docs;
  for (const json& d : j) {
    if (!d.is_string()) throw DataError(path + ": corpus entries must be strings");
    docs.push_back(d.get<std::string>());
  }
  return docs;
}

std::vector<const FactRecord*> fact_ptrs(const std::vector<FactRecord>& facts) {
  std::vector<const FactRecord*> out;
  out.reserve(facts.size());
  for (const FactRecord& f : facts) out.push_back(&f);
  return out;
}

json train_config_json(const TrainConfig& cfg) {
  return json{{"learning_rate", cfg.learning_rate},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"weight_decay", cfg.weight_decay},
              {"max_epochs", cfg.max_epochs},
              {"patience", cfg.patience},
              {"batch_facts", cfg.batch_facts},
              {"seed", cfg.seed},
              {"ike_demos", cfg.pairs.ike_demos},
              {"distractor_lens", cfg.pairs.distractor_lens}};
}

json split_json(int n_train, int n_val, const DatasetSplit& split) {
  return json{{"requested_train", n_train},
              {"requested_val", n_val},
              {"train", split.train.size()},
              {"validation", split.validation.size()},
              {"test", split.test.size()},
              {"seed", split.seed}};
}

const char* variant_label(Variant v) { return v == Variant::CounterFact ? "counterfact" : "zsre"; }

std::string init_label(const PTokenInitSpec& init) {
  return init.kind == PTokenInitKind::MeanNoise ? "mean_noise" : "gaussian";
}

// Chart series for whichever metrics the reports carry, x picked per sweep.
std::vector<ChartSeries> metric_series(const std::vector<EvalReport>& reports, bool x_is_m) {
  struct Field {
    const char* name;
    std::optional<double> EvalReport::* member;
  };
  static const Field kFields[] = {
      {"S", &EvalReport::s},           {"ES", &EvalReport::es},
      {"PS", &EvalReport::ps},         {"NS", &EvalReport::ns},
      {"Efficacy", &EvalReport::efficacy}, {"Paraphrase", &EvalReport::paraphrase},
      {"Specificity", &EvalReport::specificity}};
  std::vector<ChartSeries> series;
  for (const Field& f : kFields) {
    ChartSeries s;
    s.name = f.name;
    for (const EvalReport& r : reports)
      if (r.*f.member)
        s.points.push_back({static_cast<double>(x_is_m ? r.m : r.distractor_len), *(r.*f.member)});
    if (s.points.size() >= 2) series.push_back(std::move(s));
  }
  return series;
}

}  // namespace

std::string resolve_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("output directory required");
  std::filesystem::path p(out_dir);
  if (p.is_absolute()) return out_dir;
  const char* root = std::getenv("PTOK_OUT_ROOT");
  if (root && *root) return (std::filesystem::path(root) / p).string();
  return out_dir;
}

DatasetSplit default_split(const std::vector<FactRecord>& facts, int n_train, int n_val,
                           uint64_t seed) {
  const int n = static_cast<int>(facts.size());
  if (n_train < 0) n_train = static_cast<int>(std::lround(n * 0.4));
  if (n_val < 0) n_val = static_cast<int>(std::lround(n * 0.1));
  return split_dataset(facts, n_train, n_val, seed);
}

SynthResult run_synth(const SynthOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  const Microworld world = synth_microworld(opt.subjects, opt.relations, opt.objects, opt.seed);

  SynthResult res;
  res.facts_path = join_path(out, "facts.jsonl");
  res.corpus_path = join_path(out, "corpus.json");
  write_counterfact(world.facts, res.facts_path);
  write_corpus(world.corpus, res.corpus_path);
  res.n_facts = static_cast<int>(world.facts.size());
  res.n_docs = static_cast<int>(world.corpus.size());

  const json cfg{{"subjects", opt.subjects},
                 {"relations", opt.relations},
                 {"objects", opt.objects},
                 {"seed", opt.seed},
                 {"out_dir", out}};
  res.manifest_path = write_manifest(out, "synth", cfg, {}, {res.facts_path, res.corpus_path});
  return res;
}

IngestResult run_ingest(const IngestOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  const auto facts = load_facts(opt.input_path, opt.variant);

  IngestResult res;
  res.facts_path = join_path(out, "facts.jsonl");
  if (opt.variant == Variant::CounterFact)
    write_counterfact(facts, res.facts_path);
  else
    write_zsre(facts, res.facts_path);
  res.n_facts = static_cast<int>(facts.size());

  const json cfg{{"input", opt.input_path}, {"variant", variant_label(opt.variant)},
                 {"out_dir", out}};
  res.manifest_path = write_manifest(out, "ingest", cfg, {opt.input_path}, {res.facts_path});
  return res;
}

PretrainRunResult run_pretrain(const PretrainOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  Microworld world;
  world.facts = load_facts(opt.facts_path, Variant::CounterFact);
  world.corpus = read_corpus(opt.corpus_path);

  LmConfig lm = opt.lm;
  Vocabulary vocab = Vocabulary::build(world.corpus);
  lm.vocab_size = vocab.base_size();
  LmModel model(lm, std::move(vocab));
  const PretrainStats stats = pretrain(model, world, opt.cfg);

  PretrainRunResult res;
  res.stats = stats;
  res.model_path = join_path(out, "model.ckpt");
  save_lm(model, res.model_path);

  const json cfg{{"facts", opt.facts_path},
                 {"corpus", opt.corpus_path},
                 {"d_model", lm.d_model},
                 {"n_layers", lm.n_layers},
                 {"n_heads", lm.n_heads},
                 {"max_context", lm.max_context},
                 {"vocab_size", lm.vocab_size},
                 {"learning_rate", opt.cfg.learning_rate},
                 {"pack_len", opt.cfg.pack_len},
                 {"max_epochs", opt.cfg.max_epochs},
                 {"target_recall", opt.cfg.target_recall},
                 {"target_edit", opt.cfg.target_edit},
                 {"seed", opt.cfg.seed},
                 {"out_dir", out}};
  res.manifest_path = write_manifest(out, "pretrain", cfg, {opt.facts_path, opt.corpus_path},
                                     {res.model_path});

  json s{{"epochs", stats.epochs},
         {"final_loss", stats.final_loss},
         {"fact_recall", stats.fact_recall},
         {"edit_success", stats.edit_success},
         {"wall_seconds", stats.wall_seconds},
         {"reached_targets", stats.reached_targets}};
  write_file_atomic(join_path(out, "pretrain_stats.json"), s.dump(2) + "\n");
  return res;
}

TrainRunResult run_train(const TrainOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  LmModel model = load_lm(opt.model_path);
  const auto facts = load_facts(opt.facts_path, opt.variant);
  const DatasetSplit split = default_split(facts, opt.n_train, opt.n_val, opt.cfg.seed);

  const PTokenSet initial = model.add_ptokens(opt.m, opt.init, opt.cfg.seed);
  const TrainResult result = train(model, initial, split, opt.variant, opt.cfg);

  TrainRunResult res;
  res.history = result.history;
  res.ptokens_path = join_path(out, "ptokens.ckpt");
  save_ptokens(result.ptokens, model, res.ptokens_path);

  res.history_path = join_path(out, "history.jsonl");
  std::string hist;
  for (size_t i = 0; i < result.history.epochs.size(); ++i) {
    const auto& e = result.history.epochs[i];
    hist += json{{"epoch", i},
                 {"train_loss", e.train_loss},
                 {"val_loss", e.validation_loss},
                 {"wall_seconds", e.wall_seconds}}
                .dump() +
            "\n";
  }
  hist += json{{"best_epoch", result.history.best_epoch},
               {"stopped_early", result.history.stopped_early}}
              .dump() +
          "\n";
  write_file_atomic(res.history_path, hist);

  json cfg = train_config_json(opt.cfg);
  cfg["model"] = opt.model_path;
  cfg["facts"] = opt.facts_path;
  cfg["variant"] = variant_label(opt.variant);
  cfg["m"] = opt.m;
  cfg["init"] = init_label(opt.init);
  cfg["init_sigma"] = opt.init.sigma;
  cfg["split"] = split_json(opt.n_train, opt.n_val, split);
  cfg["out_dir"] = out;
  res.manifest_path = write_manifest(out, "train", cfg, {opt.model_path, opt.facts_path},
                                     {res.ptokens_path, res.history_path});
  return res;
}

EvalRunResult run_eval(const EvalOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  if (opt.method == Method::Ike && opt.variant == Variant::Zsre)
    throw ConfigError("the demonstration-prompt method is defined only for the counterfact variant");

  LmModel model = load_lm(opt.model_path);
  const auto facts = load_facts(opt.facts_path, opt.variant);
  const DatasetSplit split = default_split(facts, opt.n_train, opt.n_val, opt.seed);

  std::optional<PTokenSet> pt;
  if (opt.method == Method::Ptokens) {
    if (opt.ptokens_path.empty())
      throw ConfigError("the marker-token method needs a trained embedding checkpoint");
    pt = load_ptokens(opt.ptokens_path, model);
  }

  const DemoStore demos = DemoStore::build(split.train, split.seed);
  const auto pool = fact_ptrs(split.test);
  EvalContext ctx;
  ctx.demos = &demos;
  ctx.distractor_pool = &pool;
  ctx.ike_demos = opt.ike_demos;
  ctx.seed = opt.seed;

  if (opt.dump_prompts && !split.test.empty()) {
    const FactRecord& fact = split.test.front();
    const RenderedPrompt probe = render_probe(model.vocab(), fact, {ProbeRef::Query, 0});
    RenderedPrompt shown;
    switch (opt.method) {
      case Method::Original: shown = probe; break;
      case Method::Baseline:
        shown = join_prompts(render_edit_statement(model.vocab(), fact), probe);
        break;
      case Method::Ike:
        shown = join_prompts(render_ike_prompt(model.vocab(), fact, demos, opt.ike_demos), probe);
        break;
      case Method::Ptokens: {
        Rng rng(mix_seed(opt.seed, fnv1a64(fact.case_id)));
        shown = build_eval_prompt(model, fact, probe, opt.distractor_len, pool, *pt, rng);
        break;
      }
    }
    std::fprintf(stdout, "--- prompt (%s, %zu ids) ---\n%s\n---\n", method_name(opt.method),
                 shown.ids.size(), shown.text.c_str());
  }

  EvalRunResult res;
  res.report = evaluate(model, pt ? &*pt : nullptr, split.test, opt.method, opt.variant,
                        opt.distractor_len, ctx);
  res.reports_path = join_path(out, "reports.jsonl");
  write_report_lines(res.reports_path, {eval_report_json(res.report)});

  json cfg{{"model", opt.model_path},
           {"ptokens", opt.ptokens_path},
           {"facts", opt.facts_path},
           {"variant", variant_label(opt.variant)},
           {"method", method_name(opt.method)},
           {"distractor_len", opt.distractor_len},
           {"ike_demos", opt.ike_demos},
           {"seed", opt.seed},
           {"split", split_json(opt.n_train, opt.n_val, split)},
           {"out_dir", out}};
  std::vector<std::string> inputs{opt.model_path, opt.facts_path};
  if (!opt.ptokens_path.empty()) inputs.push_back(opt.ptokens_path);
  res.manifest_path = write_manifest(out, "eval", cfg, inputs, {res.reports_path});
  return res;
}

SweepRunResult run_sweep_tokens(const SweepTokensOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  LmModel model = load_lm(opt.model_path);
  const auto facts = load_facts(opt.facts_path, opt.variant);
  const DatasetSplit split = default_split(facts, opt.n_train, opt.n_val, opt.cfg.seed);

  SweepRunResult res;
  res.reports = sweep_tokens(model, split, opt.variant, opt.m_list, opt.cfg, opt.init);

  std::vector<std::string> lines;
  for (const auto& r : res.reports) lines.push_back(eval_report_json(r));
  res.reports_path = join_path(out, "reports.jsonl");
  write_report_lines(res.reports_path, lines);

  res.table_path = join_path(out, "token_sweep.tsv");
  write_file_atomic(res.table_path, token_sweep_table(opt.model_tag, res.reports));

  const auto series = metric_series(res.reports, true);
  if (!series.empty()) {
    res.chart_path = join_path(out, "token_sweep.svg");
    write_line_chart_svg(res.chart_path, "Metrics vs marker token count", "#Tokens", "score",
                         series);
  }

  json cfg = train_config_json(opt.cfg);
  cfg["model"] = opt.model_path;
  cfg["facts"] = opt.facts_path;
  cfg["variant"] = variant_label(opt.variant);
  cfg["m_list"] = opt.m_list;
  cfg["model_tag"] = opt.model_tag;
  cfg["split"] = split_json(opt.n_train, opt.n_val, split);
  cfg["out_dir"] = out;
  std::vector<std::string> outputs{res.reports_path, res.table_path};
  if (!res.chart_path.empty()) outputs.push_back(res.chart_path);
  res.manifest_path =
      write_manifest(out, "sweep-tokens", cfg, {opt.model_path, opt.facts_path}, outputs);
  return res;
}

SweepRunResult run_sweep_distractors(const SweepDistractorsOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  LmModel model = load_lm(opt.model_path);
  const auto facts = load_facts(opt.facts_path, opt.variant);
  const DatasetSplit split = default_split(facts, opt.n_train, opt.n_val, opt.seed);
  PTokenSet pt = load_ptokens(opt.ptokens_path, model);

  const DemoStore demos = DemoStore::build(split.train, split.seed);
  const auto pool = fact_ptrs(split.test);
  EvalContext ctx;
  ctx.demos = &demos;
  ctx.distractor_pool = &pool;
  ctx.seed = opt.seed;

  SweepRunResult res;
  res.reports = sweep_distractors(model, pt, split.test, opt.variant, opt.lengths, ctx);

  std::vector<std::string> lines;
  for (const auto& r : res.reports) lines.push_back(eval_report_json(r));
  res.reports_path = join_path(out, "reports.jsonl");
  write_report_lines(res.reports_path, lines);

  res.table_path = join_path(out, "distractor_sweep.tsv");
  write_file_atomic(res.table_path, distractor_table(res.reports));

  const auto series = metric_series(res.reports, false);
  if (!series.empty()) {
    res.chart_path = join_path(out, "distractor_sweep.svg");
    write_line_chart_svg(res.chart_path, "Metrics vs distractor length", "distractor edits",
                         "score", series);
  }

  json cfg{{"model", opt.model_path},
           {"ptokens", opt.ptokens_path},
           {"facts", opt.facts_path},
           {"variant", variant_label(opt.variant)},
           {"lengths", opt.lengths},
           {"seed", opt.seed},
           {"split", split_json(opt.n_train, opt.n_val, split)},
           {"out_dir", out}};
  std::vector<std::string> outputs{res.reports_path, res.table_path};
  if (!res.chart_path.empty()) outputs.push_back(res.chart_path);
  res.manifest_path = write_manifest(out, "sweep-distractors", cfg,
                                     {opt.model_path, opt.ptokens_path, opt.facts_path}, outputs);
  return res;
}

BenchRunResult run_bench_command(const BenchOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  LmModel model = load_lm(opt.model_path);
  const auto facts = load_facts(opt.facts_path, Variant::CounterFact);
  const DatasetSplit split = default_split(facts, opt.n_train, opt.n_val, 1);
  PTokenSet pt = load_ptokens(opt.ptokens_path, model);
  const DemoStore demos = DemoStore::build(split.train, split.seed);

  BenchRunResult res;
  res.ike = run_bench(model, Method::Ike, split.test, nullptr, &demos, opt.batch_size, opt.warmup,
                      opt.ike_demos);
  res.ptokens = run_bench(model, Method::Ptokens, split.test, &pt, nullptr, opt.batch_size,
                          opt.warmup, opt.ike_demos);

  res.reports_path = join_path(out, "bench.jsonl");
  write_report_lines(res.reports_path,
                     {bench_report_json(res.ike), bench_report_json(res.ptokens)});
  res.table_path = join_path(out, "bench.tsv");
  write_file_atomic(res.table_path, bench_table({res.ike, res.ptokens}));

  char buf[512];
  std::string summary;
  std::snprintf(buf, sizeof(buf), "measured: ike %.2f tokens, %.5f s/edit; ptokens %.2f tokens, %.5f s/edit (batch %d)\n",
                res.ike.mean_prompt_tokens, res.ike.mean_seconds_per_edit,
                res.ptokens.mean_prompt_tokens, res.ptokens.mean_seconds_per_edit, opt.batch_size);
  summary += buf;
  summary += "paper-scale reference: 959.19 vs 58.01 tokens; 0.17 vs 0.03 s per edit\n";
  if (opt.train_seconds >= 0) {
    res.amortization = amortization_point(opt.train_seconds, res.ike.mean_seconds_per_edit,
                                          res.ptokens.mean_seconds_per_edit);
    std::snprintf(buf, sizeof(buf), "amortization point: %lld inferences for %.1f s of training\n",
                  static_cast<long long>(*res.amortization), opt.train_seconds);
    summary += buf;
  }
  res.summary_path = join_path(out, "bench_summary.txt");
  write_file_atomic(res.summary_path, summary);

  json cfg{{"model", opt.model_path},
           {"ptokens", opt.ptokens_path},
           {"facts", opt.facts_path},
           {"ike_demos", opt.ike_demos},
           {"batch_size", opt.batch_size},
           {"warmup", opt.warmup},
           {"train_seconds", opt.train_seconds},
           {"split", split_json(opt.n_train, opt.n_val, split)},
           {"out_dir", out}};
  res.manifest_path =
      write_manifest(out, "bench", cfg, {opt.model_path, opt.ptokens_path, opt.facts_path},
                     {res.reports_path, res.table_path, res.summary_path});
  return res;
}

ReportRunResult run_report(const ReportOptions& opt) {
  const std::string out = resolve_out_dir(opt.out_dir);
  ensure_dir(out);
  const auto evals = read_eval_reports(opt.records_path);
  const auto benches = read_bench_reports(opt.records_path);
  if (evals.empty() && benches.empty()) throw DataError("no reports in " + opt.records_path);

  ReportRunResult res;
  if (opt.format == "records") {
    std::vector<std::string> lines;
    for (const auto& r : evals) lines.push_back(eval_report_json(r));
    for (const auto& r : benches) lines.push_back(bench_report_json(r));
    const std::string p = join_path(out, "records.jsonl");
    write_report_lines(p, lines);
    res.output_paths.push_back(p);
  } else if (opt.format == "table") {
    if (!evals.empty()) {
      std::vector<int> ms, lens, methods;
      for (const auto& r : evals) {
        ms.push_back(r.m);
        lens.push_back(r.distractor_len);
        methods.push_back(static_cast<int>(r.method));
      }
      const auto distinct = [](std::vector<int> v) {
        std::sort(v.begin(), v.end());
        return std::unique(v.begin(), v.end()) - v.begin();
      };
      std::string table;
      if (distinct(methods) > 1)
        table = method_table(evals);
      else if (distinct(lens) > 1)
        table = distractor_table(evals);
      else if (distinct(ms) > 1)
        table = token_sweep_table(opt.model_tag, evals);
      else
        table = method_table(evals);
      const std::string p = join_path(out, "report.tsv");
      write_file_atomic(p, table);
      res.output_paths.push_back(p);
    }
    if (!benches.empty()) {
      const std::string p = join_path(out, "bench.tsv");
      write_file_atomic(p, bench_table(benches));
      res.output_paths.push_back(p);
    }
  } else if (opt.format == "charts") {
    std::vector<int> ms, lens;
    for (const auto& r : evals) {
      ms.push_back(r.m);
      lens.push_back(r.distractor_len);
    }
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    std::sort(lens.begin(), lens.end());
    lens.erase(std::unique(lens.begin(), lens.end()), lens.end());
    if (ms.size() >= 2) {
      const auto series = metric_series(evals, true);
      if (!series.empty()) {
        const std::string p = join_path(out, "metrics_vs_tokens.svg");
        write_line_chart_svg(p, "Metrics vs marker token count", "#Tokens", "score", series);
        res.output_paths.push_back(p);
      }
    }
    if (lens.size() >= 2) {
      const auto series = metric_series(evals, false);
      if (!series.empty()) {
        const std::string p = join_path(out, "metrics_vs_distractors.svg");
        write_line_chart_svg(p, "Metrics vs distractor length", "distractor edits", "score",
                             series);
        res.output_paths.push_back(p);
      }
    }
    if (res.output_paths.empty())
      throw DataError("charts need at least two reports sharing a sweep axis");
  } else {
    throw ConfigError("unknown report format: " + opt.format);
  }

  const json cfg{{"records", opt.records_path},
                 {"format", opt.format},
                 {"model_tag", opt.model_tag},
                 {"out_dir", out}};
  res.manifest_path = write_manifest(out, "report", cfg, {opt.records_path}, res.output_paths);
  return res;
}

}  // namespace ptok

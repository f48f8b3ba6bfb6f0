// End-to-end acceptance harness. Each criterion prints one PASS/FAIL line
// with the measured numbers; the exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ptok/bench.hpp"
#include "ptok/errors.hpp"
#include "ptok/evaluator.hpp"
#include "ptok/facts.hpp"
#include "ptok/fsio.hpp"
#include "ptok/model_io.hpp"
#include "ptok/pairs.hpp"
#include "ptok/prompts.hpp"
#include "ptok/rng.hpp"
#include "ptok/runner.hpp"
#include "ptok/trainer.hpp"

using namespace ptok;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::printf("[criterion %d] %s %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1-4 ----

void criterion_1() {
  struct Row {
    double es, ps, ns, s;
  };
  const Row rows[] = {{99.90, 98.40, 81.30, 92.39},
                      {100.0, 99.55, 83.96, 93.88},
                      {100.0, 99.75, 88.62, 95.82}};
  bool pass = true;
  std::string detail = "harmonic mean:";
  for (const Row& r : rows) {
    const double got = harmonic_score(r.es, r.ps, r.ns);
    pass = pass && std::abs(got - r.s) <= 0.01;
    detail += " " + fmt(got) + "~" + fmt(r.s);
  }
  report(1, pass, detail);
}

void criterion_2() {
  const int64_t got = amortization_point(55680, 0.17, 0.03);
  report(2, got == 397715, "amortization_point(55680, 0.17, 0.03) = " + std::to_string(got));
}

void criterion_3() {
  Rng rng(2024);
  auto random_dist = [&rng](int n) {
    Distribution d;
    d.probs.resize(n);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      d.probs[i] = -std::log(rng.uniform() + 1e-300);
      sum += d.probs[i];
    }
    d.probs /= sum;
    return d;
  };

  double max_self = 0;
  for (int i = 0; i < 100; ++i) {
    const Distribution p = random_dist(2 + i % 37);
    max_self = std::max(max_self, std::abs(kl_divergence(p, p)));
  }
  double min_pair = 0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + i % 53;
    min_pair = std::min(min_pair, kl_divergence(random_dist(n), random_dist(n)));
  }
  Distribution p, q;
  p.probs.resize(2);
  q.probs.resize(2);
  p.probs << 0.5, 0.5;
  q.probs << 0.25, 0.75;
  const double got = kl_divergence(p, q);
  const double oracle = 0.14384103622589046;  // (1/2) ln(4/3)

  const bool pass = max_self <= 1e-12 && min_pair >= 0 && std::abs(got - oracle) <= 1e-9;
  report(3, pass,
         "self-KL max " + std::to_string(max_self) + ", random-pair min " +
             std::to_string(min_pair) + ", two-point case " + std::to_string(got));
}

void criterion_4() {
  Microworld mw = synth_microworld(10, 2, 5, 1);
  Vocabulary v = Vocabulary::build(mw.corpus);
  LmConfig cfg;
  cfg.vocab_size = v.base_size();
  cfg.d_model = 32;
  cfg.n_layers = 1;
  cfg.n_heads = 4;
  cfg.max_context = 2048;
  cfg.seed = 5;
  LmModel model(cfg, std::move(v));
  PTokenSet pt = model.add_ptokens(2, PTokenInitSpec{}, 7);

  std::vector<FactRecord> train(mw.facts.begin(), mw.facts.begin() + 8);
  DemoStore demos = DemoStore::build(train, 11);
  std::vector<const FactRecord*> pool;
  for (const FactRecord& f : mw.facts) pool.push_back(&f);

  Rng rng(3);
  const auto pairs =
      build_pairs(model, mw.facts[9], Variant::CounterFact, pt, demos, pool, PairParams{}, rng);
  double worst = 0;
  for (size_t idx : {size_t{0}, size_t{2}, size_t{6}}) {  // edit, neighbor, empty edit
    worst = std::max(worst, finite_difference_check(model, pt, pairs[idx], 1e-4));
  }
  report(4, worst <= 1e-4, "max gradient relative error " + std::to_string(worst));
}

// ------------------------------------------------------------ pipeline ----

struct Pipeline {
  SynthResult world;
  PretrainRunResult pre;
  TrainRunResult tr;
  EvalRunResult ev_pt, ev_bl;
  double wall_seconds = 0;
};

Pipeline run_pipeline(const std::string& root) {
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline p;

  SynthOptions so;
  so.subjects = 10;
  so.relations = 2;
  so.objects = 5;
  so.seed = 1;
  so.out_dir = root + "/world";
  p.world = run_synth(so);

  PretrainOptions po;
  po.facts_path = p.world.facts_path;
  po.corpus_path = p.world.corpus_path;
  po.out_dir = root + "/base";
  po.lm.seed = 1;
  po.cfg.seed = 1;
  p.pre = run_pretrain(po);

  TrainOptions to;
  to.model_path = p.pre.model_path;
  to.facts_path = p.world.facts_path;
  to.m = 3;
  to.cfg.seed = 1;
  to.n_train = 8;
  to.n_val = 2;
  to.out_dir = root + "/markers";
  p.tr = run_train(to);

  EvalOptions eo;
  eo.model_path = p.pre.model_path;
  eo.ptokens_path = p.tr.ptokens_path;
  eo.facts_path = p.world.facts_path;
  eo.method = Method::Ptokens;
  eo.n_train = 8;
  eo.n_val = 2;
  eo.seed = 1;
  eo.out_dir = root + "/eval_ptokens";
  p.ev_pt = run_eval(eo);

  eo.method = Method::Baseline;
  eo.ptokens_path.clear();
  eo.out_dir = root + "/eval_baseline";
  p.ev_bl = run_eval(eo);

  p.wall_seconds = seconds_since(t0);
  return p;
}

void criterion_5(const Pipeline& p) {
  LmModel model = load_lm(p.pre.model_path);
  const Microworld mw = synth_microworld(10, 2, 5, 1);
  const DatasetSplit split = default_split(mw.facts, 8, 2, 1);

  const PTokenSet initial = model.add_ptokens(3, PTokenInitSpec{}, 1);
  const Eigen::MatrixXd before = initial.embeddings;
  const uint64_t checksum = model.base_checksum();

  TrainConfig cfg;
  cfg.seed = 1;
  const TrainResult result = train(model, initial, split, Variant::CounterFact, cfg);

  const bool frozen = model.base_checksum() == checksum;
  bool all_rows_moved = true;
  for (Eigen::Index r = 0; r < before.rows(); ++r) {
    if ((result.ptokens.embeddings.row(r) - before.row(r)).norm() == 0) all_rows_moved = false;
  }
  report(5, frozen && all_rows_moved,
         std::string("base checksum ") + (frozen ? "unchanged" : "CHANGED") + ", " +
             std::to_string(before.rows()) + " marker rows " +
             (all_rows_moved ? "all updated" : "NOT all updated"));
}

void criterion_6(const Pipeline& p) {
  const EvalReport& r = p.ev_pt.report;
  const double es = r.es.value_or(-1), ps = r.ps.value_or(-1), ns = r.ns.value_or(-1);
  const double s = r.s.value_or(-1), s_bl = p.ev_bl.report.s.value_or(-1);
  const bool gates = p.pre.stats.reached_targets && p.pre.stats.fact_recall >= 0.95;
  const bool in_budget = p.wall_seconds <= 1800;
  const bool pass = gates && in_budget && es >= 90 && ps >= 80 && ns >= 80 && s >= s_bl;
  report(6, pass,
         "recall " + fmt(100 * p.pre.stats.fact_recall) + ", ES " + fmt(es) + " PS " + fmt(ps) +
             " NS " + fmt(ns) + " S " + fmt(s) + " vs baseline S " + fmt(s_bl) + ", pipeline " +
             fmt(p.wall_seconds) + " s");
}

void criterion_7(const Pipeline& p) {
  LmModel bare = load_lm(p.pre.model_path);
  LmModel marked = load_lm(p.pre.model_path);
  const PTokenSet pt = load_ptokens(p.tr.ptokens_path, marked);
  const Microworld mw = synth_microworld(10, 2, 5, 1);

  auto argmax = [](const Distribution& d) {
    Eigen::Index best = 0;
    d.probs.maxCoeff(&best);
    return best;
  };

  int probes = 0;
  int changed_empty = 0, changed_reversed = 0;
  const std::vector<int> empty = render_degenerate(DegenerateKind::EmptyEdit, pt).ids;
  const std::vector<int> reversed = render_degenerate(DegenerateKind::EmptyEditReversed, pt).ids;
  for (const FactRecord& f : mw.facts) {
    std::vector<RenderedPrompt> fact_probes;
    fact_probes.push_back(render_probe(bare.vocab(), f, {ProbeRef::Query, 0}));
    for (int i = 0; i < static_cast<int>(f.paraphrases.size()); ++i)
      fact_probes.push_back(render_probe(bare.vocab(), f, {ProbeRef::Paraphrase, i}));
    for (int i = 0; i < static_cast<int>(f.neighbors.size()); ++i)
      fact_probes.push_back(render_probe(bare.vocab(), f, {ProbeRef::Neighbor, i}));
    for (const RenderedPrompt& probe : fact_probes) {
      ++probes;
      const Eigen::Index base = argmax(bare.next_token_distribution(probe.ids, nullptr));
      std::vector<int> with_empty = empty;
      with_empty.insert(with_empty.end(), probe.ids.begin(), probe.ids.end());
      std::vector<int> with_rev = reversed;
      with_rev.insert(with_rev.end(), probe.ids.begin(), probe.ids.end());
      if (argmax(marked.next_token_distribution(with_empty, &pt)) != base) ++changed_empty;
      if (argmax(marked.next_token_distribution(with_rev, &pt)) != base) ++changed_reversed;
    }
  }
  const int worst = std::max(changed_empty, changed_reversed);
  const bool pass = probes == 200 && worst * 20 <= probes;  // 5% of 200 = 10
  report(7, pass,
         "argmax changes over " + std::to_string(probes) + " probes: empty " +
             std::to_string(changed_empty) + ", reversed " + std::to_string(changed_reversed));
}

void criterion_8(const Pipeline& p, const std::string& root) {
  SweepDistractorsOptions so;
  so.model_path = p.pre.model_path;
  so.ptokens_path = p.tr.ptokens_path;
  so.facts_path = p.world.facts_path;
  so.lengths = {0, 10, 50, 100};
  so.n_train = 8;
  so.n_val = 2;
  so.seed = 1;
  so.out_dir = root + "/distractors";
  const SweepRunResult sweep = run_sweep_distractors(so);

  bool es_high = sweep.reports.size() == 4;
  std::string es_list;
  for (const EvalReport& r : sweep.reports) {
    es_high = es_high && r.es.value_or(-1) >= 90;
    es_list += " " + fmt(r.es.value_or(-1));
  }
  const double ns0 = sweep.reports.front().ns.value_or(-1);
  const double ns100 = sweep.reports.back().ns.value_or(-1);

  // Ablation: marker training without distractor chains.
  TrainOptions to;
  to.model_path = p.pre.model_path;
  to.facts_path = p.world.facts_path;
  to.m = 3;
  to.cfg.seed = 1;
  to.cfg.pairs.distractor_lens = {0};
  to.n_train = 8;
  to.n_val = 2;
  to.out_dir = root + "/markers_nodistractor";
  const TrainRunResult ablation = run_train(to);

  EvalOptions eo;
  eo.model_path = p.pre.model_path;
  eo.ptokens_path = ablation.ptokens_path;
  eo.facts_path = p.world.facts_path;
  eo.method = Method::Ptokens;
  eo.distractor_len = 100;
  eo.n_train = 8;
  eo.n_val = 2;
  eo.seed = 1;
  eo.out_dir = root + "/eval_nodistractor";
  const double es_without = run_eval(eo).report.es.value_or(-1);
  const double es_with = sweep.reports.back().es.value_or(-1);

  const bool pass = es_high && es_with >= es_without;
  report(8, pass,
         "ES over lengths{0,10,50,100}:" + es_list + "; NS " + fmt(ns0) + " -> " + fmt(ns100) +
             " at L=100 (reported); ablation ES@100 " + fmt(es_with) + " vs " + fmt(es_without));
}

void criterion_9(const Pipeline& p, const std::string& root) {
  double train_seconds = 0;
  for (const auto& e : p.tr.history.epochs) train_seconds += e.wall_seconds;

  BenchOptions bo;
  bo.model_path = p.pre.model_path;
  bo.ptokens_path = p.tr.ptokens_path;
  bo.facts_path = p.world.facts_path;
  bo.ike_demos = 32;
  bo.n_train = 8;
  bo.n_val = 2;
  bo.train_seconds = train_seconds;
  bo.out_dir = root + "/bench";
  const BenchRunResult res = run_bench_command(bo);

  // Strict per-fact token ordering on the held-out edits.
  LmModel model = load_lm(p.pre.model_path);
  const PTokenSet pt = load_ptokens(p.tr.ptokens_path, model);
  const Microworld mw = synth_microworld(10, 2, 5, 1);
  const DatasetSplit split = default_split(mw.facts, 8, 2, 1);
  const DemoStore demos = DemoStore::build(split.train, split.seed);
  bool per_fact = true;
  for (const FactRecord& f : split.test) {
    const std::vector<FactRecord> one{f};
    per_fact = per_fact && count_prompt_tokens(model, Method::Ptokens, one, &pt, nullptr) <
                               count_prompt_tokens(model, Method::Ike, one, nullptr, &demos, 32);
  }

  const std::string summary = read_file(res.summary_path);
  std::fputs(summary.c_str(), stdout);
  const bool reference_printed =
      summary.find("959.19 vs 58.01 tokens; 0.17 vs 0.03 s") != std::string::npos;
  const bool faster = res.ptokens.mean_seconds_per_edit < res.ike.mean_seconds_per_edit;
  report(9, per_fact && faster && reference_printed,
         "tokens " + fmt(res.ptokens.mean_prompt_tokens) + " vs " +
             fmt(res.ike.mean_prompt_tokens) + " (every fact smaller: " +
             (per_fact ? "yes" : "NO") + "), latency " +
             std::to_string(res.ptokens.mean_seconds_per_edit) + " vs " +
             std::to_string(res.ike.mean_seconds_per_edit) + " s/edit");
}

void criterion_10(const Pipeline& a, const Pipeline& b) {
  const bool model_same = read_file(a.pre.model_path) == read_file(b.pre.model_path);
  const bool markers_same = read_file(a.tr.ptokens_path) == read_file(b.tr.ptokens_path);
  const bool reports_same =
      a.ev_pt.report == b.ev_pt.report && a.ev_bl.report == b.ev_bl.report;
  report(10, model_same && markers_same && reports_same,
         std::string("model checkpoint ") + (model_same ? "identical" : "DIFFERS") +
             ", marker checkpoint " + (markers_same ? "identical" : "DIFFERS") +
             ", eval reports " + (reports_same ? "identical" : "DIFFER"));
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();

  const Pipeline run1 = run_pipeline("acceptance_tmp/run1");
  criterion_5(run1);
  criterion_6(run1);
  criterion_7(run1);
  criterion_8(run1, "acceptance_tmp/run1");
  criterion_9(run1, "acceptance_tmp/run1");

  const Pipeline run2 = run_pipeline("acceptance_tmp/run2");
  criterion_10(run1, run2);

  return g_failures;
}

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ptok/errors.hpp"
#include "ptok/evaluator.hpp"
#include "ptok/facts.hpp"
#include "ptok/pretrain.hpp"
#include "ptok/rng.hpp"

using namespace ptok;

namespace {

struct World {
  Microworld mw;
  LmModel model;
  PTokenSet pt;

  static World make(int m) {
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
    PTokenSet pt;
    if (m > 0) pt = model.add_ptokens(m, PTokenInitSpec{}, 7);
    return World{std::move(mw), std::move(model), std::move(pt)};
  }
};

// A hand-built question world, memorized with a short pretraining run so
// greedy decoding answers each question and stops at the line end. Answers
// are then fully predictable, which makes exact-match scores checkable.
struct QaWorld {
  Microworld mw;
  LmModel model;

  static QaWorld make() {
    static const char* names[] = {"nira", "mur",  "vex", "kip", "ola",  "rin",
                                  "tam",  "ugo",  "pia", "zed", "arlo", "brin"};
    static const char* truths[] = {"riga", "doha", "lima", "cairo", "oslo", "bern",
                                   "roma", "baku", "suva", "apia",  "male", "lome"};
    Microworld mw;
    for (int i = 0; i < 12; ++i) {
      const std::string q = std::string("the home of ") + names[i] + " is";
      const std::string p = std::string("folk put ") + names[i] + " at";
      FactRecord f;
      f.variant = Variant::Zsre;
      f.case_id = "qa-" + std::to_string(i);
      f.subject = q;
      f.relation = "home";
      f.query_template = "{}";
      f.original_object = "nowhere";
      // One deliberate mismatch: the corpus teaches doha, the edit wants
      // oslo, so fact 1 must miss on efficacy and paraphrase.
      f.edited_object = i == 1 ? "oslo" : truths[i];
      f.paraphrases = {p};
      const int j = (i + 1) % 12;
      f.neighbors = {{std::string("the home of ") + names[j] + " is", truths[j]}};
      f.validate();
      mw.facts.push_back(std::move(f));
      mw.corpus.push_back(q + " " + truths[i] + "\n");
      mw.corpus.push_back(p + " " + truths[i] + "\n");
      // Statement-copy drills so a "New Fact:" prefix overrides the
      // memorized answer, for both surface forms of the question.
      const std::string a = truths[(i + 3) % 12];
      const std::string b = truths[(i + 7) % 12];
      mw.corpus.push_back("New Fact: " + q + " " + a + "\n" + q + " " + a + "\n");
      mw.corpus.push_back("New Fact: " + q + " " + b + "\n" + p + " " + b + "\n");
    }

    Vocabulary v = Vocabulary::build(mw.corpus);
    LmConfig cfg;
    cfg.vocab_size = v.base_size();
    cfg.d_model = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.max_context = 1024;
    cfg.seed = 3;
    LmModel model(cfg, std::move(v));

    PretrainConfig pc;
    pc.max_epochs = 250;
    pc.warmup_steps = 10;
    pc.check_every = 1000;  // no mid-run gate checks on this toy corpus
    pc.seed = 3;
    pretrain(model, mw, pc);
    return QaWorld{std::move(mw), std::move(model)};
  }
};

EvalContext no_ctx() { return EvalContext{}; }

}  // namespace

TEST_CASE("harmonic score reproduces the reference triples") {
  struct Row {
    double es, ps, ns, s;
  };
  const Row rows[] = {{99.90, 98.40, 81.30, 92.39},
                      {100.0, 99.55, 83.96, 93.88},
                      {100.0, 99.75, 88.62, 95.82}};
  for (const Row& r : rows) CHECK(std::abs(harmonic_score(r.es, r.ps, r.ns) - r.s) <= 0.01);
}

TEST_CASE("harmonic score sits between its smallest and largest input") {
  Rng rng(71);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform() * 99 + 1;
    const double b = rng.uniform() * 99 + 1;
    const double c = rng.uniform() * 99 + 1;
    const double h = harmonic_score(a, b, c);
    CHECK(h >= std::min({a, b, c}) - 1e-12);
    CHECK(h <= std::max({a, b, c}) + 1e-12);
  }
  CHECK(std::abs(harmonic_score(50, 50, 50) - 50.0) < 1e-12);
}

TEST_CASE("harmonic score degenerates to zero and rejects out-of-range input") {
  CHECK(harmonic_score(0, 50, 50) == 0);
  CHECK(harmonic_score(50, 0, 50) == 0);
  CHECK(harmonic_score(50, 50, 0) == 0);
  CHECK_THROWS_AS(harmonic_score(-1, 50, 50), ConfigError);
  CHECK_THROWS_AS(harmonic_score(50, 101, 50), ConfigError);
  CHECK_THROWS_AS(harmonic_score(50, 50, 100.5), ConfigError);
}

TEST_CASE("method names round-trip") {
  for (Method m : {Method::Original, Method::Baseline, Method::Ike, Method::Ptokens})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("rome"), ConfigError);
}

TEST_CASE("strict wins for es and ps, ties count for ns") {
  World w = World::make(0);
  w.model.params().wout.setZero();  // every distribution is uniform
  std::vector<FactRecord> facts(w.mw.facts.begin(), w.mw.facts.begin() + 6);
  const CfMetrics cf =
      counterfact_metrics(w.model, nullptr, facts, Method::Original, 0, no_ctx());
  CHECK(cf.es == 0);
  CHECK(cf.ps == 0);
  CHECK(cf.ns == 100);

  const EvalReport r =
      evaluate(w.model, nullptr, facts, Method::Original, Variant::CounterFact, 0, no_ctx());
  CHECK(r.es == 0);
  CHECK(r.ns == 100);
  CHECK(r.s == 0);  // degenerate harmonic mean
  CHECK(r.m == 0);
  CHECK(r.n_facts == 6);
  CHECK_FALSE(r.efficacy.has_value());
}

TEST_CASE("question-answering metrics count exact greedy matches") {
  QaWorld qa = QaWorld::make();
  const ZsreMetrics z =
      zsre_metrics(qa.model, nullptr, qa.mw.facts, Method::Original, 0, no_ctx());
  // Fact 1 is edited against the corpus, so it misses; everything else hits.
  CHECK(std::abs(z.efficacy - 100.0 * 11 / 12) < 1e-9);
  CHECK(std::abs(z.paraphrase - 100.0 * 11 / 12) < 1e-9);
  CHECK(std::abs(z.specificity - 100.0) < 1e-9);

  // Three facts including the miss: 2/3 on efficacy and paraphrase.
  std::vector<FactRecord> three(qa.mw.facts.begin(), qa.mw.facts.begin() + 3);
  const ZsreMetrics t = zsre_metrics(qa.model, nullptr, three, Method::Original, 0, no_ctx());
  CHECK(std::abs(t.efficacy - 100.0 * 2 / 3) < 1e-9);
  CHECK(std::abs(t.paraphrase - 100.0 * 2 / 3) < 1e-9);
  CHECK(std::abs(t.specificity - 100.0) < 1e-9);

  const EvalReport r = evaluate(qa.model, nullptr, qa.mw.facts, Method::Original, Variant::Zsre,
                                0, no_ctx());
  CHECK(r.efficacy.has_value());
  CHECK_FALSE(r.es.has_value());
  CHECK_FALSE(r.s.has_value());

  // A statement prefix fixes the miss: the stated object wins.
  const ZsreMetrics b =
      zsre_metrics(qa.model, nullptr, three, Method::Baseline, 0, no_ctx());
  CHECK(b.efficacy >= t.efficacy);
}

TEST_CASE("method and variant combinations are validated") {
  World w = World::make(2);
  std::vector<FactRecord> facts(w.mw.facts.begin(), w.mw.facts.begin() + 2);
  std::vector<const FactRecord*> pool;
  for (const FactRecord& f : w.mw.facts) pool.push_back(&f);

  CHECK_THROWS_AS(zsre_metrics(w.model, &w.pt, facts, Method::Ike, 0, no_ctx()), ConfigError);
  // Demonstration prompting needs its store.
  CHECK_THROWS_AS(counterfact_metrics(w.model, nullptr, facts, Method::Ike, 0, no_ctx()),
                  ConfigError);
  CHECK_THROWS_AS(counterfact_metrics(w.model, &w.pt, facts, Method::Ptokens, -1, no_ctx()),
                  ConfigError);
  CHECK_THROWS_AS(counterfact_metrics(w.model, nullptr, facts, Method::Original, 2, no_ctx()),
                  ConfigError);
  // Chains need a pool.
  CHECK_THROWS_AS(counterfact_metrics(w.model, &w.pt, facts, Method::Ptokens, 2, no_ctx()),
                  ConfigError);
  // Marker method without embeddings.
  EvalContext ctx;
  ctx.distractor_pool = &pool;
  CHECK_THROWS_AS(counterfact_metrics(w.model, nullptr, facts, Method::Ptokens, 0, ctx),
                  ConfigError);
  CHECK_THROWS_AS(
      counterfact_metrics(w.model, &w.pt, {}, Method::Original, 0, no_ctx()), DataError);
}

TEST_CASE("evaluation is deterministic for a fixed seed") {
  World w = World::make(2);
  std::vector<FactRecord> facts(w.mw.facts.begin(), w.mw.facts.begin() + 4);
  std::vector<const FactRecord*> pool;
  for (const FactRecord& f : w.mw.facts) pool.push_back(&f);
  EvalContext ctx;
  ctx.distractor_pool = &pool;
  ctx.seed = 77;

  const EvalReport a =
      evaluate(w.model, &w.pt, facts, Method::Ptokens, Variant::CounterFact, 3, ctx);
  const EvalReport b =
      evaluate(w.model, &w.pt, facts, Method::Ptokens, Variant::CounterFact, 3, ctx);
  CHECK(a == b);
  CHECK(a.m == 2);
  CHECK(a.distractor_len == 3);
  CHECK(a.seed == 77);
}

TEST_CASE("token sweep trains one marker set per requested size") {
  World w = World::make(0);
  DatasetSplit split;
  split.train.assign(w.mw.facts.begin(), w.mw.facts.begin() + 3);
  split.validation.assign(w.mw.facts.begin() + 3, w.mw.facts.begin() + 5);
  split.test.assign(w.mw.facts.begin() + 5, w.mw.facts.begin() + 9);
  split.seed = 5;

  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.seed = 5;
  const auto reports = sweep_tokens(w.model, split, Variant::CounterFact, {1, 2}, cfg);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].m == 1);
  CHECK(reports[1].m == 2);
  for (const EvalReport& r : reports) {
    CHECK(r.method == Method::Ptokens);
    CHECK(r.n_facts == 4);
    CHECK(r.distractor_len == 0);
    CHECK(r.es.has_value());
    CHECK(r.s.has_value());
  }
  CHECK_THROWS_AS(sweep_tokens(w.model, split, Variant::CounterFact, {}, cfg), ConfigError);
  DatasetSplit no_test = split;
  no_test.test.clear();
  CHECK_THROWS_AS(sweep_tokens(w.model, no_test, Variant::CounterFact, {1}, cfg), DataError);
}

TEST_CASE("distractor sweep evaluates each requested length") {
  World w = World::make(2);
  std::vector<FactRecord> facts(w.mw.facts.begin(), w.mw.facts.begin() + 3);
  std::vector<const FactRecord*> pool;
  for (const FactRecord& f : w.mw.facts) pool.push_back(&f);
  EvalContext ctx;
  ctx.distractor_pool = &pool;
  ctx.seed = 5;

  const auto reports =
      sweep_distractors(w.model, w.pt, facts, Variant::CounterFact, {0, 3}, ctx);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].distractor_len == 0);
  CHECK(reports[1].distractor_len == 3);
  for (const EvalReport& r : reports) CHECK(r.m == 2);
  CHECK_THROWS_AS(sweep_distractors(w.model, w.pt, facts, Variant::CounterFact, {}, ctx),
                  ConfigError);
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ptok/errors.hpp"
#include "ptok/facts.hpp"
#include "ptok/pairs.hpp"
#include "ptok/prompts.hpp"
#include "ptok/rng.hpp"
#include "ptok/trainer.hpp"

using namespace ptok;

namespace {

struct World {
  Microworld mw;
  LmModel model;
  PTokenSet pt;
  DemoStore demos;
  std::vector<const FactRecord*> pool;

  static World make(int m = 2) {
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
    PTokenSet pt = model.add_ptokens(m, PTokenInitSpec{}, 7);
    std::vector<FactRecord> train(mw.facts.begin(), mw.facts.begin() + 8);
    DemoStore demos = DemoStore::build(train, 11);
    World w{std::move(mw), std::move(model), std::move(pt), std::move(demos), {}};
    for (const FactRecord& f : w.mw.facts) w.pool.push_back(&f);
    return w;
  }
};

Distribution dist(std::initializer_list<double> probs) {
  Distribution d;
  d.probs = Eigen::VectorXd(static_cast<Eigen::Index>(probs.size()));
  Eigen::Index i = 0;
  for (double p : probs) d.probs[i++] = p;
  return d;
}

Distribution random_dist(Rng& rng, int n) {
  Distribution d;
  d.probs = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) d.probs[i] = rng.uniform() + 1e-6;
  d.probs /= d.probs.sum();
  return d;
}

}  // namespace

TEST_CASE("kl divergence matches the closed form") {
  // KL((.5,.5) || (.25,.75)) = ln(4/3)/2
  const double got = kl_divergence(dist({0.5, 0.5}), dist({0.25, 0.75}));
  CHECK(std::abs(got - 0.14384103622589046) < 1e-9);
  CHECK(std::abs(got - std::log(4.0 / 3.0) / 2.0) < 1e-15);
}

TEST_CASE("kl divergence is zero on identical inputs and non-negative otherwise") {
  Rng rng(101);
  for (int i = 0; i < 100; ++i) {
    Distribution p = random_dist(rng, 17);
    CHECK(kl_divergence(p, p) <= 1e-12);
  }
  for (int i = 0; i < 1000; ++i) {
    Distribution p = random_dist(rng, 11);
    Distribution q = random_dist(rng, 11);
    CHECK(kl_divergence(p, q) >= -1e-12);
  }
}

TEST_CASE("kl divergence handles hard zeros via the teacher floor") {
  // 0 log 0 = 0 on the student side.
  CHECK(std::abs(kl_divergence(dist({0.0, 1.0}), dist({0.5, 0.5})) - std::log(2.0)) < 1e-12);
  // A zero-mass teacher entry is floored at 1e-12 before the log.
  CHECK(std::abs(kl_divergence(dist({1.0, 0.0}), dist({0.0, 1.0})) - 12.0 * std::log(10.0)) <
        1e-9);
}

TEST_CASE("kl divergence rejects malformed inputs") {
  CHECK_THROWS_AS(kl_divergence(dist({0.5, 0.5}), dist({1.0})), ComputeError);
  CHECK_THROWS_AS(kl_divergence(dist({-0.1, 1.1}), dist({0.5, 0.5})), ComputeError);
  CHECK_THROWS_AS(kl_divergence(dist({0.5, 0.5}), dist({-0.2, 1.2})), ComputeError);
}

TEST_CASE("pair_loss equals the mean per-position kl recomputed by hand") {
  World w = World::make();
  Rng rng(31);
  auto pairs = build_pairs(w.model, w.mw.facts[0], Variant::CounterFact, w.pt, w.demos, w.pool,
                           PairParams{}, rng);
  for (size_t pi : {size_t{0}, size_t{2}, size_t{6}}) {
    const TrainPair& pair = pairs[pi];
    const double loss = pair_loss(w.model, w.pt, pair);

    double manual = 0;
    const int n_pos = static_cast<int>(pair.reference_continuation.size()) + 1;
    std::vector<int> s_prefix = pair.student_ids;
    std::vector<int> t_prefix = pair.teacher_ids;
    for (int j = 0; j < n_pos; ++j) {
      Distribution sp = w.model.next_token_distribution(s_prefix, &w.pt);
      Distribution tp = w.model.next_token_distribution(t_prefix);
      manual += kl_divergence(sp, tp);
      if (j < n_pos - 1) {
        s_prefix.push_back(pair.reference_continuation[static_cast<size_t>(j)]);
        t_prefix.push_back(pair.reference_continuation[static_cast<size_t>(j)]);
      }
    }
    manual /= n_pos;
    CHECK(std::abs(loss - manual) < 1e-9);
    CHECK(loss >= 0);
  }
}

TEST_CASE("pair_loss needs a reference continuation") {
  World w = World::make();
  TrainPair bad;
  bad.student_ids = {256};
  bad.teacher_ids = {256};
  CHECK_THROWS_AS(pair_loss(w.model, w.pt, bad), DataError);
}

TEST_CASE("teacher cache memoizes by full id sequence") {
  World w = World::make();
  Rng rng(32);
  auto pairs = build_pairs(w.model, w.mw.facts[1], Variant::CounterFact, w.pt, w.demos, w.pool,
                           PairParams{}, rng);
  TeacherCache cache;
  const double l1 = pair_loss(w.model, w.pt, pairs[0], &cache);
  const size_t after_first = cache.size();
  CHECK(after_first == 1);
  const double l2 = pair_loss(w.model, w.pt, pairs[0], &cache);
  CHECK(cache.size() == after_first);
  CHECK(l1 == l2);
  // The distractor pair shares the edit pair's teacher, so no new entry.
  pair_loss(w.model, w.pt, pairs[3], &cache);
  CHECK(cache.size() == after_first);
  pair_loss(w.model, w.pt, pairs[2], &cache);
  CHECK(cache.size() == after_first + 1);

  std::vector<int> ids = {256, 257, 258, 259};
  cache.distributions(w.model, ids, 2);
  CHECK_THROWS_AS(cache.distributions(w.model, ids, 3), ComputeError);
}

TEST_CASE("gradient accumulation touches only marker rows") {
  World w = World::make();
  Rng rng(33);
  auto pairs = build_pairs(w.model, w.mw.facts[2], Variant::CounterFact, w.pt, w.demos, w.pool,
                           PairParams{}, rng);
  Eigen::MatrixXd grad =
      Eigen::MatrixXd::Zero(w.pt.embeddings.rows(), w.pt.embeddings.cols());
  const double with_grad = pair_loss(w.model, w.pt, pairs[0], nullptr, &grad);
  const double without = pair_loss(w.model, w.pt, pairs[0]);
  CHECK(std::abs(with_grad - without) < 1e-12);
  CHECK(grad.rows() == 2 * w.pt.m);
  CHECK(grad.cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("analytic gradients agree with central differences") {
  World w = World::make();
  Rng rng(34);
  auto pairs = build_pairs(w.model, w.mw.facts[3], Variant::CounterFact, w.pt, w.demos, w.pool,
                           PairParams{}, rng);
  // One pair with a long context, one degenerate short one.
  CHECK(finite_difference_check(w.model, w.pt, pairs[0], 1e-4) <= 1e-4);
  CHECK(finite_difference_check(w.model, w.pt, pairs[6], 1e-4) <= 1e-4);
}

TEST_CASE("finite-difference epsilon is range-checked") {
  World w = World::make();
  Rng rng(35);
  auto pairs = build_pairs(w.model, w.mw.facts[4], Variant::CounterFact, w.pt, w.demos, w.pool,
                           PairParams{}, rng);
  CHECK_THROWS_AS(finite_difference_check(w.model, w.pt, pairs[6], 5e-6), ConfigError);
  CHECK_THROWS_AS(finite_difference_check(w.model, w.pt, pairs[6], 2e-3), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig bad;
  bad.learning_rate = -1e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.max_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_facts = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.pairs.ike_demos = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TrainConfig zero_lr;
  zero_lr.learning_rate = 0;
  CHECK_NOTHROW(zero_lr.validate());
}

TEST_CASE("a zero learning rate runs but changes nothing") {
  World w = World::make();
  DatasetSplit split;
  split.train.assign(w.mw.facts.begin(), w.mw.facts.begin() + 3);
  split.validation.assign(w.mw.facts.begin() + 3, w.mw.facts.begin() + 5);
  split.seed = 9;

  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  cfg.seed = 13;
  TrainResult res = train(w.model, w.pt, split, Variant::CounterFact, cfg);

  REQUIRE(res.history.epochs.size() == 3);
  CHECK(res.history.best_epoch == 0);
  CHECK_FALSE(res.history.stopped_early);
  for (const auto& e : res.history.epochs) {
    CHECK(e.validation_loss == res.history.epochs[0].validation_loss);
    CHECK(std::isfinite(e.train_loss));
  }
  CHECK(res.ptokens.embeddings == w.pt.embeddings);
}

TEST_CASE("training improves validation loss and leaves the base model frozen") {
  World w = World::make();
  DatasetSplit split;
  split.train.assign(w.mw.facts.begin(), w.mw.facts.begin() + 3);
  split.validation.assign(w.mw.facts.begin() + 3, w.mw.facts.begin() + 5);
  split.seed = 9;

  const uint64_t base_before = w.model.base_checksum();
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience = 4;
  cfg.seed = 13;
  TrainResult res = train(w.model, w.pt, split, Variant::CounterFact, cfg);

  CHECK(w.model.base_checksum() == base_before);
  REQUIRE(!res.history.epochs.empty());
  REQUIRE(res.history.best_epoch >= 0);
  const auto& eps = res.history.epochs;
  double best = eps[static_cast<size_t>(res.history.best_epoch)].validation_loss;
  for (const auto& e : eps) CHECK(best <= e.validation_loss);
  CHECK(res.ptokens.embeddings != w.pt.embeddings);

  TrainResult res2 = train(w.model, w.pt, split, Variant::CounterFact, cfg);
  CHECK(res2.ptokens.embeddings == res.ptokens.embeddings);
  REQUIRE(res2.history.epochs.size() == eps.size());
  for (size_t i = 0; i < eps.size(); ++i) {
    CHECK(res2.history.epochs[i].train_loss == eps[i].train_loss);
    CHECK(res2.history.epochs[i].validation_loss == eps[i].validation_loss);
  }
}

TEST_CASE("non-finite losses stop training with a hard error") {
  World w = World::make();
  DatasetSplit split;
  split.train.assign(w.mw.facts.begin(), w.mw.facts.begin() + 2);
  split.validation.assign(w.mw.facts.begin() + 2, w.mw.facts.begin() + 3);
  split.seed = 9;

  PTokenSet broken = w.pt;
  broken.embeddings.setConstant(std::numeric_limits<double>::quiet_NaN());
  TrainConfig cfg;
  cfg.max_epochs = 2;
  CHECK_THROWS_AS(train(w.model, broken, split, Variant::CounterFact, cfg), ComputeError);
}

TEST_CASE("training requires both splits") {
  World w = World::make();
  DatasetSplit split;
  split.train.assign(w.mw.facts.begin(), w.mw.facts.begin() + 2);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(w.model, w.pt, split, Variant::CounterFact, cfg), DataError);
}

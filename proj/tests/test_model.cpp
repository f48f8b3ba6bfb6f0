#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"
#include "ptok/model.hpp"
#include "ptok/model_io.hpp"
#include "ptok/rng.hpp"

using namespace ptok;

namespace {

// Small model over a handful of words; big enough to exercise every code
// path, small enough that brute-force checks stay instant.
LmModel make_model(uint64_t seed = 7, int d_model = 32, int n_layers = 2) {
  Vocabulary v = Vocabulary::build({"aa bb cc dd ee ff gg hh\n"});
  LmConfig cfg;
  cfg.vocab_size = v.base_size();
  cfg.d_model = d_model;
  cfg.n_layers = n_layers;
  cfg.n_heads = 4;
  cfg.max_context = 1024;
  cfg.seed = seed;
  return LmModel(cfg, std::move(v));
}

std::vector<int> some_ids(const LmModel& m, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back(rng.uniform_int(0, m.config().vocab_size - 1));
  return ids;
}

}  // namespace

TEST_CASE("config validation rejects bad dimensions") {
  LmConfig cfg;
  cfg.vocab_size = 300;
  cfg.validate();
  LmConfig bad = cfg;
  bad.d_model = 30;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.max_context = 512;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.vocab_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward passes are deterministic per seed") {
  LmModel a = make_model(42);
  LmModel b = make_model(42);
  LmModel c = make_model(43);
  std::vector<int> ids = some_ids(a, 12, 5);
  auto seg = trivial_segments(ids.size());
  Eigen::MatrixXd la = a.forward_logits(ids, seg);
  CHECK((la - b.forward_logits(ids, seg)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((la - c.forward_logits(ids, seg)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("next_token_distribution is a probability vector") {
  LmModel m = make_model();
  std::vector<int> ids = some_ids(m, 9, 11);
  Distribution d = m.next_token_distribution(ids);
  REQUIRE(d.probs.size() == m.config().vocab_size);
  CHECK(d.probs.minCoeff() >= 0.0);
  CHECK(std::abs(d.probs.sum() - 1.0) < 1e-12);
}

TEST_CASE("zero output head gives the uniform distribution") {
  LmModel m = make_model();
  m.params().wout.setZero();
  Distribution d = m.next_token_distribution(some_ids(m, 5, 3));
  const double u = 1.0 / m.config().vocab_size;
  CHECK((d.probs.array() - u).abs().maxCoeff() < 1e-15);
}

TEST_CASE("segment packing equals processing segments separately") {
  LmModel m = make_model();
  std::vector<int> s1 = some_ids(m, 7, 21);
  std::vector<int> s2 = some_ids(m, 5, 22);
  std::vector<int> packed = s1;
  packed.insert(packed.end(), s2.begin(), s2.end());
  std::vector<int> seg(packed.size(), 0);
  for (size_t t = s1.size(); t < packed.size(); ++t) seg[t] = static_cast<int>(s1.size());

  Eigen::MatrixXd lp = m.forward_logits(packed, seg);
  Eigen::MatrixXd l1 = m.forward_logits(s1, trivial_segments(s1.size()));
  Eigen::MatrixXd l2 = m.forward_logits(s2, trivial_segments(s2.size()));
  CHECK((lp.topRows(l1.rows()) - l1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lp.bottomRows(l2.rows()) - l2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("segment vectors are validated") {
  LmModel m = make_model();
  std::vector<int> ids = some_ids(m, 6, 1);
  CHECK_THROWS_AS(m.forward_logits(ids, {0, 0, 0}), ConfigError);
  // Segment start beyond its own index.
  CHECK_THROWS_AS(m.forward_logits(ids, {0, 0, 4, 4, 4, 4}), ConfigError);
  // Non-contiguous segment labels.
  CHECK_THROWS_AS(m.forward_logits(ids, {0, 1, 0, 3, 3, 3}), ConfigError);
  // Over-long segment: build one longer than max_context.
  std::vector<int> long_ids = some_ids(m, m.config().max_context + 1, 2);
  CHECK_THROWS_AS(m.forward_logits(long_ids, trivial_segments(long_ids.size())),
                  ComputeError);
}

TEST_CASE("from_row offsets the logit rows") {
  LmModel m = make_model();
  std::vector<int> ids = some_ids(m, 10, 31);
  auto seg = trivial_segments(ids.size());
  Eigen::MatrixXd full = m.forward_logits(ids, seg);
  Eigen::MatrixXd tail = m.forward_logits(ids, seg, nullptr, 6);
  REQUIRE(tail.rows() == 4);
  CHECK((full.bottomRows(4) - tail).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(m.forward_logits(ids, seg, nullptr, 10), ConfigError);
}

TEST_CASE("sequence_score matches a position-by-position recomputation") {
  LmModel m = make_model();
  std::vector<int> prompt = some_ids(m, 6, 41);
  std::vector<int> cont = some_ids(m, 4, 42);
  double got = m.sequence_score(prompt, cont);

  double want = 0.0;
  std::vector<int> ctx = prompt;
  for (int tok : cont) {
    Distribution d = m.next_token_distribution(ctx);
    want += std::log(d.probs[tok]);
    ctx.push_back(tok);
  }
  want /= static_cast<double>(cont.size());
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("greedy_decode follows the argmax chain and stops before eos") {
  LmModel m = make_model();
  std::vector<int> prompt = some_ids(m, 5, 51);
  std::vector<int> out = m.greedy_decode(prompt, 6);
  CHECK(out.size() <= 6);

  std::vector<int> ctx = prompt;
  for (int tok : out) {
    Distribution d = m.next_token_distribution(ctx);
    int best = 0;
    for (int i = 1; i < d.probs.size(); ++i)
      if (d.probs[i] > d.probs[best]) best = i;
    CHECK(tok == best);
    CHECK(tok != m.vocab().eos_id());
    ctx.push_back(tok);
  }
  if (out.size() < 6) {
    Distribution d = m.next_token_distribution(ctx);
    int best = 0;
    for (int i = 1; i < d.probs.size(); ++i)
      if (d.probs[i] > d.probs[best]) best = i;
    CHECK(best == m.vocab().eos_id());
  }
}

TEST_CASE("batched decode agrees with one-at-a-time decode") {
  LmModel m = make_model();
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < 5; ++i) prompts.push_back(some_ids(m, 4 + i, 60 + static_cast<uint64_t>(i)));
  auto batch = m.greedy_decode_batch(prompts, 5);
  REQUIRE(batch.size() == prompts.size());
  for (size_t i = 0; i < prompts.size(); ++i) CHECK(batch[i] == m.greedy_decode(prompts[i], 5));
}

TEST_CASE("decode refuses to overflow the context") {
  LmModel m = make_model();
  std::vector<int> prompt = some_ids(m, m.config().max_context - 2, 71);
  CHECK_THROWS_AS(m.greedy_decode(prompt, 3), ComputeError);
}

TEST_CASE("add_ptokens registers specials and initializes rows") {
  LmModel m = make_model();
  const int base = m.vocab().base_size();
  PTokenInitSpec init;
  init.kind = PTokenInitKind::MeanNoise;
  init.sigma = 0.02;
  PTokenSet pt = m.add_ptokens(3, init, 9);
  CHECK(pt.m == 3);
  REQUIRE(pt.begin_ids.size() == 3);
  REQUIRE(pt.end_ids.size() == 3);
  CHECK(pt.embeddings.rows() == 6);
  CHECK(pt.embeddings.cols() == m.config().d_model);
  for (int i = 0; i < 3; ++i) {
    CHECK(pt.begin_ids[static_cast<size_t>(i)] == base + i);
    CHECK(pt.end_ids[static_cast<size_t>(i)] == base + 3 + i);
    CHECK(pt.row_of(pt.begin_ids[static_cast<size_t>(i)]) == i);
    CHECK(pt.row_of(pt.end_ids[static_cast<size_t>(i)]) == 3 + i);
  }
  CHECK(pt.row_of(0) == -1);
  CHECK(m.vocab().n_special() == 6);

  // Mean-plus-noise init stays near the mean embedding.
  Eigen::RowVectorXd mean = m.params().wte.colwise().mean();
  for (int r = 0; r < 6; ++r)
    CHECK((pt.embeddings.row(r) - mean).norm() < 1.0);

  // Same seed reproduces the initialization on a fresh model.
  LmModel m2 = make_model();
  PTokenSet pt2 = m2.add_ptokens(3, init, 9);
  CHECK((pt.embeddings - pt2.embeddings).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(m.add_ptokens(2, init, 9), ConfigError);
}

TEST_CASE("prompt tokens are input-only: head never scores them") {
  LmModel m = make_model();
  PTokenSet pt = m.add_ptokens(2, PTokenInitSpec{}, 3);
  std::vector<int> ids = {pt.begin_ids[0], pt.begin_ids[1], 1, 2, pt.end_ids[0], pt.end_ids[1], 3};
  Distribution d = m.next_token_distribution(ids, &pt);
  CHECK(d.probs.size() == m.config().vocab_size);
  // Using a special id without passing the set is an error.
  CHECK_THROWS_AS(m.next_token_distribution(ids, nullptr), ComputeError);
}

TEST_CASE("base_checksum ignores prompt-token training state") {
  LmModel m = make_model();
  uint64_t before = m.base_checksum();
  PTokenSet pt = m.add_ptokens(2, PTokenInitSpec{}, 5);
  pt.embeddings.array() += 0.25;
  CHECK(m.base_checksum() == before);
  m.params().wte(0, 0) += 1e-12;
  CHECK(m.base_checksum() != before);
}

TEST_CASE("checkpoint round-trip is byte-identical and load-exact") {
  LmModel m = make_model(123);
  const std::string dir = "test_model_tmp";
  ensure_dir(dir);
  const std::string p1 = dir + "/a.ckpt";
  const std::string p2 = dir + "/b.ckpt";
  save_lm(m, p1);
  LmModel r = load_lm(p1);
  CHECK(r.config_hash() == m.config_hash());
  CHECK(r.base_checksum() == m.base_checksum());
  std::vector<int> ids = some_ids(m, 8, 9);
  auto seg = trivial_segments(ids.size());
  CHECK((r.forward_logits(ids, seg) - m.forward_logits(ids, seg)).cwiseAbs().maxCoeff() == 0.0);
  save_lm(r, p2);
  CHECK(read_file(p1) == read_file(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("prompt-token checkpoints bind to the owning model") {
  LmModel m = make_model(123);
  PTokenSet pt = m.add_ptokens(2, PTokenInitSpec{}, 4);
  pt.embeddings(1, 3) = 0.875;
  const std::string dir = "test_model_tmp";
  ensure_dir(dir);
  const std::string path = dir + "/pt.ckpt";
  save_ptokens(pt, m, path);

  LmModel fresh = make_model(123);
  PTokenSet loaded = load_ptokens(path, fresh);
  CHECK(loaded.m == pt.m);
  CHECK(loaded.begin_ids == pt.begin_ids);
  CHECK(loaded.end_ids == pt.end_ids);
  CHECK((loaded.embeddings - pt.embeddings).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fresh.vocab().n_special() == 4);

  LmModel other = make_model(124);  // different weights, same architecture
  CHECK_THROWS_AS(load_ptokens(path, other), DataError);
  std::remove(path.c_str());
}

TEST_CASE("backward matches finite differences on a base weight") {
  LmModel m = make_model(3, 16, 1);
  std::vector<int> ids = some_ids(m, 5, 13);
  auto seg = trivial_segments(ids.size());

  // Scalar objective: sum of tanh of logits, bounded and smooth.
  auto objective = [&](const LmModel& model) {
    return model.forward_logits(ids, seg).array().tanh().sum();
  };

  ForwardTape tape = m.forward_tape(ids, seg);
  Eigen::MatrixXd dlogits = (1.0 - tape.logits.array().tanh().square()).matrix();
  LmParams grads = m.params();
  grads.set_zero();
  m.backward(tape, dlogits, &grads, nullptr);

  Rng pick(99);
  const double eps = 1e-6;
  // Spot-check a few coordinates in each parameter family.
  struct Site {
    Eigen::MatrixXd* w;
    Eigen::MatrixXd* g;
  };
  std::vector<Site> sites = {{&m.params().wte, &grads.wte},
                             {&m.params().layers[0].wq, &grads.layers[0].wq},
                             {&m.params().layers[0].wfc1, &grads.layers[0].wfc1},
                             {&m.params().wout, &grads.wout}};
  for (Site s : sites) {
    for (int trial = 0; trial < 3; ++trial) {
      int r = pick.uniform_int(0, static_cast<int>(s.w->rows()) - 1);
      int c = pick.uniform_int(0, static_cast<int>(s.w->cols()) - 1);
      double keep = (*s.w)(r, c);
      (*s.w)(r, c) = keep + eps;
      double up = objective(m);
      (*s.w)(r, c) = keep - eps;
      double dn = objective(m);
      (*s.w)(r, c) = keep;
      double fd = (up - dn) / (2 * eps);
      double ga = (*s.g)(r, c);
      CHECK(std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8}) < 1e-5);
    }
  }
}

TEST_CASE("dembed carries gradients for prompt-token rows") {
  LmModel m = make_model(3, 16, 1);
  PTokenSet pt = m.add_ptokens(1, PTokenInitSpec{}, 2);
  std::vector<int> ids = {pt.begin_ids[0], 1, 2, pt.end_ids[0], 3};
  auto seg = trivial_segments(ids.size());

  ForwardTape tape = m.forward_tape(ids, seg, &pt);
  Eigen::MatrixXd dlogits = (1.0 - tape.logits.array().tanh().square()).matrix();
  Eigen::MatrixXd dembed;
  m.backward(tape, dlogits, nullptr, &dembed);
  REQUIRE(dembed.rows() == static_cast<Eigen::Index>(ids.size()));

  auto objective = [&]() {
    return m.forward_logits(ids, seg, &pt).array().tanh().sum();
  };
  const double eps = 1e-6;
  for (int c : {0, 7, 15}) {
    double keep = pt.embeddings(0, c);
    pt.embeddings(0, c) = keep + eps;
    double up = objective();
    pt.embeddings(0, c) = keep - eps;
    double dn = objective();
    pt.embeddings(0, c) = keep;
    double fd = (up - dn) / (2 * eps);
    double ga = dembed(0, c);  // begin token sits at position 0
    CHECK(std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8}) < 1e-5);
  }
}

#include "ptok/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "ptok/errors.hpp"
#include "ptok/optim.hpp"
#include "ptok/prompts.hpp"

namespace ptok {

namespace {

constexpr double kTeacherFloor = 1e-12;

std::string ids_key(const std::vector<int>& ids) {
  std::string key(ids.size() * sizeof(int), '\0');
  if (!ids.empty()) std::memcpy(key.data(), ids.data(), key.size());
  return key;
}

void softmax_rows(Eigen::MatrixXd& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::ArrayXd a = rows.row(r).array();
    a -= a.maxCoeff();
    a = a.exp();
    rows.row(r) = (a / a.sum()).matrix();
  }
}

// KL of one aligned position plus (optionally) its gradient with respect
// to the student logits of that position. With q floored before the log,
// d/dz_i = p_i (log(p_i / q_i) - kl).
double position_kl(const Eigen::ArrayXd& p, const Eigen::ArrayXd& q, Eigen::ArrayXd* dlogits) {
  // A poisoned distribution must poison the loss, not skip the 0 log 0
  // branch and report zero; the training loop's finite check relies on it.
  if (!p.isFinite().all() || !q.isFinite().all()) {
    if (dlogits) dlogits->setConstant(p.size(), std::numeric_limits<double>::quiet_NaN());
    return std::numeric_limits<double>::quiet_NaN();
  }
  const Eigen::ArrayXd logq = q.max(kTeacherFloor).log();
  double kl = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0) kl += p[i] * (std::log(p[i]) - logq[i]);
  if (dlogits) {
    Eigen::ArrayXd logp(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) logp[i] = p[i] > 0 ? std::log(p[i]) : 0.0;
    *dlogits = p * (logp - logq - kl);
  }
  return kl;
}

std::vector<int> concat_ids(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<const FactRecord*> fact_ptrs(const std::vector<FactRecord>& facts) {
  std::vector<const FactRecord*> out;
  out.reserve(facts.size());
  for (const FactRecord& f : facts) out.push_back(&f);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate < 0) throw ConfigError("learning rate must be non-negative");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_facts < 1) throw ConfigError("batch_facts must be at least 1");
  if (pairs.ike_demos < 1) throw ConfigError("ike_demos must be at least 1");
}

double kl_divergence(const Distribution& p, const Distribution& q) {
  if (p.probs.size() != q.probs.size())
    throw ComputeError("kl_divergence: dimension mismatch");
  if ((p.probs.array() < 0).any() || (q.probs.array() < 0).any())
    throw ComputeError("kl_divergence: negative probability");
  if (!p.probs.allFinite() || !q.probs.allFinite())
    throw ComputeError("kl_divergence: non-finite probability");
  return position_kl(p.probs.array(), q.probs.array(), nullptr);
}

const Eigen::MatrixXd& TeacherCache::distributions(const LmModel& model,
                                                   const std::vector<int>& full_ids,
                                                   int n_positions) {
  const std::string key = ids_key(full_ids);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    const int from = static_cast<int>(full_ids.size()) - n_positions;
    Eigen::MatrixXd logits =
        model.forward_logits(full_ids, trivial_segments(full_ids.size()), nullptr, from);
    softmax_rows(logits);
    it = cache_.emplace(key, std::move(logits)).first;
  }
  if (it->second.rows() != n_positions)
    throw ComputeError("teacher cache hit with a different position count");
  return it->second;
}

double pair_loss(const LmModel& model, const PTokenSet& ptokens, const TrainPair& pair,
                 TeacherCache* cache, Eigen::MatrixXd* grad_accum) {
  if (pair.reference_continuation.empty())
    throw DataError("pair has an empty reference continuation");
  const int n_pos = static_cast<int>(pair.reference_continuation.size()) + 1;

  const std::vector<int> student_full = concat_ids(pair.student_ids, pair.reference_continuation);
  const std::vector<int> teacher_full = concat_ids(pair.teacher_ids, pair.reference_continuation);

  TeacherCache local;
  TeacherCache& tc = cache ? *cache : local;
  const Eigen::MatrixXd& teacher = tc.distributions(model, teacher_full, n_pos);

  const auto seg = trivial_segments(student_full.size());
  const int s_rows = static_cast<int>(student_full.size());
  const int s_from = s_rows - n_pos;

  if (!grad_accum) {
    Eigen::MatrixXd logits = model.forward_logits(student_full, seg, &ptokens, s_from);
    softmax_rows(logits);
    double total = 0;
    for (int j = 0; j < n_pos; ++j)
      total += position_kl(logits.row(j).array(), teacher.row(j).array(), nullptr);
    return total / n_pos;
  }

  ForwardTape tape = model.forward_tape(student_full, seg, &ptokens);
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(s_rows, tape.logits.cols());
  double total = 0;
  for (int j = 0; j < n_pos; ++j) {
    Eigen::ArrayXd probs = tape.logits.row(s_from + j).array();
    probs -= probs.maxCoeff();
    probs = probs.exp();
    probs /= probs.sum();
    Eigen::ArrayXd dz;
    total += position_kl(probs, teacher.row(j).array(), &dz);
    dlogits.row(s_from + j) = (dz / n_pos).matrix();
  }

  Eigen::MatrixXd dembed(s_rows, model.config().d_model);
  model.backward(tape, dlogits, nullptr, &dembed);
  for (int t = 0; t < s_rows; ++t) {
    const int row = ptokens.row_of(student_full[static_cast<size_t>(t)]);
    if (row >= 0) grad_accum->row(row) += dembed.row(t);
  }
  return total / n_pos;
}

TrainResult train(const LmModel& model, const PTokenSet& initial, const DatasetSplit& split,
                  Variant variant, const TrainConfig& cfg) {
  cfg.validate();
  if (split.train.empty() || split.validation.empty())
    throw DataError("training requires non-empty train and validation splits");

  const Variant v = variant;
  const DemoStore demos = DemoStore::build(split.train, split.seed);
  const auto train_pool = fact_ptrs(split.train);

  TrainResult result;
  result.ptokens = initial;
  PTokenSet& pt = result.ptokens;

  AdamWConfig ocfg;
  ocfg.learning_rate = cfg.learning_rate;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(ocfg, {&pt.embeddings});

  // Validation pairs are fixed for the whole run so that epoch losses are
  // comparable; their distractor chains come from the training split.
  std::vector<TrainPair> val_pairs;
  {
    Rng vrng(mix_seed(cfg.seed, 0x76616c5f70616972ULL));
    val_pairs = build_batch(model, fact_ptrs(split.validation), v, pt, demos, train_pool,
                            cfg.pairs, vrng);
  }

  TeacherCache cache;
  Eigen::MatrixXd best = pt.embeddings;
  double best_val = std::numeric_limits<double>::infinity();
  int since_improvement = 0;

  std::vector<int> order(split.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[static_cast<int>(i)] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng erng(mix_seed(cfg.seed, 0x65706f6368ULL + static_cast<uint64_t>(epoch)));
    erng.shuffle(order);

    double epoch_loss = 0;
    int epoch_pairs = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_facts)) {
      std::vector<const FactRecord*> batch;
      for (size_t i = start; i < order.size() && i < start + static_cast<size_t>(cfg.batch_facts);
           ++i)
        batch.push_back(&split.train[static_cast<size_t>(order[i])]);
      const auto pairs = build_batch(model, batch, v, pt, demos, train_pool, cfg.pairs, erng);

      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(pt.embeddings.rows(), pt.embeddings.cols());
      double batch_loss = 0;
      for (const TrainPair& p : pairs) batch_loss += pair_loss(model, pt, p, &cache, &grad);
      batch_loss /= static_cast<double>(pairs.size());
      grad /= static_cast<double>(pairs.size());

      if (!std::isfinite(batch_loss))
        throw ComputeError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch));
      if (cfg.learning_rate > 0) opt.step({&pt.embeddings}, {&grad}, cfg.learning_rate);
      epoch_loss += batch_loss * static_cast<double>(pairs.size());
      epoch_pairs += static_cast<int>(pairs.size());
    }
    epoch_loss /= static_cast<double>(epoch_pairs);

    double val_loss = 0;
    for (const TrainPair& p : val_pairs) val_loss += pair_loss(model, pt, p, &cache, nullptr);
    val_loss /= static_cast<double>(val_pairs.size());

    const auto t1 = std::chrono::steady_clock::now();
    TrainHistory::Epoch e;
    e.train_loss = epoch_loss;
    e.validation_loss = val_loss;
    e.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    result.history.epochs.push_back(e);

    if (val_loss < best_val) {
      best_val = val_loss;
      best = pt.embeddings;
      result.history.best_epoch = epoch;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement >= cfg.patience) {
        result.history.stopped_early = true;
        break;
      }
    }
  }

  pt.embeddings = best;
  return result;
}

double finite_difference_check(const LmModel& model, const PTokenSet& ptokens,
                               const TrainPair& pair, double epsilon) {
  if (epsilon < 1e-5 || epsilon > 1e-3)
    throw ConfigError("finite-difference epsilon must lie in [1e-5, 1e-3]");

  PTokenSet work = ptokens;
  const int rows = static_cast<int>(work.embeddings.rows());
  const int cols = static_cast<int>(work.embeddings.cols());

  TeacherCache cache;
  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(rows, cols);
  pair_loss(model, work, pair, &cache, &analytic);

  const double scale = std::max(1.0, work.embeddings.cwiseAbs().maxCoeff());
  const double eps = epsilon * scale;
  const int per_row = std::max(1, (64 + rows - 1) / rows);

  Rng rng(mix_seed(0x66645f636865636bULL, static_cast<uint64_t>(rows) * 131 + cols));
  double worst = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c : rng.sample_without_replacement(cols, std::min(per_row, cols))) {
      const double saved = work.embeddings(r, c);
      work.embeddings(r, c) = saved + eps;
      const double up = pair_loss(model, work, pair, &cache, nullptr);
      work.embeddings(r, c) = saved - eps;
      const double down = pair_loss(model, work, pair, &cache, nullptr);
      work.embeddings(r, c) = saved;
      const double fd = (up - down) / (2 * eps);
      const double ga = analytic(r, c);
      const double err = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ptok

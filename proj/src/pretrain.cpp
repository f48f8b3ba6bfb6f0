#include "ptok/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ptok/errors.hpp"
#include "ptok/optim.hpp"
#include "ptok/prompts.hpp"
#include "ptok/rng.hpp"

namespace ptok {

namespace {

std::string first_word(const std::string& normalized) {
  const size_t sp = normalized.find(' ');
  return sp == std::string::npos ? normalized : normalized.substr(0, sp);
}

double decode_match(const LmModel& model, const std::vector<std::vector<int>>& prompts,
                    const std::vector<std::string>& expected) {
  const auto decoded = model.greedy_decode_batch(prompts, 4);
  int hits = 0;
  for (size_t i = 0; i < decoded.size(); ++i) {
    const std::string got = first_word(normalize_answer(detokenize(decoded[i], model.vocab())));
    if (!got.empty() && got == normalize_answer(expected[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(decoded.size());
}

struct Pack {
  std::vector<int> ids;
  std::vector<int> seg_start;
};

}  // namespace

void PretrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("pretrain learning rate must be positive");
  if (pack_len < 64) throw ConfigError("pack_len must be at least 64");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (check_every < 1) throw ConfigError("check_every must be at least 1");
  if (target_recall <= 0 || target_recall > 1 || target_edit <= 0 || target_edit > 1)
    throw ConfigError("pretrain targets must lie in (0, 1]");
}

double fact_recall(const LmModel& model, const std::vector<FactRecord>& facts) {
  if (facts.empty()) throw DataError("fact_recall over an empty fact list");
  std::vector<std::vector<int>> prompts;
  std::vector<std::string> expected;
  for (const FactRecord& f : facts) {
    prompts.push_back(tokenize(f.query_text(), model.vocab()));
    expected.push_back(f.original_object);
  }
  return decode_match(model, prompts, expected);
}

double icl_edit_success(const LmModel& model, const std::vector<FactRecord>& facts) {
  if (facts.empty()) throw DataError("icl_edit_success over an empty fact list");
  std::vector<std::vector<int>> prompts;
  std::vector<std::string> expected;
  for (const FactRecord& f : facts) {
    const RenderedPrompt stmt = render_edit_statement(model.vocab(), f);
    prompts.push_back(tokenize(stmt.text + "Prompt: " + f.query_text(), model.vocab()));
    expected.push_back(f.edited_object);
  }
  return decode_match(model, prompts, expected);
}

PretrainStats pretrain(LmModel& model, const Microworld& world, const PretrainConfig& cfg) {
  cfg.validate();
  if (world.corpus.empty()) throw DataError("pretraining corpus is empty");
  const auto t_start = std::chrono::steady_clock::now();

  std::vector<std::vector<int>> docs;
  docs.reserve(world.corpus.size());
  size_t longest = 0;
  for (const std::string& text : world.corpus) {
    docs.push_back(tokenize(text, model.vocab()));
    longest = std::max(longest, docs.back().size());
  }
  const int max_ctx = model.config().max_context;
  if (longest > static_cast<size_t>(max_ctx))
    throw DataError("a corpus document exceeds the model context");
  const size_t pack_len =
      std::min(static_cast<size_t>(max_ctx), std::max(static_cast<size_t>(cfg.pack_len), longest));

  AdamWConfig ocfg;
  ocfg.learning_rate = cfg.learning_rate;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.weight_decay;

  std::vector<Eigen::MatrixXd*> params;
  model.params().for_each([&](Eigen::MatrixXd& m) { params.push_back(&m); });
  LmParams grad_store = model.params();
  std::vector<Eigen::MatrixXd*> grads;
  grad_store.for_each([&](Eigen::MatrixXd& m) { grads.push_back(&m); });
  std::vector<const Eigen::MatrixXd*> shapes(params.begin(), params.end());
  std::vector<const Eigen::MatrixXd*> cgrads(grads.begin(), grads.end());
  AdamW opt(ocfg, shapes);

  std::vector<int> order(docs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  // Cosine horizon from the first epoch's pack count; the schedule only
  // shapes the decay, training stops on the recall gates.
  int64_t planned_steps = 0;
  int64_t step = 0;
  double epoch_loss = 0;

  PretrainStats stats;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng erng(mix_seed(cfg.seed, 0x707265747261696eULL + static_cast<uint64_t>(epoch)));
    erng.shuffle(order);

    std::vector<Pack> packs;
    Pack cur;
    for (int di : order) {
      const auto& doc = docs[static_cast<size_t>(di)];
      if (!cur.ids.empty() && cur.ids.size() + doc.size() > pack_len) {
        packs.push_back(std::move(cur));
        cur = Pack{};
      }
      const int base = static_cast<int>(cur.ids.size());
      cur.ids.insert(cur.ids.end(), doc.begin(), doc.end());
      cur.seg_start.insert(cur.seg_start.end(), doc.size(), base);
    }
    if (!cur.ids.empty()) packs.push_back(std::move(cur));
    if (planned_steps == 0)
      planned_steps = static_cast<int64_t>(packs.size()) * cfg.max_epochs;

    double loss_sum = 0;
    int64_t target_count = 0;
    for (const Pack& pack : packs) {
      const ForwardTape tape = model.forward_tape(pack.ids, pack.seg_start, nullptr);
      const int T = static_cast<int>(pack.ids.size());

      std::vector<int> targets(static_cast<size_t>(T), -1);
      int n_tgt = 0;
      for (int t = 0; t + 1 < T; ++t)
        if (pack.seg_start[static_cast<size_t>(t) + 1] <= t) {
          targets[static_cast<size_t>(t)] = pack.ids[static_cast<size_t>(t) + 1];
          ++n_tgt;
        }
      if (n_tgt == 0) continue;

      Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(T, tape.logits.cols());
      double pack_loss = 0;
      for (int t = 0; t < T; ++t) {
        const int tgt = targets[static_cast<size_t>(t)];
        if (tgt < 0) continue;
        Eigen::ArrayXd p = tape.logits.row(t).array();
        p -= p.maxCoeff();
        p = p.exp();
        p /= p.sum();
        pack_loss -= std::log(std::max(p[tgt], 1e-300));
        p[tgt] -= 1.0;
        dlogits.row(t) = (p / n_tgt).matrix();
      }

      grad_store.set_zero();
      model.backward(tape, dlogits, &grad_store, nullptr);

      const double warm = std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
      const double frac =
          std::min(1.0, static_cast<double>(step) / static_cast<double>(planned_steps));
      const double cosine = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
      opt.step(params, cgrads, cfg.learning_rate * warm * cosine);
      ++step;

      loss_sum += pack_loss;
      target_count += n_tgt;
    }
    epoch_loss = loss_sum / static_cast<double>(target_count);
    if (!std::isfinite(epoch_loss))
      throw ComputeError("pretraining diverged: non-finite loss at epoch " + std::to_string(epoch));
    stats.epochs = epoch + 1;

    if ((epoch + 1) % cfg.check_every == 0 || epoch + 1 == cfg.max_epochs) {
      stats.fact_recall = fact_recall(model, world.facts);
      stats.edit_success = icl_edit_success(model, world.facts);
      if (stats.fact_recall >= cfg.target_recall && stats.edit_success >= cfg.target_edit) {
        stats.reached_targets = true;
        break;
      }
    }
  }

  stats.final_loss = epoch_loss;
  if (!stats.reached_targets) {
    stats.fact_recall = fact_recall(model, world.facts);
    stats.edit_success = icl_edit_success(model, world.facts);
    stats.reached_targets =
        stats.fact_recall >= cfg.target_recall && stats.edit_success >= cfg.target_edit;
  }
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return stats;
}

}  // namespace ptok

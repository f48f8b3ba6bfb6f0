#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptok/pairs.hpp"

namespace ptok {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.01;
  int max_epochs = 50;
  int patience = 3;
  int batch_facts = 1;
  uint64_t seed = 0;
  PairParams pairs;

  void validate() const;
};

struct TrainHistory {
  struct Epoch {
    double train_loss = 0;
    double validation_loss = 0;
    double wall_seconds = 0;
  };
  std::vector<Epoch> epochs;
  int best_epoch = -1;
  bool stopped_early = false;
};

struct TrainResult {
  PTokenSet ptokens;
  TrainHistory history;
};

// KL(p || q) in nats with 0·log 0 = 0. q is floored at 1e-12 before the
// log so a teacher that assigns numerically zero mass cannot produce an
// infinite loss.
double kl_divergence(const Distribution& p, const Distribution& q);

// Teacher next-token distributions are constant during training, and most
// teacher prompts repeat across epochs, so they are memoized on the full
// teacher-forced id sequence.
class TeacherCache {
 public:
  // Rows = the last n_positions next-token distributions of `full_ids`.
  const Eigen::MatrixXd& distributions(const LmModel& model, const std::vector<int>& full_ids,
                                       int n_positions);
  size_t size() const { return cache_.size(); }

 private:
  std::unordered_map<std::string, Eigen::MatrixXd> cache_;
};

// Mean KL between student and teacher next-token distributions over the
// teacher-forced continuation plus the first next-token position. When
// grad_accum is non-null, the gradient with respect to the 2m marker
// embedding rows is added into it (teacher treated as constant).
double pair_loss(const LmModel& model, const PTokenSet& ptokens, const TrainPair& pair,
                 TeacherCache* cache = nullptr, Eigen::MatrixXd* grad_accum = nullptr);

// Optimizes only the 2m embedding rows of `initial` on split.train with
// early stopping on split.validation. The base model is frozen throughout;
// the returned embeddings are those of the best validation epoch.
TrainResult train(const LmModel& model, const PTokenSet& initial, const DatasetSplit& split,
                  Variant variant, const TrainConfig& cfg);

// Max relative error between the analytic gradient of pair_loss and central
// finite differences over a sampled entry subset (at least 64 entries,
// covering every embedding row). epsilon is relative to the embedding
// scale and must lie in [1e-5, 1e-3].
double finite_difference_check(const LmModel& model, const PTokenSet& ptokens,
                               const TrainPair& pair, double epsilon);

}  // namespace ptok

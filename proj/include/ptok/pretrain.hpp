#pragma once

#include <cstdint>
#include <vector>

#include "ptok/facts.hpp"
#include "ptok/model.hpp"

namespace ptok {

struct PretrainConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.01;
  int warmup_steps = 100;
  int pack_len = 1024;       // grows to the longest document when needed
  int max_epochs = 400;
  int check_every = 5;       // epochs between recall probes
  double target_recall = 0.95;
  double target_edit = 0.90; // one-block in-context edit success
  uint64_t seed = 0;

  void validate() const;
};

struct PretrainStats {
  int epochs = 0;
  double final_loss = 0;     // mean next-token cross-entropy, nats
  double fact_recall = 0;
  double edit_success = 0;
  double wall_seconds = 0;
  bool reached_targets = false;
};

// Fraction of facts whose true object is the first word the model decodes
// after the canonical query.
double fact_recall(const LmModel& model, const std::vector<FactRecord>& facts);

// Fraction of facts where a single prepended edit statement makes the
// model decode the edited object instead.
double icl_edit_success(const LmModel& model, const std::vector<FactRecord>& facts);

// Next-token training on the packed corpus until the model both recalls
// its facts and follows in-context edits, or max_epochs runs out. Documents
// never share a segment, so packing does not change what is learned.
PretrainStats pretrain(LmModel& model, const Microworld& world, const PretrainConfig& cfg);

}  // namespace ptok

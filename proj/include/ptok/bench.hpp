#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptok/evaluator.hpp"

namespace ptok {

struct BenchReport {
  Method method = Method::Ptokens;
  double mean_prompt_tokens = 0;
  double mean_seconds_per_edit = 0;
  int n_edits = 0;
  int batch_size = 1;
  std::string hardware_note;
};

// Mean id count of the method's full edit-plus-query prompt.
double count_prompt_tokens(const LmModel& model, Method method,
                           const std::vector<FactRecord>& facts, const PTokenSet* ptokens,
                           const DemoStore* demos, int ike_demos = 32);

// Mean wall-clock seconds per edit: greedy decode of 5 tokens after the
// method's prompt, batched `batch_size` at a time on a monotone clock.
// Tokenization happens up front and warmup decodes are excluded. Small
// fact lists are cycled until at least 100 edits are timed.
double time_per_edit(const LmModel& model, Method method, const std::vector<FactRecord>& facts,
                     const PTokenSet* ptokens, const DemoStore* demos, int batch_size = 1,
                     int warmup = 10, int ike_demos = 32);

// ceil(train_seconds / (t_ike - t_pt)); errors when the per-edit saving is
// not positive.
int64_t amortization_point(double train_seconds, double t_ike, double t_pt);

BenchReport run_bench(const LmModel& model, Method method, const std::vector<FactRecord>& facts,
                      const PTokenSet* ptokens, const DemoStore* demos, int batch_size = 1,
                      int warmup = 10, int ike_demos = 32);

}  // namespace ptok

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptok/trainer.hpp"

namespace ptok {

enum class Method { Original, Baseline, Ike, Ptokens };

const char* method_name(Method m);
Method parse_method(const std::string& name);

// Shared evaluation inputs. `demos` backs the demonstration-prompt method,
// `distractor_pool` backs distractor chains (the target fact is always
// excluded per prompt), and `seed` fixes the chain sampling.
struct EvalContext {
  const DemoStore* demos = nullptr;
  const std::vector<const FactRecord*>* distractor_pool = nullptr;
  int ike_demos = 32;
  uint64_t seed = 0;
};

struct EvalReport {
  Method method = Method::Original;
  Variant variant = Variant::CounterFact;
  int m = 0;  // marker token count; 0 when the method carries none
  int distractor_len = 0;
  int n_facts = 0;
  uint64_t seed = 0;
  std::optional<double> es, ps, ns, s;
  std::optional<double> efficacy, paraphrase, specificity;

  bool operator==(const EvalReport&) const = default;
};

// 3 / (1/es + 1/ps + 1/ns). A zero component degenerates the harmonic
// mean; that case returns 0 and warns instead of erroring.
double harmonic_score(double es, double ps, double ns);

struct CfMetrics {
  double es = 0, ps = 0, ns = 0;
};

// Sequence-probability metrics. ES: score(o') > score(o) on the query.
// PS: the same on paraphrases. NS: score(o') <= score(o) on neighbors
// (ties count for NS, against ES/PS). Probes are averaged per fact, facts
// averaged per metric. Returns percentages.
CfMetrics counterfact_metrics(const LmModel& model, const PTokenSet* ptokens,
                              const std::vector<FactRecord>& facts, Method method,
                              int distractor_len, const EvalContext& ctx);

struct ZsreMetrics {
  double efficacy = 0, paraphrase = 0, specificity = 0;
};

// Greedy exact-match metrics after answer normalization. Specificity
// expects each neighbor question's own true answer. The demonstration
// method is rejected for this variant.
ZsreMetrics zsre_metrics(const LmModel& model, const PTokenSet* ptokens,
                         const std::vector<FactRecord>& facts, Method method, int distractor_len,
                         const EvalContext& ctx);

// One-stop report assembly for either variant.
EvalReport evaluate(const LmModel& model, const PTokenSet* ptokens,
                    const std::vector<FactRecord>& facts, Method method, Variant variant,
                    int distractor_len, const EvalContext& ctx);

// Trains a fresh marker set per m on split.train/validation (shared seed)
// and evaluates each on split.test without distractors.
std::vector<EvalReport> sweep_tokens(const LmModel& model, const DatasetSplit& split,
                                     Variant variant, const std::vector<int>& m_list,
                                     const TrainConfig& cfg,
                                     PTokenInitSpec init = PTokenInitSpec{});

// Evaluates one trained marker set at every requested chain length.
std::vector<EvalReport> sweep_distractors(const LmModel& model, const PTokenSet& ptokens,
                                          const std::vector<FactRecord>& facts, Variant variant,
                                          const std::vector<int>& lengths,
                                          const EvalContext& ctx);

}  // namespace ptok

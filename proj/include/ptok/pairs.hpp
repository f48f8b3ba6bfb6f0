#pragma once

#include <string>
#include <vector>

#include "ptok/prompts.hpp"
#include "ptok/rng.hpp"

namespace ptok {

enum class PairKind {
  Edit,
  Paraphrase,
  Neighbor,
  Distractor,
  OnlyBegin,
  OnlyEnd,
  EmptyEdit,
  EmptyEditReversed,
};

inline constexpr int kNumPairKinds = 8;

const char* pair_kind_name(PairKind kind);

// One student/teacher prompt pair. The student side carries the marker
// tokens, the teacher side never does, and both end with the same probe
// text. The KL loss is taken on the teacher-forced reference continuation
// (plus the first next-token position), so the continuation is stored with
// the pair instead of being re-derived at training time.
struct TrainPair {
  PairKind kind = PairKind::Edit;
  std::string fact_id;
  std::vector<int> student_ids;
  std::vector<int> teacher_ids;
  std::vector<int> reference_continuation;
};

struct PairParams {
  int ike_demos = 32;                       // demonstration blocks per teacher prompt
  std::vector<int> distractor_lens{5, 10};  // training-time chain lengths, sampled uniformly
};

// All eight pairs for one fact. Draw order from rng: paraphrase index,
// neighbor index, distractor chain length, then the chain's fact indices.
// The distractor pool must not contain the fact itself.
std::vector<TrainPair> build_pairs(const LmModel& model, const FactRecord& fact, Variant variant,
                                   const PTokenSet& ptokens, const DemoStore& demos,
                                   const std::vector<const FactRecord*>& distractor_pool,
                                   const PairParams& params, Rng& rng);

// Concatenation of build_pairs over `facts`; each fact's distractor pool is
// `pool` minus the fact itself. Every kind occurs once per fact.
std::vector<TrainPair> build_batch(const LmModel& model,
                                   const std::vector<const FactRecord*>& facts, Variant variant,
                                   const PTokenSet& ptokens, const DemoStore& demos,
                                   const std::vector<const FactRecord*>& pool,
                                   const PairParams& params, Rng& rng);

// Evaluation prompt: the target's marker-wrapped edit, then a chain of
// `distractor_len` pooled edits, then the probe. A length of zero omits the
// chain entirely. Overflowing the model context is a hard error.
RenderedPrompt build_eval_prompt(const LmModel& model, const FactRecord& fact,
                                 const RenderedPrompt& probe, int distractor_len,
                                 const std::vector<const FactRecord*>& pool,
                                 const PTokenSet& ptokens, Rng& rng);

}  // namespace ptok

#include "ptok/pairs.hpp"

#include <algorithm>

#include "ptok/errors.hpp"

namespace ptok {

namespace {

// Uniform sample of k pool entries: without replacement while the pool is
// large enough, with replacement once k exceeds it (the desk-scale pools
// are small, and a chain may then repeat an edit).
std::vector<const FactRecord*> sample_edits(const std::vector<const FactRecord*>& pool, int k,
                                            Rng& rng) {
  std::vector<const FactRecord*> out;
  out.reserve(static_cast<size_t>(k));
  const int n = static_cast<int>(pool.size());
  if (k <= n) {
    for (int idx : rng.sample_without_replacement(n, k)) out.push_back(pool[idx]);
  } else {
    for (int i = 0; i < k; ++i) out.push_back(pool[rng.uniform_int(0, n - 1)]);
  }
  return out;
}

std::vector<const FactRecord*> without_target(const std::vector<const FactRecord*>& pool,
                                              const std::string& case_id) {
  std::vector<const FactRecord*> out;
  out.reserve(pool.size());
  for (const FactRecord* f : pool)
    if (f->case_id != case_id) out.push_back(f);
  return out;
}

// An edit statement whose prompt text is given directly (used to build the
// paraphrase-side teacher for the question-answering variant).
RenderedPrompt statement_on(const Vocabulary& vocab, const std::string& prompt_text,
                            const std::string& object) {
  RenderedPrompt r;
  r.text = "New Fact: " + prompt_text + " " + object + "\n";
  r.ids = tokenize(r.text, vocab);
  r.role = PromptRole::EditStatement;
  return r;
}

void check_context(const LmModel& model, const std::vector<int>& ids, size_t continuation_len,
                   const char* what) {
  const size_t budget = static_cast<size_t>(model.config().max_context);
  if (ids.size() + continuation_len > budget)
    throw DataError(std::string(what) + " needs " + std::to_string(ids.size() + continuation_len) +
                    " tokens but the model context is " + std::to_string(budget));
}

TrainPair make_pair(const LmModel& model, PairKind kind, const FactRecord& fact,
                    const RenderedPrompt& student, const RenderedPrompt& teacher,
                    std::vector<int> continuation) {
  TrainPair p;
  p.kind = kind;
  p.fact_id = fact.case_id;
  p.student_ids = student.ids;
  p.teacher_ids = teacher.ids;
  p.reference_continuation = std::move(continuation);
  check_context(model, p.student_ids, p.reference_continuation.size(), pair_kind_name(kind));
  check_context(model, p.teacher_ids, p.reference_continuation.size(), pair_kind_name(kind));
  return p;
}

}  // namespace

const char* pair_kind_name(PairKind kind) {
  switch (kind) {
    case PairKind::Edit: return "edit";
    case PairKind::Paraphrase: return "paraphrase";
    case PairKind::Neighbor: return "neighbor";
    case PairKind::Distractor: return "distractor";
    case PairKind::OnlyBegin: return "only_begin";
    case PairKind::OnlyEnd: return "only_end";
    case PairKind::EmptyEdit: return "empty_edit";
    case PairKind::EmptyEditReversed: return "empty_edit_reversed";
  }
  return "?";
}

std::vector<TrainPair> build_pairs(const LmModel& model, const FactRecord& fact, Variant variant,
                                   const PTokenSet& ptokens, const DemoStore& demos,
                                   const std::vector<const FactRecord*>& distractor_pool,
                                   const PairParams& params, Rng& rng) {
  const Vocabulary& vocab = model.vocab();
  if (fact.paraphrases.empty()) throw DataError(fact.case_id + ": no paraphrase probes");
  if (fact.neighbors.empty()) throw DataError(fact.case_id + ": no neighbor probes");
  const auto pool = without_target(distractor_pool, fact.case_id);
  if (pool.empty()) throw DataError(fact.case_id + ": empty distractor pool");
  if (params.distractor_lens.empty()) throw ConfigError("no distractor lengths configured");

  // Fixed draw order keeps pair construction reproducible under one seed.
  const int para_idx = rng.uniform_int(0, static_cast<int>(fact.paraphrases.size()) - 1);
  const int nb_idx = rng.uniform_int(0, static_cast<int>(fact.neighbors.size()) - 1);
  const int chain_len =
      params.distractor_lens[rng.uniform_int(0, static_cast<int>(params.distractor_lens.size()) - 1)];
  const auto chain = sample_edits(pool, chain_len, rng);

  const RenderedPrompt query = render_probe(vocab, fact, {ProbeRef::Query, 0});
  const RenderedPrompt paraphrase = render_probe(vocab, fact, {ProbeRef::Paraphrase, para_idx});
  const RenderedPrompt neighbor = render_probe(vocab, fact, {ProbeRef::Neighbor, nb_idx});
  const RenderedPrompt pt_edit = render_ptoken_prompt(vocab, fact, ptokens);

  // Teachers for the three edited-behavior kinds. The long-prompt variant
  // teaches from the full demonstration prompt; the question-answering
  // variant from the bare edit statement, its paraphrase pair from a
  // statement phrased on the paraphrase itself.
  RenderedPrompt edit_teacher, para_teacher;
  if (variant == Variant::CounterFact) {
    const RenderedPrompt ike = render_ike_prompt(vocab, fact, demos, params.ike_demos);
    edit_teacher = join_prompts(ike, query);
    para_teacher = join_prompts(ike, paraphrase);
  } else {
    edit_teacher = join_prompts(render_edit_statement(vocab, fact), query);
    para_teacher =
        join_prompts(statement_on(vocab, fact.paraphrases[para_idx], fact.edited_object), paraphrase);
  }

  const std::vector<int> o_new = tokenize(fact.edited_object, vocab);
  const std::vector<int> o_neighbor = tokenize(fact.neighbors[nb_idx].expected_object, vocab);

  // The four marker-only kinds all share the bare query as teacher and are
  // anchored to whatever the frozen model would say next.
  std::vector<int> noop_cont = model.greedy_decode(query.ids, 5, &ptokens);
  if (noop_cont.empty()) noop_cont.push_back(vocab.eos_id());

  std::vector<TrainPair> out;
  out.reserve(kNumPairKinds);
  out.push_back(
      make_pair(model, PairKind::Edit, fact, join_prompts(pt_edit, query), edit_teacher, o_new));
  out.push_back(make_pair(model, PairKind::Paraphrase, fact, join_prompts(pt_edit, paraphrase),
                          para_teacher, o_new));
  out.push_back(make_pair(model, PairKind::Neighbor, fact, join_prompts(pt_edit, neighbor),
                          neighbor, o_neighbor));
  out.push_back(make_pair(
      model, PairKind::Distractor, fact,
      join_prompts(join_prompts(pt_edit, render_distractor(vocab, chain, ptokens)), query),
      edit_teacher, o_new));
  const auto degenerate = [&](PairKind kind, DegenerateKind dk) {
    out.push_back(make_pair(model, kind, fact,
                            join_prompts(render_degenerate(dk, ptokens), query), query, noop_cont));
  };
  degenerate(PairKind::OnlyBegin, DegenerateKind::OnlyBegin);
  degenerate(PairKind::OnlyEnd, DegenerateKind::OnlyEnd);
  degenerate(PairKind::EmptyEdit, DegenerateKind::EmptyEdit);
  degenerate(PairKind::EmptyEditReversed, DegenerateKind::EmptyEditReversed);
  return out;
}

std::vector<TrainPair> build_batch(const LmModel& model,
                                   const std::vector<const FactRecord*>& facts, Variant variant,
                                   const PTokenSet& ptokens, const DemoStore& demos,
                                   const std::vector<const FactRecord*>& pool,
                                   const PairParams& params, Rng& rng) {
  if (facts.empty()) throw DataError("empty fact batch");
  std::vector<TrainPair> out;
  out.reserve(facts.size() * kNumPairKinds);
  for (const FactRecord* f : facts) {
    auto pairs = build_pairs(model, *f, variant, ptokens, demos, pool, params, rng);
    std::move(pairs.begin(), pairs.end(), std::back_inserter(out));
  }
  return out;
}

RenderedPrompt build_eval_prompt(const LmModel& model, const FactRecord& fact,
                                 const RenderedPrompt& probe, int distractor_len,
                                 const std::vector<const FactRecord*>& pool,
                                 const PTokenSet& ptokens, Rng& rng) {
  const Vocabulary& vocab = model.vocab();
  if (distractor_len < 0) throw ConfigError("negative distractor length");
  RenderedPrompt out = render_ptoken_prompt(vocab, fact, ptokens);
  if (distractor_len > 0) {
    const auto usable = without_target(pool, fact.case_id);
    if (usable.empty()) throw DataError(fact.case_id + ": empty distractor pool");
    const auto chain = sample_edits(usable, distractor_len, rng);
    out = join_prompts(out, render_distractor(vocab, chain, ptokens));
  }
  out = join_prompts(out, probe);
  check_context(model, out.ids, 0, "evaluation prompt");
  return out;
}

}  // namespace ptok

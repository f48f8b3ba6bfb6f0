#include "ptok/bench.hpp"

#include <chrono>
#include <cmath>

#include "ptok/errors.hpp"

namespace ptok {

namespace {

constexpr int kDecodeTokens = 5;
constexpr int kMinTimedEdits = 100;

std::vector<int> edit_query_prompt(const LmModel& model, Method method, const FactRecord& fact,
                                   const PTokenSet* ptokens, const DemoStore* demos,
                                   int ike_demos) {
  const Vocabulary& vocab = model.vocab();
  const RenderedPrompt query = render_probe(vocab, fact, {ProbeRef::Query, 0});
  switch (method) {
    case Method::Original:
      return query.ids;
    case Method::Baseline:
      return join_prompts(render_edit_statement(vocab, fact), query).ids;
    case Method::Ike:
      if (!demos) throw ConfigError("demonstration store required for this method");
      return join_prompts(render_ike_prompt(vocab, fact, *demos, ike_demos), query).ids;
    case Method::Ptokens:
      if (!ptokens) throw ConfigError("marker embeddings required for this method");
      return join_prompts(render_ptoken_prompt(vocab, fact, *ptokens), query).ids;
  }
  throw ConfigError("unknown method");
}

std::vector<std::vector<int>> all_prompts(const LmModel& model, Method method,
                                          const std::vector<FactRecord>& facts,
                                          const PTokenSet* ptokens, const DemoStore* demos,
                                          int ike_demos) {
  if (facts.empty()) throw DataError("bench over an empty fact list");
  std::vector<std::vector<int>> prompts;
  prompts.reserve(facts.size());
  for (const FactRecord& f : facts)
    prompts.push_back(edit_query_prompt(model, method, f, ptokens, demos, ike_demos));
  return prompts;
}

}  // namespace

double count_prompt_tokens(const LmModel& model, Method method,
                           const std::vector<FactRecord>& facts, const PTokenSet* ptokens,
                           const DemoStore* demos, int ike_demos) {
  const auto prompts = all_prompts(model, method, facts, ptokens, demos, ike_demos);
  size_t total = 0;
  for (const auto& p : prompts) total += p.size();
  return static_cast<double>(total) / static_cast<double>(prompts.size());
}

double time_per_edit(const LmModel& model, Method method, const std::vector<FactRecord>& facts,
                     const PTokenSet* ptokens, const DemoStore* demos, int batch_size, int warmup,
                     int ike_demos) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (warmup < 0) throw ConfigError("warmup must be non-negative");
  const auto base = all_prompts(model, method, facts, ptokens, demos, ike_demos);
  const PTokenSet* pt = method == Method::Ptokens ? ptokens : nullptr;

  // Cycle the fact list until the timed run covers enough edits for a
  // stable mean.
  std::vector<const std::vector<int>*> edits;
  while (edits.size() < static_cast<size_t>(kMinTimedEdits))
    for (const auto& p : base) edits.push_back(&p);

  for (int i = 0; i < warmup; ++i)
    model.greedy_decode(base[static_cast<size_t>(i) % base.size()], kDecodeTokens, pt);

  const auto t0 = std::chrono::steady_clock::now();
  for (size_t start = 0; start < edits.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<std::vector<int>> chunk;
    for (size_t i = start; i < edits.size() && i < start + static_cast<size_t>(batch_size); ++i)
      chunk.push_back(*edits[i]);
    model.greedy_decode_batch(chunk, kDecodeTokens, pt);
  }
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(edits.size());
}

int64_t amortization_point(double train_seconds, double t_ike, double t_pt) {
  if (train_seconds < 0) throw ConfigError("negative training time");
  if (t_pt <= 0 || t_ike <= t_pt)
    throw ComputeError("no amortization point: the per-edit saving is not positive");
  return static_cast<int64_t>(std::ceil(train_seconds / (t_ike - t_pt)));
}

BenchReport run_bench(const LmModel& model, Method method, const std::vector<FactRecord>& facts,
                      const PTokenSet* ptokens, const DemoStore* demos, int batch_size, int warmup,
                      int ike_demos) {
  BenchReport r;
  r.method = method;
  r.batch_size = batch_size;
  r.mean_prompt_tokens = count_prompt_tokens(model, method, facts, ptokens, demos, ike_demos);
  r.mean_seconds_per_edit =
      time_per_edit(model, method, facts, ptokens, demos, batch_size, warmup, ike_demos);
  int n = static_cast<int>(facts.size());
  while (n < kMinTimedEdits) n += static_cast<int>(facts.size());
  r.n_edits = n;
  r.hardware_note = "single-threaded cpu, double precision, greedy " +
                    std::to_string(kDecodeTokens) + "-token decode per edit, prompts " +
                    "pre-tokenized, " + std::to_string(warmup) + " warmup decodes excluded";
  return r;
}

}  // namespace ptok

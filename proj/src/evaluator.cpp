#include "ptok/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <utility>

#include "ptok/errors.hpp"
#include "ptok/hash.hpp"

namespace ptok {

namespace {

// The marker-free methods take no distractor chain; a chain would imply
// marker tokens by construction.
void check_method_args(Method method, Variant variant, int distractor_len,
                       const EvalContext& ctx) {
  if (method == Method::Ike && variant == Variant::Zsre)
    throw ConfigError("the demonstration-prompt method is defined only for the counterfact variant");
  if (method == Method::Ike && ctx.demos == nullptr)
    throw ConfigError("demonstration store required for this method");
  if (distractor_len < 0) throw ConfigError("negative distractor length");
  if (distractor_len > 0 && method != Method::Ptokens)
    throw ConfigError("distractor chains apply only to the marker-token method");
  if (distractor_len > 0 && ctx.distractor_pool == nullptr)
    throw ConfigError("distractor pool required for a non-zero chain length");
}

Rng fact_rng(uint64_t seed, const std::string& case_id) {
  return Rng(mix_seed(seed, fnv1a64(case_id)));
}

// Prompt for one probe under one method. `rng` feeds distractor sampling
// only; probes are consumed in a fixed order so the draws are stable.
std::vector<int> method_prompt(const LmModel& model, const PTokenSet* ptokens,
                               const FactRecord& fact, const RenderedPrompt& probe, Method method,
                               int distractor_len, const EvalContext& ctx, Rng& rng) {
  const Vocabulary& vocab = model.vocab();
  switch (method) {
    case Method::Original:
      return probe.ids;
    case Method::Baseline:
      return join_prompts(render_edit_statement(vocab, fact), probe).ids;
    case Method::Ike:
      return join_prompts(render_ike_prompt(vocab, fact, *ctx.demos, ctx.ike_demos), probe).ids;
    case Method::Ptokens: {
      if (!ptokens) throw ConfigError("marker-token method without trained embeddings");
      static const std::vector<const FactRecord*> kNoPool;
      const auto& pool = ctx.distractor_pool ? *ctx.distractor_pool : kNoPool;
      return build_eval_prompt(model, fact, probe, distractor_len, pool, *ptokens, rng).ids;
    }
  }
  throw ConfigError("unknown method");
}

// Mean log-probability of each continuation after the prompt. Single-token
// continuations share one forward pass.
std::pair<double, double> score_pair(const LmModel& model, const PTokenSet* pt,
                                     const std::vector<int>& prompt, const std::vector<int>& a,
                                     const std::vector<int>& b) {
  if (a.size() == 1 && b.size() == 1) {
    const Distribution d = model.next_token_distribution(prompt, pt);
    return {std::log(std::max(d.probs[a[0]], 1e-300)),
            std::log(std::max(d.probs[b[0]], 1e-300))};
  }
  return {model.sequence_score(prompt, a, pt), model.sequence_score(prompt, b, pt)};
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::Original: return "original";
    case Method::Baseline: return "baseline";
    case Method::Ike: return "ike";
    case Method::Ptokens: return "ptokens";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "original") return Method::Original;
  if (name == "baseline") return Method::Baseline;
  if (name == "ike") return Method::Ike;
  if (name == "ptokens") return Method::Ptokens;
  throw ConfigError("unknown method: " + name);
}

double harmonic_score(double es, double ps, double ns) {
  for (double v : {es, ps, ns})
    if (v < 0 || v > 100) throw ConfigError("harmonic_score inputs must lie in [0, 100]");
  if (es == 0 || ps == 0 || ns == 0) {
    std::fprintf(stderr,
                 "warning: harmonic_score(%g, %g, %g) has a zero component; returning 0\n", es,
                 ps, ns);
    return 0;
  }
  return 3.0 / (1.0 / es + 1.0 / ps + 1.0 / ns);
}

CfMetrics counterfact_metrics(const LmModel& model, const PTokenSet* ptokens,
                              const std::vector<FactRecord>& facts, Method method,
                              int distractor_len, const EvalContext& ctx) {
  if (facts.empty()) throw DataError("counterfact metrics over an empty fact list");
  check_method_args(method, Variant::CounterFact, distractor_len, ctx);
  const Vocabulary& vocab = model.vocab();
  const PTokenSet* pt = method == Method::Ptokens ? ptokens : nullptr;

  CfMetrics sum;
  for (const FactRecord& fact : facts) {
    Rng rng = fact_rng(ctx.seed, fact.case_id);
    const std::vector<int> o_old = tokenize(fact.original_object, vocab);
    const std::vector<int> o_new = tokenize(fact.edited_object, vocab);

    const auto prompt_for = [&](ProbeRef ref) {
      return method_prompt(model, pt, fact, render_probe(vocab, fact, ref), method,
                           distractor_len, ctx, rng);
    };

    const auto [q_old, q_new] = [&] {
      const auto prompt = prompt_for({ProbeRef::Query, 0});
      return score_pair(model, pt, prompt, o_old, o_new);
    }();
    sum.es += q_new > q_old ? 1.0 : 0.0;

    double ps_fact = 0;
    for (size_t i = 0; i < fact.paraphrases.size(); ++i) {
      const auto prompt = prompt_for({ProbeRef::Paraphrase, static_cast<int>(i)});
      const auto [p_old, p_new] = score_pair(model, pt, prompt, o_old, o_new);
      ps_fact += p_new > p_old ? 1.0 : 0.0;
    }
    sum.ps += ps_fact / static_cast<double>(fact.paraphrases.size());

    double ns_fact = 0;
    for (size_t i = 0; i < fact.neighbors.size(); ++i) {
      const auto prompt = prompt_for({ProbeRef::Neighbor, static_cast<int>(i)});
      const std::vector<int> o_true = tokenize(fact.neighbors[i].expected_object, vocab);
      const auto [n_true, n_new] = score_pair(model, pt, prompt, o_true, o_new);
      ns_fact += n_new <= n_true ? 1.0 : 0.0;
    }
    sum.ns += ns_fact / static_cast<double>(fact.neighbors.size());
  }

  const double n = static_cast<double>(facts.size());
  return {100.0 * sum.es / n, 100.0 * sum.ps / n, 100.0 * sum.ns / n};
}

ZsreMetrics zsre_metrics(const LmModel& model, const PTokenSet* ptokens,
                         const std::vector<FactRecord>& facts, Method method, int distractor_len,
                         const EvalContext& ctx) {
  if (facts.empty()) throw DataError("zsre metrics over an empty fact list");
  check_method_args(method, Variant::Zsre, distractor_len, ctx);
  const Vocabulary& vocab = model.vocab();
  const PTokenSet* pt = method == Method::Ptokens ? ptokens : nullptr;

  // Enough decode room for the longest expected answer, so exact match can
  // never fail on truncation alone.
  size_t max_answer = 1;
  for (const FactRecord& f : facts) {
    max_answer = std::max(max_answer, tokenize(f.edited_object, vocab).size());
    for (const auto& nb : f.neighbors)
      max_answer = std::max(max_answer, tokenize(nb.expected_object, vocab).size());
  }
  const int max_new = static_cast<int>(max_answer) + 2;

  struct Item {
    std::vector<int> prompt;
    std::string expected;
    int fact_idx;
    int metric;  // 0 efficacy, 1 paraphrase, 2 specificity
  };
  std::vector<Item> items;
  for (size_t fi = 0; fi < facts.size(); ++fi) {
    const FactRecord& fact = facts[fi];
    Rng rng = fact_rng(ctx.seed, fact.case_id);
    const auto add = [&](ProbeRef ref, const std::string& expected, int metric) {
      items.push_back({method_prompt(model, pt, fact, render_probe(vocab, fact, ref), method,
                                     distractor_len, ctx, rng),
                       expected, static_cast<int>(fi), metric});
    };
    add({ProbeRef::Query, 0}, fact.edited_object, 0);
    for (size_t i = 0; i < fact.paraphrases.size(); ++i)
      add({ProbeRef::Paraphrase, static_cast<int>(i)}, fact.edited_object, 1);
    for (size_t i = 0; i < fact.neighbors.size(); ++i)
      add({ProbeRef::Neighbor, static_cast<int>(i)}, fact.neighbors[i].expected_object, 2);
  }

  std::vector<double> hit(items.size(), 0.0);
  constexpr size_t kChunk = 32;
  for (size_t start = 0; start < items.size(); start += kChunk) {
    const size_t end = std::min(items.size(), start + kChunk);
    std::vector<std::vector<int>> prompts;
    for (size_t i = start; i < end; ++i) prompts.push_back(items[i].prompt);
    const auto decoded = model.greedy_decode_batch(prompts, max_new, pt);
    for (size_t i = start; i < end; ++i) {
      const std::string got = normalize_answer(detokenize(decoded[i - start], vocab));
      hit[i] = got == normalize_answer(items[i].expected) ? 1.0 : 0.0;
    }
  }

  // Per-fact probe means, then the mean over facts, as for the sequence
  // metrics.
  std::vector<std::array<double, 2>> acc(facts.size() * 3, {0.0, 0.0});
  for (size_t i = 0; i < items.size(); ++i) {
    auto& a = acc[static_cast<size_t>(items[i].fact_idx) * 3 + static_cast<size_t>(items[i].metric)];
    a[0] += hit[i];
    a[1] += 1.0;
  }
  ZsreMetrics out;
  for (size_t fi = 0; fi < facts.size(); ++fi) {
    out.efficacy += acc[fi * 3][0] / acc[fi * 3][1];
    out.paraphrase += acc[fi * 3 + 1][0] / acc[fi * 3 + 1][1];
    out.specificity += acc[fi * 3 + 2][0] / acc[fi * 3 + 2][1];
  }
  const double n = static_cast<double>(facts.size());
  out.efficacy *= 100.0 / n;
  out.paraphrase *= 100.0 / n;
  out.specificity *= 100.0 / n;
  return out;
}

EvalReport evaluate(const LmModel& model, const PTokenSet* ptokens,
                    const std::vector<FactRecord>& facts, Method method, Variant variant,
                    int distractor_len, const EvalContext& ctx) {
  EvalReport r;
  r.method = method;
  r.variant = variant;
  r.m = method == Method::Ptokens && ptokens ? ptokens->m : 0;
  r.distractor_len = distractor_len;
  r.n_facts = static_cast<int>(facts.size());
  r.seed = ctx.seed;
  if (variant == Variant::CounterFact) {
    const CfMetrics cf = counterfact_metrics(model, ptokens, facts, method, distractor_len, ctx);
    r.es = cf.es;
    r.ps = cf.ps;
    r.ns = cf.ns;
    r.s = harmonic_score(cf.es, cf.ps, cf.ns);
  } else {
    const ZsreMetrics z = zsre_metrics(model, ptokens, facts, method, distractor_len, ctx);
    r.efficacy = z.efficacy;
    r.paraphrase = z.paraphrase;
    r.specificity = z.specificity;
  }
  return r;
}

std::vector<EvalReport> sweep_tokens(const LmModel& model, const DatasetSplit& split,
                                     Variant variant, const std::vector<int>& m_list,
                                     const TrainConfig& cfg, PTokenInitSpec init) {
  if (m_list.empty()) throw ConfigError("empty m list");
  if (split.test.empty()) throw DataError("token sweep needs a test split");

  std::vector<const FactRecord*> pool;
  for (const FactRecord& f : split.test) pool.push_back(&f);

  std::vector<EvalReport> reports;
  for (int m : m_list) {
    LmModel fresh = model;
    const PTokenSet pt0 = fresh.add_ptokens(m, init, cfg.seed);
    const TrainResult res = train(fresh, pt0, split, variant, cfg);

    EvalContext ctx;
    ctx.distractor_pool = &pool;
    ctx.ike_demos = cfg.pairs.ike_demos;
    ctx.seed = cfg.seed;
    reports.push_back(
        evaluate(fresh, &res.ptokens, split.test, Method::Ptokens, variant, 0, ctx));
  }
  return reports;
}

std::vector<EvalReport> sweep_distractors(const LmModel& model, const PTokenSet& ptokens,
                                          const std::vector<FactRecord>& facts, Variant variant,
                                          const std::vector<int>& lengths,
                                          const EvalContext& ctx) {
  if (lengths.empty()) throw ConfigError("empty length list");
  std::vector<EvalReport> reports;
  for (int len : lengths)
    reports.push_back(evaluate(model, &ptokens, facts, Method::Ptokens, variant, len, ctx));
  return reports;
}

}  // namespace ptok

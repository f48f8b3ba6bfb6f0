#include "ptok/prompts.hpp"

#include <algorithm>

#include "ptok/errors.hpp"
#include "ptok/hash.hpp"
#include "ptok/rng.hpp"

namespace ptok {

namespace {

std::string declarative_statement(const FactRecord& fact) {
  return "New Fact: " + fact.query_text() + " " + fact.edited_object;
}

}  // namespace

RenderedPrompt join_prompts(const RenderedPrompt& a, const RenderedPrompt& b) {
  RenderedPrompt out;
  out.role = a.role;
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  if (a.text.empty()) {
    out.text = b.text;
  } else if (a.text.back() == '\n' || b.text.empty()) {
    out.text = a.text + b.text;
  } else {
    out.text = a.text + " " + b.text;
  }
  return out;
}

RenderedPrompt render_probe(const Vocabulary& vocab, const FactRecord& fact, ProbeRef ref) {
  RenderedPrompt out;
  switch (ref.kind) {
    case ProbeRef::Query:
      out.text = fact.query_text();
      out.role = PromptRole::Query;
      break;
    case ProbeRef::Paraphrase:
      if (ref.index < 0 || ref.index >= static_cast<int>(fact.paraphrases.size()))
        throw ConfigError("paraphrase index out of range for " + fact.case_id);
      out.text = fact.paraphrases[static_cast<size_t>(ref.index)];
      out.role = PromptRole::Paraphrase;
      break;
    case ProbeRef::Neighbor:
      if (ref.index < 0 || ref.index >= static_cast<int>(fact.neighbors.size()))
        throw ConfigError("neighbor index out of range for " + fact.case_id);
      out.text = fact.neighbors[static_cast<size_t>(ref.index)].prompt;
      out.role = PromptRole::Neighbor;
      break;
  }
  out.ids = tokenize(out.text, vocab);
  return out;
}

RenderedPrompt render_edit_statement(const Vocabulary& vocab, const FactRecord& fact) {
  RenderedPrompt out;
  out.text = declarative_statement(fact) + "\n";
  out.ids = tokenize(out.text, vocab);
  out.role = PromptRole::EditStatement;
  return out;
}

DemoStore DemoStore::build(const std::vector<FactRecord>& train_facts, uint64_t seed) {
  DemoStore store;
  store.seed = seed;
  for (const FactRecord& f : train_facts) {
    std::string stmt = declarative_statement(f) + "\n";
    store.demos.push_back(
        {stmt + "Prompt: " + f.query_text() + " " + f.edited_object + "\n", f.case_id,
         DemoRole::Copy});
    for (const std::string& para : f.paraphrases) {
      store.demos.push_back(
          {stmt + "Prompt: " + para + " " + f.edited_object + "\n", f.case_id,
           DemoRole::Update});
    }
    for (const NeighborProbe& n : f.neighbors) {
      store.demos.push_back(
          {stmt + "Prompt: " + n.prompt + " " + n.expected_object + "\n", f.case_id,
           DemoRole::Retain});
    }
  }
  return store;
}

RenderedPrompt render_ike_prompt(const Vocabulary& vocab, const FactRecord& fact,
                                 const DemoStore& store, int k) {
  if (k < 1) throw ConfigError("demonstration count must be positive");
  std::vector<const DemoStore::Demo*> pool;
  for (const DemoStore::Demo& d : store.demos) {
    if (d.case_id != fact.case_id) pool.push_back(&d);
  }
  if (pool.empty()) throw ConfigError("demo store has no usable demonstrations");
  Rng rng(mix_seed(store.seed, fnv1a64(fact.case_id)));
  std::string text;
  if (k <= static_cast<int>(pool.size())) {
    std::vector<int> idx = rng.sample_without_replacement(static_cast<int>(pool.size()), k);
    for (int i : idx) text += pool[static_cast<size_t>(i)]->block;
  } else {
    for (int i = 0; i < k; ++i)
      text += pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]->block;
  }
  text += declarative_statement(fact) + "\n";
  text += "Prompt:";
  RenderedPrompt out;
  out.text = text;
  out.ids = tokenize(text, vocab);
  out.role = PromptRole::Ike;
  return out;
}

RenderedPrompt render_ptoken_prompt(const Vocabulary& vocab, const FactRecord& fact,
                                    const PTokenSet& ptokens) {
  if (ptokens.m < 1) throw ConfigError("prompt-token set is empty");
  for (int id : ptokens.begin_ids) {
    if (id >= vocab.total_size() || !vocab.is_special(id))
      throw ConfigError("prompt tokens are not registered with this model");
  }
  RenderedPrompt out;
  out.role = PromptRole::PtokenEdit;
  std::string stmt = declarative_statement(fact);
  out.ids = ptokens.begin_ids;
  std::vector<int> stmt_ids = tokenize(stmt, vocab);
  out.ids.insert(out.ids.end(), stmt_ids.begin(), stmt_ids.end());
  out.ids.insert(out.ids.end(), ptokens.end_ids.begin(), ptokens.end_ids.end());
  for (int id : ptokens.begin_ids) out.text += vocab.entry(id) + " ";
  out.text += stmt;
  for (int id : ptokens.end_ids) out.text += " " + vocab.entry(id);
  return out;
}

RenderedPrompt render_degenerate(DegenerateKind kind, const PTokenSet& ptokens) {
  if (ptokens.m < 1) throw ConfigError("prompt-token set is empty");
  RenderedPrompt out;
  out.role = PromptRole::Degenerate;
  auto push = [&out](const std::vector<int>& ids) {
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
  };
  switch (kind) {
    case DegenerateKind::OnlyBegin:
      push(ptokens.begin_ids);
      out.text = "<only-begin>";
      break;
    case DegenerateKind::OnlyEnd:
      push(ptokens.end_ids);
      out.text = "<only-end>";
      break;
    case DegenerateKind::EmptyEdit:
      push(ptokens.begin_ids);
      push(ptokens.end_ids);
      out.text = "<empty-edit>";
      break;
    case DegenerateKind::EmptyEditReversed:
      push(ptokens.end_ids);
      push(ptokens.begin_ids);
      out.text = "<empty-edit-reversed>";
      break;
  }
  return out;
}

RenderedPrompt render_distractor(const Vocabulary& vocab,
                                 const std::vector<const FactRecord*>& edits,
                                 const PTokenSet& ptokens) {
  if (edits.empty()) throw ConfigError("distractor chain needs at least one edit");
  RenderedPrompt out;
  out.role = PromptRole::Distractor;
  for (const FactRecord* f : edits) {
    RenderedPrompt block = render_ptoken_prompt(vocab, *f, ptokens);
    out.ids.insert(out.ids.end(), block.ids.begin(), block.ids.end());
    if (!out.text.empty()) out.text += " ";
    out.text += block.text;
  }
  return out;
}

}  // namespace ptok

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptok/facts.hpp"
#include "ptok/model.hpp"

namespace ptok {

enum class PromptRole {
  Query,
  Paraphrase,
  Neighbor,
  EditStatement,
  Ike,
  PtokenEdit,
  Distractor,
  Degenerate,
};

// A prompt with both its token ids and a readable rendering. ids are
// authoritative; text shows special tokens by name.
struct RenderedPrompt {
  std::vector<int> ids;
  std::string text;
  PromptRole role = PromptRole::Query;
};

RenderedPrompt join_prompts(const RenderedPrompt& a, const RenderedPrompt& b);

struct ProbeRef {
  enum Kind { Query, Paraphrase, Neighbor } kind = Query;
  int index = 0;
};

// The probe text for a fact: its query, one paraphrase, or one neighbor
// prompt. Ends right before the object position.
RenderedPrompt render_probe(const Vocabulary& vocab, const FactRecord& fact, ProbeRef ref);

// "New Fact: <canonical statement with the edited object>\n"
RenderedPrompt render_edit_statement(const Vocabulary& vocab, const FactRecord& fact);

enum class DemoRole { Copy, Update, Retain };

// Demonstration pool for long-prompt editing: per training fact one copy
// block, one block per paraphrase, and one per neighbor.
struct DemoStore {
  struct Demo {
    std::string block;  // "New Fact: ...\nPrompt: ... <answer>\n"
    std::string case_id;
    DemoRole role;
  };
  std::vector<Demo> demos;
  uint64_t seed = 0;

  static DemoStore build(const std::vector<FactRecord>& train_facts, uint64_t seed);
};

// k demonstration blocks (sampled from the store, never the target fact's
// own), then the target's "New Fact:" line and an open "Prompt:" marker.
// The caller appends the probe.
RenderedPrompt render_ike_prompt(const Vocabulary& vocab, const FactRecord& fact,
                                 const DemoStore& store, int k);

// begin tokens + "New Fact: <statement>" + end tokens. No trailing text:
// the id count is exactly 2m + the tokenized statement length.
RenderedPrompt render_ptoken_prompt(const Vocabulary& vocab, const FactRecord& fact,
                                    const PTokenSet& ptokens);

enum class DegenerateKind { OnlyBegin, OnlyEnd, EmptyEdit, EmptyEditReversed };

// Marker-only prefixes used to train and test no-op behavior.
RenderedPrompt render_degenerate(DegenerateKind kind, const PTokenSet& ptokens);

// A chain of additional edits, each wrapped in the P-Token markers exactly
// like a primary edit prompt.
RenderedPrompt render_distractor(const Vocabulary& vocab,
                                 const std::vector<const FactRecord*>& edits,
                                 const PTokenSet& ptokens);

}  // namespace ptok

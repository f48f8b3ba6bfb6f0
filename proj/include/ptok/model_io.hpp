#pragma once

#include <string>

#include "ptok/model.hpp"

namespace ptok {

// Checkpoints are line-oriented text: a JSON header line, then parameter
// rows as %.17g decimals, which round-trip doubles exactly. Writes go
// through a temp file plus rename.

void save_lm(const LmModel& model, const std::string& path);
LmModel load_lm(const std::string& path);

// The prompt-token checkpoint stores m, the token ids and names, and the
// owning model's config hash; loading verifies the hash and registers the
// special tokens with `model`.
void save_ptokens(const PTokenSet& set, const LmModel& model, const std::string& path);
PTokenSet load_ptokens(const std::string& path, LmModel& model);

}  // namespace ptok

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ptok {

enum class Variant { CounterFact, Zsre };

struct NeighborProbe {
  std::string prompt;           // full text, no placeholder
  std::string expected_object;  // the unedited, true answer

  bool operator==(const NeighborProbe&) const = default;
};

// One editable fact. For the CounterFact shape, query_template carries a
// "{}" placeholder for the subject. For the zsRE shape the whole question
// is stored as the subject and the template is just "{}", which keeps the
// placeholder invariant intact for both.
struct FactRecord {
  std::string case_id;
  std::string subject;
  std::string relation;
  std::string query_template;
  std::string original_object;  // o
  std::string edited_object;    // o'
  std::vector<std::string> paraphrases;  // rendered texts
  std::vector<NeighborProbe> neighbors;
  Variant variant = Variant::CounterFact;

  std::string query_text() const;
  void validate() const;

  bool operator==(const FactRecord&) const = default;
};

std::vector<FactRecord> ingest_counterfact(const std::string& path);
std::vector<FactRecord> ingest_zsre(const std::string& path);

void write_counterfact(const std::vector<FactRecord>& facts, const std::string& path);
void write_zsre(const std::vector<FactRecord>& facts, const std::string& path);

struct DatasetSplit {
  std::vector<FactRecord> train, validation, test;
  uint64_t seed = 0;
};

// Shuffles with `seed`, takes n_train then n_val records, leaves the rest
// as test. Splits are disjoint by construction and cover the input.
DatasetSplit split_dataset(const std::vector<FactRecord>& facts, int n_train, int n_val,
                           uint64_t seed);

struct Microworld {
  std::vector<FactRecord> facts;
  std::vector<std::string> corpus;  // pretraining documents, newline-terminated
};

// Deterministic synthetic world: pronounceable subjects, a curated relation
// bank, single-word objects. Every fact gets five paraphrase probes and
// four neighbor probes; neighbors share the relation and, wherever the
// world allows, the true object, so edits that leak are visible. The
// corpus mixes plain fact statements, in-context edit demonstrations, and
// multi-edit documents so the pretrained model can follow prompt edits.
Microworld synth_microworld(int n_subjects, int n_relations, int n_objects, uint64_t seed);

// Lowercase, collapse whitespace, strip one terminal . ? or !
std::string normalize_answer(const std::string& s);

}  // namespace ptok

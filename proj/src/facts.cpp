#include "ptok/facts.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <set>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"
#include "ptok/rng.hpp"

namespace ptok {

using nlohmann::json;

namespace {

size_t count_placeholders(const std::string& s) {
  size_t n = 0;
  for (size_t pos = s.find("{}"); pos != std::string::npos; pos = s.find("{}", pos + 2)) ++n;
  return n;
}

[[noreturn]] void bad_record(const std::string& path, size_t line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

std::string need_string(const json& j, const char* field, const std::string& path, size_t line) {
  if (!j.contains(field) || !j.at(field).is_string())
    bad_record(path, line, std::string("missing or non-string field '") + field + "'");
  std::string v = j.at(field).get<std::string>();
  if (v.empty()) bad_record(path, line, std::string("empty field '") + field + "'");
  return v;
}

}  // namespace

std::string FactRecord::query_text() const {
  std::string out = query_template;
  size_t pos = out.find("{}");
  out.replace(pos, 2, subject);
  return out;
}

void FactRecord::validate() const {
  if (case_id.empty()) throw DataError("fact has empty case_id");
  auto fail = [this](const std::string& what) {
    throw DataError("fact " + case_id + ": " + what);
  };
  if (subject.empty()) fail("empty subject");
  if (relation.empty()) fail("empty relation");
  if (count_placeholders(query_template) != 1)
    fail("query_template must contain exactly one {} placeholder");
  if (original_object.empty() || edited_object.empty()) fail("empty object");
  if (original_object == edited_object) fail("edit does not change the object");
  if (paraphrases.empty()) fail("no paraphrase probes");
  for (const std::string& p : paraphrases) {
    if (p.empty()) fail("empty paraphrase");
    if (count_placeholders(p) != 0) fail("paraphrase must be rendered text");
  }
  if (neighbors.empty()) fail("no neighbor probes");
  const std::string q = query_text();
  for (const NeighborProbe& n : neighbors) {
    if (n.prompt.empty() || n.expected_object.empty()) fail("incomplete neighbor probe");
    if (count_placeholders(n.prompt) != 0) fail("neighbor prompt must be rendered text");
    if (n.prompt == q) fail("neighbor prompt equals the fact's own query");
  }
}

std::vector<FactRecord> ingest_counterfact(const std::string& path) {
  std::vector<FactRecord> out;
  std::set<std::string> seen;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const size_t ln = i + 1;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) bad_record(path, ln, "invalid JSON");
    FactRecord f;
    f.variant = Variant::CounterFact;
    f.case_id = need_string(j, "case_id", path, ln);
    if (!seen.insert(f.case_id).second) bad_record(path, ln, "duplicate case_id " + f.case_id);
    f.subject = need_string(j, "subject", path, ln);
    f.relation = need_string(j, "relation", path, ln);
    f.query_template = need_string(j, "prompt", path, ln);
    if (count_placeholders(f.query_template) != 1)
      bad_record(path, ln, "prompt must contain exactly one {}");
    f.original_object = need_string(j, "target_true", path, ln);
    f.edited_object = need_string(j, "target_new", path, ln);
    if (!j.contains("paraphrase_prompts") || !j.at("paraphrase_prompts").is_array() ||
        j.at("paraphrase_prompts").empty())
      bad_record(path, ln, "missing or empty paraphrase_prompts");
    for (const json& p : j.at("paraphrase_prompts")) {
      if (!p.is_string() || p.get<std::string>().empty())
        bad_record(path, ln, "paraphrase_prompts entries must be non-empty strings");
      f.paraphrases.push_back(p.get<std::string>());
    }
    if (!j.contains("neighborhood_prompts") || !j.at("neighborhood_prompts").is_array() ||
        j.at("neighborhood_prompts").empty())
      bad_record(path, ln, "missing or empty neighborhood_prompts");
    for (const json& n : j.at("neighborhood_prompts")) {
      if (!n.is_object()) bad_record(path, ln, "neighborhood_prompts entries must be objects");
      NeighborProbe np;
      np.prompt = need_string(n, "prompt", path, ln);
      np.expected_object = need_string(n, "target", path, ln);
      f.neighbors.push_back(std::move(np));
    }
    try {
      f.validate();
    } catch (const DataError& e) {
      bad_record(path, ln, e.what());
    }
    out.push_back(std::move(f));
  }
  if (out.empty()) throw DataError(path + ": no records");
  return out;
}

std::vector<FactRecord> ingest_zsre(const std::string& path) {
  std::vector<FactRecord> out;
  std::set<std::string> seen;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const size_t ln = i + 1;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) bad_record(path, ln, "invalid JSON");
    FactRecord f;
    f.variant = Variant::Zsre;
    f.case_id = need_string(j, "case_id", path, ln);
    if (!seen.insert(f.case_id).second) bad_record(path, ln, "duplicate case_id " + f.case_id);
    f.subject = need_string(j, "question", path, ln);
    f.relation = "zsre";
    f.query_template = "{}";
    f.original_object = need_string(j, "answer_true", path, ln);
    f.edited_object = need_string(j, "answer_new", path, ln);
    if (!j.contains("paraphrase")) bad_record(path, ln, "missing field 'paraphrase'");
    const json& para = j.at("paraphrase");
    if (para.is_string()) {
      if (para.get<std::string>().empty()) bad_record(path, ln, "empty paraphrase");
      f.paraphrases.push_back(para.get<std::string>());
    } else if (para.is_array() && !para.empty()) {
      for (const json& p : para) {
        if (!p.is_string() || p.get<std::string>().empty())
          bad_record(path, ln, "paraphrase entries must be non-empty strings");
        f.paraphrases.push_back(p.get<std::string>());
      }
    } else {
      bad_record(path, ln, "paraphrase must be a string or non-empty array");
    }
    if (!j.contains("neighborhood") || !j.at("neighborhood").is_object())
      bad_record(path, ln, "missing neighborhood object");
    NeighborProbe np;
    np.prompt = need_string(j.at("neighborhood"), "question", path, ln);
    np.expected_object = need_string(j.at("neighborhood"), "answer", path, ln);
    f.neighbors.push_back(std::move(np));
    try {
      f.validate();
    } catch (const DataError& e) {
      bad_record(path, ln, e.what());
    }
    out.push_back(std::move(f));
  }
  if (out.empty()) throw DataError(path + ": no records");
  return out;
}

void write_counterfact(const std::vector<FactRecord>& facts, const std::string& path) {
  std::string out;
  for (const FactRecord& f : facts) {
    json neigh = json::array();
    for (const NeighborProbe& n : f.neighbors)
      neigh.push_back({{"prompt", n.prompt}, {"target", n.expected_object}});
    json j = {
        {"case_id", f.case_id},
        {"subject", f.subject},
        {"relation", f.relation},
        {"prompt", f.query_template},
        {"target_true", f.original_object},
        {"target_new", f.edited_object},
        {"paraphrase_prompts", f.paraphrases},
        {"neighborhood_prompts", neigh},
    };
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

void write_zsre(const std::vector<FactRecord>& facts, const std::string& path) {
  std::string out;
  for (const FactRecord& f : facts) {
    json j = {
        {"case_id", f.case_id},
        {"question", f.subject},
        {"answer_true", f.original_object},
        {"answer_new", f.edited_object},
        {"neighborhood",
         {{"question", f.neighbors.front().prompt},
          {"answer", f.neighbors.front().expected_object}}},
    };
    if (f.paraphrases.size() == 1) {
      j["paraphrase"] = f.paraphrases.front();
    } else {
      j["paraphrase"] = f.paraphrases;
    }
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

DatasetSplit split_dataset(const std::vector<FactRecord>& facts, int n_train, int n_val,
                           uint64_t seed) {
  if (n_train < 0 || n_val < 0) throw ConfigError("split sizes must be non-negative");
  if (static_cast<size_t>(n_train) + static_cast<size_t>(n_val) > facts.size())
    throw ConfigError("split sizes exceed dataset size");
  std::vector<size_t> order(facts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x73706c6974ull));
  rng.shuffle(order);
  DatasetSplit split;
  split.seed = seed;
  for (size_t i = 0; i < order.size(); ++i) {
    const FactRecord& f = facts[order[i]];
    if (i < static_cast<size_t>(n_train)) {
      split.train.push_back(f);
    } else if (i < static_cast<size_t>(n_train) + static_cast<size_t>(n_val)) {
      split.validation.push_back(f);
    } else {
      split.test.push_back(f);
    }
  }
  return split;
}

std::string normalize_answer(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (!out.empty() && (out.back() == '.' || out.back() == '?' || out.back() == '!'))
    out.pop_back();
  return out;
}

}  // namespace ptok

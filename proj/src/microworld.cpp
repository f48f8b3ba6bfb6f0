#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "ptok/errors.hpp"
#include "ptok/facts.hpp"
#include "ptok/rng.hpp"

namespace ptok {

namespace {

struct RelationSpec {
  const char* name;
  // templates[0] is the canonical query; the rest feed paraphrases.
  std::array<const char*, 6> templates;
  std::array<const char*, 8> objects;
};

const std::array<RelationSpec, 8> kRelations = {{
    {"color",
     {"The color of {} is", "{} has a color that is", "The hue linked to {} is",
      "People describe the color of {} as", "Asked about the color of {} one says",
      "In terms of color {} is"},
     {"red", "blue", "green", "yellow", "violet", "white", "black", "orange"}},
    {"city",
     {"The home city of {} is", "{} lives in the city of", "The city where {} stays is",
      "People place the home of {} in", "Asked where {} lives one says",
      "As for a home city {} picks"},
     {"Paris", "Rome", "Tokyo", "Oslo", "Cairo", "Lima", "Quito", "Dublin"}},
    {"language",
     {"The language spoken by {} is", "{} speaks the language called",
      "The tongue used by {} is", "People hear {} speaking",
      "Asked which language {} speaks one says", "When talking {} uses"},
     {"French", "Latin", "Greek", "Danish", "Hindi", "Czech", "Welsh", "Thai"}},
    {"instrument",
     {"The instrument played by {} is", "{} plays an instrument called",
      "The instrument under the hands of {} is", "People hear {} playing the",
      "Asked what {} plays one says", "For music {} picks the"},
     {"piano", "violin", "drums", "flute", "cello", "harp", "oboe", "banjo"}},
    {"food",
     {"The favorite food of {} is", "{} most often eats", "The dish preferred by {} is",
      "People see {} enjoying", "Asked about a favorite food {} names",
      "At dinner {} asks for"},
     {"bread", "rice", "soup", "cake", "fish", "salad", "pasta", "stew"}},
    {"sport",
     {"The sport practiced by {} is", "{} trains in the sport of",
      "The game played by {} is", "People watch {} compete in",
      "Asked which sport {} does one says", "For exercise {} chooses"},
     {"tennis", "chess", "rowing", "boxing", "golf", "judo", "cycling", "fencing"}},
    {"metal",
     {"The metal linked to {} is", "{} works mostly with", "The metal chosen by {} is",
      "People connect {} with the metal", "Asked about a metal {} names",
      "In the workshop {} shapes"},
     {"iron", "gold", "copper", "silver", "tin", "zinc", "lead", "nickel"}},
    {"season",
     {"The season preferred by {} is", "{} likes the season called",
      "The time of year {} enjoys is", "People say {} waits for",
      "Asked about a season {} names", "Out of all seasons {} picks"},
     {"winter", "spring", "summer", "autumn", "monsoon", "harvest", "thaw", "solstice"}},
}};

constexpr int kParaphrases = 5;
constexpr int kNeighbors = 4;

std::string apply_template(const std::string& tpl, const std::string& subject) {
  std::string out = tpl;
  out.replace(out.find("{}"), 2, subject);
  return out;
}

std::vector<std::string> make_names(int n, Rng& rng, const std::set<std::string>& reserved) {
  static const char* starts[] = {"ka", "ri", "po", "da", "lu", "men", "tor", "bi",
                                 "sa", "ne", "go", "vi", "ral", "dun", "fir", "mo",
                                 "ze", "hul", "tas", "ber", "ni", "qua", "lep", "sor"};
  static const char* ends[] = {"mak", "rin", "dol", "vek", "tar", "bun", "sel", "gor",
                               "pim", "nat", "rup", "lis", "dek", "von", "tig", "zur",
                               "hem", "fal", "cor", "wis", "jun", "kel", "bex", "yor"};
  std::set<std::string> used;
  std::vector<std::string> names;
  while (static_cast<int>(names.size()) < n) {
    std::string s = starts[rng.uniform_int(0, 23)];
    if (rng.uniform() < 0.35) s += starts[rng.uniform_int(0, 23)];
    s += ends[rng.uniform_int(0, 23)];
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (reserved.count(s) || !used.insert(s).second) continue;
    names.push_back(s);
  }
  return names;
}

struct WorldFact {
  int subject, relation, true_obj, edit_obj;
};

std::string statement_line(const std::string& subject, const RelationSpec& rel, int obj) {
  return "New Fact: " + apply_template(rel.templates[0], subject) + " " +
         rel.objects[static_cast<size_t>(obj)] + "\n";
}

std::string prompt_line(const std::string& subject, const RelationSpec& rel, int tpl, int obj) {
  return "Prompt: " + apply_template(rel.templates[static_cast<size_t>(tpl)], subject) + " " +
         rel.objects[static_cast<size_t>(obj)] + "\n";
}

}  // namespace

Microworld synth_microworld(int n_subjects, int n_relations, int n_objects, uint64_t seed) {
  if (n_subjects < 2) throw ConfigError("synth: need at least 2 subjects");
  if (n_relations < 1 || n_relations > static_cast<int>(kRelations.size()))
    throw ConfigError("synth: n_relations must be in [1, 8]");
  if (n_objects < 2 || n_objects > 8) throw ConfigError("synth: n_objects must be in [2, 8]");

  std::set<std::string> reserved;
  for (const RelationSpec& r : kRelations) {
    for (const char* o : r.objects) reserved.insert(o);
  }
  Rng name_rng(mix_seed(seed, 0x6e616d65ull));
  std::vector<std::string> subjects = make_names(n_subjects, name_rng, reserved);

  // True objects are assigned in blocks so that every subject has enough
  // same-object peers to fill its neighbor probes.
  int n_truth = std::clamp(n_subjects / (kNeighbors + 1), 1, n_objects);
  Rng assign_rng(mix_seed(seed, 0x7472757468ull));
  Rng edit_rng(mix_seed(seed, 0x65646974ull));

  // truth[r][s] = object index of subject s under relation r.
  std::vector<std::vector<int>> truth(static_cast<size_t>(n_relations));
  std::vector<WorldFact> wfacts;
  for (int r = 0; r < n_relations; ++r) {
    std::vector<int> order(static_cast<size_t>(n_subjects));
    for (int s = 0; s < n_subjects; ++s) order[static_cast<size_t>(s)] = s;
    assign_rng.shuffle(order);
    truth[static_cast<size_t>(r)].resize(static_cast<size_t>(n_subjects));
    for (int rank = 0; rank < n_subjects; ++rank) {
      int obj = rank * n_truth / n_subjects;
      truth[static_cast<size_t>(r)][static_cast<size_t>(order[static_cast<size_t>(rank)])] = obj;
    }
  }
  for (int r = 0; r < n_relations; ++r) {
    for (int s = 0; s < n_subjects; ++s) {
      WorldFact wf;
      wf.subject = s;
      wf.relation = r;
      wf.true_obj = truth[static_cast<size_t>(r)][static_cast<size_t>(s)];
      int alt = edit_rng.uniform_int(0, n_objects - 2);
      wf.edit_obj = alt >= wf.true_obj ? alt + 1 : alt;
      wfacts.push_back(wf);
    }
  }

  Microworld world;
  Rng probe_rng(mix_seed(seed, 0x70726f6265ull));
  for (const WorldFact& wf : wfacts) {
    const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
    const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
    FactRecord f;
    f.variant = Variant::CounterFact;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "mw-%s-%04d", rel.name, wf.subject);
    f.case_id = idbuf;
    f.subject = subj;
    f.relation = rel.name;
    f.query_template = rel.templates[0];
    f.original_object = rel.objects[static_cast<size_t>(wf.true_obj)];
    f.edited_object = rel.objects[static_cast<size_t>(wf.edit_obj)];
    for (int i = 1; i <= kParaphrases; ++i)
      f.paraphrases.push_back(apply_template(rel.templates[static_cast<size_t>(i)], subj));

    // Same-object peers first; top up with other subjects of the relation.
    std::vector<int> peers, others;
    for (int s2 = 0; s2 < n_subjects; ++s2) {
      if (s2 == wf.subject) continue;
      if (truth[static_cast<size_t>(wf.relation)][static_cast<size_t>(s2)] == wf.true_obj) {
        peers.push_back(s2);
      } else {
        others.push_back(s2);
      }
    }
    probe_rng.shuffle(peers);
    probe_rng.shuffle(others);
    peers.insert(peers.end(), others.begin(), others.end());
    int take = std::min<int>(kNeighbors, static_cast<int>(peers.size()));
    for (int i = 0; i < take; ++i) {
      int s2 = peers[static_cast<size_t>(i)];
      NeighborProbe np;
      np.prompt = apply_template(rel.templates[0], subjects[static_cast<size_t>(s2)]);
      np.expected_object =
          rel.objects[static_cast<size_t>(truth[static_cast<size_t>(wf.relation)][static_cast<size_t>(s2)])];
      f.neighbors.push_back(std::move(np));
    }
    f.validate();
    world.facts.push_back(std::move(f));
  }

  // Pretraining corpus.
  std::vector<std::string>& docs = world.corpus;
  Rng crng(mix_seed(seed, 0x636f72707573ull));

  // Plain statements of every true fact under every surface template.
  for (const WorldFact& wf : wfacts) {
    const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
    const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
    for (int t = 0; t < 6; ++t) {
      docs.push_back(apply_template(rel.templates[static_cast<size_t>(t)], subj) + " " +
                     rel.objects[static_cast<size_t>(wf.true_obj)] + "\n");
    }
  }

  auto pick_fact = [&]() -> const WorldFact& {
    return wfacts[static_cast<size_t>(crng.uniform_int(0, static_cast<int>(wfacts.size()) - 1))];
  };
  auto stated_object = [&](const WorldFact& wf) {
    // Mostly counterfactual so the model learns that stated facts override
    // memorized ones; sometimes the truth so restating is harmless.
    if (crng.uniform() < 0.3) return wf.true_obj;
    int alt = crng.uniform_int(0, n_objects - 2);
    return alt >= wf.true_obj ? alt + 1 : alt;
  };

  // One demonstration block: statement plus an answered prompt.
  auto icl_block = [&](const WorldFact& wf, int stated) {
    const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
    const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
    std::string block = statement_line(subj, rel, stated);
    double role = crng.uniform();
    if (role < 0.3) {
      block += prompt_line(subj, rel, 0, stated);
    } else if (role < 0.65) {
      block += prompt_line(subj, rel, crng.uniform_int(1, 5), stated);
    } else {
      // Retain: ask about another subject; the answer stays truthful.
      int s2 = wf.subject;
      while (s2 == wf.subject) s2 = crng.uniform_int(0, n_subjects - 1);
      block += prompt_line(subjects[static_cast<size_t>(s2)], rel, 0,
                           truth[static_cast<size_t>(wf.relation)][static_cast<size_t>(s2)]);
    }
    return block;
  };

  // Coverage pass: every object of every active relation appears as a
  // stated and answered edit at least once.
  for (int r = 0; r < n_relations; ++r) {
    const RelationSpec& rel = kRelations[static_cast<size_t>(r)];
    for (int o = 0; o < n_objects; ++o) {
      int s = crng.uniform_int(0, n_subjects - 1);
      docs.push_back(statement_line(subjects[static_cast<size_t>(s)], rel, o) +
                     prompt_line(subjects[static_cast<size_t>(s)], rel, 0, o));
    }
  }

  // Drills: two-line documents that bind the in-context rules to every
  // subject. Copy answers the stated subject with the stated object,
  // retain answers a different subject truthfully, and the paraphrase
  // drill applies the stated object to an alternate surface form.
  for (const WorldFact& wf : wfacts) {
    const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
    const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
    {
      int o = stated_object(wf);
      docs.push_back(statement_line(subj, rel, o) + prompt_line(subj, rel, 0, o));
    }
    {
      int o = stated_object(wf);
      docs.push_back(statement_line(subj, rel, o) +
                     prompt_line(subj, rel, crng.uniform_int(1, 5), o));
    }
    for (int k = 0; k < 2; ++k) {
      int o = stated_object(wf);
      int s2 = wf.subject;
      while (s2 == wf.subject) s2 = crng.uniform_int(0, n_subjects - 1);
      docs.push_back(statement_line(subj, rel, o) +
                     prompt_line(subjects[static_cast<size_t>(s2)], rel, 0,
                                 truth[static_cast<size_t>(wf.relation)][static_cast<size_t>(s2)]));
    }
    // Same retain rule for a plain unmarked question: a statement about
    // one subject must not bleed into another subject's answer.
    for (int k = 0; k < 2; ++k) {
      int o = stated_object(wf);
      int s2 = wf.subject;
      while (s2 == wf.subject) s2 = crng.uniform_int(0, n_subjects - 1);
      docs.push_back(
          statement_line(subj, rel, o) +
          apply_template(rel.templates[0], subjects[static_cast<size_t>(s2)]) + " " +
          rel.objects[static_cast<size_t>(
              truth[static_cast<size_t>(wf.relation)][static_cast<size_t>(s2)])] +
          "\n");
    }
  }

  const int n_facts = static_cast<int>(wfacts.size());
  auto icl_doc = [&](int blocks) {
    std::string doc;
    for (int b = 0; b < blocks; ++b) {
      const WorldFact& wf = pick_fact();
      doc += icl_block(wf, stated_object(wf));
    }
    return doc;
  };
  for (int i = 0; i < 2 * n_facts; ++i) docs.push_back(icl_doc(crng.uniform_int(1, 4)));
  for (int i = 0; i < std::max(8, n_facts / 2); ++i)
    docs.push_back(icl_doc(crng.uniform_int(6, 20)));
  // Demonstration prompts at evaluation time run past thirty blocks, so the
  // deepest documents keep the rules working at that depth.
  for (int i = 0; i < 6; ++i) docs.push_back(icl_doc(crng.uniform_int(25, 45)));

  // Statement pileups: a run of statements, then queries answered by the
  // statement with the matching subject and relation. A fact states one
  // object per document, so repeats past the fact count stay consistent,
  // and a subject may recur under its other relations because a statement
  // binds only its own relation.
  auto multi_doc = [&](int n_statements) {
    std::vector<int> order;
    std::vector<int> stated(static_cast<size_t>(n_facts), -1);
    std::vector<int> distinct;
    for (int i = 0; i < n_statements; ++i) {
      int idx = crng.uniform_int(0, n_facts - 1);
      if (stated[static_cast<size_t>(idx)] < 0) {
        stated[static_cast<size_t>(idx)] = stated_object(wfacts[static_cast<size_t>(idx)]);
        distinct.push_back(idx);
      }
      order.push_back(idx);
    }
    std::string doc;
    for (int idx : order) {
      const WorldFact& wf = wfacts[static_cast<size_t>(idx)];
      doc += statement_line(subjects[static_cast<size_t>(wf.subject)],
                            kRelations[static_cast<size_t>(wf.relation)],
                            stated[static_cast<size_t>(idx)]);
    }
    bool marked = crng.uniform() < 0.5;
    int n_queries = std::min(std::max(1, static_cast<int>(distinct.size()) / 2), 6);
    for (int qi = 0; qi < n_queries; ++qi) {
      int idx = distinct[static_cast<size_t>(
          crng.uniform_int(0, static_cast<int>(distinct.size()) - 1))];
      const WorldFact& wf = wfacts[static_cast<size_t>(idx)];
      const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
      const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
      if (marked) {
        doc += prompt_line(subj, rel, 0, stated[static_cast<size_t>(idx)]);
      } else {
        doc += apply_template(rel.templates[0], subj) + " " +
               rel.objects[static_cast<size_t>(stated[static_cast<size_t>(idx)])] + "\n";
      }
    }
    // A fact that went unstated keeps its true object.
    for (int tries = 0; tries < 50; ++tries) {
      int idx = crng.uniform_int(0, n_facts - 1);
      if (stated[static_cast<size_t>(idx)] >= 0) continue;
      const WorldFact& wf = wfacts[static_cast<size_t>(idx)];
      const RelationSpec& rel = kRelations[static_cast<size_t>(wf.relation)];
      const std::string& subj = subjects[static_cast<size_t>(wf.subject)];
      if (marked) {
        doc += prompt_line(subj, rel, 0, wf.true_obj);
      } else {
        doc += apply_template(rel.templates[0], subj) + " " +
               rel.objects[static_cast<size_t>(wf.true_obj)] + "\n";
      }
      break;
    }
    return doc;
  };
  for (int i = 0; i < n_facts / 2; ++i) docs.push_back(multi_doc(crng.uniform_int(2, 6)));
  for (int i = 0; i < 6; ++i) docs.push_back(multi_doc(crng.uniform_int(10, 20)));
  // Distractor chains at evaluation time stack up to a hundred statements
  // ahead of the query, so the deepest pileups rehearse that shape.
  for (int i = 0; i < 2; ++i) docs.push_back(multi_doc(crng.uniform_int(30, 50)));
  docs.push_back(multi_doc(crng.uniform_int(80, 100)));

  return world;
}

}  // namespace ptok

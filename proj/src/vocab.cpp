#include "ptok/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "ptok/errors.hpp"
#include "ptok/hash.hpp"

namespace ptok {

namespace {

std::string byte_token_name(unsigned b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
  return buf;
}

bool looks_like_byte_token(const std::string& w) {
  return w.size() == 6 && w.rfind("<0x", 0) == 0 && w.back() == '>';
}

template <class WordFn, class NewlineFn>
void scan(const std::string& text, WordFn&& on_word, NewlineFn&& on_newline) {
  std::string word;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n') {
      if (!word.empty()) {
        on_word(word);
        word.clear();
      }
      if (ch == '\n') on_newline();
    } else {
      word.push_back(ch);
    }
  }
  if (!word.empty()) on_word(word);
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& docs) {
  std::set<std::string> words;
  for (const std::string& doc : docs) {
    scan(
        doc, [&](const std::string& w) {
          if (!looks_like_byte_token(w)) words.insert(w);
        },
        [] {});
  }
  Vocabulary v;
  v.entries_.reserve(257 + words.size());
  for (unsigned b = 0; b < 256; ++b) v.entries_.push_back(byte_token_name(b));
  v.entries_.push_back("\n");
  for (const std::string& w : words) v.entries_.push_back(w);
  v.base_size_ = static_cast<int>(v.entries_.size());
  for (int i = 0; i < v.base_size_; ++i) v.id_of_[v.entries_[static_cast<size_t>(i)]] = i;
  return v;
}

Vocabulary Vocabulary::restore(std::vector<std::string> base_entries) {
  if (base_entries.size() < 257) throw DataError("vocabulary too small to be valid");
  for (unsigned b = 0; b < 256; ++b) {
    if (base_entries[b] != byte_token_name(b)) throw DataError("vocabulary byte table corrupt");
  }
  if (base_entries[256] != "\n") throw DataError("vocabulary newline entry corrupt");
  Vocabulary v;
  v.entries_ = std::move(base_entries);
  v.base_size_ = static_cast<int>(v.entries_.size());
  for (int i = 0; i < v.base_size_; ++i) {
    if (!v.id_of_.emplace(v.entries_[static_cast<size_t>(i)], i).second)
      throw DataError("duplicate vocabulary entry: " + v.entries_[static_cast<size_t>(i)]);
  }
  return v;
}

int Vocabulary::add_special(const std::string& name) {
  if (id_of_.count(name)) throw ConfigError("special token name already in use: " + name);
  int id = total_size();
  entries_.push_back(name);
  id_of_[name] = id;
  return id;
}

const std::string& Vocabulary::entry(int id) const {
  if (id < 0 || id >= total_size()) throw ComputeError("token id out of range: " + std::to_string(id));
  return entries_[static_cast<size_t>(id)];
}

int Vocabulary::lookup_word(const std::string& word) const {
  auto it = id_of_.find(word);
  if (it == id_of_.end()) return -1;
  int id = it->second;
  return id < base_size_ ? id : -1;
}

uint64_t Vocabulary::content_hash() const {
  // Base entries only: appended specials belong to a prompt-token set, not
  // to the model identity.
  uint64_t h = kFnvOffset;
  const unsigned char sep = 0x1f;
  for (int i = 0; i < base_size_; ++i) {
    h = fnv1a64(entries_[static_cast<size_t>(i)], h);
    h = fnv1a64(&sep, 1, h);
  }
  return h;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  bool prev_was_byte = false;
  auto emit_word = [&](const std::string& w) {
    int id = vocab.lookup_word(w);
    if (id >= 0) {
      ids.push_back(id);
      prev_was_byte = false;
      return;
    }
    if (prev_was_byte) ids.push_back(0x20);
    for (unsigned char b : w) ids.push_back(static_cast<int>(b));
    prev_was_byte = true;
  };
  scan(text, emit_word, [&] {
    ids.push_back(Vocabulary::kEos);
    prev_was_byte = false;
  });
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  bool prev_byte = false;
  bool prev_newline = true;  // suppresses a leading joiner
  bool first = true;
  for (int id : ids) {
    bool is_byte = id >= 0 && id < 256;
    bool is_newline = id == Vocabulary::kEos;
    if (is_newline) {
      out.push_back('\n');
    } else {
      if (!first && !prev_newline && !(prev_byte && is_byte)) out.push_back(' ');
      if (is_byte) {
        out.push_back(static_cast<char>(id));
      } else {
        out += vocab.entry(id);
      }
    }
    prev_byte = is_byte;
    prev_newline = is_newline;
    first = false;
  }
  return out;
}

}  // namespace ptok

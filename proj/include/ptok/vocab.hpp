#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ptok {

// Word-level vocabulary with byte fallback.
//
// Id layout: 0..255 are byte tokens "<0xNN>", 256 is "\n" (doubles as the
// end-of-sequence token), then corpus words in sorted order. Special prompt
// tokens may be appended after construction; they are input-only and are
// never produced by tokenize().
class Vocabulary {
 public:
  static constexpr int kEos = 256;

  static Vocabulary build(const std::vector<std::string>& docs);
  // Rebuilds a vocabulary from serialized base entries.
  static Vocabulary restore(std::vector<std::string> base_entries);

  int eos_id() const { return kEos; }
  // Entries excluding appended specials; also the width of every
  // distribution the model emits.
  int base_size() const { return base_size_; }
  int total_size() const { return static_cast<int>(entries_.size()); }
  bool is_special(int id) const { return id >= base_size_; }
  int n_special() const { return total_size() - base_size_; }

  // Appends a special token; returns its id. Name must be unused.
  int add_special(const std::string& name);

  const std::string& entry(int id) const;
  // Id of a plain entry, -1 if absent. Never resolves specials.
  int lookup_word(const std::string& word) const;
  const std::vector<std::string>& entries() const { return entries_; }

  uint64_t content_hash() const;

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> id_of_;
  int base_size_ = 0;
};

// Whitespace-split word tokenization; "\n" is its own token; words outside
// the vocabulary fall back to byte tokens (with an explicit <0x20> between
// two adjacent byte-encoded words). Emits only ids below base_size().
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

// Inverse up to whitespace normalization: single spaces between words, no
// spaces around newlines.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace ptok

#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

namespace ptok {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

// A bare literal would otherwise bind to the (data, len) overload with the
// seed in the length slot.
uint64_t fnv1a64(const char* s, uint64_t h) = delete;

// Incremental SHA-256; used for content hashes of run inputs.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex_digest();  // finalizes; further updates are invalid

 private:
  void process_block(const unsigned char* block);
  uint32_t state_[8];
  unsigned char buffer_[64];
  size_t buffer_len_ = 0;
  uint64_t total_len_ = 0;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

}  // namespace ptok

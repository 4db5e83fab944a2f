#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace fg2e {

// File or container parsing failure; `offset` is the byte position when known.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what, long long offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (byte " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// A score oracle was queried outside its contract (missing condition field, ...).
class ContractError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Replay table has no record for a query hash.
class MissingFixtureError : public std::runtime_error {
 public:
  explicit MissingFixtureError(uint64_t key)
      : std::runtime_error(format_message(key)), key_(key) {}
  uint64_t key() const { return key_; }

 private:
  static std::string format_message(uint64_t key) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "no fixture record for query %016llx",
                  static_cast<unsigned long long>(key));
    return std::string(buf);
  }
  uint64_t key_;
};

}  // namespace fg2e

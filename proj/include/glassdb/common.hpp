#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace glassdb {

/// Keys, values and encoded buffers are raw byte strings. std::string compares
/// through char_traits<char>, which orders bytes as unsigned (memcmp order).
using ByteString = std::string;

enum class ErrorCode : std::uint8_t {
  ok = 0,
  invalid_input,
  not_found,
  out_of_range,
  storage_error,
  corrupt_tree,
  corrupt_data,
  not_yet_persisted,
  txn_aborted,
  txn_unknown,
  bad_signature,
  transport_error,
  tamper_detected,
  injected_crash,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

struct Hash {
  static constexpr std::size_t kSize = 32;
  std::array<std::uint8_t, kSize> bytes{};

  auto operator<=>(const Hash&) const = default;

  std::string_view view() const {
    return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
  }
  static Hash from_view(std::string_view raw);
  std::string hex() const;
  static Hash from_hex(std::string_view hex);
};

std::string to_hex(std::string_view raw);
std::string from_hex(std::string_view hex);

}  // namespace glassdb

template <>
struct std::hash<glassdb::Hash> {
  std::size_t operator()(const glassdb::Hash& h) const noexcept {
    std::size_t out;
    std::memcpy(&out, h.bytes.data(), sizeof(out));
    return out;
  }
};

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "glassdb/common.hpp"

namespace glassdb {

/// Appends big-endian integers and length-prefixed fields to a byte string.
class Writer {
 public:
  Writer() = default;
  explicit Writer(ByteString initial) : out_(std::move(initial)) {}

  Writer& u8(std::uint8_t v) {
    out_.push_back(static_cast<char>(v));
    return *this;
  }
  Writer& u16(std::uint16_t v) { return be(v, 2); }
  Writer& u32(std::uint32_t v) { return be(v, 4); }
  Writer& u64(std::uint64_t v) { return be(v, 8); }
  Writer& raw(std::string_view v) {
    out_.append(v);
    return *this;
  }
  Writer& hash(const Hash& h) { return raw(h.view()); }
  /// u32 length followed by the bytes.
  Writer& str(std::string_view v) {
    u32(static_cast<std::uint32_t>(v.size()));
    return raw(v);
  }

  const ByteString& bytes() const& { return out_; }
  ByteString take() && { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Writer& be(std::uint64_t v, int width) {
    for (int i = width - 1; i >= 0; --i) {
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    return *this;
  }

  ByteString out_;
};

/// Bounds-checked reader over a byte string; every overrun throws
/// Error(corrupt_data).
class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(be(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(be(4)); }
  std::uint64_t u64() { return be(8); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  Hash hash() { return Hash::from_view(raw(Hash::kSize)); }
  std::string_view str() { return raw(u32()); }
  /// Length-prefixed field that must not exceed `limit` bytes.
  std::string_view str(std::size_t limit) {
    auto n = u32();
    if (n > limit) fail(ErrorCode::corrupt_data, "field length exceeds limit");
    return raw(n);
  }

  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void expect_done() const {
    if (!done()) fail(ErrorCode::corrupt_data, "trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) fail(ErrorCode::corrupt_data, "truncated input");
  }
  std::uint64_t be(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v = (v << 8) | static_cast<std::uint8_t>(in_[pos_++]);
    }
    return v;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

/// 8-byte big-endian encoding; preserves numeric order under byte comparison.
inline ByteString be64_key(std::uint64_t v) {
  return Writer().u64(v).bytes();
}
inline std::uint64_t be64_value(std::string_view key) {
  Reader r(key);
  auto v = r.u64();
  r.expect_done();
  return v;
}

}  // namespace glassdb

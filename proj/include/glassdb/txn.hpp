#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glassdb/codec.hpp"
#include "glassdb/common.hpp"
#include "glassdb/crypto.hpp"

namespace glassdb {

/// (client_id, client timestamp, per-client counter). Unique per client.
struct TxnId {
  std::uint64_t client_id = 0;
  std::uint64_t timestamp_ms = 0;
  std::uint64_t counter = 0;

  auto operator<=>(const TxnId&) const = default;

  void encode(Writer& w) const { w.u64(client_id).u64(timestamp_ms).u64(counter); }
  static TxnId decode(Reader& r) {
    TxnId t;
    t.client_id = r.u64();
    t.timestamp_ms = r.u64();
    t.counter = r.u64();
    return t;
  }
  std::string to_string() const;
};

/// Client id derived from the public key, so a transaction's id is bound to
/// the key that signed it.
std::uint64_t client_id_for(std::string_view public_key);

struct ReadItem {
  ByteString key;
  std::uint64_t version = 0;  // block number of the observed version, 0 = absent
  bool operator==(const ReadItem&) const = default;
};

struct WriteItem {
  ByteString key;
  ByteString value;
  bool operator==(const WriteItem&) const = default;
};

struct Transaction {
  TxnId tid;
  ByteString public_key;
  std::vector<ReadItem> read_set;
  std::vector<WriteItem> write_set;
  ByteString signature;

  /// Bytes covered by the signature (everything except the signature).
  ByteString signing_bytes() const;
  void sign(const crypto::KeyPair& keys);
  /// Signature is valid and the tid's client id matches the public key.
  bool signature_valid() const;

  void encode(Writer& w) const;
  static Transaction decode(Reader& r);
  ByteString encode() const {
    Writer w;
    encode(w);
    return std::move(w).take();
  }

  bool operator==(const Transaction&) const = default;
};

}  // namespace glassdb

template <>
struct std::hash<glassdb::TxnId> {
  std::size_t operator()(const glassdb::TxnId& t) const noexcept {
    return std::hash<std::uint64_t>()(t.client_id * 0x9e3779b97f4a7c15ULL ^ t.timestamp_ms * 31 ^
                                      t.counter);
  }
};

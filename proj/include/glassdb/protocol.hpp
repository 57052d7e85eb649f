#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glassdb/codec.hpp"
#include "glassdb/ledger.hpp"
#include "glassdb/proofs.hpp"
#include "glassdb/txn.hpp"
#include "glassdb/txnmgr.hpp"

namespace glassdb {

/// Shard owning `key`: first 8 bytes of its hash, big-endian, mod `shards`.
std::uint32_t shard_of(std::string_view key, std::uint32_t shards);

enum class MsgKind : std::uint8_t {
  register_client = 1,
  prepare = 2,
  commit = 3,
  abort = 4,
  get = 5,
  get_proof = 6,
  get_digest = 7,
  audit_block = 8,
  prove_append = 9,
  get_stats = 10,
  get_history = 11,
  // auditor requests
  submit_digest = 32,
  audit_register = 33,
};
constexpr std::uint8_t kReplyBit = 0x80;

/// Frame: u32 length of the rest, u8 kind (reply bit set on replies),
/// u64 correlation id, payload. Reply payloads start with a status byte
/// (an ErrorCode); a non-ok status is followed by a message string.
struct Frame {
  std::uint8_t kind = 0;
  std::uint64_t correlation = 0;
  ByteString payload;

  ByteString encode() const;
  /// Parses one frame from the front of `buf`; returns bytes consumed or 0
  /// when more input is needed.
  static std::size_t decode(std::string_view buf, Frame& out);
};
constexpr std::size_t kMaxFrame = 64u << 20;

ByteString ok_reply(std::string_view body);
ByteString error_reply(ErrorCode code, std::string_view message);
/// Returns the body of an ok reply, otherwise throws the carried Error.
std::string_view unwrap_reply(std::string_view reply);

void encode_digest(Writer& w, const LedgerDigest& d);
LedgerDigest decode_digest(Reader& r);

enum class ReadMode : std::uint8_t { latest = 0, at_block = 1, at_timestamp = 2 };

struct GetRequest {
  ByteString key;
  ReadMode mode = ReadMode::latest;
  std::uint64_t arg = 0;

  ByteString encode() const;
  static GetRequest decode(std::string_view bytes);
};

struct GetReply {
  bool found = false;
  ByteString value;
  std::uint64_t version = 0;
  /// Persisted digest taken just before the read.
  LedgerDigest digest;

  ByteString encode() const;
  static GetReply decode(std::string_view bytes);
};

/// A read to be proven: the version seen and the digest it was read under.
struct ReadClaim {
  ByteString key;
  ByteString value;
  std::uint64_t version = 0;
  LedgerDigest read_digest;
  bool operator==(const ReadClaim&) const = default;
};

struct ProofRequest {
  LedgerDigest cached;
  std::vector<ReadClaim> reads;
  std::vector<PromisedWrite> writes;

  ByteString encode() const;
  static ProofRequest decode(std::string_view bytes);
};

struct ProofReply {
  LedgerDigest digest;  // current digest the proofs lead to
  ProofBundle bundle;

  ByteString encode() const;
  static ProofReply decode(std::string_view bytes);
};

struct AppendRequest {
  LedgerDigest old_digest;
  LedgerDigest new_digest;

  ByteString encode() const;
  static AppendRequest decode(std::string_view bytes);
};

struct AuditBlockReply {
  DataBlock block;
  std::vector<BatchWrite> writes;
  std::vector<Transaction> txns;  // signed transactions named by the block

  ByteString encode() const;
  static AuditBlockReply decode(std::string_view bytes);
};

struct HistoryRequest {
  ByteString key;
  std::uint32_t count = 10;
  LedgerDigest from;  // the reply carries an append-only proof from here

  ByteString encode() const;
  static HistoryRequest decode(std::string_view bytes);
};

/// Newest-first persisted versions, each proven by inclusion at its block,
/// and one append-only proof from the request's `from` digest.
struct HistoryReply {
  LedgerDigest digest;
  std::vector<VersionedValue> versions;
  ProofBundle bundle;

  ByteString encode() const;
  static HistoryReply decode(std::string_view bytes);
};

struct CommitRequest {
  TxnId tid;
  bool sync = false;  // persist before replying

  ByteString encode() const;
  static CommitRequest decode(std::string_view bytes);
};

/// key = value in the state at `block_no`: a write's landing block, or the
/// block a read was served from (its version's block if that was later).
struct ProofClaim {
  KeyValue kv;
  std::uint64_t block_no = 0;
};

/// Claims of a request, sorted by (block, key). Absent reads (version 0)
/// are not proven.
std::vector<ProofClaim> proof_claims(const ProofRequest& q);

/// A reply holds inclusion proofs against reply.digest, at most one per
/// block, plus an append-only proof from q.cached when the digest moved.
/// Each claim must be covered at its own block or at the reply's last block,
/// which holds every current value. Returns the failure, if any.
std::optional<std::string> check_proof_reply(const ProofRequest& q, const ProofReply& reply);

ByteString encode_vote(const PrepareResult& v);
PrepareResult decode_vote(std::string_view bytes);
ByteString encode_promise(const Promise& p);
Promise decode_promise(std::string_view bytes);
ByteString encode_tid(const TxnId& t);
TxnId decode_tid(std::string_view bytes);

}  // namespace glassdb

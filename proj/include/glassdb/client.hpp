#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "glassdb/protocol.hpp"
#include "glassdb/transport.hpp"

namespace glassdb {

struct SessionOptions {
  /// Longest a promise or read waits before its proof is requested; the
  /// rest of the shard's queue is proven in the same request. 0 asks shards
  /// to persist at commit and verifies immediately.
  std::uint64_t delay_ms = 100;
  int attempts = 3;  // per prepare/commit/abort message
  /// Longest wait for a NotYetPersisted proof before giving up in flush().
  std::chrono::milliseconds persist_wait{10000};
};

struct CommitResult {
  TxnId tid;
  std::vector<std::pair<std::uint32_t, Promise>> promises;  // by shard
};

struct VerifiedHistory {
  LedgerDigest digest;
  std::vector<VersionedValue> versions;  // newest first
};

struct VerifyStats {
  std::uint64_t proof_requests = 0;
  std::uint64_t proven_keys = 0;
  std::uint64_t proof_bytes = 0;
  std::uint64_t proof_nodes = 0;
  std::uint64_t not_yet_persisted = 0;
  std::uint64_t verified_txns = 0;
  std::uint64_t incidents = 0;
};

enum class Phase : std::uint8_t { prepare, commit, persist, get_proof };

/// Latency sample in milliseconds. persist spans commit to full verification.
using PhaseObserver = std::function<void(Phase phase, double ms)>;

/// Called with (shard, digest) by audit_submit().
using AuditSink = std::function<void(std::uint32_t shard, const LedgerDigest& digest)>;

/// Client session: coordinates transactions across shards and verifies the
/// shards' answers against a cache of per-shard digests. Single-threaded.
class Session {
 public:
  Session(std::vector<std::shared_ptr<Channel>> shards, crypto::KeyPair keys,
          SessionOptions opts = {});

  /// Registers the public key with every shard.
  void register_keys();
  std::uint64_t client_id() const { return client_id_; }
  std::uint32_t shard_count() const { return static_cast<std::uint32_t>(shards_.size()); }

  TxnId begin();
  /// Latest value; buffered writes of the same transaction win.
  std::optional<ByteString> get(const TxnId& tid, const ByteString& key);
  /// Historical read (block number or timestamp); not part of the read set.
  std::optional<VersionedValue> get_at(const TxnId& tid, const ByteString& key, ReadMode mode,
                                       std::uint64_t arg);
  void put(const TxnId& tid, const ByteString& key, ByteString value);
  /// Two-phase commit. Errors: an abort vote -> txn_aborted (naming the
  /// shard); no answer after all attempts -> txn_unknown.
  CommitResult commit(const TxnId& tid);
  void abort(const TxnId& tid);

  /// Verifies every due item, one proof request per shard. Items whose
  /// blocks are not persisted yet stay queued. Errors: failed verification
  /// -> tamper_detected.
  void poll();
  /// Verifies everything queued, waiting for persistence.
  void flush();
  /// True once every read and write of `tid` verified; forces its items
  /// out ahead of their due time.
  bool verify(const TxnId& tid);

  /// Newest `count` versions of `key`, each proven, with the cache advanced
  /// to the reply digest.
  VerifiedHistory get_history(const ByteString& key, std::uint32_t count);
  /// Fetches the shard's digest and advances the cache with a verified
  /// append-only proof.
  LedgerDigest refresh_digest(std::uint32_t shard);
  const LedgerDigest& cached_digest(std::uint32_t shard) const { return cache_.at(shard); }

  void set_phase_observer(PhaseObserver obs) { observer_ = std::move(obs); }
  void add_audit_sink(AuditSink sink) { sinks_.push_back(std::move(sink)); }
  /// Sends every cached digest to the audit sinks. Sink errors are logged.
  void audit_submit();

  std::uint32_t shard_for(std::string_view key) const { return shard_of(key, shard_count()); }
  const VerifyStats& stats() const { return stats_; }
  std::size_t queued() const;

 private:
  struct ReadRecord {
    bool found = false;
    ByteString value;
    std::uint64_t version = 0;
    LedgerDigest digest;
  };
  struct OpenTxn {
    std::map<ByteString, ByteString> writes;
    std::map<ByteString, ReadRecord> reads;
  };
  struct QueuedRead {
    TxnId tid;
    ReadClaim claim;
    std::chrono::steady_clock::time_point due;
  };
  struct QueuedWrite {
    TxnId tid;
    PromisedWrite write;
    std::chrono::steady_clock::time_point due;
  };
  struct ShardQueue {
    std::vector<QueuedRead> reads;
    std::vector<QueuedWrite> writes;
  };

  OpenTxn& open(const TxnId& tid);
  ByteString call(std::uint32_t shard, MsgKind kind, std::string_view payload, int attempts);
  /// Returns false when the shard has not persisted the selected items yet.
  bool verify_shard(std::uint32_t shard, const std::unordered_set<TxnId>* force, bool all);
  void advance(std::uint32_t shard, const LedgerDigest& d);
  [[noreturn]] void tamper(std::uint32_t shard, const std::string& what);
  void settle(const TxnId& tid, std::size_t items);
  void observe(Phase phase, std::chrono::steady_clock::time_point since);

  std::vector<std::shared_ptr<Channel>> shards_;
  crypto::KeyPair keys_;
  SessionOptions opts_;
  std::uint64_t client_id_;
  std::uint64_t counter_ = 0;
  std::uint64_t last_ts_ = 0;
  std::unordered_map<TxnId, OpenTxn> open_;
  std::vector<LedgerDigest> cache_;
  std::vector<ShardQueue> queues_;
  std::unordered_map<TxnId, std::size_t> outstanding_;
  std::unordered_map<TxnId, std::chrono::steady_clock::time_point> committed_at_;
  std::unordered_set<TxnId> verified_;
  std::vector<AuditSink> sinks_;
  VerifyStats stats_;
  PhaseObserver observer_;
};

}  // namespace glassdb

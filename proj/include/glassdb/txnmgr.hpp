#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "glassdb/ledger.hpp"
#include "glassdb/txn.hpp"
#include "glassdb/wal.hpp"

namespace glassdb {

enum class Vote : std::uint8_t { commit = 1, abort = 2 };

struct PrepareResult {
  Vote vote = Vote::abort;
  std::string reason;  // empty on commit
};

struct PromisedWrite {
  ByteString key;
  ByteString value;
  std::uint64_t block_no = 0;  // block the write will land in
  bool operator==(const PromisedWrite&) const = default;
};

/// Server's commitment for a committed transaction's writes on one shard.
struct Promise {
  TxnId tid;
  LedgerDigest digest;  // persisted digest when the promise was issued
  std::vector<PromisedWrite> writes;

  void encode(Writer& w) const;
  static Promise decode(Reader& r);
  bool operator==(const Promise&) const = default;
};

struct ReadResult {
  ByteString value;
  std::uint64_t version = 0;  // landing block (persisted or promised)
  bool persisted = false;
};

struct TxnManagerOptions {
  std::size_t queue_depth = 4096;
  /// Keys this shard is responsible for; all keys when unset.
  std::function<bool(std::string_view)> owns;
  /// Prepare requires a registered public key when true.
  bool require_registration = true;
  /// Fault injection only: accept reads of outdated versions.
  bool check_read_versions = true;
};

struct TxnStats {
  std::uint64_t prepared = 0;
  std::uint64_t committed = 0;
  std::uint64_t aborted = 0;
  std::uint64_t blocks = 0;
  std::uint64_t pending_versions = 0;
};

struct TxnRecovery {
  RecoveryReport ledger;
  std::size_t wal_records = 0;
  std::uint64_t wal_truncated_bytes = 0;
  std::size_t pending_versions = 0;    // committed, waiting for a block
  std::size_t undecided_prepares = 0;  // still holding locks
};

/// Per-shard OCC transaction manager with a multi-version committed-data
/// map and batched asynchronous persistence.
///
/// Versions are block numbers: a committed write is assigned the block it
/// will land in as soon as it commits, and that number serves both as its
/// OCC version and as the promise handed to the client.
class TxnManager {
 public:
  /// Replays `wal` into `ledger` before returning.
  TxnManager(Ledger& ledger, Wal& wal, TxnManagerOptions opts = {});
  TxnManager(const TxnManager&) = delete;
  TxnManager& operator=(const TxnManager&) = delete;

  const TxnRecovery& recovery() const { return recovery_; }

  void register_client(std::string_view public_key);
  bool registered(std::string_view public_key) const;

  /// Errors: bad or unregistered signature -> bad_signature.
  PrepareResult prepare(const Transaction& txn);
  /// Errors: unknown tid -> txn_unknown; aborted tid -> txn_aborted.
  Promise commit(const TxnId& tid);
  void abort(const TxnId& tid);
  /// Fault injection only: commits `txn` with no signature, registration
  /// or conflict checks.
  Promise force_commit(const Transaction& txn);
  /// Signed transaction behind a commit, for auditors.
  std::optional<Transaction> committed_txn(const TxnId& tid) const;

  /// Newest committed value: the committed-data map first, then the ledger.
  std::optional<ReadResult> read_latest(std::string_view key) const;
  /// Historical read against persisted blocks. A block beyond the ledger
  /// -> not_yet_persisted.
  std::optional<VersionedValue> read_at(std::string_view key, VersionSelector at) const;

  /// Forms blocks from everything committed so far and appends them.
  /// Storage errors leave the claimed blocks queued for the next tick.
  std::vector<std::pair<DataBlock, LedgerDigest>> persist_tick(std::uint64_t now_ms);

  /// First block number not yet claimed by a tick.
  std::uint64_t next_block() const;
  TxnStats stats() const;
  Ledger& ledger() { return ledger_; }

 private:
  struct Version {
    std::uint64_t block_no;
    ByteString value;
    TxnId tid;
  };
  struct Prepared {
    Transaction txn;
    std::vector<ByteString> read_keys;   // owned, deduplicated
    std::vector<ByteString> write_keys;  // owned, deduplicated
  };
  struct Lock {
    std::size_t readers = 0;
    bool writer = false;
  };
  enum class Outcome : std::uint8_t { committed, aborted };

  std::uint64_t current_version(const ByteString& key) const;  // 0 = absent
  std::optional<std::string> validate(const Prepared& p) const;
  Prepared restrict_to_shard(const Transaction& txn) const;
  void lock_keys(const Prepared& p);
  void unlock_keys(const Prepared& p);
  Promise install(const Prepared& p);
  std::vector<PlannedBlock> claim(std::uint64_t now_ms) const;
  void drop_persisted(const PlannedBlock& block);
  void replay_wal();

  Ledger& ledger_;
  Wal& wal_;
  TxnManagerOptions opts_;
  TxnRecovery recovery_;

  mutable std::mutex mu_;
  std::unordered_set<ByteString> keys_;  // registered public keys
  std::unordered_map<TxnId, Prepared> prepared_;
  std::unordered_map<TxnId, Outcome> decided_;
  std::unordered_map<TxnId, Promise> promises_;
  std::unordered_map<TxnId, Transaction> committed_;
  std::unordered_map<ByteString, Lock> locks_;
  std::unordered_map<ByteString, std::deque<Version>> pending_;  // committed data map
  std::uint64_t pending_count_ = 0;
  std::uint64_t next_block_ = 1;
  std::uint64_t commit_seq_ = 0;
  std::uint64_t last_timestamp_ = 0;
  TxnStats stats_;

  std::mutex persist_mu_;  // one persister
  std::deque<PlannedBlock> inflight_;
};

}  // namespace glassdb

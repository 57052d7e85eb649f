#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "glassdb/ledger.hpp"
#include "glassdb/protocol.hpp"
#include "glassdb/txnmgr.hpp"
#include "glassdb/wal.hpp"

namespace glassdb {

/// Misbehaviour a shard can be told to exhibit, for detection tests.
enum class FaultMode : std::uint8_t {
  none,
  /// Latest reads of keys with an older persisted version return that older
  /// version, and its proofs are passed off as current-value proofs.
  stale_value,
  /// Odd-numbered connections are served from a second history whose blocks
  /// from `fork_block` on carry shifted timestamps.
  equivocate,
};

struct ShardConfig {
  std::string data_dir;  // empty: in-memory
  std::uint32_t shard_id = 0;
  std::uint32_t shards = 1;
  /// Background persistence period; 0 disables the persister thread.
  std::uint64_t persist_interval_ms = 100;
  bool fsync = true;
  std::size_t queue_depth = 4096;
  LedgerOptions ledger;
  FaultMode fault = FaultMode::none;
  std::uint64_t fork_block = 1;
};

struct ShardCounters {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> proof_requests{0};
  std::atomic<std::uint64_t> proof_nodes{0};
  std::atomic<std::uint64_t> proof_bytes{0};
  std::atomic<std::uint64_t> not_yet_persisted{0};
  std::atomic<std::uint64_t> persist_errors{0};
};

/// One shard: ledger, write-ahead log and transaction manager behind a
/// request handler that any transport can drive.
class ShardService {
 public:
  explicit ShardService(ShardConfig cfg);
  ~ShardService();
  ShardService(const ShardService&) = delete;
  ShardService& operator=(const ShardService&) = delete;

  /// Serves one request and returns the reply payload. Never throws.
  /// `conn` identifies the caller's connection.
  ByteString handle(std::uint64_t conn, MsgKind kind, std::string_view payload);
  /// As handle(), for an unchecked kind byte off the wire.
  ByteString handle_raw(std::uint64_t conn, std::uint8_t kind, std::string_view payload);

  /// Fault injection: commits a transaction the shard never received from a
  /// client, bypassing signature checks.
  Promise inject_transaction(const Transaction& txn) { return mgr_->force_commit(txn); }

  /// Persists everything committed so far.
  void persist_now();
  /// Stops the persister thread after a final persist.
  void stop();

  const ShardConfig& config() const { return cfg_; }
  TxnManager& txns() { return *mgr_; }
  Ledger& ledger() { return *ledger_; }
  const ShardCounters& counters() const { return counters_; }
  std::string stats_json() const;

 private:
  ByteString dispatch(std::uint64_t conn, MsgKind kind, std::string_view payload);
  Ledger& view(std::uint64_t conn);
  ByteString on_get(Ledger& l, std::string_view payload);
  ByteString on_get_proof(Ledger& l, std::string_view payload);
  ByteString on_audit_block(Ledger& l, std::string_view payload);
  ByteString on_history(Ledger& l, std::string_view payload);
  void extend_fork(const std::vector<std::pair<DataBlock, LedgerDigest>>& appended);
  void persister_loop();

  ShardConfig cfg_;
  std::unique_ptr<Ledger> ledger_;
  std::unique_ptr<Wal> wal_;
  std::unique_ptr<TxnManager> mgr_;
  std::unique_ptr<Ledger> fork_;
  std::mutex fork_mu_;
  ShardCounters counters_;

  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
  std::thread persister_;
};

}  // namespace glassdb

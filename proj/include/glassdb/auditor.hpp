#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "glassdb/ledger.hpp"
#include "glassdb/protocol.hpp"
#include "glassdb/transport.hpp"

namespace glassdb {

enum class AuditVerdict : std::uint8_t { accepted = 0, fork_detected = 1, rejected = 2, deferred = 3 };
std::string_view to_string(AuditVerdict v);

struct AuditOutcome {
  AuditVerdict verdict = AuditVerdict::accepted;
  std::string detail;
  std::uint64_t block_no = 0;  // offending block for rejections
  /// Judging auditor's own digest afterwards (gossip replies carry it back).
  LedgerDigest head;
};

/// Two digests that cannot lie on one linear history.
struct ForkEvidence {
  std::uint32_t shard_id = 0;
  LedgerDigest local;
  LedgerDigest remote;
  std::string source;
  std::string reason;

  /// One-line JSON record.
  std::string to_json() const;
};

struct AuditorOptions {
  std::uint32_t shard_id = 0;
  std::uint32_t shards = 1;
  LedgerOptions ledger;
  /// Reject transactions whose public key was never registered.
  bool require_registered_keys = false;
  std::string checkpoint_path;  // empty: no checkpoints
};

/// Gossip peer: delivers (digest, source) to another auditor.
using AuditPeer = std::function<AuditOutcome(const LedgerDigest& digest, std::string_view source)>;

/// Per-shard auditor. Keeps its own replica of the shard's ledger, rebuilt
/// by re-executing every block's signed transactions, and judges digests
/// from users and peers against it.
class Auditor {
 public:
  Auditor(std::shared_ptr<Channel> shard, AuditorOptions opts = {});

  void register_client(std::string_view public_key);

  /// Replays block b+1 (the next one). Signature, ownership, duplicate and
  /// state-root failures reject the block and leave the state unchanged.
  AuditOutcome verify_block(std::uint64_t block_no);
  /// Replays blocks up to `target`.
  AuditOutcome catch_up(std::uint64_t target);
  /// Judges a digest: older ones against the replica's history, newer ones
  /// after catching up.
  AuditOutcome verify_digest(const LedgerDigest& d, std::string_view source = "user");
  /// Judges the digest the shard currently serves.
  AuditOutcome sync();

  void add_peer(std::string name, AuditPeer peer);
  /// Sends the current digest to every peer and judges each peer's digest
  /// in return.
  std::vector<AuditOutcome> gossip();

  LedgerDigest digest() const;
  std::vector<ForkEvidence> evidence() const;
  bool fork_detected() const;

  /// Writes digest, block number, keys and evidence as JSON.
  void save_checkpoint() const;
  /// Loads a checkpoint, replays the shard up to it and checks the digest.
  /// Returns false when there is no checkpoint.
  bool restore();

  /// Auditor side of the wire protocol (submit_digest, audit_register).
  ByteString handle(std::uint8_t kind, std::string_view payload);

 private:
  AuditOutcome verify_block_locked(std::uint64_t block_no);
  AuditOutcome catch_up_locked(std::uint64_t target);
  AuditOutcome judge_locked(const LedgerDigest& d, std::string_view source);
  AuditOutcome fork_locked(const LedgerDigest& local, const LedgerDigest& remote,
                           std::string_view source, std::string reason);

  std::shared_ptr<Channel> shard_;
  AuditorOptions opts_;
  mutable std::recursive_mutex mu_;
  std::unique_ptr<Ledger> replica_;
  std::unordered_set<ByteString> keys_;
  std::unordered_set<ByteString> applied_;  // encoded tid || key
  std::vector<ForkEvidence> evidence_;
  std::vector<std::pair<std::string, AuditPeer>> peers_;
};

/// Payload codec for submit_digest: digest then source string; the reply is
/// a verdict byte, detail string, block number and the judge's digest.
ByteString encode_submission(const LedgerDigest& d, std::string_view source);
AuditOutcome decode_verdict(std::string_view body);

}  // namespace glassdb

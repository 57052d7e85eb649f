#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "glassdb/postree.hpp"
#include "glassdb/txn.hpp"

namespace glassdb {

/// One ledger block. Stored in the node store under its hash; the upper tree
/// maps be64(block_no) to that hash.
struct DataBlock {
  std::uint64_t block_no = 0;
  std::uint64_t timestamp_ms = 0;
  std::vector<TxnId> txn_ids;
  Hash state_root = empty_tree_hash();

  ByteString serialize() const;
  static DataBlock deserialize(std::string_view bytes);
  Hash hash() const;

  bool operator==(const DataBlock&) const = default;
};

/// Public commitment: upper-tree root hash and the greatest block number.
struct LedgerDigest {
  Hash digest = empty_tree_hash();
  std::uint64_t block_no = 0;

  bool operator==(const LedgerDigest&) const = default;
  static LedgerDigest genesis() { return {}; }
};

struct BatchWrite {
  ByteString key;
  ByteString value;
  TxnId tid;
  bool operator==(const BatchWrite&) const = default;
};

/// Writes forming one block; keys are unique.
struct WriteBatch {
  std::vector<BatchWrite> writes;

  /// Distinct transaction ids in order of first appearance.
  std::vector<TxnId> txn_ids() const;
};

/// A block whose contents were decided before persistence (replayed from
/// the write-ahead log during recovery).
struct PlannedBlock {
  std::uint64_t block_no = 0;
  std::uint64_t timestamp_ms = 0;
  WriteBatch batch;
};

/// block_no -> persisted DataBlock hash. File records are
/// be64(block_no) || hash(32) after a "GBMP" u16 version header.
class BlockMap {
 public:
  using WriteHook = std::function<void(std::string_view site)>;

  BlockMap() = default;
  /// File-backed map; a torn final record is dropped.
  explicit BlockMap(std::string path);
  ~BlockMap();
  BlockMap(const BlockMap&) = delete;
  BlockMap& operator=(const BlockMap&) = delete;

  void add(std::uint64_t block_no, const Hash& block_hash);
  std::optional<Hash> find(std::uint64_t block_no) const;
  std::size_t size() const;
  void set_write_hook(WriteHook hook) { hook_ = std::move(hook); }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::uint64_t, Hash> entries_;
  std::string path_;
  int fd_ = -1;
  WriteHook hook_;
};

struct LedgerOptions {
  ChunkConfig lower_chunking;
  ChunkConfig upper_chunking;
  bool fsync = true;
};

struct BlockWithPath {
  DataBlock block;
  Hash block_hash;
  std::vector<std::shared_ptr<const PosNode>> upper_path;
};

struct VersionedValue {
  ByteString value;
  std::uint64_t version = 0;  // block where this version was written
};

struct AtBlock {
  std::uint64_t block_no;
};
struct AtTimestamp {
  std::uint64_t timestamp_ms;
};
using VersionSelector = std::variant<AtBlock, AtTimestamp>;

struct RecoveryReport {
  LedgerDigest digest;
  std::size_t reused_blocks = 0;     // taken from the block map
  std::size_t recreated_blocks = 0;  // rebuilt from the plan
  std::uint64_t truncated_bytes = 0;
};

/// Two-level ledger: a lower POS-tree over the current state and an upper
/// POS-tree over data blocks. One persister appends; readers work against
/// immutable historical roots.
class Ledger {
 public:
  /// In-memory ledger (tests, auditor replay state).
  explicit Ledger(LedgerOptions opts = {});
  /// File-backed ledger in `dir` (nodes.dat, blockmap.dat). Call recover()
  /// before use when the directory is not fresh.
  static std::unique_ptr<Ledger> open(const std::string& dir, LedgerOptions opts = {});

  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  std::pair<DataBlock, LedgerDigest> append_block(const WriteBatch& batch, std::uint64_t now_ms);

  /// Re-applies planned blocks after a restart. Blocks already present in
  /// the block map are reused verbatim; others are recreated.
  RecoveryReport recover(std::span<const PlannedBlock> plan);

  /// Applies `writes` to the lower tree and appends `block` as given,
  /// failing with corrupt_data when the resulting state root differs from
  /// block.state_root. Used by auditors to replay a server's blocks.
  LedgerDigest replay_block(const DataBlock& block, std::span<const BatchWrite> writes);

  BlockWithPath get_block(std::uint64_t block_no) const;
  /// Block lookup in the upper tree committed by `at`.
  BlockWithPath get_block(std::uint64_t block_no, const LedgerDigest& at) const;

  std::optional<VersionedValue> get_versioned(std::string_view key, VersionSelector at) const;
  std::optional<VersionedValue> get_latest(std::string_view key) const;
  /// Block number of the newest persisted version of `key`.
  std::optional<std::uint64_t> latest_version(std::string_view key) const;
  /// Blocks holding persisted versions of `key`, oldest first.
  std::vector<std::uint64_t> versions(std::string_view key) const;

  LedgerDigest digest() const;
  /// Digest as of `block_no` (<= latest).
  LedgerDigest digest_at(std::uint64_t block_no) const;
  bool knows(const LedgerDigest& d) const;
  std::uint64_t latest_block() const;
  TreeRoot state_root() const;
  TreeRoot state_root_at(std::uint64_t block_no) const;
  std::vector<BatchWrite> block_writes(std::uint64_t block_no) const;

  NodeStore& store() { return *store_; }
  const NodeStore& store() const { return *store_; }
  BlockMap& block_map() { return *block_map_; }
  const LedgerOptions& options() const { return opts_; }

 private:
  struct Head {
    TreeRoot lower;
    TreeRoot upper;
  };

  Ledger(LedgerOptions opts, std::unique_ptr<NodeStore> store, std::unique_ptr<BlockMap> map);

  std::vector<Entry> lower_entries(const WriteBatch& batch, const TreeRoot& lower) const;
  LedgerDigest publish(const DataBlock& block, const Hash& block_hash, const TreeRoot& lower,
                       std::vector<BatchWrite> writes);
  std::uint64_t new_key_count(const WriteBatch& batch) const;

  LedgerOptions opts_;
  std::unique_ptr<NodeStore> store_;
  std::unique_ptr<BlockMap> block_map_;

  std::mutex append_mu_;  // one appender at a time
  mutable std::shared_mutex mu_;
  std::vector<Head> heads_;  // index = block_no; [0] is genesis
  std::vector<std::vector<BatchWrite>> writes_;
  std::unordered_map<ByteString, std::vector<std::uint64_t>> versions_;
};

}  // namespace glassdb

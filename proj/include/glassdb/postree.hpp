#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "glassdb/common.hpp"

namespace glassdb {

/// One key/value record in a leaf. `prev_hash` names the leaf that held the
/// previous version of the key.
struct Entry {
  ByteString key;
  ByteString value;
  std::optional<Hash> prev_hash;

  bool operator==(const Entry&) const = default;
};

/// Index-node item: the first key covered by a child and the child's hash.
struct ChildRef {
  ByteString first_key;
  Hash hash;

  bool operator==(const ChildRef&) const = default;
};

enum class NodeKind : std::uint8_t { leaf = 0, index = 1 };

/// Immutable, content-addressed POS-tree node. A leaf uses `entries`, an
/// index node uses `children`; the other vector stays empty.
struct PosNode {
  NodeKind kind = NodeKind::leaf;
  std::uint8_t level = 0;
  std::vector<Entry> entries;
  std::vector<ChildRef> children;

  bool is_leaf() const { return kind == NodeKind::leaf; }
  std::size_t size() const { return is_leaf() ? entries.size() : children.size(); }
  const ByteString& key_at(std::size_t i) const {
    return is_leaf() ? entries[i].key : children[i].first_key;
  }
  /// Sorted, duplicate-free keys; levels consistent with kind.
  bool well_formed() const;
  /// Index of the child covering `key` (last child whose first key <= key,
  /// or 0 when the key sorts before every child).
  std::size_t route(std::string_view key) const;
  /// Position of `key` among leaf entries.
  std::optional<std::size_t> find(std::string_view key) const;

  ByteString serialize() const;
  static PosNode deserialize(std::string_view bytes);

  bool operator==(const PosNode&) const = default;
};

/// Canonical item encodings; these are also the byte windows the chunker
/// fingerprints.
ByteString serialize_item(const Entry& e);
ByteString serialize_item(const ChildRef& c);

Hash node_hash(const PosNode& node);
/// Digest of the empty tree: BLAKE2b-256 of the empty byte string.
Hash empty_tree_hash();

struct TreeRoot {
  Hash root_hash = empty_tree_hash();
  std::uint64_t entry_count = 0;

  bool empty() const { return entry_count == 0; }
  bool operator==(const TreeRoot&) const = default;
};

struct ChunkConfig {
  std::uint32_t pattern_bits = 5;
  std::uint32_t min_entries = 8;
  std::uint32_t max_entries = 128;

  void validate() const;
};

/// Polynomial fingerprint of one serialized item (mod 2^61-1, base 257,
/// seeded with 1 so leading zero bytes still count).
std::uint64_t chunk_fingerprint(std::string_view item_bytes);

/// Left-to-right boundary detector. State resets at every boundary, so a
/// boundary position depends only on the items since the previous one.
class Chunker {
 public:
  explicit Chunker(const ChunkConfig& cfg) : cfg_(cfg), mask_((1ULL << cfg.pattern_bits) - 1) {}

  /// Feeds one item; returns true when a node boundary follows it.
  bool push(std::string_view item_bytes) {
    ++count_;
    bool cut = count_ >= cfg_.max_entries ||
               (count_ >= cfg_.min_entries && (chunk_fingerprint(item_bytes) & mask_) == 0);
    if (cut) count_ = 0;
    return cut;
  }
  void reset() { count_ = 0; }

 private:
  ChunkConfig cfg_;
  std::uint64_t mask_;
  std::uint32_t count_ = 0;
};

/// Splits a sorted entry list into leaf nodes.
std::vector<PosNode> chunk_entries(std::span<const Entry> entries, const ChunkConfig& cfg);

/// Content-addressed blob store holding tree nodes (and data blocks). Keeps
/// decoded nodes cached. Safe for concurrent readers alongside one writer.
class NodeStore {
 public:
  using WriteHook = std::function<void(const Hash&)>;

  virtual ~NodeStore() = default;

  /// Stores `bytes` under `h`; returns false when already present.
  bool put(const Hash& h, std::string_view bytes);
  std::optional<ByteString> get(const Hash& h) const;
  bool contains(const Hash& h) const;

  Hash put_node(const PosNode& node);
  /// Throws Error(not_found) for unknown hashes.
  std::shared_ptr<const PosNode> node(const Hash& h) const;

  /// Records newly written since construction.
  std::uint64_t write_count() const;
  std::size_t size() const;

  /// Invoked before each new record is written; may throw to simulate a crash.
  void set_write_hook(WriteHook hook);

  virtual void sync() {}

 protected:
  /// Called with the store lock held, after the hook, for every new record.
  virtual void persist(const Hash& h, std::string_view bytes) = 0;
  /// Loads a record without persisting it again (used while replaying files).
  void adopt(const Hash& h, ByteString bytes);

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<Hash, ByteString> blobs_;
  mutable std::unordered_map<Hash, std::shared_ptr<const PosNode>> decoded_;
  std::uint64_t writes_ = 0;
  WriteHook hook_;
};

class MemoryNodeStore final : public NodeStore {
 protected:
  void persist(const Hash&, std::string_view) override {}
};

/// Append-only node file: header "GNOD" u16 version, then records of
/// hash(32) || u32 length || bytes. A record whose content does not hash to
/// its key marks a torn tail and is truncated on open.
class FileNodeStore final : public NodeStore {
 public:
  explicit FileNodeStore(std::string path, bool fsync_on_sync = true);
  ~FileNodeStore() override;
  FileNodeStore(const FileNodeStore&) = delete;
  FileNodeStore& operator=(const FileNodeStore&) = delete;

  void sync() override;
  /// Bytes dropped from a torn tail during open.
  std::uint64_t truncated_bytes() const { return truncated_; }

 protected:
  void persist(const Hash& h, std::string_view bytes) override;

 private:
  std::string path_;
  int fd_ = -1;
  bool fsync_;
  std::uint64_t truncated_ = 0;
};

struct LookupResult {
  std::optional<Entry> entry;
  /// Root-to-leaf nodes visited; for an absent key this is the boundary path.
  std::vector<std::shared_ptr<const PosNode>> path;
  std::vector<Hash> path_hashes;
};

namespace postree {

TreeRoot build(std::span<const Entry> entries, const ChunkConfig& cfg, NodeStore& store);

/// Copy-on-write upsert of sorted `updates`. Nodes outside the touched
/// regions are reused; the old root stays readable.
TreeRoot update(const TreeRoot& root, std::span<const Entry> updates, const ChunkConfig& cfg,
                NodeStore& store);

LookupResult lookup(const Hash& root, std::string_view key, const NodeStore& store);

/// In-order list of all entries (test and tooling helper).
std::vector<Entry> scan(const Hash& root, const NodeStore& store);

/// Number of levels on the root-to-leaf path (0 for the empty tree).
std::size_t height(const Hash& root, const NodeStore& store);

}  // namespace postree
}  // namespace glassdb

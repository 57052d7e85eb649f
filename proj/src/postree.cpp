#include "glassdb/postree.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <map>
#include <system_error>

#include "glassdb/codec.hpp"
#include "glassdb/crypto.hpp"
#include "fileio.hpp"

namespace glassdb {

// ---------------------------------------------------------------------------
// Node encoding

ByteString serialize_item(const Entry& e) {
  Writer w;
  w.str(e.key).str(e.value);
  if (e.prev_hash) {
    w.str(e.prev_hash->view());
  } else {
    w.u32(0);
  }
  return std::move(w).take();
}

ByteString serialize_item(const ChildRef& c) {
  return Writer().str(c.first_key).str(c.hash.view()).bytes();
}

ByteString PosNode::serialize() const {
  Writer w;
  w.u8(level).u8(static_cast<std::uint8_t>(kind)).u32(static_cast<std::uint32_t>(size()));
  if (is_leaf()) {
    for (const auto& e : entries) w.raw(serialize_item(e));
  } else {
    for (const auto& c : children) w.raw(serialize_item(c));
  }
  return std::move(w).take();
}

PosNode PosNode::deserialize(std::string_view bytes) {
  Reader r(bytes);
  PosNode n;
  n.level = r.u8();
  auto kind = r.u8();
  if (kind > 1) fail(ErrorCode::corrupt_data, "unknown node kind");
  n.kind = static_cast<NodeKind>(kind);
  if (n.is_leaf() != (n.level == 0)) fail(ErrorCode::corrupt_data, "node level/kind mismatch");
  auto count = r.u32();
  // Every item carries at least three (leaf) or two (index) length prefixes.
  if (count > r.remaining() / 8) fail(ErrorCode::corrupt_data, "node item count too large");
  if (n.is_leaf()) {
    n.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      e.key = ByteString(r.str());
      e.value = ByteString(r.str());
      auto prev = r.str();
      if (prev.size() == Hash::kSize) {
        e.prev_hash = Hash::from_view(prev);
      } else if (!prev.empty()) {
        fail(ErrorCode::corrupt_data, "bad prev_hash length");
      }
      n.entries.push_back(std::move(e));
    }
  } else {
    n.children.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      ChildRef c;
      c.first_key = ByteString(r.str());
      auto h = r.str();
      if (h.size() != Hash::kSize) fail(ErrorCode::corrupt_data, "bad child hash length");
      c.hash = Hash::from_view(h);
      n.children.push_back(std::move(c));
    }
  }
  r.expect_done();
  return n;
}

bool PosNode::well_formed() const {
  if (is_leaf() != (level == 0)) return false;
  if (is_leaf() ? !children.empty() : !entries.empty()) return false;
  if (size() == 0) return false;
  for (std::size_t i = 1; i < size(); ++i) {
    if (!(key_at(i - 1) < key_at(i))) return false;
  }
  return true;
}

std::size_t PosNode::route(std::string_view key) const {
  // First child whose first key is > key, minus one.
  auto it = std::upper_bound(children.begin(), children.end(), key,
                             [](std::string_view k, const ChildRef& c) { return k < c.first_key; });
  return it == children.begin() ? 0 : static_cast<std::size_t>(it - children.begin() - 1);
}

std::optional<std::size_t> PosNode::find(std::string_view key) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), key,
                             [](const Entry& e, std::string_view k) { return e.key < k; });
  if (it == entries.end() || it->key != key) return std::nullopt;
  return static_cast<std::size_t>(it - entries.begin());
}

Hash node_hash(const PosNode& node) { return crypto::blake2b256(node.serialize()); }

Hash empty_tree_hash() {
  static const Hash h = crypto::blake2b256("");
  return h;
}

// ---------------------------------------------------------------------------
// Chunking

void ChunkConfig::validate() const {
  if (pattern_bits < 1 || pattern_bits > 16) {
    fail(ErrorCode::invalid_input, "pattern_bits must be in [1,16]");
  }
  if (min_entries < 1 || min_entries > max_entries) {
    fail(ErrorCode::invalid_input, "need 1 <= min_entries <= max_entries");
  }
}

std::uint64_t chunk_fingerprint(std::string_view item_bytes) {
  constexpr std::uint64_t kPrime = (1ULL << 61) - 1;
  constexpr std::uint64_t kBase = 257;
  std::uint64_t h = 1;
  for (unsigned char b : item_bytes) {
    auto prod = static_cast<unsigned __int128>(h) * kBase + b;
    // Mersenne reduction.
    std::uint64_t lo = static_cast<std::uint64_t>(prod & kPrime);
    std::uint64_t hi = static_cast<std::uint64_t>(prod >> 61);
    h = lo + hi;
    if (h >= kPrime) h -= kPrime;
  }
  return h;
}

namespace {

const ByteString& item_key(const Entry& e) { return e.key; }
const ByteString& item_key(const ChildRef& c) { return c.first_key; }

template <class Item>
PosNode make_node(std::vector<Item> items, std::uint8_t level) {
  PosNode n;
  n.level = level;
  if constexpr (std::is_same_v<Item, Entry>) {
    n.kind = NodeKind::leaf;
    n.entries = std::move(items);
  } else {
    n.kind = NodeKind::index;
    n.children = std::move(items);
  }
  return n;
}

template <class Item>
void check_sorted(std::span<const Item> items) {
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (!(item_key(items[i - 1]) < item_key(items[i]))) {
      fail(ErrorCode::invalid_input, "entries must be strictly sorted by key");
    }
  }
}

template <class Item>
std::vector<std::vector<Item>> chunk_items(std::span<const Item> items, const ChunkConfig& cfg) {
  std::vector<std::vector<Item>> out;
  Chunker chunker(cfg);
  std::vector<Item> pending;
  for (const auto& item : items) {
    pending.push_back(item);
    if (chunker.push(serialize_item(item))) out.push_back(std::move(pending)), pending.clear();
  }
  if (!pending.empty()) out.push_back(std::move(pending));
  return out;
}

/// Builds index levels above `level_nodes` (which sit at `level`) until a
/// single node remains; returns its descriptor.
ChildRef build_upward(std::vector<ChildRef> level_nodes, std::uint8_t level,
                      const ChunkConfig& cfg, NodeStore& store) {
  while (level_nodes.size() > 1) {
    std::vector<ChildRef> parents;
    for (auto& group : chunk_items<ChildRef>(level_nodes, cfg)) {
      ChildRef desc{group.front().first_key, {}};
      desc.hash = store.put_node(make_node(std::move(group), static_cast<std::uint8_t>(level + 1)));
      parents.push_back(std::move(desc));
    }
    level_nodes = std::move(parents);
    ++level;
  }
  return level_nodes.front();
}

template <class Item>
struct Mutation {
  ByteString key;
  std::optional<Item> item;  // nullopt deletes
};

/// Consecutive old nodes [begin, end) replaced by `fresh`.
struct Run {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<ChildRef> fresh;
};

struct LevelEdit {
  std::vector<Run> runs;
  std::int64_t entry_delta = 0;
};

template <class Item>
std::vector<Item> items_of(const PosNode& n) {
  if constexpr (std::is_same_v<Item, Entry>) {
    return n.entries;
  } else {
    return n.children;
  }
}

/// Re-chunks one level. Each run starts at an old node boundary (chunker
/// state reset) and stops as soon as a new boundary coincides with the end of
/// an old node, after which the old suffix is identical.
template <class Item>
LevelEdit rechunk_level(const std::vector<ChildRef>& descs, const std::vector<Mutation<Item>>& muts,
                        std::uint8_t level, const ChunkConfig& cfg, NodeStore& store) {
  LevelEdit edit;
  std::size_t mi = 0;
  auto route = [&](const ByteString& key) {
    auto it = std::upper_bound(descs.begin(), descs.end(), key,
                               [](const ByteString& k, const ChildRef& c) { return k < c.first_key; });
    return it == descs.begin() ? std::size_t{0} : static_cast<std::size_t>(it - descs.begin() - 1);
  };
  while (mi < muts.size()) {
    Run run;
    run.begin = route(muts[mi].key);
    std::size_t j = run.begin;
    Chunker chunker(cfg);
    std::vector<Item> pending;
    auto emit = [&] {
      ChildRef desc{item_key(pending.front()), {}};
      desc.hash = store.put_node(make_node(std::move(pending), level));
      pending.clear();
      run.fresh.push_back(std::move(desc));
    };
    while (true) {
      auto old_items = items_of<Item>(*store.node(descs[j].hash));
      const bool last = j + 1 == descs.size();
      std::vector<Item> merged;
      merged.reserve(old_items.size() + 4);
      std::size_t oi = 0;
      while (mi < muts.size() && (last || muts[mi].key < descs[j + 1].first_key)) {
        const auto& m = muts[mi++];
        while (oi < old_items.size() && item_key(old_items[oi]) < m.key) {
          merged.push_back(std::move(old_items[oi++]));
        }
        bool existed = oi < old_items.size() && item_key(old_items[oi]) == m.key;
        if (existed) ++oi;
        if (m.item) {
          merged.push_back(*m.item);
          if (!existed) ++edit.entry_delta;
        } else if (existed) {
          --edit.entry_delta;
        }
      }
      while (oi < old_items.size()) merged.push_back(std::move(old_items[oi++]));

      for (auto& item : merged) {
        ByteString bytes = serialize_item(item);
        pending.push_back(std::move(item));
        if (chunker.push(bytes)) emit();
      }
      ++j;
      if (pending.empty()) break;
      if (j == descs.size()) {
        emit();
        break;
      }
    }
    run.end = j;
    edit.runs.push_back(std::move(run));
  }
  return edit;
}

std::vector<Mutation<ChildRef>> parent_mutations(const std::vector<ChildRef>& descs,
                                                 const LevelEdit& edit) {
  std::map<ByteString, std::optional<ChildRef>> muts;
  std::map<ByteString, Hash> removed;
  for (const auto& run : edit.runs) {
    for (std::size_t i = run.begin; i < run.end; ++i) {
      muts[descs[i].first_key] = std::nullopt;
      removed[descs[i].first_key] = descs[i].hash;
    }
    for (const auto& f : run.fresh) muts[f.first_key] = f;
  }
  std::vector<Mutation<ChildRef>> out;
  for (auto& [key, item] : muts) {
    if (item) {
      auto it = removed.find(key);
      if (it != removed.end() && it->second == item->hash) continue;  // unchanged child
    }
    out.push_back({key, std::move(item)});
  }
  return out;
}

std::vector<ChildRef> splice(const std::vector<ChildRef>& descs, const LevelEdit& edit) {
  std::vector<ChildRef> out;
  std::size_t next = 0;
  for (const auto& run : edit.runs) {
    out.insert(out.end(), descs.begin() + static_cast<std::ptrdiff_t>(next),
               descs.begin() + static_cast<std::ptrdiff_t>(run.begin));
    out.insert(out.end(), run.fresh.begin(), run.fresh.end());
    next = run.end;
  }
  out.insert(out.end(), descs.begin() + static_cast<std::ptrdiff_t>(next), descs.end());
  return out;
}

}  // namespace

std::vector<PosNode> chunk_entries(std::span<const Entry> entries, const ChunkConfig& cfg) {
  cfg.validate();
  check_sorted(entries);
  std::vector<PosNode> out;
  for (auto& group : chunk_items(entries, cfg)) out.push_back(make_node(std::move(group), 0));
  return out;
}

// ---------------------------------------------------------------------------
// Node stores

bool NodeStore::put(const Hash& h, std::string_view bytes) {
  std::unique_lock lock(mu_);
  if (blobs_.contains(h)) return false;
  if (hook_) hook_(h);
  persist(h, bytes);
  blobs_.emplace(h, ByteString(bytes));
  ++writes_;
  return true;
}

void NodeStore::adopt(const Hash& h, ByteString bytes) {
  std::unique_lock lock(mu_);
  blobs_.emplace(h, std::move(bytes));
}

std::optional<ByteString> NodeStore::get(const Hash& h) const {
  std::shared_lock lock(mu_);
  auto it = blobs_.find(h);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

bool NodeStore::contains(const Hash& h) const {
  std::shared_lock lock(mu_);
  return blobs_.contains(h);
}

Hash NodeStore::put_node(const PosNode& node) {
  auto bytes = node.serialize();
  auto h = crypto::blake2b256(bytes);
  put(h, bytes);
  return h;
}

std::shared_ptr<const PosNode> NodeStore::node(const Hash& h) const {
  {
    std::shared_lock lock(mu_);
    if (auto it = decoded_.find(h); it != decoded_.end()) return it->second;
  }
  std::unique_lock lock(mu_);
  if (auto it = decoded_.find(h); it != decoded_.end()) return it->second;
  auto blob = blobs_.find(h);
  if (blob == blobs_.end()) fail(ErrorCode::not_found, "node " + h.hex() + " not in store");
  auto decoded = std::make_shared<const PosNode>(PosNode::deserialize(blob->second));
  decoded_.emplace(h, decoded);
  return decoded;
}

std::uint64_t NodeStore::write_count() const {
  std::shared_lock lock(mu_);
  return writes_;
}

std::size_t NodeStore::size() const {
  std::shared_lock lock(mu_);
  return blobs_.size();
}

void NodeStore::set_write_hook(WriteHook hook) {
  std::unique_lock lock(mu_);
  hook_ = std::move(hook);
}

namespace {

using fileio::read_all;
using fileio::throw_errno;
using fileio::write_all;

constexpr std::string_view kNodeMagic = "GNOD";
constexpr std::uint16_t kNodeVersion = 1;

}  // namespace

FileNodeStore::FileNodeStore(std::string path, bool fsync_on_sync)
    : path_(std::move(path)), fsync_(fsync_on_sync) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_errno("open " + path_);
  auto data = read_all(fd_, path_);
  const auto header = Writer().raw(kNodeMagic).u16(kNodeVersion).bytes();
  if (data.size() < header.size()) {
    if (::ftruncate(fd_, 0) != 0) throw_errno("truncate " + path_);
    write_all(fd_, header, path_);
    return;
  }
  if (data.compare(0, header.size(), header) != 0) {
    fail(ErrorCode::corrupt_data, path_ + ": bad node-store header");
  }
  std::size_t pos = header.size();
  while (pos < data.size()) {
    if (data.size() - pos < Hash::kSize + 4) break;
    Reader r(std::string_view(data).substr(pos));
    auto h = r.hash();
    auto len = r.u32();
    if (r.remaining() < len) break;
    auto body = r.raw(len);
    if (crypto::blake2b256(body) != h) break;
    adopt(h, ByteString(body));
    pos += Hash::kSize + 4 + len;
  }
  if (pos < data.size()) {
    truncated_ = data.size() - pos;
    if (::ftruncate(fd_, static_cast<off_t>(pos)) != 0) throw_errno("truncate " + path_);
  }
  if (::lseek(fd_, 0, SEEK_END) < 0) throw_errno("seek " + path_);
}

FileNodeStore::~FileNodeStore() {
  if (fd_ >= 0) ::close(fd_);
}

void FileNodeStore::persist(const Hash& h, std::string_view bytes) {
  Writer w;
  w.hash(h).str(bytes);
  write_all(fd_, w.bytes(), path_);
}

void FileNodeStore::sync() {
  if (fsync_ && ::fdatasync(fd_) != 0) throw_errno("fdatasync " + path_);
}

// ---------------------------------------------------------------------------
// Tree operations

namespace postree {

TreeRoot build(std::span<const Entry> entries, const ChunkConfig& cfg, NodeStore& store) {
  cfg.validate();
  check_sorted(entries);
  if (entries.empty()) return TreeRoot{};
  std::vector<ChildRef> leaves;
  for (auto& group : chunk_items(entries, cfg)) {
    ChildRef desc{group.front().key, {}};
    desc.hash = store.put_node(make_node(std::move(group), 0));
    leaves.push_back(std::move(desc));
  }
  auto root = build_upward(std::move(leaves), 0, cfg, store);
  return TreeRoot{root.hash, entries.size()};
}

TreeRoot update(const TreeRoot& root, std::span<const Entry> updates, const ChunkConfig& cfg,
                NodeStore& store) {
  cfg.validate();
  check_sorted(updates);
  if (updates.empty()) return root;
  if (root.empty()) return build(updates, cfg, store);
  if (!store.contains(root.root_hash)) {
    fail(ErrorCode::not_found, "unknown root " + root.root_hash.hex());
  }

  // Descriptors of every node, per level, read from the index levels.
  auto top = store.node(root.root_hash);
  std::vector<std::vector<ChildRef>> levels(top->level + 1u);
  levels[top->level] = {ChildRef{top->key_at(0), root.root_hash}};
  for (int l = top->level; l >= 1; --l) {
    auto& below = levels[static_cast<std::size_t>(l - 1)];
    for (const auto& desc : levels[static_cast<std::size_t>(l)]) {
      std::shared_ptr<const PosNode> n;
      try {
        n = store.node(desc.hash);
      } catch (const Error&) {
        fail(ErrorCode::corrupt_tree, "missing node " + desc.hash.hex());
      }
      below.insert(below.end(), n->children.begin(), n->children.end());
    }
  }

  std::vector<Mutation<Entry>> leaf_muts;
  leaf_muts.reserve(updates.size());
  for (const auto& u : updates) leaf_muts.push_back({u.key, u});

  std::int64_t delta = 0;
  std::vector<Mutation<ChildRef>> muts;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& descs = levels[l];
    auto lvl = static_cast<std::uint8_t>(l);
    LevelEdit edit = l == 0 ? rechunk_level<Entry>(descs, leaf_muts, lvl, cfg, store)
                            : rechunk_level<ChildRef>(descs, muts, lvl, cfg, store);
    if (l == 0) delta = edit.entry_delta;
    const auto count = static_cast<std::uint64_t>(static_cast<std::int64_t>(root.entry_count) + delta);
    std::size_t removed = 0, added = 0;
    for (const auto& run : edit.runs) {
      removed += run.end - run.begin;
      added += run.fresh.size();
    }
    const std::size_t total = descs.size() - removed + added;
    if (total == 0) return TreeRoot{};
    if (total == 1 || l + 1 == levels.size()) {
      auto full = splice(descs, edit);
      auto top_desc = build_upward(std::move(full), lvl, cfg, store);
      return TreeRoot{top_desc.hash, count};
    }
    muts = parent_mutations(descs, edit);
    if (muts.empty()) return TreeRoot{root.root_hash, count};
  }
  return root;  // unreachable: the loop always returns at the top level
}

LookupResult lookup(const Hash& root, std::string_view key, const NodeStore& store) {
  LookupResult out;
  if (root == empty_tree_hash()) return out;
  if (!store.contains(root)) fail(ErrorCode::not_found, "unknown root " + root.hex());
  Hash cur = root;
  while (true) {
    std::shared_ptr<const PosNode> n;
    try {
      n = store.node(cur);
    } catch (const Error&) {
      fail(ErrorCode::corrupt_tree, "missing node " + cur.hex());
    }
    out.path.push_back(n);
    out.path_hashes.push_back(cur);
    if (n->is_leaf()) {
      if (auto pos = n->find(key)) out.entry = n->entries[*pos];
      return out;
    }
    cur = n->children[n->route(key)].hash;
  }
}

std::vector<Entry> scan(const Hash& root, const NodeStore& store) {
  std::vector<Entry> out;
  if (root == empty_tree_hash()) return out;
  std::vector<Hash> stack{root};
  while (!stack.empty()) {
    auto n = store.node(stack.back());
    stack.pop_back();
    if (n->is_leaf()) {
      out.insert(out.end(), n->entries.begin(), n->entries.end());
    } else {
      for (auto it = n->children.rbegin(); it != n->children.rend(); ++it) stack.push_back(it->hash);
    }
  }
  return out;
}

std::size_t height(const Hash& root, const NodeStore& store) {
  if (root == empty_tree_hash()) return 0;
  return static_cast<std::size_t>(store.node(root)->level) + 1;
}

}  // namespace postree
}  // namespace glassdb

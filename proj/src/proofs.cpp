#include "glassdb/proofs.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "glassdb/codec.hpp"
#include "glassdb/crypto.hpp"

namespace glassdb {

namespace {

constexpr std::string_view kBundleMagic = "GPRF";
constexpr std::uint16_t kBundleVersion = 1;
constexpr std::uint8_t kRoleUpper = 1;
constexpr std::uint8_t kRoleLower = 2;

/// Hash-addressed set of untrusted nodes; records which ones a walk used.
class NodePool {
 public:
  bool add(const PosNode& node) {
    if (!node.well_formed()) return false;
    return nodes_.emplace(node_hash(node), &node).second;
  }
  const PosNode* take(const Hash& h) {
    auto it = nodes_.find(h);
    if (it == nodes_.end()) return nullptr;
    used_.insert(h);
    return it->second;
  }
  bool all_used() const { return used_.size() == nodes_.size(); }

 private:
  std::unordered_map<Hash, const PosNode*> nodes_;
  std::unordered_set<Hash> used_;
};

struct Walk {
  const Entry* entry = nullptr;
  std::vector<const PosNode*> nodes;  // root first
  std::vector<std::size_t> routes;    // child index taken at each index node
  bool rightmost = true;
};

/// Root-to-leaf search for `key` through pool nodes. Fails unless every
/// hop is present, levels descend by one, each child starts with the key
/// its parent recorded, and the leaf holds the key.
std::optional<Walk> walk(NodePool& pool, const Hash& root, std::string_view key) {
  Walk w;
  Hash h = root;
  std::optional<std::uint8_t> level;
  const ByteString* first_key = nullptr;
  while (true) {
    const PosNode* n = pool.take(h);
    if (!n) return std::nullopt;
    if (level && n->level != *level) return std::nullopt;
    if (first_key && n->key_at(0) != *first_key) return std::nullopt;
    w.nodes.push_back(n);
    if (n->is_leaf()) {
      auto idx = n->find(key);
      if (!idx) return std::nullopt;
      w.rightmost = w.rightmost && *idx + 1 == n->size();
      w.entry = &n->entries[*idx];
      return w;
    }
    auto i = n->route(key);
    w.rightmost = w.rightmost && i + 1 == n->size();
    w.routes.push_back(i);
    h = n->children[i].hash;
    level = static_cast<std::uint8_t>(n->level - 1);
    first_key = &n->children[i].first_key;
  }
}

bool sorted_unique(const std::vector<KeyValue>& entries) {
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (!(entries[i - 1].key < entries[i].key)) return false;
  }
  return true;
}

bool check_inclusion(const InclusionProof& p, const LedgerDigest& digest, bool current) {
  if (p.block_no == 0 || p.block_no > digest.block_no) return false;
  if (current && p.block_no != digest.block_no) return false;
  if (p.data_block.block_no != p.block_no) return false;
  if (p.entries.empty() || !sorted_unique(p.entries)) return false;

  NodePool upper;
  for (const auto& n : p.upper_path) {
    if (!upper.add(n)) return false;
  }
  auto up = walk(upper, digest.digest, be64_key(p.block_no));
  if (!up || !upper.all_used() || up->nodes.size() != p.upper_path.size()) return false;
  for (std::size_t i = 0; i < up->nodes.size(); ++i) {
    if (up->nodes[i] != &p.upper_path[i]) return false;
  }
  if (current && !up->rightmost) return false;
  if (up->entry->prev_hash || up->entry->value != p.data_block.hash().view()) return false;

  NodePool lower;
  for (const auto& n : p.lower_nodes) {
    if (!lower.add(n)) return false;
  }
  for (const auto& kv : p.entries) {
    auto found = walk(lower, p.data_block.state_root, kv.key);
    if (!found || found->entry->value != kv.value) return false;
  }
  return lower.all_used();
}

bool same_entries(const InclusionProof& p, std::span<const KeyValue> expected) {
  std::vector<KeyValue> want(expected.begin(), expected.end());
  std::sort(want.begin(), want.end());
  return want == p.entries;
}

std::vector<PosNode> copy_path(const std::vector<std::shared_ptr<const PosNode>>& path) {
  std::vector<PosNode> out;
  out.reserve(path.size());
  for (const auto& n : path) out.push_back(*n);
  return out;
}

}  // namespace

namespace proofs {

InclusionProof prove_inclusion(const Ledger& ledger, const LedgerDigest& at, std::uint64_t block_no,
                               std::span<const ByteString> keys) {
  if (!ledger.knows(at)) fail(ErrorCode::not_found, "unknown digest");
  if (block_no == 0 || block_no > at.block_no) {
    fail(ErrorCode::out_of_range, "block " + std::to_string(block_no) + " beyond digest");
  }
  if (keys.empty()) fail(ErrorCode::invalid_input, "no keys to prove");
  auto blk = ledger.get_block(block_no, at);
  InclusionProof p;
  p.block_no = block_no;
  p.upper_path = copy_path(blk.upper_path);
  p.data_block = blk.block;

  std::vector<ByteString> sorted(keys.begin(), keys.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::unordered_set<Hash> seen;
  for (const auto& key : sorted) {
    auto found = postree::lookup(blk.block.state_root, key, ledger.store());
    if (!found.entry) {
      fail(ErrorCode::not_found, "key absent at block " + std::to_string(block_no));
    }
    for (std::size_t i = 0; i < found.path.size(); ++i) {
      if (seen.insert(found.path_hashes[i]).second) p.lower_nodes.push_back(*found.path[i]);
    }
    p.entries.push_back(KeyValue{key, found.entry->value});
  }
  return p;
}

InclusionProof prove_current(const Ledger& ledger, const LedgerDigest& at,
                             std::span<const ByteString> keys) {
  return prove_inclusion(ledger, at, at.block_no, keys);
}

AppendOnlyProof prove_append(const Ledger& ledger, const LedgerDigest& old_digest,
                             const LedgerDigest& new_digest) {
  if (!ledger.knows(old_digest) || !ledger.knows(new_digest)) {
    fail(ErrorCode::not_found, "unknown digest");
  }
  if (old_digest.block_no > new_digest.block_no) {
    fail(ErrorCode::invalid_input, "old digest is newer than new digest");
  }
  AppendOnlyProof p{old_digest, new_digest, {}};
  if (old_digest.block_no == 0 || old_digest == new_digest) return p;
  std::unordered_set<Hash> seen;
  for (auto target : {new_digest.block_no, old_digest.block_no}) {
    auto found = postree::lookup(new_digest.digest, be64_key(target), ledger.store());
    if (!found.entry) fail(ErrorCode::corrupt_tree, "upper tree lacks block " + std::to_string(target));
    for (std::size_t i = 0; i < found.path.size(); ++i) {
      if (seen.insert(found.path_hashes[i]).second) p.nodes.push_back(*found.path[i]);
    }
  }
  return p;
}

bool verify_inclusion(const InclusionProof& proof, const LedgerDigest& digest) {
  try {
    return check_inclusion(proof, digest, false);
  } catch (const Error&) {
    return false;
  }
}

bool verify_inclusion(const InclusionProof& proof, const LedgerDigest& digest,
                      std::span<const KeyValue> expected) {
  return same_entries(proof, expected) && verify_inclusion(proof, digest);
}

bool verify_current(const InclusionProof& proof, const LedgerDigest& digest) {
  try {
    return check_inclusion(proof, digest, true);
  } catch (const Error&) {
    return false;
  }
}

bool verify_current(const InclusionProof& proof, const LedgerDigest& digest,
                    std::span<const KeyValue> expected) {
  return same_entries(proof, expected) && verify_current(proof, digest);
}

bool verify_append(const AppendOnlyProof& proof, const LedgerDigest& old_digest,
                   const LedgerDigest& new_digest) {
  if (proof.old_digest != old_digest || proof.new_digest != new_digest) return false;
  if (old_digest.block_no > new_digest.block_no) return false;
  if (old_digest.block_no == new_digest.block_no) {
    return old_digest == new_digest && proof.nodes.empty();
  }
  if (old_digest.block_no == 0) {
    return old_digest.digest == empty_tree_hash() && proof.nodes.empty();
  }
  try {
    NodePool pool;
    for (const auto& n : proof.nodes) {
      if (!pool.add(n)) return false;
    }
    auto last = walk(pool, new_digest.digest, be64_key(new_digest.block_no));
    if (!last || !last->rightmost) return false;
    auto frontier = walk(pool, new_digest.digest, be64_key(old_digest.block_no));
    if (!frontier || !pool.all_used()) return false;

    // Rebuild the old tree's right edge: every node on the path to the old
    // last block, cut just after that block. Chunk boundaries depend only on
    // earlier items, so the cut nodes are exactly the old tree's last nodes;
    // the old root is the lowest of them that is leftmost on its level.
    const auto& nodes = frontier->nodes;
    std::size_t i = nodes.size() - 1;
    PosNode cut = *nodes[i];
    cut.entries.resize(static_cast<std::size_t>(frontier->entry - nodes[i]->entries.data()) + 1);
    Hash h = node_hash(cut);
    auto leftmost = [&](std::size_t depth) {
      return std::all_of(frontier->routes.begin(),
                         frontier->routes.begin() + static_cast<std::ptrdiff_t>(depth),
                         [](std::size_t r) { return r == 0; });
    };
    while (!leftmost(i)) {
      --i;
      PosNode parent = *nodes[i];
      parent.children.resize(frontier->routes[i] + 1);
      parent.children.back().hash = h;
      h = node_hash(parent);
    }
    return h == old_digest.digest;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace proofs

// ---------------------------------------------------------------------------
// Bundle encoding

namespace {

class NodeTable {
 public:
  std::uint32_t index(std::uint8_t role, const PosNode& node) {
    auto h = node_hash(node);
    auto [it, fresh] = ids_.try_emplace({role, h}, static_cast<std::uint32_t>(rows_.size()));
    if (fresh) rows_.push_back({role, node.serialize()});
    return it->second;
  }
  void write(Writer& w) const {
    w.u32(static_cast<std::uint32_t>(rows_.size()));
    for (const auto& [role, bytes] : rows_) w.u8(role).str(bytes);
  }

 private:
  std::map<std::pair<std::uint8_t, Hash>, std::uint32_t> ids_;
  std::vector<std::pair<std::uint8_t, ByteString>> rows_;
};

void write_refs(Writer& w, NodeTable& table, std::uint8_t role, const std::vector<PosNode>& nodes) {
  w.u32(static_cast<std::uint32_t>(nodes.size()));
  for (const auto& n : nodes) w.u32(table.index(role, n));
}

struct DecodedNode {
  std::uint8_t role;
  PosNode node;
  bool used = false;
};

std::vector<PosNode> read_refs(Reader& r, std::vector<DecodedNode>& table, std::uint8_t role) {
  auto n = r.u32();
  if (n > r.remaining() / 4) fail(ErrorCode::corrupt_data, "node reference count too large");
  std::vector<PosNode> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto idx = r.u32();
    if (idx >= table.size() || table[idx].role != role) {
      fail(ErrorCode::corrupt_data, "bad node reference");
    }
    table[idx].used = true;
    out.push_back(table[idx].node);
  }
  return out;
}

}  // namespace

ByteString ProofBundle::encode() const {
  NodeTable table;
  Writer body;
  body.u32(static_cast<std::uint32_t>(inclusion.size()));
  for (const auto& p : inclusion) {
    body.u64(p.block_no);
    write_refs(body, table, kRoleUpper, p.upper_path);
    body.str(p.data_block.serialize());
    write_refs(body, table, kRoleLower, p.lower_nodes);
    body.u32(static_cast<std::uint32_t>(p.entries.size()));
    for (const auto& kv : p.entries) body.str(kv.key).str(kv.value);
  }
  body.u32(static_cast<std::uint32_t>(append.size()));
  for (const auto& p : append) {
    body.hash(p.old_digest.digest).u64(p.old_digest.block_no);
    body.hash(p.new_digest.digest).u64(p.new_digest.block_no);
    write_refs(body, table, kRoleUpper, p.nodes);
  }
  Writer w;
  w.raw(kBundleMagic).u16(kBundleVersion);
  table.write(w);
  w.raw(body.bytes());
  return std::move(w).take();
}

ProofBundle ProofBundle::decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(kBundleMagic.size()) != kBundleMagic) fail(ErrorCode::corrupt_data, "bad proof magic");
  if (r.u16() != kBundleVersion) fail(ErrorCode::corrupt_data, "unsupported proof version");

  auto n_nodes = r.u32();
  if (n_nodes > r.remaining() / 11) fail(ErrorCode::corrupt_data, "node count too large");
  std::vector<DecodedNode> table;
  table.reserve(n_nodes);
  std::set<std::pair<std::uint8_t, Hash>> seen;
  for (std::uint32_t i = 0; i < n_nodes; ++i) {
    auto role = r.u8();
    if (role != kRoleUpper && role != kRoleLower) fail(ErrorCode::corrupt_data, "bad node role");
    auto raw = r.str();
    if (!seen.insert({role, crypto::blake2b256(raw)}).second) {
      fail(ErrorCode::corrupt_data, "duplicate node");
    }
    table.push_back({role, PosNode::deserialize(raw)});
  }

  ProofBundle b;
  auto n_incl = r.u32();
  if (n_incl > r.remaining() / 24) fail(ErrorCode::corrupt_data, "proof count too large");
  for (std::uint32_t i = 0; i < n_incl; ++i) {
    InclusionProof p;
    p.block_no = r.u64();
    p.upper_path = read_refs(r, table, kRoleUpper);
    p.data_block = DataBlock::deserialize(r.str());
    p.lower_nodes = read_refs(r, table, kRoleLower);
    auto n = r.u32();
    if (n > r.remaining() / 8) fail(ErrorCode::corrupt_data, "entry count too large");
    for (std::uint32_t j = 0; j < n; ++j) {
      KeyValue kv;
      kv.key = ByteString(r.str());
      kv.value = ByteString(r.str());
      p.entries.push_back(std::move(kv));
    }
    b.inclusion.push_back(std::move(p));
  }
  auto n_app = r.u32();
  if (n_app > r.remaining() / 84) fail(ErrorCode::corrupt_data, "proof count too large");
  for (std::uint32_t i = 0; i < n_app; ++i) {
    AppendOnlyProof p;
    p.old_digest.digest = r.hash();
    p.old_digest.block_no = r.u64();
    p.new_digest.digest = r.hash();
    p.new_digest.block_no = r.u64();
    p.nodes = read_refs(r, table, kRoleUpper);
    b.append.push_back(std::move(p));
  }
  r.expect_done();
  for (const auto& n : table) {
    if (!n.used) fail(ErrorCode::corrupt_data, "unreferenced node in proof");
  }
  return b;
}

std::size_t ProofBundle::node_count() const {
  std::size_t n = 0;
  for (const auto& p : inclusion) n += p.node_count();
  for (const auto& p : append) n += p.nodes.size();
  return n;
}

}  // namespace glassdb

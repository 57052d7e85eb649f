#include "glassdb/postree.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>

#include "glassdb/crypto.hpp"
#include "test_util.hpp"

namespace glassdb {
namespace {

using testing::random_entries;

// ---------------------------------------------------------------------------
// Independent chunking oracle: serializes entries by hand into one byte
// stream and runs a byte-wise polynomial hash (plain % reduction) that
// restarts at every entry start.

std::string oracle_u32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>(v >> (24 - 8 * i));
  return s;
}

std::vector<std::size_t> oracle_boundaries(const std::vector<Entry>& entries, std::uint32_t q,
                                           std::uint32_t min_entries, std::uint32_t max_entries) {
  std::string stream;
  std::vector<std::size_t> ends;
  for (const auto& e : entries) {
    stream += oracle_u32(static_cast<std::uint32_t>(e.key.size())) + e.key;
    stream += oracle_u32(static_cast<std::uint32_t>(e.value.size())) + e.value;
    stream += e.prev_hash ? oracle_u32(32) + std::string(e.prev_hash->view()) : oracle_u32(0);
    ends.push_back(stream.size());
  }
  const unsigned __int128 p = (static_cast<unsigned __int128>(1) << 61) - 1;
  std::vector<std::size_t> cuts;  // index of the last entry of each node
  std::size_t start = 0, count = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    unsigned __int128 h = 1;
    for (std::size_t b = start; b < ends[i]; ++b) {
      h = (h * 257 + static_cast<unsigned char>(stream[b])) % p;
    }
    start = ends[i];
    ++count;
    bool pattern = (static_cast<std::uint64_t>(h) % (1ULL << q)) == 0;
    if (count >= max_entries || (count >= min_entries && pattern)) {
      cuts.push_back(i);
      count = 0;
    }
  }
  if (count > 0) cuts.push_back(entries.size() - 1);
  return cuts;
}

std::vector<std::size_t> cuts_of(const std::vector<PosNode>& nodes) {
  std::vector<std::size_t> cuts;
  std::size_t pos = 0;
  for (const auto& n : nodes) {
    pos += n.entries.size();
    cuts.push_back(pos - 1);
  }
  return cuts;
}

TEST(ChunkEntries, BelowMinimumIsOneNode) {
  std::vector<Entry> e{{"a", "1", {}}, {"b", "2", {}}, {"c", "3", {}}};
  ChunkConfig cfg{5, 4, 128};
  auto nodes = chunk_entries(e, cfg);
  ASSERT_EQ(nodes.size(), 1u);
  EXPECT_EQ(nodes[0].entries, e);
}

TEST(ChunkEntries, MatchesRollingHashOracle) {
  std::mt19937_64 rng(20240601);
  auto entries = random_entries(rng, 10'000);
  // Give a few entries version pointers so the prev_hash field is covered.
  for (std::size_t i = 0; i < entries.size(); i += 97) {
    entries[i].prev_hash = crypto::blake2b256(entries[i].key);
  }
  ChunkConfig cfg;
  auto nodes = chunk_entries(entries, cfg);
  auto expected = oracle_boundaries(entries, cfg.pattern_bits, cfg.min_entries, cfg.max_entries);
  EXPECT_EQ(cuts_of(nodes), expected);
  // Sanity on the shape: expected node size is 2^5 past the 8-entry floor.
  EXPECT_GT(nodes.size(), 10'000u / 128);
  EXPECT_LT(nodes.size(), 10'000u / 8);
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    EXPECT_GE(nodes[i].entries.size(), cfg.min_entries);
    EXPECT_LE(nodes[i].entries.size(), cfg.max_entries);
  }
}

TEST(ChunkEntries, AppendingPastLastBoundaryKeepsBoundaries) {
  std::mt19937_64 rng(7);
  auto all = random_entries(rng, 3'100);
  std::vector<Entry> prefix(all.begin(), all.end() - 100);
  ChunkConfig cfg;
  auto before = oracle_boundaries(prefix, cfg.pattern_bits, cfg.min_entries, cfg.max_entries);
  auto after = cuts_of(chunk_entries(all, cfg));
  // Every real boundary of the prefix survives; only the trailing partial
  // node may grow.
  ASSERT_GE(after.size(), before.size() - 1);
  for (std::size_t i = 0; i + 1 < before.size(); ++i) EXPECT_EQ(after[i], before[i]);
}

TEST(ChunkEntries, RejectsUnsortedOrDuplicateKeys) {
  std::vector<Entry> unsorted{{"b", "1", {}}, {"a", "2", {}}};
  std::vector<Entry> dup{{"a", "1", {}}, {"a", "2", {}}};
  try {
    chunk_entries(unsorted, ChunkConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_input);
  }
  EXPECT_THROW(chunk_entries(dup, ChunkConfig{}), Error);
}

TEST(ChunkConfig, Validation) {
  EXPECT_THROW((ChunkConfig{0, 8, 128}.validate()), Error);
  EXPECT_THROW((ChunkConfig{17, 8, 128}.validate()), Error);
  EXPECT_THROW((ChunkConfig{5, 0, 128}.validate()), Error);
  EXPECT_THROW((ChunkConfig{5, 9, 8}.validate()), Error);
  EXPECT_NO_THROW((ChunkConfig{16, 1, 1}.validate()));
}

// ---------------------------------------------------------------------------
// node_hash

TEST(NodeHash, FrozenVectors) {
  // Values computed with Python's hashlib.blake2b(digest_size=32).
  PosNode empty_leaf;
  EXPECT_EQ(to_hex(empty_leaf.serialize()), "000000000000");
  EXPECT_EQ(node_hash(empty_leaf).hex(),
            "d24a8e1b3c02966d9333f96ba31248aad7e35f52bb3e5f0b24b10748ce03161f");
  PosNode one;
  one.entries.push_back({"k", "v", std::nullopt});
  EXPECT_EQ(to_hex(one.serialize()), "000000000001000000016b000000017600000000");
  EXPECT_EQ(node_hash(one).hex(),
            "c146c349ca0a9518923d24356f06b2e94cd7a22631e038079c24496855b3871d");
  EXPECT_EQ(empty_tree_hash().hex(),
            "0e5751c026e543b2e8ab2eb06099daa1d1e5df47778f7787faab45cdf12fe3a8");
}

TEST(NodeHash, DeterministicAndSensitive) {
  PosNode a;
  a.entries = {{"k1", "value", std::nullopt}, {"k2", "other", crypto::blake2b256("x")}};
  PosNode b = a;
  EXPECT_EQ(node_hash(a), node_hash(b));
  b.entries[0].value[2] ^= 1;
  EXPECT_NE(node_hash(a), node_hash(b));
  EXPECT_EQ(PosNode::deserialize(a.serialize()), a);
}

TEST(NodeHash, DeserializeRejectsMalformed) {
  PosNode a;
  a.entries = {{"k1", "v", std::nullopt}};
  auto bytes = a.serialize();
  EXPECT_THROW(PosNode::deserialize(bytes + "x"), Error);
  EXPECT_THROW(PosNode::deserialize(bytes.substr(0, bytes.size() - 1)), Error);
  auto bad_kind = bytes;
  bad_kind[1] = 7;
  EXPECT_THROW(PosNode::deserialize(bad_kind), Error);
  auto bad_level = bytes;
  bad_level[0] = 1;  // leaf at level 1
  EXPECT_THROW(PosNode::deserialize(bad_level), Error);
}

// ---------------------------------------------------------------------------
// build / update / lookup

TEST(Build, EmptyAndSingle) {
  MemoryNodeStore store;
  auto empty = postree::build({}, ChunkConfig{}, store);
  EXPECT_EQ(empty.root_hash, empty_tree_hash());
  EXPECT_EQ(empty.entry_count, 0u);
  EXPECT_EQ(store.size(), 0u);

  std::vector<Entry> one{{"k", "v", std::nullopt}};
  auto root = postree::build(one, ChunkConfig{}, store);
  PosNode leaf;
  leaf.entries = one;
  EXPECT_EQ(root.root_hash, node_hash(leaf));
  EXPECT_EQ(root.entry_count, 1u);

  auto found = postree::lookup(root.root_hash, "k", store);
  ASSERT_TRUE(found.entry);
  EXPECT_EQ(found.entry->value, "v");
  EXPECT_EQ(found.path.size(), 1u);
}

TEST(Build, BatchEqualsShuffledIncrementalUpdates) {
  std::mt19937_64 rng(99);
  auto entries = random_entries(rng, 1000);
  MemoryNodeStore store;
  ChunkConfig cfg;
  auto batch = postree::build(entries, cfg, store);

  auto shuffled = entries;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  TreeRoot root;
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<Entry> slice(shuffled.begin() + static_cast<std::ptrdiff_t>(i * 100),
                             shuffled.begin() + static_cast<std::ptrdiff_t>((i + 1) * 100));
    testing::sort_by_key(slice);
    root = postree::update(root, slice, cfg, store);
  }
  EXPECT_EQ(root, batch);
}

TEST(Build, StructuralInvarianceProperty) {
  std::mt19937_64 rng(4242);
  ChunkConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    auto entries = random_entries(rng, 1 + rng() % 600, 5000);
    MemoryNodeStore store;
    auto expected = postree::build(entries, cfg, store);
    auto order = entries;
    std::shuffle(order.begin(), order.end(), rng);
    TreeRoot root;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t n = 1 + rng() % 80;
      std::vector<Entry> slice(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), pos + n)));
      testing::sort_by_key(slice);
      root = postree::update(root, slice, cfg, store);
      pos += n;
    }
    ASSERT_EQ(root, expected) << "trial " << trial;
  }
}

TEST(Update, EmptyUpdateIsIdentity) {
  std::mt19937_64 rng(5);
  MemoryNodeStore store;
  auto root = postree::build(random_entries(rng, 300), ChunkConfig{}, store);
  auto writes = store.write_count();
  EXPECT_EQ(postree::update(root, {}, ChunkConfig{}, store), root);
  EXPECT_EQ(store.write_count(), writes);
}

TEST(Update, MatchesRebuildFromScratch) {
  std::mt19937_64 rng(77);
  ChunkConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    auto base = random_entries(rng, rng() % 201, 400);
    auto ups = random_entries(rng, rng() % 201, 400);
    for (auto& u : ups) u.value = "u" + u.value;
    std::map<std::string, Entry> merged;
    for (auto& e : base) merged[e.key] = e;
    for (auto& u : ups) merged[u.key] = u;
    std::vector<Entry> expected_entries;
    for (auto& [k, e] : merged) expected_entries.push_back(e);

    MemoryNodeStore store;
    auto updated = postree::update(postree::build(base, cfg, store), ups, cfg, store);
    MemoryNodeStore fresh;
    auto rebuilt = postree::build(expected_entries, cfg, fresh);
    ASSERT_EQ(updated, rebuilt) << "trial " << trial;
    ASSERT_EQ(postree::scan(updated.root_hash, store), expected_entries);
  }
}

TEST(Update, SmallChunksDeepTreesMatchRebuild) {
  // Tiny nodes force many levels, exercising multi-level runs.
  std::mt19937_64 rng(31337);
  ChunkConfig cfg{2, 2, 6};
  for (int trial = 0; trial < 60; ++trial) {
    auto base = random_entries(rng, rng() % 500, 2000);
    auto ups = random_entries(rng, 1 + rng() % 40, 2000);
    std::map<std::string, Entry> merged;
    for (auto& e : base) merged[e.key] = e;
    for (auto& u : ups) merged[u.key] = u;
    std::vector<Entry> expected;
    for (auto& [k, e] : merged) expected.push_back(e);
    MemoryNodeStore store;
    auto updated = postree::update(postree::build(base, cfg, store), ups, cfg, store);
    MemoryNodeStore fresh;
    ASSERT_EQ(updated, postree::build(expected, cfg, fresh)) << "trial " << trial;
  }
}

TEST(Update, VersionPointerExampleReusesUntouchedNodes) {
  // A lower tree with K9 = V9^1; updating K9 to V9^2 creates a new leaf b'
  // holding (K9, V9^2, H_b) and a new root path while b and its ancestors
  // stay readable.
  MemoryNodeStore store;
  ChunkConfig cfg;
  std::vector<Entry> entries;
  for (int i = 0; i < 400; ++i) {
    entries.push_back({"K" + std::to_string(i), "V" + std::to_string(i) + "^1", std::nullopt});
  }
  testing::sort_by_key(entries);
  auto lr1 = postree::build(entries, cfg, store);
  auto before = postree::lookup(lr1.root_hash, "K9", store);
  ASSERT_TRUE(before.entry);
  ASSERT_GE(before.path.size(), 2u);
  const Hash h_b = before.path_hashes.back();
  const Hash h_c = before.path_hashes[before.path_hashes.size() - 2];

  std::vector<Entry> upd{{"K9", "V9^2", h_b}};
  auto lr2 = postree::update(lr1, upd, cfg, store);
  EXPECT_NE(lr2.root_hash, lr1.root_hash);
  EXPECT_EQ(lr2.entry_count, lr1.entry_count);

  auto after = postree::lookup(lr2.root_hash, "K9", store);
  ASSERT_TRUE(after.entry);
  EXPECT_EQ(after.entry->value, "V9^2");
  EXPECT_EQ(after.entry->prev_hash, h_b);
  EXPECT_NE(after.path_hashes.back(), h_b);  // b'
  EXPECT_NE(after.path_hashes[after.path_hashes.size() - 2], h_c);  // c'

  // b, c and LR1 remain readable and unchanged.
  EXPECT_EQ(store.node(h_b)->entries[*store.node(h_b)->find("K9")].value, "V9^1");
  EXPECT_TRUE(store.contains(h_c));
  auto old = postree::lookup(lr1.root_hash, "K9", store);
  EXPECT_EQ(old.entry->value, "V9^1");
  // Following prev_hash reaches the previous version.
  auto prev_leaf = store.node(*after.entry->prev_hash);
  EXPECT_EQ(prev_leaf->entries[*prev_leaf->find("K9")].value, "V9^1");
}

TEST(Update, CopyOnWriteBound) {
  std::mt19937_64 rng(8);
  ChunkConfig cfg;
  MemoryNodeStore store;
  auto root = postree::build(random_entries(rng, 20'000), cfg, store);
  const auto h = postree::height(root.root_hash, store);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t k = 1 + rng() % 20;
    auto ups = random_entries(rng, k);
    for (auto& u : ups) u.value = "x";
    auto before = store.write_count();
    root = postree::update(root, ups, cfg, store);
    auto written = store.write_count() - before;
    EXPECT_LE(written, k * h + 2 * h) << "trial " << trial;
  }
}

TEST(Update, UnknownRootIsNotFound) {
  MemoryNodeStore store;
  TreeRoot bogus{crypto::blake2b256("nope"), 5};
  std::vector<Entry> upd{{"a", "b", std::nullopt}};
  try {
    postree::update(bogus, upd, ChunkConfig{}, store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
  }
}

TEST(Lookup, EveryKeyOfA500EntryTree) {
  std::mt19937_64 rng(500);
  auto entries = random_entries(rng, 500);
  MemoryNodeStore store;
  auto root = postree::build(entries, ChunkConfig{}, store);
  for (const auto& e : entries) {
    auto found = postree::lookup(root.root_hash, e.key, store);
    ASSERT_TRUE(found.entry) << e.key;
    EXPECT_EQ(found.entry->value, e.value);
    EXPECT_EQ(found.path.size(), postree::height(root.root_hash, store));
  }
  auto absent = postree::lookup(root.root_hash, "zzz-not-there", store);
  EXPECT_FALSE(absent.entry);
  EXPECT_EQ(absent.path.size(), postree::height(root.root_hash, store));
}

TEST(Lookup, MissingChildIsCorruptTree) {
  MemoryNodeStore store;
  PosNode index;
  index.kind = NodeKind::index;
  index.level = 1;
  index.children = {{"a", crypto::blake2b256("ghost")}};
  auto h = store.put_node(index);
  try {
    postree::lookup(h, "a", store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corrupt_tree);
  }
}

// ---------------------------------------------------------------------------
// File store

TEST(FileNodeStore, ReopenAndTruncateTornTail) {
  testing::TempDir dir("nodes");
  std::mt19937_64 rng(1);
  auto entries = random_entries(rng, 2000);
  TreeRoot root;
  std::size_t size = 0;
  {
    FileNodeStore store(dir.file("nodes.dat"));
    root = postree::build(entries, ChunkConfig{}, store);
    store.sync();
    size = store.size();
  }
  {
    std::ofstream out(dir.file("nodes.dat"), std::ios::app | std::ios::binary);
    out << std::string(40, 'z');  // torn record
  }
  FileNodeStore reopened(dir.file("nodes.dat"));
  EXPECT_EQ(reopened.size(), size);
  EXPECT_EQ(reopened.truncated_bytes(), 40u);
  EXPECT_EQ(postree::scan(root.root_hash, reopened), entries);
  EXPECT_FALSE(reopened.put(root.root_hash, *reopened.get(root.root_hash)));
}

TEST(NodeStore, WriteHookCanAbortAWrite) {
  MemoryNodeStore store;
  int calls = 0;
  store.set_write_hook([&](const Hash&) {
    if (++calls == 3) throw Error(ErrorCode::injected_crash, "crash");
  });
  std::mt19937_64 rng(2);
  EXPECT_THROW(postree::build(random_entries(rng, 500), ChunkConfig{}, store), Error);
  EXPECT_EQ(store.write_count(), 2u);
}

}  // namespace
}  // namespace glassdb

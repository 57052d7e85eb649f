#include "glassdb/ledger.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>

#include "glassdb/crypto.hpp"
#include "test_util.hpp"

namespace glassdb {
namespace {

TxnId tid(std::uint64_t n) { return TxnId{1, 1000 + n, n}; }

WriteBatch batch_of(std::initializer_list<std::pair<std::string, std::string>> kv,
                    std::uint64_t t = 1) {
  WriteBatch b;
  for (auto& [k, v] : kv) b.writes.push_back({k, v, tid(t)});
  return b;
}

/// Random batches over a small key space plus the per-block snapshot
/// oracle (state after each block, computed with a plain std::map).
struct History {
  std::vector<PlannedBlock> plan;
  std::vector<std::map<std::string, std::pair<std::string, std::uint64_t>>> snapshots{{}};
};

History random_history(std::mt19937_64& rng, std::size_t blocks, std::size_t keys) {
  History h;
  for (std::size_t b = 1; b <= blocks; ++b) {
    auto snap = h.snapshots.back();
    PlannedBlock p;
    p.block_no = b;
    p.timestamp_ms = 10'000 + b * 100;
    std::map<std::string, std::string> writes;
    std::size_t n = 1 + rng() % 12;
    while (writes.size() < n) writes[testing::key_of(rng() % keys, 4)] = "b" + std::to_string(b) + "-" + std::to_string(rng() % 1000);
    std::uint64_t t = 0;
    for (auto& [k, v] : writes) {
      p.batch.writes.push_back({k, v, tid(b * 100 + t++ % 3)});
      snap[k] = {v, b};
    }
    h.plan.push_back(p);
    h.snapshots.push_back(std::move(snap));
  }
  return h;
}

void apply(Ledger& ledger, const History& h) {
  for (const auto& p : h.plan) ledger.append_block(p.batch, p.timestamp_ms);
}

TEST(DataBlock, SerializationRoundTrip) {
  DataBlock b;
  b.block_no = 7;
  b.timestamp_ms = 123456;
  b.txn_ids = {tid(1), tid(2)};
  b.state_root = crypto::blake2b256("root");
  auto bytes = b.serialize();
  EXPECT_EQ(bytes.substr(0, 4), "GBLK");
  EXPECT_EQ(bytes.size(), 4 + 8 + 8 + 4 + 2 * 24 + 32u);
  EXPECT_EQ(DataBlock::deserialize(bytes), b);
  EXPECT_THROW(DataBlock::deserialize(bytes + "x"), Error);
  EXPECT_THROW(DataBlock::deserialize(bytes.substr(1)), Error);
}

TEST(Ledger, GenesisDigest) {
  Ledger ledger;
  EXPECT_EQ(ledger.digest(), LedgerDigest::genesis());
  EXPECT_EQ(ledger.digest().digest, empty_tree_hash());
  EXPECT_EQ(ledger.latest_block(), 0u);
}

TEST(Ledger, FirstBatchCreatesBlockOne) {
  Ledger ledger;
  auto [block, digest] = ledger.append_block(batch_of({{"a", "1"}, {"b", "2"}}), 5000);
  EXPECT_EQ(block.block_no, 1u);
  EXPECT_EQ(block.timestamp_ms, 5000u);
  EXPECT_EQ(block.txn_ids, std::vector<TxnId>{tid(1)});
  EXPECT_EQ(digest.block_no, 1u);
  EXPECT_NE(digest.digest, empty_tree_hash());
  EXPECT_EQ(ledger.digest(), digest);
  EXPECT_EQ(block.state_root, ledger.state_root().root_hash);
  EXPECT_EQ(ledger.state_root().entry_count, 2u);
}

TEST(Ledger, RejectsEmptyAndDuplicateBatches) {
  Ledger ledger;
  EXPECT_THROW(ledger.append_block(WriteBatch{}, 1), Error);
  try {
    ledger.append_block(batch_of({{"a", "1"}, {"a", "2"}}), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_input);
  }
  EXPECT_EQ(ledger.latest_block(), 0u);
}

TEST(Ledger, FiftySingleKeyBatchesMatchMapOracle) {
  std::mt19937_64 rng(50);
  Ledger ledger;
  std::map<std::string, std::string> oracle;
  for (int i = 1; i <= 50; ++i) {
    auto key = testing::key_of(rng() % 20, 3);
    auto value = "v" + std::to_string(i);
    oracle[key] = value;
    ledger.append_block(batch_of({{key, value}}, static_cast<std::uint64_t>(i)), 100 + i);
  }
  EXPECT_EQ(ledger.latest_block(), 50u);
  auto state = postree::scan(ledger.state_root().root_hash, ledger.store());
  ASSERT_EQ(state.size(), oracle.size());
  auto it = oracle.begin();
  for (const auto& e : state) {
    EXPECT_EQ(e.key, it->first);
    EXPECT_EQ(e.value, it->second);
    ++it;
  }
}

TEST(Ledger, VersionedKeyAcrossTwoBlocks) {
  // K9 = V9^1 at block B-1, then a batch {K9 <- V9^2} forms block B.
  Ledger ledger;
  WriteBatch first;
  for (int i = 1; i <= 20; ++i) {
    first.writes.push_back({"K" + std::to_string(i), "V" + std::to_string(i) + "^1", tid(1)});
  }
  auto [blk1, d1] = ledger.append_block(first, 1000);
  auto [blk2, d2] = ledger.append_block(batch_of({{"K9", "V9^2"}}, 2), 2000);
  EXPECT_EQ(blk2.block_no, blk1.block_no + 1);
  EXPECT_EQ(blk2.timestamp_ms, 2000u);
  EXPECT_NE(d1, d2);

  auto old = ledger.get_versioned("K9", AtBlock{blk1.block_no});
  auto cur = ledger.get_versioned("K9", AtBlock{blk2.block_no});
  ASSERT_TRUE(old && cur);
  EXPECT_EQ(old->value, "V9^1");
  EXPECT_EQ(old->version, 1u);
  EXPECT_EQ(cur->value, "V9^2");
  EXPECT_EQ(cur->version, 2u);
  EXPECT_EQ(ledger.get_versioned("K9", AtTimestamp{1500})->value, "V9^1");
  EXPECT_EQ(ledger.get_versioned("K9", AtTimestamp{2000})->value, "V9^2");
  EXPECT_FALSE(ledger.get_versioned("K9", AtTimestamp{999}));
  EXPECT_EQ(ledger.get_versioned("K3", AtBlock{2})->version, 1u);

  auto got = ledger.get_block(blk1.block_no);
  EXPECT_EQ(got.block, blk1);
  EXPECT_EQ(got.block_hash, blk1.hash());
  // The old block is reachable from the old digest as well.
  EXPECT_EQ(ledger.get_block(1, d1).block, blk1);
  EXPECT_THROW(ledger.get_block(2, d1), Error);
}

TEST(Ledger, GetBlockRoundTripsAndRange) {
  std::mt19937_64 rng(3);
  auto h = random_history(rng, 50, 60);
  Ledger ledger;
  std::vector<DataBlock> recorded;
  for (const auto& p : h.plan) recorded.push_back(ledger.append_block(p.batch, p.timestamp_ms).first);
  for (std::uint64_t b = 1; b <= 50; ++b) {
    auto got = ledger.get_block(b);
    EXPECT_EQ(got.block, recorded[b - 1]);
    EXPECT_FALSE(got.upper_path.empty());
    EXPECT_EQ(ledger.block_writes(b), h.plan[b - 1].batch.writes);
  }
  EXPECT_EQ(ledger.get_block(50).block.state_root, ledger.state_root().root_hash);
  for (std::uint64_t bad : {0ull, 51ull}) {
    try {
      ledger.get_block(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::not_found);
    }
  }
}

TEST(Ledger, SnapshotsMatchPerBlockOracle) {
  std::mt19937_64 rng(30);
  auto h = random_history(rng, 30, 40);
  Ledger ledger;
  apply(ledger, h);
  for (std::uint64_t b = 0; b <= 30; ++b) {
    for (std::size_t k = 0; k < 40; ++k) {
      auto key = testing::key_of(k, 4);
      auto got = b == 0 ? std::optional<VersionedValue>{} : ledger.get_versioned(key, AtBlock{b});
      auto it = h.snapshots[b].find(key);
      if (it == h.snapshots[b].end()) {
        EXPECT_FALSE(got) << key << "@" << b;
      } else {
        ASSERT_TRUE(got) << key << "@" << b;
        EXPECT_EQ(got->value, it->second.first);
        EXPECT_EQ(got->version, it->second.second);
      }
    }
    auto state = postree::scan(ledger.state_root_at(b).root_hash, ledger.store());
    EXPECT_EQ(state.size(), h.snapshots[b].size());
  }
  // Timestamp selection resolves to the greatest block at or before it.
  for (int i = 0; i < 200; ++i) {
    std::uint64_t ts = 10'000 + rng() % 3200;
    std::uint64_t b = ts < 10'100 ? 0 : std::min<std::uint64_t>(30, (ts - 10'000) / 100);
    auto key = testing::key_of(rng() % 40, 4);
    auto got = ledger.get_versioned(key, AtTimestamp{ts});
    auto it = h.snapshots[b].find(key);
    EXPECT_EQ(got.has_value(), it != h.snapshots[b].end());
    if (got && it != h.snapshots[b].end()) {
      EXPECT_EQ(got->value, it->second.first);
    }
  }
  EXPECT_THROW(ledger.get_versioned("x", AtBlock{31}), Error);
}

TEST(Ledger, VersionChainFollowsPrevHash) {
  std::mt19937_64 rng(11);
  auto h = random_history(rng, 40, 15);
  Ledger ledger;
  apply(ledger, h);
  for (std::size_t k = 0; k < 15; ++k) {
    auto key = testing::key_of(k, 4);
    std::vector<std::string> expected;  // newest first
    for (std::size_t b = h.plan.size(); b >= 1; --b) {
      for (const auto& w : h.plan[b - 1].batch.writes) {
        if (w.key == key) expected.push_back(w.value);
      }
    }
    std::vector<std::string> chain;
    auto found = postree::lookup(ledger.state_root().root_hash, key, ledger.store());
    std::optional<Entry> e = found.entry;
    while (e) {
      chain.push_back(e->value);
      if (!e->prev_hash) break;
      auto leaf = ledger.store().node(*e->prev_hash);
      auto idx = leaf->find(key);
      ASSERT_TRUE(idx);
      e = leaf->entries[*idx];
    }
    EXPECT_EQ(chain, expected) << key;
  }
}

TEST(Ledger, UpperTreeIsAFunctionOfPreviousDigestAndBlock) {
  std::mt19937_64 rng(12);
  auto h = random_history(rng, 25, 30);
  Ledger ledger;
  apply(ledger, h);
  MemoryNodeStore scratch;
  TreeRoot upper;
  for (std::uint64_t b = 1; b <= 25; ++b) {
    auto blk = ledger.get_block(b);
    Entry leaf{be64_key(b), ByteString(blk.block.hash().view()), std::nullopt};
    upper = postree::update(upper, std::span<const Entry>(&leaf, 1), ledger.options().upper_chunking,
                            scratch);
    EXPECT_EQ(upper.root_hash, ledger.digest_at(b).digest);
  }
}

TEST(Ledger, ReplayAcceptsHonestBlocksAndRejectsTampering) {
  std::mt19937_64 rng(21);
  auto h = random_history(rng, 20, 30);
  Ledger server;
  apply(server, h);
  Ledger replica;
  for (std::uint64_t b = 1; b <= 20; ++b) {
    auto d = replica.replay_block(server.get_block(b).block, server.block_writes(b));
    EXPECT_EQ(d, server.digest_at(b));
  }

  Ledger bad;
  auto blk = server.get_block(1).block;
  auto writes = server.block_writes(1);
  writes[0].value += "!";
  try {
    bad.replay_block(blk, writes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corrupt_data);
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
  }
  EXPECT_EQ(bad.latest_block(), 0u);
  auto skip = server.get_block(2).block;
  EXPECT_THROW(bad.replay_block(skip, server.block_writes(2)), Error);
}

// ---------------------------------------------------------------------------
// Persistence and recovery

TEST(LedgerFiles, ReopenAndRecoverReusesPersistedBlocks) {
  testing::TempDir dir("ledger");
  std::mt19937_64 rng(40);
  auto h = random_history(rng, 15, 50);
  LedgerDigest control;
  {
    auto ledger = Ledger::open(dir.str());
    apply(*ledger, h);
    control = ledger->digest();
  }
  auto ledger = Ledger::open(dir.str());
  EXPECT_EQ(ledger->block_map().size(), 15u);
  auto writes_before = ledger->store().write_count();
  auto report = ledger->recover(h.plan);
  EXPECT_EQ(report.reused_blocks, 15u);
  EXPECT_EQ(report.recreated_blocks, 0u);
  EXPECT_EQ(report.digest, control);
  EXPECT_EQ(ledger->store().write_count(), writes_before);  // upper nodes already present
  EXPECT_EQ(ledger->get_latest(h.plan.back().batch.writes[0].key)->value,
            h.plan.back().batch.writes[0].value);
}

TEST(LedgerFiles, EmptyPlanLeavesGenesis) {
  testing::TempDir dir("ledger-empty");
  auto ledger = Ledger::open(dir.str());
  auto report = ledger->recover({});
  EXPECT_EQ(report.digest, LedgerDigest::genesis());
}

TEST(LedgerFiles, CrashBeforeBlockMapReusesLowerNodes) {
  testing::TempDir dir("ledger-crash");
  std::mt19937_64 rng(41);
  auto h = random_history(rng, 8, 200);
  Ledger control;
  apply(control, h);

  std::size_t crash_block = 6;
  std::uint64_t nodes_after_lower = 0;
  {
    auto ledger = Ledger::open(dir.str());
    for (std::size_t b = 1; b < crash_block; ++b) {
      ledger->append_block(h.plan[b - 1].batch, h.plan[b - 1].timestamp_ms);
    }
    ledger->block_map().set_write_hook(
        [](std::string_view) { throw Error(ErrorCode::injected_crash, "crash"); });
    EXPECT_THROW(ledger->append_block(h.plan[crash_block - 1].batch, h.plan[crash_block - 1].timestamp_ms),
                 Error);
    nodes_after_lower = ledger->store().size();
  }
  auto ledger = Ledger::open(dir.str());
  EXPECT_EQ(ledger->store().size(), nodes_after_lower);
  EXPECT_EQ(ledger->block_map().size(), crash_block - 1);
  auto report = ledger->recover(h.plan);
  EXPECT_EQ(report.reused_blocks, crash_block - 1);
  EXPECT_EQ(report.recreated_blocks, h.plan.size() - crash_block + 1);
  EXPECT_EQ(report.digest, control.digest());

  // Only upper-tree nodes were new for the crashed block; its lower-tree
  // nodes and data block were found by content address. Later blocks write
  // fresh nodes of both kinds, so count the crashed block alone.
  testing::TempDir dir2("ledger-crash2");
  {
    auto again = Ledger::open(dir2.str());
    for (std::size_t b = 1; b < crash_block; ++b) {
      again->append_block(h.plan[b - 1].batch, h.plan[b - 1].timestamp_ms);
    }
    again->block_map().set_write_hook(
        [](std::string_view) { throw Error(ErrorCode::injected_crash, "crash"); });
    EXPECT_THROW(again->append_block(h.plan[crash_block - 1].batch, h.plan[crash_block - 1].timestamp_ms),
                 Error);
  }
  auto again = Ledger::open(dir2.str());
  auto w0 = again->store().write_count();
  std::vector<PlannedBlock> upto(h.plan.begin(), h.plan.begin() + static_cast<std::ptrdiff_t>(crash_block));
  again->recover(upto);
  auto upper_height = postree::height(again->digest().digest, again->store());
  EXPECT_LE(again->store().write_count() - w0, upper_height);
  EXPECT_EQ(again->digest(), control.digest_at(crash_block));
}

TEST(LedgerFiles, CrashAfterBlockMapRecoversSameDigest) {
  testing::TempDir dir("ledger-crash-upper");
  std::mt19937_64 rng(42);
  auto h = random_history(rng, 6, 100);
  Ledger control;
  apply(control, h);
  {
    auto ledger = Ledger::open(dir.str());
    for (std::size_t b = 1; b < 4; ++b) ledger->append_block(h.plan[b - 1].batch, h.plan[b - 1].timestamp_ms);
    bool mapped = false;
    ledger->block_map().set_write_hook([&](std::string_view) { mapped = true; });
    ledger->store().set_write_hook([&](const Hash&) {
      if (mapped) throw Error(ErrorCode::injected_crash, "crash");
    });
    EXPECT_THROW(ledger->append_block(h.plan[3].batch, h.plan[3].timestamp_ms), Error);
  }
  auto ledger = Ledger::open(dir.str());
  auto report = ledger->recover(h.plan);
  EXPECT_EQ(report.reused_blocks, 4u);
  EXPECT_EQ(report.recreated_blocks, 2u);
  EXPECT_EQ(report.digest, control.digest());
}

TEST(LedgerFiles, TornBlockMapRecordIsDropped) {
  testing::TempDir dir("blockmap");
  {
    BlockMap map(dir.file("blockmap.dat"));
    map.add(1, crypto::blake2b256("a"));
    map.add(2, crypto::blake2b256("b"));
  }
  {
    std::ofstream out(dir.file("blockmap.dat"), std::ios::app | std::ios::binary);
    out << std::string(17, 'q');
  }
  BlockMap map(dir.file("blockmap.dat"));
  EXPECT_EQ(map.size(), 2u);
  EXPECT_EQ(map.find(2), crypto::blake2b256("b"));
  EXPECT_FALSE(map.find(3));
  map.add(3, crypto::blake2b256("c"));
  BlockMap reread(dir.file("blockmap.dat"));
  EXPECT_EQ(reread.find(3), crypto::blake2b256("c"));
}

}  // namespace
}  // namespace glassdb

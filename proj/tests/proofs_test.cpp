#include "glassdb/proofs.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "test_util.hpp"

namespace glassdb {
namespace {

// Small nodes so a few hundred keys and a few dozen blocks give multi-level
// trees at both levels.
LedgerOptions small_nodes() {
  LedgerOptions o;
  o.lower_chunking = ChunkConfig{2, 2, 6};
  o.upper_chunking = ChunkConfig{2, 2, 6};
  return o;
}

WriteBatch batch(const std::vector<std::pair<std::string, std::string>>& kv, std::uint64_t n) {
  WriteBatch b;
  for (const auto& [k, v] : kv) b.writes.push_back({k, v, TxnId{1, 1000 + n, n}});
  return b;
}

/// Builds `blocks` blocks of random writes over `keys` keys; returns the
/// final map oracle.
std::map<std::string, std::string> fill(Ledger& ledger, std::mt19937_64& rng, std::size_t blocks,
                                        std::size_t keys, std::size_t per_block) {
  std::map<std::string, std::string> state;
  for (std::size_t b = 1; b <= blocks; ++b) {
    std::map<std::string, std::string> w;
    while (w.size() < per_block) w[testing::key_of(rng() % keys, 4)] = "v" + std::to_string(rng() % 100000);
    std::vector<std::pair<std::string, std::string>> kv(w.begin(), w.end());
    ledger.append_block(batch(kv, b), 1000 + b);
    for (auto& [k, v] : w) state[k] = v;
  }
  return state;
}

TEST(ProofBundle, FrozenSingleKeyVector) {
  // Expected bytes were produced by an independent Python encoder using
  // hashlib.blake2b(digest_size=32).
  Ledger ledger;
  WriteBatch b;
  b.writes.push_back({"k", "v", TxnId{1, 1001, 1}});
  auto [blk, d] = ledger.append_block(b, 1000);
  EXPECT_EQ(blk.state_root.hex(), "c146c349ca0a9518923d24356f06b2e94cd7a22631e038079c24496855b3871d");
  EXPECT_EQ(blk.hash().hex(), "587d7e343f41ddd2711c8eb6431c52ef9df4e56697d02b83dd58db67cccc0a5d");
  EXPECT_EQ(d.digest.hex(), "d2a88added1203fb74ad711606925200affa5e4089c7aa302621db3b54aae671");

  std::vector<ByteString> keys{"k"};
  auto proof = proofs::prove_current(ledger, d, keys);
  EXPECT_EQ(proof.node_count(), 2u);  // one node per level
  ProofBundle bundle{{proof}, {}};
  EXPECT_EQ(to_hex(bundle.encode()),
            "47505246000100000002010000003a00000000000100000008000000000000000100000020587d7e343f"
            "41ddd2711c8eb6431c52ef9df4e56697d02b83dd58db67cccc0a5d000000000200000014000000000001"
            "000000016b00000001760000000000000001000000000000000100000001000000000000005047424c4b"
            "000000000000000100000000000003e800000001000000000000000100000000000003e9000000000000"
            "0001c146c349ca0a9518923d24356f06b2e94cd7a22631e038079c24496855b3871d0000000100000001"
            "00000001000000016b000000017600000000");
  EXPECT_EQ(ProofBundle::decode(bundle.encode()), bundle);
  std::vector<KeyValue> kv{{"k", "v"}};
  EXPECT_TRUE(proofs::verify_current(proof, d, kv));
  EXPECT_TRUE(proofs::verify_inclusion(proof, d, kv));
}

TEST(Proofs, VersionedKeyExample) {
  // Lower tree of K0..K299 (three or more levels) over enough blocks for a
  // two-level upper tree; then K9 <- V9^2 forms block B.
  Ledger ledger(small_nodes());
  std::vector<std::pair<std::string, std::string>> init;
  for (int i = 0; i < 300; ++i) init.push_back({"K" + std::to_string(i), "V" + std::to_string(i) + "^1"});
  std::sort(init.begin(), init.end());
  ledger.append_block(batch(init, 1), 1000);
  for (int b = 2; b <= 40; ++b) ledger.append_block(batch({{"filler", std::to_string(b)}}, b), 1000 + b);
  const auto d1 = ledger.digest();
  ledger.append_block(batch({{"K9", "V9^2"}}, 99), 5000);
  const auto d2 = ledger.digest();
  ASSERT_EQ(d2.block_no, d1.block_no + 1);

  // Inclusion of K9 at B-1 (block 1 holds V9^1): the lower path b, c, ...,
  // LR1, the data block, and the upper path d, ..., UR1.
  std::vector<ByteString> k9{"K9"};
  auto incl = proofs::prove_inclusion(ledger, d1, 1, k9);
  auto lower_h = postree::height(ledger.state_root_at(1).root_hash, ledger.store());
  auto upper_h = postree::height(d1.digest, ledger.store());
  ASSERT_GE(lower_h, 3u);
  ASSERT_GE(upper_h, 2u);
  EXPECT_EQ(incl.lower_nodes.size(), lower_h);
  EXPECT_EQ(incl.upper_path.size(), upper_h);
  EXPECT_EQ(incl.data_block, ledger.get_block(1).block);
  std::vector<KeyValue> old_value{{"K9", "V9^1"}};
  std::vector<KeyValue> new_value{{"K9", "V9^2"}};
  EXPECT_TRUE(proofs::verify_inclusion(incl, d1, old_value));
  EXPECT_FALSE(proofs::verify_inclusion(incl, d1, new_value));
  // The same proof also holds against the later digest only if its upper
  // path matches; it does not, since the upper root changed.
  EXPECT_FALSE(proofs::verify_inclusion(incl, d2, old_value));

  auto cur = proofs::prove_current(ledger, d2, k9);
  EXPECT_EQ(cur.block_no, d2.block_no);
  EXPECT_TRUE(proofs::verify_current(cur, d2, new_value));
  EXPECT_FALSE(proofs::verify_current(cur, d2, old_value));

  // V9^1 presented as current against D2 is rejected.
  auto stale = proofs::prove_inclusion(ledger, d2, d1.block_no, k9);
  EXPECT_TRUE(proofs::verify_inclusion(stale, d2, old_value));
  EXPECT_FALSE(proofs::verify_current(stale, d2, old_value));

  auto app = proofs::prove_append(ledger, d1, d2);
  EXPECT_LE(app.nodes.size(), 2 * postree::height(d2.digest, ledger.store()));
  EXPECT_TRUE(proofs::verify_append(app, d1, d2));
  EXPECT_FALSE(proofs::verify_append(app, d2, d1));
}

TEST(Proofs, IdentityAndGenesisAppend) {
  Ledger ledger;
  std::mt19937_64 rng(1);
  fill(ledger, rng, 5, 50, 3);
  auto d = ledger.digest();
  auto same = proofs::prove_append(ledger, d, d);
  EXPECT_TRUE(same.nodes.empty());
  EXPECT_TRUE(proofs::verify_append(same, d, d));
  auto from_genesis = proofs::prove_append(ledger, LedgerDigest::genesis(), d);
  EXPECT_TRUE(proofs::verify_append(from_genesis, LedgerDigest::genesis(), d));
  LedgerDigest fake{crypto::blake2b256("x"), 0};
  EXPECT_FALSE(proofs::verify_append(AppendOnlyProof{fake, d, {}}, fake, d));
}

TEST(Proofs, EveryDigestPairOfAFiftyBlockRun) {
  for (auto opts : {LedgerOptions{}, small_nodes()}) {
    Ledger ledger(opts);
    std::mt19937_64 rng(50);
    fill(ledger, rng, 50, 200, 4);
    for (std::uint64_t i = 0; i <= 50; ++i) {
      for (std::uint64_t j = i; j <= 50; ++j) {
        auto a = ledger.digest_at(i), b = ledger.digest_at(j);
        auto p = proofs::prove_append(ledger, a, b);
        ASSERT_TRUE(proofs::verify_append(p, a, b)) << i << "->" << j;
        if (i < j) {
          EXPECT_FALSE(proofs::verify_append(AppendOnlyProof{b, a, p.nodes}, b, a));
        }
      }
    }
  }
}

TEST(Proofs, ForkedHistoriesHaveNoAppendProof) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto opts = trial % 2 ? small_nodes() : LedgerOptions{};
    Ledger a(opts), b(opts);
    std::size_t prefix = 1 + rng() % 30;
    for (std::size_t i = 1; i <= prefix; ++i) {
      auto w = batch({{testing::key_of(rng() % 100, 4), std::to_string(i)}}, i);
      a.append_block(w, 1000 + i);
      b.append_block(w, 1000 + i);
    }
    a.append_block(batch({{"x", "op1"}}, 900), 5000);
    b.append_block(batch({{"x", "op2"}}, 901), 5000);
    std::size_t extra = rng() % 8;
    for (std::size_t i = 0; i < extra; ++i) b.append_block(batch({{"y", std::to_string(i)}}, 950 + i), 6000 + i);

    const auto fork_a = a.digest();
    const auto fork_b = b.digest();
    ASSERT_NE(fork_a.digest, b.digest_at(fork_a.block_no).digest);

    // Candidate node sets: honest proofs from either history between
    // related digests, their unions, and paths through b's tree to the
    // block number a claims.
    std::vector<std::vector<PosNode>> candidates;
    for (std::uint64_t from = 0; from <= fork_a.block_no; ++from) {
      candidates.push_back(proofs::prove_append(b, b.digest_at(from), fork_b).nodes);
      candidates.push_back(proofs::prove_append(a, a.digest_at(from), fork_a).nodes);
    }
    auto mixed = candidates[0];
    for (const auto& n : proofs::prove_append(a, a.digest_at(1), fork_a).nodes) mixed.push_back(n);
    candidates.push_back(mixed);
    candidates.push_back({});
    for (const auto& nodes : candidates) {
      EXPECT_FALSE(proofs::verify_append(AppendOnlyProof{fork_a, fork_b, nodes}, fork_a, fork_b));
      EXPECT_FALSE(proofs::verify_append(AppendOnlyProof{fork_b, fork_a, nodes}, fork_b, fork_a));
    }
  }
}

TEST(Proofs, AppendTransitivityOnSampledTriples) {
  Ledger ledger(small_nodes());
  std::mt19937_64 rng(3);
  fill(ledger, rng, 60, 300, 2);
  for (int t = 0; t < 200; ++t) {
    std::uint64_t x[3] = {rng() % 61, rng() % 61, rng() % 61};
    std::sort(x, x + 3);
    auto i = ledger.digest_at(x[0]), j = ledger.digest_at(x[1]), k = ledger.digest_at(x[2]);
    ASSERT_TRUE(proofs::verify_append(proofs::prove_append(ledger, i, j), i, j));
    ASSERT_TRUE(proofs::verify_append(proofs::prove_append(ledger, j, k), j, k));
    ASSERT_TRUE(proofs::verify_append(proofs::prove_append(ledger, i, k), i, k));
  }
}

TEST(Proofs, BatchedKeysShareNodes) {
  Ledger ledger;
  std::vector<std::pair<std::string, std::string>> kv;
  for (int i = 0; i < 2000; ++i) kv.push_back({testing::key_of(static_cast<std::size_t>(i), 5), "v"});
  ledger.append_block(batch(kv, 1), 1000);
  std::vector<ByteString> keys;
  for (int i = 0; i < 8; ++i) keys.push_back(testing::key_of(static_cast<std::size_t>(i * 250), 5));
  auto d = ledger.digest();
  auto batched = proofs::prove_current(ledger, d, keys);
  std::size_t independent = 0;
  std::vector<KeyValue> expected;
  for (const auto& k : keys) {
    std::vector<ByteString> one{k};
    independent += proofs::prove_current(ledger, d, one).node_count();
    expected.push_back({k, "v"});
  }
  EXPECT_LT(batched.node_count(), independent);
  EXPECT_LE(batched.node_count(),
            postree::height(d.digest, ledger.store()) +
                keys.size() * postree::height(ledger.state_root().root_hash, ledger.store()));
  EXPECT_TRUE(proofs::verify_current(batched, d, expected));
}

TEST(Proofs, CurrentValuesMatchReplayOracle) {
  Ledger ledger(small_nodes());
  std::mt19937_64 rng(100);
  auto state = fill(ledger, rng, 10, 100, 30);
  auto d = ledger.digest();
  // Keys not rewritten in the last block are still proven against it:
  // the last block's state covers all current values.
  for (const auto& [k, v] : state) {
    std::vector<ByteString> one{k};
    auto p = proofs::prove_current(ledger, d, one);
    std::vector<KeyValue> want{{k, v}};
    ASSERT_TRUE(proofs::verify_current(p, d, want)) << k;
  }
}

TEST(Proofs, GenerationErrors) {
  Ledger ledger;
  std::mt19937_64 rng(4);
  fill(ledger, rng, 3, 20, 2);
  auto d = ledger.digest();
  std::vector<ByteString> absent{"nope"};
  try {
    proofs::prove_current(ledger, d, absent);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
  }
  std::vector<ByteString> some{testing::key_of(1, 4)};
  try {
    proofs::prove_inclusion(ledger, ledger.digest_at(2), 3, some);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_range);
  }
  LedgerDigest unknown{crypto::blake2b256("other"), 2};
  EXPECT_THROW(proofs::prove_append(ledger, unknown, d), Error);
}

TEST(Proofs, SingleByteMutationsAreRejected) {
  Ledger ledger(small_nodes());
  std::mt19937_64 rng(5);
  auto state = fill(ledger, rng, 12, 60, 5);
  const auto old_d = ledger.digest_at(4);
  const auto d = ledger.digest();
  auto it = state.begin();
  std::vector<ByteString> keys{it->first, std::next(it, 7)->first};
  std::vector<KeyValue> expected{{it->first, it->second}, {std::next(it, 7)->first, std::next(it, 7)->second}};
  ProofBundle honest{{proofs::prove_current(ledger, d, keys)}, {proofs::prove_append(ledger, old_d, d)}};
  const auto bytes = honest.encode();

  auto accepted = [&](const ByteString& b) {
    try {
      auto bundle = ProofBundle::decode(b);
      return bundle.inclusion.size() == 1 && bundle.append.size() == 1 &&
             proofs::verify_current(bundle.inclusion[0], d, expected) &&
             proofs::verify_append(bundle.append[0], old_d, d);
    } catch (const Error&) {
      return false;
    }
  };
  ASSERT_TRUE(accepted(bytes));
  std::size_t mutants = 0, survivors = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    for (unsigned char x : {0x01, 0x80, 0xff}) {
      auto m = bytes;
      m[i] = static_cast<char>(static_cast<unsigned char>(m[i]) ^ x);
      ++mutants;
      if (accepted(m)) {
        ++survivors;
        ADD_FAILURE() << "mutant accepted at byte " << i;
      }
    }
  }
  EXPECT_EQ(survivors, 0u);
  EXPECT_EQ(mutants, bytes.size() * 3);
}

TEST(ProofBundle, SharesNodesAcrossProofs) {
  Ledger ledger;
  std::mt19937_64 rng(6);
  fill(ledger, rng, 30, 500, 10);
  auto d = ledger.digest();
  ProofBundle together;
  std::size_t separate = 0;
  for (std::uint64_t b = 25; b <= 30; ++b) {
    auto k = ledger.block_writes(b).front().key;
    std::vector<ByteString> one{k};
    auto p = proofs::prove_inclusion(ledger, d, b, one);
    separate += ProofBundle{{p}, {}}.encode().size();
    together.inclusion.push_back(std::move(p));
  }
  EXPECT_LT(together.encode().size(), separate);
  EXPECT_EQ(ProofBundle::decode(together.encode()), together);
}

TEST(ProofBundle, RejectsMalformedEncodings) {
  Ledger ledger;
  WriteBatch b;
  b.writes.push_back({"k", "v", TxnId{1, 1001, 1}});
  ledger.append_block(b, 1000);
  std::vector<ByteString> one{"k"};
  const auto bytes = ProofBundle{{proofs::prove_current(ledger, ledger.digest(), one)}, {}}.encode();
  EXPECT_NO_THROW(ProofBundle::decode(bytes));
  EXPECT_THROW(ProofBundle::decode(bytes + std::string(1, '\0')), Error);
  EXPECT_THROW(ProofBundle::decode(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(ProofBundle::decode("GPRF"), Error);

  // Node table: magic(4) version(2) count(4), then the upper leaf row
  // (1 + 4 + 58 bytes) and the lower leaf row (1 + 4 + 20 bytes).
  const std::size_t table_end = 10 + 63 + 25;
  const auto lower_row = bytes.substr(10 + 63, 25);
  auto with_row = [&](const std::string& row) {
    auto m = bytes.substr(0, table_end) + row + bytes.substr(table_end);
    m[9] = 3;
    return m;
  };
  EXPECT_THROW(ProofBundle::decode(with_row(lower_row)), Error);  // duplicate
  PosNode extra;
  extra.entries.push_back({"z", "z", std::nullopt});
  auto extra_bytes = extra.serialize();
  auto row = std::string(1, '\2') + Writer().str(extra_bytes).bytes();
  EXPECT_THROW(ProofBundle::decode(with_row(row)), Error);  // unreferenced
}

}  // namespace
}  // namespace glassdb

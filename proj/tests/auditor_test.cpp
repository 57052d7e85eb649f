#include "glassdb/auditor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>

#include "glassdb/shardserver.hpp"
#include "glassdb/transport.hpp"
#include "test_util.hpp"

namespace glassdb {
namespace {

ShardConfig memory_config(FaultMode fault = FaultMode::none) {
  ShardConfig cfg;
  cfg.persist_interval_ms = 0;
  cfg.fault = fault;
  return cfg;
}

struct Writer1 {
  crypto::KeyPair keys = crypto::KeyPair::from_seed(std::string(32, '\x07'));
  std::uint64_t counter = 0;

  Transaction make(std::vector<WriteItem> writes) {
    Transaction t;
    t.tid.timestamp_ms = 9000;
    t.tid.counter = ++counter;
    t.write_set = std::move(writes);
    t.sign(keys);
    return t;
  }

  void commit(Channel& ch, std::vector<WriteItem> writes) {
    if (counter == 0) ch.request(MsgKind::register_client, Writer().str(keys.public_key).bytes());
    auto t = make(std::move(writes));
    auto vote = decode_vote(ch.request(MsgKind::prepare, t.encode()));
    ASSERT_EQ(vote.vote, Vote::commit) << vote.reason;
    decode_promise(ch.request(MsgKind::commit, CommitRequest{t.tid, false}.encode()));
  }
};

/// One block per call.
void write_blocks(ShardService& svc, Channel& ch, Writer1& w, int blocks, int keys_per_block = 3) {
  for (int b = 0; b < blocks; ++b) {
    std::vector<WriteItem> writes;
    for (int k = 0; k < keys_per_block; ++k) {
      writes.push_back({testing::key_of(static_cast<std::size_t>((b * 7 + k) % 50)),
                        "v" + std::to_string(b) + "-" + std::to_string(k)});
    }
    w.commit(ch, std::move(writes));
    svc.persist_now();
  }
}

TEST(Auditor, GenesisDigestAccepted) {
  ShardService svc(memory_config());
  Auditor a(std::make_shared<InProcessChannel>(svc, 0));
  auto out = a.sync();
  EXPECT_EQ(out.verdict, AuditVerdict::accepted) << out.detail;
  EXPECT_EQ(a.digest(), svc.ledger().digest());
  EXPECT_EQ(a.digest().block_no, 0u);
}

TEST(Auditor, HonestRunReplaysEveryBlock) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 100);
  ASSERT_EQ(svc.ledger().latest_block(), 100u);

  Auditor a(ch);
  for (std::uint64_t b = 1; b <= 100; ++b) {
    auto out = a.verify_block(b);
    ASSERT_EQ(out.verdict, AuditVerdict::accepted) << out.detail;
  }
  EXPECT_EQ(a.digest(), svc.ledger().digest());
  EXPECT_EQ(a.sync().verdict, AuditVerdict::accepted);
  EXPECT_FALSE(a.fork_detected());
}

TEST(Auditor, BlocksMustBeAuditedInOrder) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 3);
  Auditor a(ch);
  EXPECT_THROW(a.verify_block(2), Error);
  EXPECT_EQ(a.verify_block(1).verdict, AuditVerdict::accepted);
}

TEST(Auditor, UnsignedTransactionRejectedWithBlockNumber) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 4);

  auto bad = w.make({{"key000001", "forged"}});
  bad.signature[3] ^= 0x40;
  svc.inject_transaction(bad);
  svc.persist_now();
  write_blocks(svc, *ch, w, 1);
  ASSERT_EQ(svc.ledger().latest_block(), 6u);

  Auditor a(ch);
  auto out = a.catch_up(6);
  EXPECT_EQ(out.verdict, AuditVerdict::rejected);
  EXPECT_EQ(out.block_no, 5u);
  EXPECT_NE(out.detail.find("block 5"), std::string::npos) << out.detail;
  EXPECT_NE(out.detail.find("signature"), std::string::npos) << out.detail;
  // the replica stops before the rejected block
  EXPECT_EQ(a.digest(), svc.ledger().digest_at(4));
}

TEST(Auditor, UnregisteredKeyRejectedWhenRequired) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 2);

  AuditorOptions opts;
  opts.require_registered_keys = true;
  Auditor strict(ch, opts);
  auto out = strict.verify_block(1);
  EXPECT_EQ(out.verdict, AuditVerdict::rejected);
  EXPECT_NE(out.detail.find("unregistered"), std::string::npos);

  Auditor known(ch, opts);
  known.register_client(w.keys.public_key);
  EXPECT_EQ(known.catch_up(2).verdict, AuditVerdict::accepted);
}

TEST(Auditor, DigestAheadTriggersCatchUpAndOlderDigestsStayValid) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 5);
  Auditor a(ch);
  auto old = svc.ledger().digest_at(2);

  auto head = svc.ledger().digest();
  auto out = a.verify_digest(head);
  EXPECT_EQ(out.verdict, AuditVerdict::accepted) << out.detail;
  EXPECT_EQ(out.head, head);

  EXPECT_EQ(a.verify_digest(old).verdict, AuditVerdict::accepted);

  LedgerDigest wrong = old;
  wrong.digest = crypto::blake2b256("not a root");
  auto forged = a.verify_digest(wrong, "alice");
  EXPECT_EQ(forged.verdict, AuditVerdict::fork_detected);
  ASSERT_EQ(a.evidence().size(), 1u);
  EXPECT_EQ(a.evidence()[0].source, "alice");
  EXPECT_EQ(a.evidence()[0].local, old);
}

TEST(Auditor, DigestBeyondShardIsDeferred) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 2);
  Auditor a(ch);
  LedgerDigest future{crypto::blake2b256("x"), 9};
  EXPECT_EQ(a.verify_digest(future).verdict, AuditVerdict::deferred);
  EXPECT_FALSE(a.fork_detected());
}

TEST(Auditor, EquivocationCaughtByGossip) {
  auto cfg = memory_config(FaultMode::equivocate);
  cfg.fork_block = 3;
  ShardService svc(cfg);
  auto even = std::make_shared<InProcessChannel>(svc, 0);
  auto odd = std::make_shared<InProcessChannel>(svc, 1);
  Writer1 w;
  write_blocks(svc, *even, w, 6);

  Auditor a(even), b(odd);
  ASSERT_EQ(a.sync().verdict, AuditVerdict::accepted);
  ASSERT_EQ(b.sync().verdict, AuditVerdict::accepted);
  ASSERT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.digest().block_no, b.digest().block_no);

  a.add_peer("b", [&](const LedgerDigest& d, std::string_view src) { return b.verify_digest(d, src); });
  auto replies = a.gossip();
  ASSERT_EQ(replies.size(), 1u);
  EXPECT_EQ(replies[0].verdict, AuditVerdict::fork_detected);
  EXPECT_TRUE(a.fork_detected());
  EXPECT_TRUE(b.fork_detected());
  auto ev = a.evidence().at(0);
  EXPECT_EQ(ev.local, a.digest());
  EXPECT_EQ(ev.remote, b.digest());
  EXPECT_NE(ev.to_json().find("fork-evidence"), std::string::npos);
}

TEST(Auditor, HonestGossipAgrees) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 4);
  Auditor a(ch), b(std::make_shared<InProcessChannel>(svc, 1));
  a.sync();
  a.add_peer("b", [&](const LedgerDigest& d, std::string_view src) { return b.verify_digest(d, src); });
  a.add_peer("gone", [](const LedgerDigest&, std::string_view) -> AuditOutcome {
    fail(ErrorCode::transport_error, "refused");
  });
  auto replies = a.gossip();
  EXPECT_EQ(replies[0].verdict, AuditVerdict::accepted);
  EXPECT_EQ(replies[1].verdict, AuditVerdict::deferred);
  EXPECT_FALSE(a.fork_detected());
  EXPECT_EQ(b.digest(), a.digest());
}

TEST(Auditor, CheckpointRestoresReplica) {
  testing::TempDir dir("audit");
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 8);

  AuditorOptions opts;
  opts.checkpoint_path = dir.file("ckpt.json");
  {
    Auditor a(ch, opts);
    a.register_client(w.keys.public_key);
    ASSERT_EQ(a.catch_up(5).verdict, AuditVerdict::accepted);
    a.save_checkpoint();
  }
  opts.require_registered_keys = true;
  Auditor again(ch, opts);
  ASSERT_TRUE(again.restore());
  EXPECT_EQ(again.digest(), svc.ledger().digest_at(5));
  EXPECT_EQ(again.sync().verdict, AuditVerdict::accepted);
  EXPECT_EQ(again.digest(), svc.ledger().digest());

  AuditorOptions none;
  none.checkpoint_path = dir.file("missing.json");
  EXPECT_FALSE(Auditor(ch, none).restore());
}

TEST(Auditor, CheckpointFromAnotherHistoryIsEvidence) {
  testing::TempDir dir("audit-fork");
  auto cfg = memory_config(FaultMode::equivocate);
  cfg.fork_block = 2;
  ShardService svc(cfg);
  auto even = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *even, w, 4);

  AuditorOptions opts;
  opts.checkpoint_path = dir.file("ckpt.json");
  Auditor a(even, opts);
  a.sync();
  a.save_checkpoint();

  Auditor b(std::make_shared<InProcessChannel>(svc, 1), opts);
  ASSERT_TRUE(b.restore());
  EXPECT_TRUE(b.fork_detected());
}

TEST(Auditor, SubmitDigestOverTcp) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 3);
  Auditor a(ch);
  TcpServer server(
      [&](std::uint64_t, std::uint8_t kind, std::string_view payload) { return a.handle(kind, payload); },
      "127.0.0.1", 0);
  TcpChannel remote("127.0.0.1", server.port());

  remote.request(MsgKind::audit_register, Writer().str(w.keys.public_key).bytes());
  auto good = decode_verdict(
      remote.request(MsgKind::submit_digest, encode_submission(svc.ledger().digest(), "client-1")));
  EXPECT_EQ(good.verdict, AuditVerdict::accepted) << good.detail;
  EXPECT_EQ(good.head, svc.ledger().digest());

  LedgerDigest bad{crypto::blake2b256("bad"), 2};
  auto forked = decode_verdict(remote.request(MsgKind::submit_digest, encode_submission(bad, "client-2")));
  EXPECT_EQ(forked.verdict, AuditVerdict::fork_detected);
  EXPECT_EQ(a.evidence().at(0).source, "client-2");

  EXPECT_THROW(remote.request(MsgKind::get, ""), Error);
  server.stop();
}

TEST(Auditor, ReplayCostGrowsLinearly) {
  ShardService svc(memory_config());
  auto ch = std::make_shared<InProcessChannel>(svc, 0);
  Writer1 w;
  write_blocks(svc, *ch, w, 200, 5);
  auto time_to = [&](std::uint64_t blocks) {
    double best = 1e9;
    for (int i = 0; i < 3; ++i) {
      Auditor a(ch);
      auto t0 = std::chrono::steady_clock::now();
      EXPECT_EQ(a.catch_up(blocks).verdict, AuditVerdict::accepted);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  time_to(50);
  double t100 = time_to(100), t200 = time_to(200);
  // generous bound: quadratic replay would give a ratio near 4
  EXPECT_LT(t200 / t100, 3.2);
}

}  // namespace
}  // namespace glassdb

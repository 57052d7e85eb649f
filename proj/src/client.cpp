#include "glassdb/client.hpp"

#include <algorithm>
#include <set>
#include <thread>

#include "glassdb/log.hpp"
#include "glassdb/proofs.hpp"

namespace glassdb {

namespace {

std::uint64_t wall_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

bool precedes(const LedgerDigest& a, const LedgerDigest& b) {
  return std::tie(a.block_no, a.digest) < std::tie(b.block_no, b.digest);
}

}  // namespace

Session::Session(std::vector<std::shared_ptr<Channel>> shards, crypto::KeyPair keys,
                 SessionOptions opts)
    : shards_(std::move(shards)),
      keys_(std::move(keys)),
      opts_(opts),
      client_id_(client_id_for(keys_.public_key)),
      cache_(shards_.size(), LedgerDigest::genesis()),
      queues_(shards_.size()) {
  if (shards_.empty()) fail(ErrorCode::invalid_input, "session needs at least one shard");
  if (opts_.attempts < 1) opts_.attempts = 1;
}

void Session::register_keys() {
  auto payload = Writer().str(keys_.public_key).bytes();
  for (std::uint32_t s = 0; s < shard_count(); ++s) {
    call(s, MsgKind::register_client, payload, opts_.attempts);
  }
}

ByteString Session::call(std::uint32_t shard, MsgKind kind, std::string_view payload,
                         int attempts) {
  for (int i = 1;; ++i) {
    try {
      auto reply = shards_.at(shard)->call(kind, payload);
      return ByteString(unwrap_reply(reply));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::transport_error || i >= attempts) throw;
    }
  }
}

TxnId Session::begin() {
  last_ts_ = std::max(last_ts_, wall_ms());
  TxnId tid{client_id_, last_ts_, ++counter_};
  open_.emplace(tid, OpenTxn{});
  return tid;
}

Session::OpenTxn& Session::open(const TxnId& tid) {
  auto it = open_.find(tid);
  if (it == open_.end()) fail(ErrorCode::invalid_input, "transaction not open: " + tid.to_string());
  return it->second;
}

std::optional<ByteString> Session::get(const TxnId& tid, const ByteString& key) {
  auto& txn = open(tid);
  if (auto w = txn.writes.find(key); w != txn.writes.end()) return w->second;
  if (auto r = txn.reads.find(key); r != txn.reads.end()) {
    if (!r->second.found) return std::nullopt;
    return r->second.value;
  }
  auto body = call(shard_for(key), MsgKind::get, GetRequest{key}.encode(), opts_.attempts);
  auto reply = GetReply::decode(body);
  ReadRecord rec{reply.found, reply.value, reply.found ? reply.version : 0, reply.digest};
  txn.reads.emplace(key, rec);
  if (!rec.found) return std::nullopt;
  return rec.value;
}

std::optional<VersionedValue> Session::get_at(const TxnId& tid, const ByteString& key,
                                              ReadMode mode, std::uint64_t arg) {
  open(tid);
  auto body = call(shard_for(key), MsgKind::get, GetRequest{key, mode, arg}.encode(),
                   opts_.attempts);
  auto reply = GetReply::decode(body);
  if (!reply.found) return std::nullopt;
  return VersionedValue{reply.value, reply.version};
}

void Session::put(const TxnId& tid, const ByteString& key, ByteString value) {
  open(tid).writes[key] = std::move(value);
}

void Session::abort(const TxnId& tid) {
  auto it = open_.find(tid);
  if (it == open_.end()) return;
  open_.erase(it);
}

CommitResult Session::commit(const TxnId& tid) {
  auto node = open_.extract(tid);
  if (node.empty()) fail(ErrorCode::invalid_input, "transaction not open: " + tid.to_string());
  auto& txn = node.mapped();
  CommitResult result{tid, {}};

  Transaction t;
  t.tid = tid;
  t.public_key = keys_.public_key;
  std::set<std::uint32_t> touched;
  for (const auto& [k, r] : txn.reads) {
    t.read_set.push_back({k, r.version});
    touched.insert(shard_for(k));
  }
  for (const auto& [k, v] : txn.writes) {
    t.write_set.push_back({k, v});
    touched.insert(shard_for(k));
  }
  if (touched.empty()) return result;
  t.sign(keys_);
  auto encoded = t.encode();

  auto abort_all = [&] {
    auto payload = encode_tid(tid);
    for (auto s : touched) {
      try {
        call(s, MsgKind::abort, payload, opts_.attempts);
      } catch (const std::exception&) {
      }
    }
  };

  std::string abort_reason;
  bool unknown = false;
  auto t0 = std::chrono::steady_clock::now();
  for (auto s : touched) {
    try {
      auto vote = decode_vote(call(s, MsgKind::prepare, encoded, opts_.attempts));
      if (vote.vote == Vote::abort) {
        abort_reason = "shard " + std::to_string(s) + ": " + vote.reason;
        break;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::transport_error) {
        abort_all();
        throw;
      }
      unknown = true;
      break;
    }
  }
  if (!abort_reason.empty() || unknown) {
    abort_all();
    if (unknown) fail(ErrorCode::txn_unknown, "no prepare answer for " + tid.to_string());
    fail(ErrorCode::txn_aborted, abort_reason);
  }

  observe(Phase::prepare, t0);
  auto t1 = std::chrono::steady_clock::now();
  auto commit_payload = CommitRequest{tid, opts_.delay_ms == 0}.encode();
  for (auto s : touched) {
    Promise p;
    try {
      p = decode_promise(call(s, MsgKind::commit, commit_payload, opts_.attempts));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::transport_error) {
        fail(ErrorCode::txn_unknown, "no commit answer for " + tid.to_string());
      }
      throw;
    }
    std::vector<std::pair<ByteString, ByteString>> mine, promised;
    for (const auto& [k, v] : txn.writes) {
      if (shard_for(k) == s) mine.emplace_back(k, v);
    }
    for (const auto& w : p.writes) promised.emplace_back(w.key, w.value);
    std::sort(promised.begin(), promised.end());
    if (p.tid != tid || mine != promised) tamper(s, "promise does not match the committed writes");
    result.promises.emplace_back(s, std::move(p));
  }

  observe(Phase::commit, t1);
  auto committed = std::chrono::steady_clock::now();
  auto due = committed + std::chrono::milliseconds(opts_.delay_ms);
  std::size_t items = 0;
  for (const auto& [s, p] : result.promises) {
    for (const auto& w : p.writes) {
      queues_[s].writes.push_back({tid, w, due});
      ++items;
    }
  }
  for (const auto& [k, r] : txn.reads) {
    if (!r.found) continue;  // absence is not provable
    queues_[shard_for(k)].reads.push_back({tid, ReadClaim{k, r.value, r.version, r.digest}, due});
    ++items;
  }
  if (items == 0) {
    verified_.insert(tid);
    ++stats_.verified_txns;
  } else {
    outstanding_[tid] = items;
    if (observer_) committed_at_[tid] = committed;
  }
  if (opts_.delay_ms == 0) verify(tid);
  return result;
}

void Session::tamper(std::uint32_t shard, const std::string& what) {
  ++stats_.incidents;
  fail(ErrorCode::tamper_detected, "shard " + std::to_string(shard) + ": " + what);
}

void Session::advance(std::uint32_t shard, const LedgerDigest& d) {
  if (precedes(cache_[shard], d)) cache_[shard] = d;
}

void Session::observe(Phase phase, std::chrono::steady_clock::time_point since) {
  if (!observer_) return;
  observer_(phase,
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count());
}

void Session::settle(const TxnId& tid, std::size_t items) {
  auto it = outstanding_.find(tid);
  if (it == outstanding_.end()) return;
  it->second -= std::min(it->second, items);
  if (it->second == 0) {
    outstanding_.erase(it);
    verified_.insert(tid);
    ++stats_.verified_txns;
    if (auto c = committed_at_.find(tid); c != committed_at_.end()) {
      observe(Phase::persist, c->second);
      committed_at_.erase(c);
    }
  }
}

bool Session::verify_shard(std::uint32_t shard, const std::unordered_set<TxnId>* force, bool all) {
  auto& q = queues_[shard];
  auto now = std::chrono::steady_clock::now();
  // Bounded to the served block once the shard reports items unpersisted,
  // so ready items are not held back by ones still waiting for a block.
  std::optional<std::uint64_t> limit;
  auto ready = [&](const TxnId& tid, auto due) {
    return all || due <= now || (force && force->contains(tid));
  };
  // Once anything is due the whole queue goes in one request, so a longer
  // delay means bigger batches.
  bool any = false;
  for (const auto& r : q.reads) any = any || ready(r.tid, r.due);
  for (const auto& w : q.writes) any = any || ready(w.tid, w.due);
  if (!any) return true;
  auto pick = [&](std::uint64_t block) { return !limit || block <= *limit; };
  ProofRequest req;
  std::vector<std::size_t> read_idx, write_idx;
  auto select = [&] {
    req = ProofRequest{};
    req.cached = cache_[shard];
    read_idx.clear();
    write_idx.clear();
    for (std::size_t i = 0; i < q.reads.size(); ++i) {
      const auto& c = q.reads[i].claim;
      if (!pick(std::max(c.version, c.read_digest.block_no))) continue;
      read_idx.push_back(i);
      req.reads.push_back(c);
    }
    for (std::size_t i = 0; i < q.writes.size(); ++i) {
      if (!pick(q.writes[i].write.block_no)) continue;
      write_idx.push_back(i);
      req.writes.push_back(q.writes[i].write);
    }
    return !read_idx.empty() || !write_idx.empty();
  };
  if (!select()) return true;

  auto drop_selected = [&] {
    auto keep_reads = std::move(q.reads);
    auto keep_writes = std::move(q.writes);
    q.reads.clear();
    q.writes.clear();
    std::size_t r = 0, w = 0;
    for (std::size_t i = 0; i < keep_reads.size(); ++i) {
      if (r < read_idx.size() && read_idx[r] == i) {
        ++r;
      } else {
        q.reads.push_back(std::move(keep_reads[i]));
      }
    }
    for (std::size_t i = 0; i < keep_writes.size(); ++i) {
      if (w < write_idx.size() && write_idx[w] == i) {
        ++w;
      } else {
        q.writes.push_back(std::move(keep_writes[i]));
      }
    }
  };

  ByteString body;
  auto asked = std::chrono::steady_clock::now();
  for (;;) {
    try {
      body = call(shard, MsgKind::get_proof, req.encode(), opts_.attempts);
      break;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::not_yet_persisted) {
        ++stats_.not_yet_persisted;
        if (limit) return false;
        Reader r(call(shard, MsgKind::get_digest, "", opts_.attempts));
        limit = decode_digest(r).block_no;
        if (!select()) return false;
        asked = std::chrono::steady_clock::now();
        continue;
      }
      if (e.code() == ErrorCode::transport_error) throw;
      drop_selected();
      tamper(shard, std::string("no proof: ") + e.what());
    }
  }
  std::unordered_map<TxnId, std::size_t> per_txn;
  for (auto i : read_idx) ++per_txn[q.reads[i].tid];
  for (auto i : write_idx) ++per_txn[q.writes[i].tid];
  observe(Phase::get_proof, asked);
  ++stats_.proof_requests;
  stats_.proof_bytes += body.size();

  std::string failure;
  try {
    auto reply = ProofReply::decode(body);
    stats_.proof_nodes += reply.bundle.node_count();
    if (auto why = check_proof_reply(req, reply)) failure = *why;
    if (failure.empty()) {
      advance(shard, reply.digest);
      stats_.proven_keys += proof_claims(req).size();
    }
  } catch (const Error& e) {
    failure = std::string("malformed proof: ") + e.what();
  }
  drop_selected();
  for (const auto& [tid, n] : per_txn) {
    if (failure.empty()) {
      settle(tid, n);
    } else {
      outstanding_.erase(tid);
      committed_at_.erase(tid);
    }
  }
  if (!failure.empty()) tamper(shard, failure);
  return !limit;
}

void Session::poll() {
  for (std::uint32_t s = 0; s < shard_count(); ++s) verify_shard(s, nullptr, false);
}

void Session::flush() {
  auto deadline = std::chrono::steady_clock::now() + opts_.persist_wait;
  for (std::uint32_t s = 0; s < shard_count(); ++s) {
    while (!verify_shard(s, nullptr, true)) {
      if (std::chrono::steady_clock::now() > deadline) {
        fail(ErrorCode::not_yet_persisted, "shard " + std::to_string(s) + " did not persist in time");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
}

bool Session::verify(const TxnId& tid) {
  if (verified_.contains(tid)) return true;
  if (!outstanding_.contains(tid)) return false;
  std::unordered_set<TxnId> force{tid};
  auto deadline = std::chrono::steady_clock::now() + opts_.persist_wait;
  for (std::uint32_t s = 0; s < shard_count(); ++s) {
    while (!verify_shard(s, &force, false)) {
      if (std::chrono::steady_clock::now() > deadline) {
        fail(ErrorCode::not_yet_persisted, "shard " + std::to_string(s) + " did not persist in time");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
  return verified_.contains(tid);
}

std::size_t Session::queued() const {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.reads.size() + q.writes.size();
  return n;
}

VerifiedHistory Session::get_history(const ByteString& key, std::uint32_t count) {
  auto s = shard_for(key);
  ByteString body;
  auto asked = std::chrono::steady_clock::now();
  try {
    body = call(s, MsgKind::get_history, HistoryRequest{key, count, cache_[s]}.encode(),
                opts_.attempts);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::transport_error) throw;
    tamper(s, std::string("no history proof: ") + e.what());
  }
  observe(Phase::get_proof, asked);
  ++stats_.proof_requests;
  stats_.proof_bytes += body.size();
  HistoryReply reply;
  try {
    reply = HistoryReply::decode(body);
  } catch (const Error& e) {
    tamper(s, std::string("malformed history: ") + e.what());
  }
  stats_.proof_nodes += reply.bundle.node_count();
  if (reply.versions.size() != reply.bundle.inclusion.size() || reply.versions.size() > count ||
      reply.bundle.append.size() != 1 || precedes(reply.digest, cache_[s])) {
    tamper(s, "history reply has the wrong shape");
  }
  if (!proofs::verify_append(reply.bundle.append[0], cache_[s], reply.digest)) {
    tamper(s, "history digest does not extend the cached digest");
  }
  for (std::size_t i = 0; i < reply.versions.size(); ++i) {
    const auto& v = reply.versions[i];
    if (i > 0 && v.version >= reply.versions[i - 1].version) tamper(s, "history out of order");
    std::vector<KeyValue> want{{key, v.value}};
    const auto& proof = reply.bundle.inclusion[i];
    if (proof.block_no != v.version || !proofs::verify_inclusion(proof, reply.digest, want)) {
      tamper(s, "history version at block " + std::to_string(v.version) + " not proven");
    }
  }
  stats_.proven_keys += reply.versions.size();
  advance(s, reply.digest);
  return {reply.digest, std::move(reply.versions)};
}

LedgerDigest Session::refresh_digest(std::uint32_t shard) {
  auto body = call(shard, MsgKind::get_digest, "", opts_.attempts);
  Reader r(body);
  auto d = decode_digest(r);
  r.expect_done();
  if (d == cache_[shard]) return d;
  if (precedes(d, cache_[shard])) tamper(shard, "digest went backwards");
  ByteString proof_body;
  try {
    proof_body = call(shard, MsgKind::prove_append, AppendRequest{cache_[shard], d}.encode(),
                      opts_.attempts);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::transport_error) throw;
    tamper(shard, std::string("no append-only proof: ") + e.what());
  }
  ++stats_.proof_requests;
  stats_.proof_bytes += proof_body.size();
  auto reply = ProofReply::decode(proof_body);
  if (reply.bundle.append.size() != 1 ||
      !proofs::verify_append(reply.bundle.append[0], cache_[shard], d)) {
    tamper(shard, "append-only proof to the served digest failed");
  }
  advance(shard, d);
  return d;
}

void Session::audit_submit() {
  for (std::uint32_t s = 0; s < shard_count(); ++s) {
    for (const auto& sink : sinks_) {
      try {
        sink(s, cache_[s]);
      } catch (const std::exception& e) {
        log_event("warn", "client", "audit submit failed",
                  {{"shard", std::to_string(s)}, {"error", e.what()}});
      }
    }
  }
}

}  // namespace glassdb

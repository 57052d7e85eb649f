#include "glassdb/shardserver.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "glassdb/log.hpp"
#include "glassdb/proofs.hpp"

namespace glassdb {

namespace {

std::uint64_t wall_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

ByteString encode_bundle_reply(const LedgerDigest& d, ProofBundle bundle) {
  ProofReply reply{d, std::move(bundle)};
  return reply.encode();
}

}  // namespace

ShardService::ShardService(ShardConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.ledger.fsync = cfg_.fsync;
  if (cfg_.data_dir.empty()) {
    ledger_ = std::make_unique<Ledger>(cfg_.ledger);
    wal_ = std::make_unique<Wal>();
  } else {
    std::filesystem::create_directories(cfg_.data_dir);
    ledger_ = Ledger::open(cfg_.data_dir, cfg_.ledger);
    wal_ = std::make_unique<Wal>((std::filesystem::path(cfg_.data_dir) / "wal.log").string(),
                                 cfg_.fsync);
  }
  TxnManagerOptions opts;
  opts.queue_depth = cfg_.queue_depth;
  opts.check_read_versions = cfg_.fault != FaultMode::stale_value;
  if (cfg_.shards > 1) {
    opts.owns = [id = cfg_.shard_id, n = cfg_.shards](std::string_view key) {
      return shard_of(key, n) == id;
    };
  }
  mgr_ = std::make_unique<TxnManager>(*ledger_, *wal_, std::move(opts));

  if (cfg_.fault == FaultMode::equivocate) {
    fork_ = std::make_unique<Ledger>(cfg_.ledger);
    std::vector<std::pair<DataBlock, LedgerDigest>> existing;
    for (std::uint64_t b = 1; b <= ledger_->latest_block(); ++b) {
      existing.emplace_back(ledger_->get_block(b).block, ledger_->digest_at(b));
    }
    extend_fork(existing);
  }
  if (cfg_.persist_interval_ms > 0) persister_ = std::thread([this] { persister_loop(); });
}

ShardService::~ShardService() { stop(); }

void ShardService::stop() {
  {
    std::lock_guard lock(stop_mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  stop_cv_.notify_all();
  if (persister_.joinable()) persister_.join();
  try {
    persist_now();
  } catch (const std::exception& e) {
    log_event("error", "shard", "final persist failed",
              {{"shard", std::to_string(cfg_.shard_id)}, {"error", e.what()}});
  }
}

void ShardService::persister_loop() {
  std::unique_lock lock(stop_mu_);
  while (!stopping_) {
    stop_cv_.wait_for(lock, std::chrono::milliseconds(cfg_.persist_interval_ms));
    if (stopping_) break;
    lock.unlock();
    try {
      persist_now();
    } catch (const std::exception& e) {
      ++counters_.persist_errors;
      log_event("error", "shard", "persist failed",
                {{"shard", std::to_string(cfg_.shard_id)}, {"error", e.what()}});
    }
    lock.lock();
  }
}

void ShardService::persist_now() {
  auto appended = mgr_->persist_tick(wall_ms());
  if (fork_ && !appended.empty()) extend_fork(appended);
}

void ShardService::extend_fork(const std::vector<std::pair<DataBlock, LedgerDigest>>& appended) {
  std::lock_guard lock(fork_mu_);
  for (const auto& [block, digest] : appended) {
    if (block.block_no <= fork_->latest_block()) continue;
    WriteBatch batch{ledger_->block_writes(block.block_no)};
    auto ts = block.timestamp_ms + (block.block_no >= cfg_.fork_block ? 1 : 0);
    fork_->append_block(batch, ts);
  }
}

Ledger& ShardService::view(std::uint64_t conn) {
  if (fork_ && conn % 2 == 1) return *fork_;
  return *ledger_;
}

ByteString ShardService::handle_raw(std::uint64_t conn, std::uint8_t kind,
                                    std::string_view payload) {
  if (kind < static_cast<std::uint8_t>(MsgKind::register_client) ||
      kind > static_cast<std::uint8_t>(MsgKind::get_history)) {
    return error_reply(ErrorCode::invalid_input, "unknown request kind");
  }
  return handle(conn, static_cast<MsgKind>(kind), payload);
}

ByteString ShardService::handle(std::uint64_t conn, MsgKind kind, std::string_view payload) {
  ++counters_.requests;
  try {
    return ok_reply(dispatch(conn, kind, payload));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::not_yet_persisted) ++counters_.not_yet_persisted;
    return error_reply(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_reply(ErrorCode::storage_error, e.what());
  }
}

ByteString ShardService::dispatch(std::uint64_t conn, MsgKind kind, std::string_view payload) {
  switch (kind) {
    case MsgKind::register_client: {
      Reader r(payload);
      auto pk = r.str();
      r.expect_done();
      if (pk.size() != 32) fail(ErrorCode::invalid_input, "public key must be 32 bytes");
      mgr_->register_client(pk);
      return {};
    }
    case MsgKind::prepare: {
      Reader r(payload);
      auto txn = Transaction::decode(r);
      r.expect_done();
      return encode_vote(mgr_->prepare(txn));
    }
    case MsgKind::commit: {
      auto req = CommitRequest::decode(payload);
      auto promise = mgr_->commit(req.tid);
      if (req.sync) persist_now();
      return encode_promise(promise);
    }
    case MsgKind::abort:
      mgr_->abort(decode_tid(payload));
      return {};
    case MsgKind::get:
      return on_get(view(conn), payload);
    case MsgKind::get_proof:
      return on_get_proof(view(conn), payload);
    case MsgKind::get_digest: {
      if (!payload.empty()) fail(ErrorCode::corrupt_data, "trailing bytes");
      Writer w;
      encode_digest(w, view(conn).digest());
      return std::move(w).take();
    }
    case MsgKind::audit_block:
      return on_audit_block(view(conn), payload);
    case MsgKind::prove_append: {
      auto req = AppendRequest::decode(payload);
      ProofBundle bundle;
      bundle.append.push_back(proofs::prove_append(view(conn), req.old_digest, req.new_digest));
      auto out = encode_bundle_reply(req.new_digest, std::move(bundle));
      counters_.proof_bytes += out.size();
      return out;
    }
    case MsgKind::get_stats:
      return stats_json();
    case MsgKind::get_history:
      return on_history(view(conn), payload);
    case MsgKind::submit_digest:
    case MsgKind::audit_register:
      break;
  }
  fail(ErrorCode::invalid_input, "unknown request kind");
}

ByteString ShardService::on_get(Ledger& l, std::string_view payload) {
  auto req = GetRequest::decode(payload);
  GetReply reply;
  reply.digest = l.digest();
  if (req.mode == ReadMode::latest) {
    auto r = mgr_->read_latest(req.key);
    if (r) {
      reply.found = true;
      reply.value = r->value;
      reply.version = r->version;
      if (cfg_.fault == FaultMode::stale_value && r->version <= reply.digest.block_no) {
        auto versions = l.versions(req.key);
        if (versions.size() >= 2) {
          auto prev = versions[versions.size() - 2];
          reply.value = l.get_versioned(req.key, AtBlock{prev})->value;
          reply.version = prev;
        }
      }
    }
  } else {
    VersionSelector at = req.mode == ReadMode::at_block ? VersionSelector(AtBlock{req.arg})
                                                        : VersionSelector(AtTimestamp{req.arg});
    if (auto v = mgr_->read_at(req.key, at)) {
      reply.found = true;
      reply.value = v->value;
      reply.version = v->version;
    }
  }
  return reply.encode();
}

ByteString ShardService::on_get_proof(Ledger& l, std::string_view payload) {
  auto req = ProofRequest::decode(payload);
  ++counters_.proof_requests;
  auto current = l.digest();
  for (const auto& w : req.writes) {
    if (w.block_no > current.block_no) fail(ErrorCode::not_yet_persisted, "write not yet persisted");
  }
  for (const auto& r : req.reads) {
    if (r.version > current.block_no) fail(ErrorCode::not_yet_persisted, "read not yet persisted");
  }
  ProofBundle bundle;
  // Claims whose key still holds the claimed value are proven together in
  // the last block; the rest at their own block.
  std::map<std::uint64_t, std::vector<ByteString>> by_block;
  for (const auto& c : proof_claims(req)) {
    auto now = l.get_versioned(c.kv.key, AtBlock{current.block_no});
    auto at = now && now->value == c.kv.value ? current.block_no : c.block_no;
    auto& keys = by_block[at];
    if (keys.empty() || keys.back() != c.kv.key) keys.push_back(c.kv.key);
  }
  for (auto& [block, keys] : by_block) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    bundle.inclusion.push_back(proofs::prove_inclusion(l, current, block, keys));
  }
  if (req.cached != current) bundle.append.push_back(proofs::prove_append(l, req.cached, current));
  counters_.proof_nodes += bundle.node_count();
  auto out = encode_bundle_reply(current, std::move(bundle));
  counters_.proof_bytes += out.size();
  return out;
}

ByteString ShardService::on_audit_block(Ledger& l, std::string_view payload) {
  Reader r(payload);
  auto block_no = r.u64();
  r.expect_done();
  if (block_no == 0 || block_no > l.latest_block()) {
    fail(ErrorCode::not_yet_persisted, "block not persisted");
  }
  AuditBlockReply reply;
  reply.block = l.get_block(block_no).block;
  reply.writes = l.block_writes(block_no);
  for (const auto& tid : reply.block.txn_ids) {
    auto txn = mgr_->committed_txn(tid);
    if (!txn) fail(ErrorCode::storage_error, "missing transaction " + tid.to_string());
    reply.txns.push_back(std::move(*txn));
  }
  return reply.encode();
}

ByteString ShardService::on_history(Ledger& l, std::string_view payload) {
  auto req = HistoryRequest::decode(payload);
  HistoryReply reply;
  reply.digest = l.digest();
  auto versions = l.versions(req.key);
  std::erase_if(versions, [&](std::uint64_t v) { return v > reply.digest.block_no; });
  std::vector<ByteString> keys{req.key};
  for (auto it = versions.rbegin(); it != versions.rend() && reply.versions.size() < req.count;
       ++it) {
    auto v = l.get_versioned(req.key, AtBlock{*it});
    reply.versions.push_back(*v);
    reply.bundle.inclusion.push_back(proofs::prove_inclusion(l, reply.digest, *it, keys));
  }
  reply.bundle.append.push_back(proofs::prove_append(l, req.from, reply.digest));
  counters_.proof_nodes += reply.bundle.node_count();
  auto out = reply.encode();
  counters_.proof_bytes += out.size();
  return out;
}

std::string ShardService::stats_json() const {
  auto s = mgr_->stats();
  auto d = ledger_->digest();
  nlohmann::json j{
      {"shard_id", cfg_.shard_id},
      {"shards", cfg_.shards},
      {"block_no", d.block_no},
      {"digest", d.digest.hex()},
      {"prepared", s.prepared},
      {"committed", s.committed},
      {"aborted", s.aborted},
      {"blocks", s.blocks},
      {"pending_versions", s.pending_versions},
      {"requests", counters_.requests.load()},
      {"proof_requests", counters_.proof_requests.load()},
      {"proof_nodes", counters_.proof_nodes.load()},
      {"proof_bytes", counters_.proof_bytes.load()},
      {"not_yet_persisted", counters_.not_yet_persisted.load()},
      {"persist_errors", counters_.persist_errors.load()},
  };
  return j.dump();
}

}  // namespace glassdb

#include "glassdb/txnmgr.hpp"

#include <algorithm>

#include "glassdb/codec.hpp"

namespace glassdb {

void Promise::encode(Writer& w) const {
  tid.encode(w);
  w.hash(digest.digest).u64(digest.block_no);
  w.u32(static_cast<std::uint32_t>(writes.size()));
  for (const auto& pw : writes) w.str(pw.key).str(pw.value).u64(pw.block_no);
}

Promise Promise::decode(Reader& r) {
  Promise p;
  p.tid = TxnId::decode(r);
  p.digest.digest = r.hash();
  p.digest.block_no = r.u64();
  auto n = r.u32();
  if (n > r.remaining() / 16) fail(ErrorCode::corrupt_data, "promise write count too large");
  for (std::uint32_t i = 0; i < n; ++i) {
    PromisedWrite pw;
    pw.key = ByteString(r.str());
    pw.value = ByteString(r.str());
    pw.block_no = r.u64();
    p.writes.push_back(std::move(pw));
  }
  return p;
}

namespace {

ByteString encode_tid(const TxnId& tid, std::uint64_t extra) {
  Writer w;
  tid.encode(w);
  w.u64(extra);
  return std::move(w).take();
}

}  // namespace

TxnManager::TxnManager(Ledger& ledger, Wal& wal, TxnManagerOptions opts)
    : ledger_(ledger), wal_(wal), opts_(std::move(opts)) {
  replay_wal();
}

void TxnManager::register_client(std::string_view public_key) {
  std::lock_guard lock(mu_);
  keys_.insert(ByteString(public_key));
}

bool TxnManager::registered(std::string_view public_key) const {
  std::lock_guard lock(mu_);
  return keys_.contains(ByteString(public_key));
}

TxnManager::Prepared TxnManager::restrict_to_shard(const Transaction& txn) const {
  Prepared p;
  p.txn = txn;
  auto mine = [&](const ByteString& k) { return !opts_.owns || opts_.owns(k); };
  for (const auto& r : txn.read_set) {
    if (mine(r.key)) p.read_keys.push_back(r.key);
  }
  for (const auto& w : txn.write_set) {
    if (mine(w.key)) p.write_keys.push_back(w.key);
  }
  std::sort(p.read_keys.begin(), p.read_keys.end());
  p.read_keys.erase(std::unique(p.read_keys.begin(), p.read_keys.end()), p.read_keys.end());
  std::sort(p.write_keys.begin(), p.write_keys.end());
  return p;
}

std::uint64_t TxnManager::current_version(const ByteString& key) const {
  auto it = pending_.find(key);
  if (it != pending_.end() && !it->second.empty()) return it->second.back().block_no;
  return ledger_.latest_version(key).value_or(0);
}

std::optional<std::string> TxnManager::validate(const Prepared& p) const {
  if (std::adjacent_find(p.write_keys.begin(), p.write_keys.end()) != p.write_keys.end()) {
    return "duplicate write key";
  }
  auto mine = [&](const ByteString& k) { return !opts_.owns || opts_.owns(k); };
  for (const auto& r : p.txn.read_set) {
    if (!mine(r.key)) continue;
    auto lk = locks_.find(r.key);
    if (lk != locks_.end() && lk->second.writer) return "read-write conflict on a prepared write";
    if (opts_.check_read_versions && current_version(r.key) != r.version) return "stale read";
  }
  for (const auto& k : p.write_keys) {
    auto lk = locks_.find(k);
    if (lk != locks_.end() && (lk->second.writer || lk->second.readers > 0)) {
      return "write conflict with a prepared transaction";
    }
  }
  return std::nullopt;
}

void TxnManager::lock_keys(const Prepared& p) {
  for (const auto& k : p.read_keys) ++locks_[k].readers;
  for (const auto& k : p.write_keys) locks_[k].writer = true;
}

void TxnManager::unlock_keys(const Prepared& p) {
  auto release = [&](const ByteString& k, bool write) {
    auto it = locks_.find(k);
    if (it == locks_.end()) return;
    if (write) {
      it->second.writer = false;
    } else if (it->second.readers > 0) {
      --it->second.readers;
    }
    if (!it->second.writer && it->second.readers == 0) locks_.erase(it);
  };
  for (const auto& k : p.read_keys) release(k, false);
  for (const auto& k : p.write_keys) release(k, true);
}

PrepareResult TxnManager::prepare(const Transaction& txn) {
  if (!txn.signature_valid()) fail(ErrorCode::bad_signature, "transaction signature invalid");
  std::lock_guard lock(mu_);
  if (opts_.require_registration && !keys_.contains(txn.public_key)) {
    fail(ErrorCode::bad_signature, "public key not registered");
  }
  if (auto d = decided_.find(txn.tid); d != decided_.end()) {
    if (d->second == Outcome::committed) return {Vote::commit, {}};
    return {Vote::abort, "already aborted"};
  }
  if (prepared_.contains(txn.tid)) return {Vote::commit, {}};
  if (prepared_.size() >= opts_.queue_depth) {
    ++stats_.aborted;
    return {Vote::abort, "transaction queue full"};
  }
  auto p = restrict_to_shard(txn);
  if (auto reason = validate(p)) {
    ++stats_.aborted;
    return {Vote::abort, *reason};
  }
  wal_.append(WalType::prepare, txn.encode());
  lock_keys(p);
  prepared_.emplace(txn.tid, std::move(p));
  ++stats_.prepared;
  return {Vote::commit, {}};
}

Promise TxnManager::install(const Prepared& p) {
  Promise promise;
  promise.tid = p.txn.tid;
  promise.digest = ledger_.digest();
  for (const auto& w : p.txn.write_set) {
    if (!std::binary_search(p.write_keys.begin(), p.write_keys.end(), w.key)) continue;
    auto& q = pending_[w.key];
    std::uint64_t block = next_block_;
    if (!q.empty()) block = std::max(block, q.back().block_no + 1);
    q.push_back(Version{block, w.value, p.txn.tid});
    ++pending_count_;
    promise.writes.push_back(PromisedWrite{w.key, w.value, block});
  }
  ++commit_seq_;
  ++stats_.committed;
  return promise;
}

Promise TxnManager::commit(const TxnId& tid) {
  std::uint64_t offset = 0;
  Promise promise;
  {
    std::lock_guard lock(mu_);
    if (auto d = decided_.find(tid); d != decided_.end()) {
      if (d->second == Outcome::aborted) fail(ErrorCode::txn_aborted, "transaction was aborted");
      return promises_.at(tid);
    }
    auto it = prepared_.find(tid);
    if (it == prepared_.end()) fail(ErrorCode::txn_unknown, "commit of unknown transaction");
    offset = wal_.append(WalType::commit, encode_tid(tid, commit_seq_ + 1));
    promise = install(it->second);
    unlock_keys(it->second);
    committed_.emplace(tid, std::move(it->second.txn));
    prepared_.erase(it);
    decided_[tid] = Outcome::committed;
    promises_[tid] = promise;
  }
  wal_.sync_to(offset);
  return promise;
}

Promise TxnManager::force_commit(const Transaction& txn) {
  {
    std::lock_guard lock(mu_);
    if (!decided_.contains(txn.tid) && !prepared_.contains(txn.tid)) {
      wal_.append(WalType::prepare, txn.encode());
      auto p = restrict_to_shard(txn);
      lock_keys(p);
      prepared_.emplace(txn.tid, std::move(p));
    }
  }
  return commit(txn.tid);
}

void TxnManager::abort(const TxnId& tid) {
  std::lock_guard lock(mu_);
  auto it = prepared_.find(tid);
  if (it == prepared_.end()) return;
  wal_.append(WalType::abort, encode_tid(tid, 0));
  unlock_keys(it->second);
  prepared_.erase(it);
  decided_[tid] = Outcome::aborted;
  ++stats_.aborted;
}

std::optional<Transaction> TxnManager::committed_txn(const TxnId& tid) const {
  std::lock_guard lock(mu_);
  auto it = committed_.find(tid);
  if (it == committed_.end()) return std::nullopt;
  return it->second;
}

std::optional<ReadResult> TxnManager::read_latest(std::string_view key) const {
  {
    std::lock_guard lock(mu_);
    auto it = pending_.find(ByteString(key));
    if (it != pending_.end() && !it->second.empty()) {
      const auto& v = it->second.back();
      return ReadResult{v.value, v.block_no, v.block_no <= ledger_.latest_block()};
    }
  }
  auto v = ledger_.get_latest(key);
  if (!v) return std::nullopt;
  return ReadResult{std::move(v->value), v->version, true};
}

std::optional<VersionedValue> TxnManager::read_at(std::string_view key, VersionSelector at) const {
  if (auto* b = std::get_if<AtBlock>(&at); b && b->block_no > ledger_.latest_block()) {
    fail(ErrorCode::not_yet_persisted, "block " + std::to_string(b->block_no) + " not persisted");
  }
  return ledger_.get_versioned(key, at);
}

std::vector<PlannedBlock> TxnManager::claim(std::uint64_t now_ms) const {
  // Every unclaimed version already names its block; group them.
  std::map<std::uint64_t, std::vector<BatchWrite>> by_block;
  for (const auto& [key, q] : pending_) {
    for (auto it = q.rbegin(); it != q.rend() && it->block_no >= next_block_; ++it) {
      by_block[it->block_no].push_back(BatchWrite{key, it->value, it->tid});
    }
  }
  std::vector<PlannedBlock> out;
  for (auto& [no, writes] : by_block) {
    std::sort(writes.begin(), writes.end(),
              [](const BatchWrite& a, const BatchWrite& b) { return a.key < b.key; });
    out.push_back(PlannedBlock{no, now_ms, WriteBatch{std::move(writes)}});
  }
  return out;
}

void TxnManager::drop_persisted(const PlannedBlock& block) {
  for (const auto& w : block.batch.writes) {
    auto it = pending_.find(w.key);
    if (it == pending_.end()) continue;
    auto& q = it->second;
    while (!q.empty() && q.front().block_no <= block.block_no) {
      q.pop_front();
      --pending_count_;
    }
    if (q.empty()) pending_.erase(it);
  }
}

std::vector<std::pair<DataBlock, LedgerDigest>> TxnManager::persist_tick(std::uint64_t now_ms) {
  std::lock_guard persist(persist_mu_);
  std::uint64_t offset = 0;
  {
    std::lock_guard lock(mu_);
    now_ms = std::max(now_ms, last_timestamp_);
    auto blocks = claim(now_ms);
    if (!blocks.empty()) {
      offset = wal_.append(WalType::tick, Writer().u64(now_ms).u64(blocks.back().block_no).bytes());
      next_block_ = blocks.back().block_no + 1;
      last_timestamp_ = now_ms;
      for (auto& b : blocks) inflight_.push_back(std::move(b));
    }
  }
  if (offset) wal_.sync_to(offset);

  std::vector<std::pair<DataBlock, LedgerDigest>> out;
  while (!inflight_.empty()) {
    const auto& p = inflight_.front();
    std::pair<DataBlock, LedgerDigest> appended;
    try {
      appended = ledger_.append_block(p.batch, p.timestamp_ms);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::storage_error) break;
      throw;
    }
    if (appended.first.block_no != p.block_no) {
      fail(ErrorCode::corrupt_data, "block " + std::to_string(appended.first.block_no) +
                                        " landed where block " + std::to_string(p.block_no) +
                                        " was promised");
    }
    {
      std::lock_guard lock(mu_);
      drop_persisted(p);
      ++stats_.blocks;
    }
    inflight_.pop_front();
    out.push_back(std::move(appended));
  }
  return out;
}

void TxnManager::replay_wal() {
  auto records = wal_.replay();
  recovery_.wal_records = records.size();
  recovery_.wal_truncated_bytes = wal_.truncated_bytes();
  std::vector<PlannedBlock> plan;
  for (const auto& rec : records) {
    Reader r(rec.payload);
    switch (rec.type) {
      case WalType::prepare: {
        auto txn = Transaction::decode(r);
        if (!decided_.contains(txn.tid)) prepared_[txn.tid] = restrict_to_shard(txn);
        keys_.insert(txn.public_key);
        break;
      }
      case WalType::commit: {
        auto tid = TxnId::decode(r);
        auto it = prepared_.find(tid);
        if (it == prepared_.end()) fail(ErrorCode::corrupt_data, "WAL commits an unprepared transaction");
        promises_[tid] = install(it->second);
        committed_.emplace(tid, std::move(it->second.txn));
        prepared_.erase(it);
        decided_[tid] = Outcome::committed;
        break;
      }
      case WalType::abort: {
        auto tid = TxnId::decode(r);
        prepared_.erase(tid);
        decided_[tid] = Outcome::aborted;
        break;
      }
      case WalType::tick: {
        auto now = r.u64();
        auto last = r.u64();
        auto blocks = claim(now);
        if (blocks.empty() || blocks.back().block_no != last) {
          fail(ErrorCode::corrupt_data, "WAL tick disagrees with replayed commits");
        }
        next_block_ = last + 1;
        last_timestamp_ = now;
        for (auto& b : blocks) plan.push_back(std::move(b));
        break;
      }
    }
  }
  recovery_.ledger = ledger_.recover(plan);
  for (const auto& b : plan) drop_persisted(b);
  next_block_ = std::max(next_block_, ledger_.latest_block() + 1);
  for (const auto& [tid, p] : prepared_) lock_keys(p);
  recovery_.pending_versions = pending_count_;
  recovery_.undecided_prepares = prepared_.size();
  stats_ = TxnStats{};
}

std::uint64_t TxnManager::next_block() const {
  std::lock_guard lock(mu_);
  return next_block_;
}

TxnStats TxnManager::stats() const {
  std::lock_guard lock(mu_);
  auto s = stats_;
  s.pending_versions = pending_count_;
  return s;
}

}  // namespace glassdb

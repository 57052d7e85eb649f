#include "glassdb/auditor.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace glassdb {

using nlohmann::json;

std::string_view to_string(AuditVerdict v) {
  switch (v) {
    case AuditVerdict::accepted:
      return "accepted";
    case AuditVerdict::fork_detected:
      return "fork-detected";
    case AuditVerdict::rejected:
      return "rejected";
    case AuditVerdict::deferred:
      return "deferred";
  }
  return "unknown";
}

namespace {

json digest_json(const LedgerDigest& d) {
  return {{"block_no", d.block_no}, {"digest", d.digest.hex()}};
}

LedgerDigest digest_from_json(const json& j) {
  return {Hash::from_hex(j.at("digest").get<std::string>()), j.at("block_no").get<std::uint64_t>()};
}

AuditOutcome outcome(AuditVerdict v, std::string detail, std::uint64_t block = 0) {
  AuditOutcome o;
  o.verdict = v;
  o.detail = std::move(detail);
  o.block_no = block;
  return o;
}

AuditOutcome accepted() { return outcome(AuditVerdict::accepted, {}); }

AuditOutcome rejected(std::uint64_t block, std::string detail) {
  return outcome(AuditVerdict::rejected, "block " + std::to_string(block) + ": " + detail, block);
}

}  // namespace

std::string ForkEvidence::to_json() const {
  json j{{"type", "fork-evidence"},
         {"shard_id", shard_id},
         {"local", digest_json(local)},
         {"remote", digest_json(remote)},
         {"source", source},
         {"reason", reason}};
  return j.dump();
}

Auditor::Auditor(std::shared_ptr<Channel> shard, AuditorOptions opts)
    : shard_(std::move(shard)), opts_(std::move(opts)),
      replica_(std::make_unique<Ledger>(opts_.ledger)) {}

void Auditor::register_client(std::string_view public_key) {
  std::lock_guard lock(mu_);
  keys_.insert(ByteString(public_key));
}

LedgerDigest Auditor::digest() const {
  std::lock_guard lock(mu_);
  return replica_->digest();
}

std::vector<ForkEvidence> Auditor::evidence() const {
  std::lock_guard lock(mu_);
  return evidence_;
}

bool Auditor::fork_detected() const {
  std::lock_guard lock(mu_);
  return !evidence_.empty();
}

AuditOutcome Auditor::verify_block(std::uint64_t block_no) {
  std::lock_guard lock(mu_);
  return verify_block_locked(block_no);
}

AuditOutcome Auditor::verify_block_locked(std::uint64_t block_no) {
  if (block_no != replica_->latest_block() + 1) {
    fail(ErrorCode::invalid_input, "blocks are audited in order; next is " +
                                       std::to_string(replica_->latest_block() + 1));
  }
  AuditBlockReply reply;
  try {
    auto body = shard_->request(MsgKind::audit_block, Writer().u64(block_no).bytes());
    reply = AuditBlockReply::decode(body);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::transport_error || e.code() == ErrorCode::not_yet_persisted) {
      return outcome(AuditVerdict::deferred, e.what(), block_no);
    }
    return rejected(block_no, std::string("unusable audit reply: ") + e.what());
  }
  const auto& block = reply.block;
  if (block.block_no != block_no) return rejected(block_no, "block number mismatch");
  if (reply.txns.size() != block.txn_ids.size()) {
    return rejected(block_no, "transactions do not match the block's ids");
  }
  std::unordered_map<TxnId, const Transaction*> txns;
  for (std::size_t i = 0; i < reply.txns.size(); ++i) {
    const auto& t = reply.txns[i];
    if (t.tid != block.txn_ids[i]) return rejected(block_no, "transactions do not match the block's ids");
    if (!t.signature_valid()) {
      return rejected(block_no, "transaction " + t.tid.to_string() + " has an invalid signature");
    }
    if (opts_.require_registered_keys && !keys_.contains(t.public_key)) {
      return rejected(block_no, "transaction " + t.tid.to_string() + " is from an unregistered key");
    }
    txns[t.tid] = &t;
  }
  std::unordered_set<ByteString> fresh;
  for (const auto& w : reply.writes) {
    auto it = txns.find(w.tid);
    if (it == txns.end()) return rejected(block_no, "write of key outside the block's transactions");
    const auto& ws = it->second->write_set;
    bool signed_write = std::any_of(ws.begin(), ws.end(), [&](const WriteItem& x) {
      return x.key == w.key && x.value == w.value;
    });
    if (!signed_write) {
      return rejected(block_no, "write not signed by transaction " + w.tid.to_string());
    }
    if (opts_.shards > 1 && shard_of(w.key, opts_.shards) != opts_.shard_id) {
      return rejected(block_no, "write of a key owned by another shard");
    }
    Writer id;
    w.tid.encode(id);
    id.raw(w.key);
    auto tag = std::move(id).take();
    if (applied_.contains(tag) || !fresh.insert(tag).second) {
      return rejected(block_no, "write of transaction " + w.tid.to_string() + " applied twice");
    }
  }
  if (WriteBatch{reply.writes}.txn_ids() != block.txn_ids) {
    return rejected(block_no, "block ids do not match its writes");
  }
  try {
    replica_->replay_block(block, reply.writes);
  } catch (const Error& e) {
    return rejected(block_no, e.what());
  }
  applied_.merge(fresh);
  return accepted();
}

AuditOutcome Auditor::catch_up(std::uint64_t target) {
  std::lock_guard lock(mu_);
  return catch_up_locked(target);
}

AuditOutcome Auditor::catch_up_locked(std::uint64_t target) {
  while (replica_->latest_block() < target) {
    auto out = verify_block_locked(replica_->latest_block() + 1);
    if (out.verdict != AuditVerdict::accepted) return out;
  }
  return accepted();
}

AuditOutcome Auditor::fork_locked(const LedgerDigest& local, const LedgerDigest& remote,
                                  std::string_view source, std::string reason) {
  ForkEvidence ev{opts_.shard_id, local, remote, std::string(source), reason};
  evidence_.push_back(ev);
  return outcome(AuditVerdict::fork_detected, std::move(reason), remote.block_no);
}

AuditOutcome Auditor::judge_locked(const LedgerDigest& d, std::string_view source) {
  if (d.block_no > replica_->latest_block()) {
    auto out = catch_up_locked(d.block_no);
    if (out.verdict != AuditVerdict::accepted) return out;
  }
  auto mine = replica_->digest_at(d.block_no);
  if (mine != d) {
    return fork_locked(mine, d, source,
                       "digest at block " + std::to_string(d.block_no) +
                           " is not on the audited history");
  }
  return accepted();
}

AuditOutcome Auditor::verify_digest(const LedgerDigest& d, std::string_view source) {
  std::lock_guard lock(mu_);
  auto out = judge_locked(d, source);
  out.head = replica_->digest();
  return out;
}

AuditOutcome Auditor::sync() {
  LedgerDigest served;
  try {
    auto body = shard_->request(MsgKind::get_digest, "");
    Reader r(body);
    served = decode_digest(r);
    r.expect_done();
  } catch (const Error& e) {
    return outcome(AuditVerdict::deferred, e.what());
  }
  std::lock_guard lock(mu_);
  return judge_locked(served, "shard");
}

void Auditor::add_peer(std::string name, AuditPeer peer) {
  std::lock_guard lock(mu_);
  peers_.emplace_back(std::move(name), std::move(peer));
}

std::vector<AuditOutcome> Auditor::gossip() {
  std::vector<std::pair<std::string, AuditPeer>> peers;
  LedgerDigest d;
  {
    std::lock_guard lock(mu_);
    peers = peers_;
    d = replica_->digest();
  }
  std::vector<AuditOutcome> out;
  for (const auto& [name, peer] : peers) {
    AuditOutcome o;
    try {
      o = peer(d, "auditor");
    } catch (const std::exception& e) {
      o = outcome(AuditVerdict::deferred, "peer " + name + " unreachable: " + e.what());
    }
    if (o.verdict != AuditVerdict::deferred) {
      std::lock_guard lock(mu_);
      auto back = judge_locked(o.head, name);
      if (back.verdict == AuditVerdict::fork_detected) o = back;
    }
    out.push_back(std::move(o));
  }
  return out;
}

void Auditor::save_checkpoint() const {
  if (opts_.checkpoint_path.empty()) return;
  std::lock_guard lock(mu_);
  json keys = json::array();
  for (const auto& k : keys_) keys.push_back(to_hex(k));
  json ev = json::array();
  for (const auto& e : evidence_) ev.push_back(json::parse(e.to_json()));
  json j{{"format", "glass-audit-checkpoint/1"},
         {"shard_id", opts_.shard_id},
         {"head", digest_json(replica_->digest())},
         {"keys", keys},
         {"evidence", ev}};
  auto tmp = opts_.checkpoint_path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) fail(ErrorCode::storage_error, "cannot write checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, opts_.checkpoint_path);
}

bool Auditor::restore() {
  if (opts_.checkpoint_path.empty() || !std::filesystem::exists(opts_.checkpoint_path)) return false;
  json j;
  try {
    std::ifstream in(opts_.checkpoint_path);
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt_data, std::string("bad checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "glass-audit-checkpoint/1") {
    fail(ErrorCode::corrupt_data, "unknown checkpoint format");
  }
  std::lock_guard lock(mu_);
  for (const auto& k : j.at("keys")) keys_.insert(from_hex(k.get<std::string>()));
  for (const auto& e : j.at("evidence")) {
    evidence_.push_back({e.at("shard_id").get<std::uint32_t>(), digest_from_json(e.at("local")),
                         digest_from_json(e.at("remote")), e.at("source").get<std::string>(),
                         e.at("reason").get<std::string>()});
  }
  auto head = digest_from_json(j.at("head"));
  auto out = judge_locked(head, "checkpoint");
  if (out.verdict == AuditVerdict::deferred) {
    fail(ErrorCode::transport_error, "cannot replay up to the checkpoint: " + out.detail);
  }
  return true;
}

ByteString encode_submission(const LedgerDigest& d, std::string_view source) {
  Writer w;
  encode_digest(w, d);
  w.str(source);
  return std::move(w).take();
}

AuditOutcome decode_verdict(std::string_view body) {
  Reader r(body);
  auto v = r.u8();
  if (v > 3) fail(ErrorCode::corrupt_data, "bad verdict");
  AuditOutcome out;
  out.verdict = static_cast<AuditVerdict>(v);
  out.detail = std::string(r.str());
  out.block_no = r.u64();
  out.head = decode_digest(r);
  r.expect_done();
  return out;
}

ByteString Auditor::handle(std::uint8_t kind, std::string_view payload) {
  try {
    if (kind == static_cast<std::uint8_t>(MsgKind::submit_digest)) {
      Reader r(payload);
      auto d = decode_digest(r);
      auto source = r.str();
      r.expect_done();
      auto out = verify_digest(d, source);
      Writer w;
      w.u8(static_cast<std::uint8_t>(out.verdict)).str(out.detail).u64(out.block_no);
      encode_digest(w, out.head);
      return ok_reply(w.bytes());
    }
    if (kind == static_cast<std::uint8_t>(MsgKind::audit_register)) {
      Reader r(payload);
      auto pk = r.str();
      r.expect_done();
      register_client(pk);
      return ok_reply("");
    }
    return error_reply(ErrorCode::invalid_input, "unknown request kind");
  } catch (const Error& e) {
    return error_reply(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_reply(ErrorCode::storage_error, e.what());
  }
}

}  // namespace glassdb

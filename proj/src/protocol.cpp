#include "glassdb/protocol.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "glassdb/crypto.hpp"

namespace glassdb {

std::uint32_t shard_of(std::string_view key, std::uint32_t shards) {
  if (shards <= 1) return 0;
  auto h = crypto::blake2b256(key);
  Reader r(h.view());
  return static_cast<std::uint32_t>(r.u64() % shards);
}

ByteString Frame::encode() const {
  Writer w;
  w.u32(static_cast<std::uint32_t>(1 + 8 + payload.size())).u8(kind).u64(correlation).raw(payload);
  return std::move(w).take();
}

std::size_t Frame::decode(std::string_view buf, Frame& out) {
  if (buf.size() < 4) return 0;
  Reader r(buf);
  auto len = r.u32();
  if (len < 9 || len > kMaxFrame) fail(ErrorCode::corrupt_data, "bad frame length");
  if (buf.size() - 4 < len) return 0;
  out.kind = r.u8();
  out.correlation = r.u64();
  out.payload = ByteString(r.raw(len - 9));
  return 4 + len;
}

ByteString ok_reply(std::string_view body) {
  ByteString out(1, '\0');
  out.append(body);
  return out;
}

ByteString error_reply(ErrorCode code, std::string_view message) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(code)).str(message);
  return std::move(w).take();
}

std::string_view unwrap_reply(std::string_view reply) {
  Reader r(reply);
  auto status = r.u8();
  if (status == 0) return reply.substr(1);
  if (status > static_cast<std::uint8_t>(ErrorCode::injected_crash)) {
    fail(ErrorCode::corrupt_data, "unknown reply status");
  }
  auto msg = r.str();
  throw Error(static_cast<ErrorCode>(status), std::string(msg));
}

void encode_digest(Writer& w, const LedgerDigest& d) { w.hash(d.digest).u64(d.block_no); }

LedgerDigest decode_digest(Reader& r) {
  LedgerDigest d;
  d.digest = r.hash();
  d.block_no = r.u64();
  return d;
}

namespace {

template <typename F>
auto parse(std::string_view bytes, F&& f) {
  Reader r(bytes);
  auto out = f(r);
  r.expect_done();
  return out;
}

void encode_versioned(Writer& w, const VersionedValue& v) { w.str(v.value).u64(v.version); }

VersionedValue decode_versioned(Reader& r) {
  VersionedValue v;
  v.value = ByteString(r.str());
  v.version = r.u64();
  return v;
}

}  // namespace

ByteString GetRequest::encode() const {
  Writer w;
  w.str(key).u8(static_cast<std::uint8_t>(mode)).u64(arg);
  return std::move(w).take();
}

GetRequest GetRequest::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    GetRequest g;
    g.key = ByteString(r.str());
    auto m = r.u8();
    if (m > 2) fail(ErrorCode::corrupt_data, "bad read mode");
    g.mode = static_cast<ReadMode>(m);
    g.arg = r.u64();
    return g;
  });
}

ByteString GetReply::encode() const {
  Writer w;
  w.u8(found ? 1 : 0).str(value).u64(version);
  encode_digest(w, digest);
  return std::move(w).take();
}

GetReply GetReply::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    GetReply g;
    g.found = r.u8() != 0;
    g.value = ByteString(r.str());
    g.version = r.u64();
    g.digest = decode_digest(r);
    return g;
  });
}

ByteString ProofRequest::encode() const {
  Writer w;
  encode_digest(w, cached);
  w.u32(static_cast<std::uint32_t>(reads.size()));
  for (const auto& c : reads) {
    w.str(c.key).str(c.value).u64(c.version);
    encode_digest(w, c.read_digest);
  }
  w.u32(static_cast<std::uint32_t>(writes.size()));
  for (const auto& p : writes) w.str(p.key).str(p.value).u64(p.block_no);
  return std::move(w).take();
}

ProofRequest ProofRequest::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    ProofRequest q;
    q.cached = decode_digest(r);
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      ReadClaim c;
      c.key = ByteString(r.str());
      c.value = ByteString(r.str());
      c.version = r.u64();
      c.read_digest = decode_digest(r);
      q.reads.push_back(std::move(c));
    }
    n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      PromisedWrite p;
      p.key = ByteString(r.str());
      p.value = ByteString(r.str());
      p.block_no = r.u64();
      q.writes.push_back(std::move(p));
    }
    return q;
  });
}

ByteString ProofReply::encode() const {
  Writer w;
  encode_digest(w, digest);
  w.str(bundle.encode());
  return std::move(w).take();
}

ProofReply ProofReply::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    ProofReply p;
    p.digest = decode_digest(r);
    p.bundle = ProofBundle::decode(r.str());
    return p;
  });
}

ByteString AppendRequest::encode() const {
  Writer w;
  encode_digest(w, old_digest);
  encode_digest(w, new_digest);
  return std::move(w).take();
}

AppendRequest AppendRequest::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    AppendRequest a;
    a.old_digest = decode_digest(r);
    a.new_digest = decode_digest(r);
    return a;
  });
}

ByteString AuditBlockReply::encode() const {
  Writer w;
  w.str(block.serialize());
  w.u32(static_cast<std::uint32_t>(writes.size()));
  for (const auto& bw : writes) {
    w.str(bw.key).str(bw.value);
    bw.tid.encode(w);
  }
  w.u32(static_cast<std::uint32_t>(txns.size()));
  for (const auto& t : txns) t.encode(w);
  return std::move(w).take();
}

AuditBlockReply AuditBlockReply::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    AuditBlockReply a;
    a.block = DataBlock::deserialize(r.str());
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      BatchWrite bw;
      bw.key = ByteString(r.str());
      bw.value = ByteString(r.str());
      bw.tid = TxnId::decode(r);
      a.writes.push_back(std::move(bw));
    }
    n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) a.txns.push_back(Transaction::decode(r));
    return a;
  });
}

ByteString HistoryRequest::encode() const {
  Writer w;
  w.str(key).u32(count);
  encode_digest(w, from);
  return std::move(w).take();
}

HistoryRequest HistoryRequest::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    HistoryRequest h;
    h.key = ByteString(r.str());
    h.count = r.u32();
    h.from = decode_digest(r);
    return h;
  });
}

ByteString HistoryReply::encode() const {
  Writer w;
  encode_digest(w, digest);
  w.u32(static_cast<std::uint32_t>(versions.size()));
  for (const auto& v : versions) encode_versioned(w, v);
  w.str(bundle.encode());
  return std::move(w).take();
}

HistoryReply HistoryReply::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    HistoryReply h;
    h.digest = decode_digest(r);
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) h.versions.push_back(decode_versioned(r));
    h.bundle = ProofBundle::decode(r.str());
    return h;
  });
}

ByteString CommitRequest::encode() const {
  Writer w;
  tid.encode(w);
  w.u8(sync ? 1 : 0);
  return std::move(w).take();
}

CommitRequest CommitRequest::decode(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    CommitRequest c;
    c.tid = TxnId::decode(r);
    c.sync = r.u8() != 0;
    return c;
  });
}

ByteString encode_vote(const PrepareResult& v) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(v.vote)).str(v.reason);
  return std::move(w).take();
}

PrepareResult decode_vote(std::string_view bytes) {
  return parse(bytes, [](Reader& r) {
    PrepareResult v;
    auto vote = r.u8();
    if (vote != 1 && vote != 2) fail(ErrorCode::corrupt_data, "bad vote");
    v.vote = static_cast<Vote>(vote);
    v.reason = std::string(r.str());
    return v;
  });
}

ByteString encode_promise(const Promise& p) {
  Writer w;
  p.encode(w);
  return std::move(w).take();
}

Promise decode_promise(std::string_view bytes) {
  return parse(bytes, [](Reader& r) { return Promise::decode(r); });
}

ByteString encode_tid(const TxnId& t) {
  Writer w;
  t.encode(w);
  return std::move(w).take();
}

TxnId decode_tid(std::string_view bytes) {
  return parse(bytes, [](Reader& r) { return TxnId::decode(r); });
}

}  // namespace glassdb

namespace glassdb {

std::vector<ProofClaim> proof_claims(const ProofRequest& q) {
  std::vector<ProofClaim> out;
  for (const auto& w : q.writes) out.push_back({{w.key, w.value}, w.block_no});
  for (const auto& r : q.reads) {
    if (r.version != 0) out.push_back({{r.key, r.value}, std::max(r.version, r.read_digest.block_no)});
  }
  std::sort(out.begin(), out.end(), [](const ProofClaim& a, const ProofClaim& b) {
    return std::tie(a.block_no, a.kv) < std::tie(b.block_no, b.kv);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const ProofClaim& a, const ProofClaim& b) {
                          return a.block_no == b.block_no && a.kv == b.kv;
                        }),
            out.end());
  return out;
}

std::optional<std::string> check_proof_reply(const ProofRequest& q, const ProofReply& reply) {
  const auto& d = reply.digest;
  if (d != q.cached) {
    if (reply.bundle.append.size() != 1) return "digest does not extend the cached digest";
    if (!proofs::verify_append(reply.bundle.append[0], q.cached, d)) {
      return "append-only proof failed from block " + std::to_string(q.cached.block_no) + " to " +
             std::to_string(d.block_no);
    }
  } else if (!reply.bundle.append.empty()) {
    return "unexpected append-only proof";
  }
  std::map<std::uint64_t, const InclusionProof*> by_block;
  for (const auto& p : reply.bundle.inclusion) {
    if (!by_block.emplace(p.block_no, &p).second) return "two proofs for block " + std::to_string(p.block_no);
    const bool ok = p.block_no == d.block_no ? proofs::verify_current(p, d) : proofs::verify_inclusion(p, d);
    if (!ok) return "inclusion proof failed at block " + std::to_string(p.block_no);
  }
  auto holds = [&](std::uint64_t block, const KeyValue& kv) {
    auto it = by_block.find(block);
    if (it == by_block.end()) return false;
    const auto& e = it->second->entries;
    auto pos = std::lower_bound(e.begin(), e.end(), kv.key,
                                [](const KeyValue& x, const ByteString& k) { return x.key < k; });
    return pos != e.end() && pos->key == kv.key && pos->value == kv.value;
  };
  for (const auto& c : proof_claims(q)) {
    if (c.block_no > d.block_no) return "claim beyond the reply digest at block " + std::to_string(c.block_no);
    if (!holds(c.block_no, c.kv) && !holds(d.block_no, c.kv)) {
      return "no proof of " + c.kv.key + " at block " + std::to_string(c.block_no);
    }
  }
  return std::nullopt;
}

}  // namespace glassdb

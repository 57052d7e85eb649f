#include "glassdb/txn.hpp"

namespace glassdb {

namespace {
constexpr std::string_view kTxnTag = "GTXN";
constexpr std::size_t kMaxField = 64u << 20;
}  // namespace

std::string TxnId::to_string() const {
  return std::to_string(client_id) + ":" + std::to_string(timestamp_ms) + ":" +
         std::to_string(counter);
}

std::uint64_t client_id_for(std::string_view public_key) {
  auto h = crypto::blake2b256(public_key);
  Reader r(h.view());
  return r.u64();
}

ByteString Transaction::signing_bytes() const {
  Writer w;
  w.raw(kTxnTag);
  tid.encode(w);
  w.str(public_key);
  w.u32(static_cast<std::uint32_t>(read_set.size()));
  for (const auto& r : read_set) w.str(r.key).u64(r.version);
  w.u32(static_cast<std::uint32_t>(write_set.size()));
  for (const auto& wr : write_set) w.str(wr.key).str(wr.value);
  return std::move(w).take();
}

void Transaction::sign(const crypto::KeyPair& keys) {
  public_key = keys.public_key;
  tid.client_id = client_id_for(public_key);
  signature = crypto::sign(keys, signing_bytes());
}

bool Transaction::signature_valid() const {
  if (tid.client_id != client_id_for(public_key)) return false;
  return crypto::verify_signature(public_key, signing_bytes(), signature);
}

void Transaction::encode(Writer& w) const {
  w.raw(signing_bytes());
  w.str(signature);
}

Transaction Transaction::decode(Reader& r) {
  Transaction t;
  if (r.raw(kTxnTag.size()) != kTxnTag) fail(ErrorCode::corrupt_data, "bad transaction tag");
  t.tid = TxnId::decode(r);
  t.public_key = ByteString(r.str(kMaxField));
  auto nr = r.u32();
  if (nr > r.remaining() / 12) fail(ErrorCode::corrupt_data, "read set too large");
  for (std::uint32_t i = 0; i < nr; ++i) {
    ReadItem item;
    item.key = ByteString(r.str(kMaxField));
    item.version = r.u64();
    t.read_set.push_back(std::move(item));
  }
  auto nw = r.u32();
  if (nw > r.remaining() / 8) fail(ErrorCode::corrupt_data, "write set too large");
  for (std::uint32_t i = 0; i < nw; ++i) {
    WriteItem item;
    item.key = ByteString(r.str(kMaxField));
    item.value = ByteString(r.str(kMaxField));
    t.write_set.push_back(std::move(item));
  }
  t.signature = ByteString(r.str(kMaxField));
  return t;
}

}  // namespace glassdb

#include "glassdb/ledger.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <unordered_set>

#include "fileio.hpp"
#include "glassdb/codec.hpp"
#include "glassdb/crypto.hpp"

namespace glassdb {

namespace {

constexpr std::string_view kBlockTag = "GBLK";
constexpr std::string_view kBlockMapMagic = "GBMP";
constexpr std::uint16_t kBlockMapVersion = 1;
constexpr std::size_t kBlockMapRecord = 8 + Hash::kSize;

}  // namespace

// ---------------------------------------------------------------------------
// DataBlock

ByteString DataBlock::serialize() const {
  Writer w;
  w.raw(kBlockTag).u64(block_no).u64(timestamp_ms).u32(static_cast<std::uint32_t>(txn_ids.size()));
  for (const auto& t : txn_ids) t.encode(w);
  w.hash(state_root);
  return std::move(w).take();
}

DataBlock DataBlock::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(kBlockTag.size()) != kBlockTag) fail(ErrorCode::corrupt_data, "bad block tag");
  DataBlock b;
  b.block_no = r.u64();
  b.timestamp_ms = r.u64();
  auto n = r.u32();
  if (n > r.remaining() / 24) fail(ErrorCode::corrupt_data, "block txn count too large");
  b.txn_ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) b.txn_ids.push_back(TxnId::decode(r));
  b.state_root = r.hash();
  r.expect_done();
  return b;
}

Hash DataBlock::hash() const { return crypto::blake2b256(serialize()); }

std::vector<TxnId> WriteBatch::txn_ids() const {
  std::vector<TxnId> out;
  std::unordered_set<TxnId> seen;
  for (const auto& w : writes) {
    if (seen.insert(w.tid).second) out.push_back(w.tid);
  }
  return out;
}

// ---------------------------------------------------------------------------
// BlockMap

BlockMap::BlockMap(std::string path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fileio::throw_errno("open " + path_);
  auto data = fileio::read_all(fd_, path_);
  const auto header = Writer().raw(kBlockMapMagic).u16(kBlockMapVersion).bytes();
  if (data.size() < header.size()) {
    if (::ftruncate(fd_, 0) != 0) fileio::throw_errno("truncate " + path_);
    fileio::write_all(fd_, header, path_);
    return;
  }
  if (data.compare(0, header.size(), header) != 0) {
    fail(ErrorCode::corrupt_data, path_ + ": bad block-map header");
  }
  std::size_t pos = header.size();
  while (data.size() - pos >= kBlockMapRecord) {
    Reader r(std::string_view(data).substr(pos, kBlockMapRecord));
    auto no = r.u64();
    entries_[no] = r.hash();
    pos += kBlockMapRecord;
  }
  if (pos < data.size() && ::ftruncate(fd_, static_cast<off_t>(pos)) != 0) {
    fileio::throw_errno("truncate " + path_);
  }
  if (::lseek(fd_, 0, SEEK_END) < 0) fileio::throw_errno("seek " + path_);
}

BlockMap::~BlockMap() {
  if (fd_ >= 0) ::close(fd_);
}

void BlockMap::add(std::uint64_t block_no, const Hash& block_hash) {
  std::unique_lock lock(mu_);
  if (hook_) hook_("blockmap");
  if (fd_ >= 0) {
    fileio::write_all(fd_, Writer().u64(block_no).hash(block_hash).bytes(), path_);
    if (::fdatasync(fd_) != 0) fileio::throw_errno("fdatasync " + path_);
  }
  entries_[block_no] = block_hash;
}

std::optional<Hash> BlockMap::find(std::uint64_t block_no) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(block_no);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t BlockMap::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Ledger

Ledger::Ledger(LedgerOptions opts)
    : Ledger(opts, std::make_unique<MemoryNodeStore>(), std::make_unique<BlockMap>()) {}

Ledger::Ledger(LedgerOptions opts, std::unique_ptr<NodeStore> store, std::unique_ptr<BlockMap> map)
    : opts_(opts), store_(std::move(store)), block_map_(std::move(map)) {
  opts_.lower_chunking.validate();
  opts_.upper_chunking.validate();
  heads_.push_back(Head{});
  writes_.emplace_back();
}

std::unique_ptr<Ledger> Ledger::open(const std::string& dir, LedgerOptions opts) {
  fileio::make_dirs(dir);
  auto store = std::make_unique<FileNodeStore>(fileio::join(dir, "nodes.dat"), opts.fsync);
  auto map = std::make_unique<BlockMap>(fileio::join(dir, "blockmap.dat"));
  return std::unique_ptr<Ledger>(new Ledger(opts, std::move(store), std::move(map)));
}

std::vector<Entry> Ledger::lower_entries(const WriteBatch& batch, const TreeRoot& lower) const {
  std::vector<Entry> entries;
  entries.reserve(batch.writes.size());
  for (const auto& w : batch.writes) entries.push_back(Entry{w.key, w.value, std::nullopt});
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.key < b.key; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i - 1].key == entries[i].key) {
      fail(ErrorCode::invalid_input, "write batch keys must be unique");
    }
  }
  for (auto& e : entries) {
    auto found = postree::lookup(lower.root_hash, e.key, *store_);
    if (found.entry) e.prev_hash = found.path_hashes.back();
  }
  return entries;
}

std::uint64_t Ledger::new_key_count(const WriteBatch& batch) const {
  std::shared_lock lock(mu_);
  std::uint64_t n = 0;
  for (const auto& w : batch.writes) n += versions_.contains(w.key) ? 0 : 1;
  return n;
}

LedgerDigest Ledger::publish(const DataBlock& block, const Hash& block_hash, const TreeRoot& lower,
                             std::vector<BatchWrite> writes) {
  TreeRoot upper_before;
  {
    std::shared_lock lock(mu_);
    upper_before = heads_.back().upper;
  }
  Entry leaf{be64_key(block.block_no), ByteString(block_hash.view()), std::nullopt};
  auto upper = postree::update(upper_before, std::span<const Entry>(&leaf, 1),
                               opts_.upper_chunking, *store_);
  std::unique_lock lock(mu_);
  heads_.push_back(Head{lower, upper});
  for (const auto& w : writes) versions_[w.key].push_back(block.block_no);
  writes_.push_back(std::move(writes));
  return LedgerDigest{upper.root_hash, block.block_no};
}

std::pair<DataBlock, LedgerDigest> Ledger::append_block(const WriteBatch& batch,
                                                         std::uint64_t now_ms) {
  if (batch.writes.empty()) fail(ErrorCode::invalid_input, "empty write batch");
  std::lock_guard guard(append_mu_);
  Head cur;
  {
    std::shared_lock lock(mu_);
    cur = heads_.back();
  }
  auto entries = lower_entries(batch, cur.lower);
  auto lower = postree::update(cur.lower, entries, opts_.lower_chunking, *store_);

  DataBlock block;
  block.block_no = latest_block() + 1;
  block.timestamp_ms = now_ms;
  block.txn_ids = batch.txn_ids();
  block.state_root = lower.root_hash;
  auto bytes = block.serialize();
  auto block_hash = crypto::blake2b256(bytes);
  store_->put(block_hash, bytes);
  store_->sync();
  block_map_->add(block.block_no, block_hash);

  auto digest = publish(block, block_hash, lower, batch.writes);
  return {std::move(block), digest};
}

LedgerDigest Ledger::replay_block(const DataBlock& block, std::span<const BatchWrite> writes) {
  std::lock_guard guard(append_mu_);
  if (block.block_no != latest_block() + 1) {
    fail(ErrorCode::corrupt_data, "block " + std::to_string(block.block_no) + " out of sequence");
  }
  WriteBatch batch{{writes.begin(), writes.end()}};
  if (batch.txn_ids() != block.txn_ids) {
    fail(ErrorCode::corrupt_data,
         "block " + std::to_string(block.block_no) + " txn ids do not match its writes");
  }
  Head cur;
  {
    std::shared_lock lock(mu_);
    cur = heads_.back();
  }
  auto entries = lower_entries(batch, cur.lower);
  auto lower = postree::update(cur.lower, entries, opts_.lower_chunking, *store_);
  if (lower.root_hash != block.state_root) {
    fail(ErrorCode::corrupt_data,
         "block " + std::to_string(block.block_no) + " state root mismatch");
  }
  auto bytes = block.serialize();
  auto block_hash = crypto::blake2b256(bytes);
  store_->put(block_hash, bytes);
  block_map_->add(block.block_no, block_hash);
  return publish(block, block_hash, lower, std::move(batch.writes));
}

RecoveryReport Ledger::recover(std::span<const PlannedBlock> plan) {
  RecoveryReport report;
  for (const auto& p : plan) {
    const auto expected = latest_block() + 1;
    if (p.block_no < expected) continue;
    if (p.block_no != expected) {
      fail(ErrorCode::corrupt_data, "recovery plan skips block " + std::to_string(expected));
    }
    auto persisted = block_map_->find(p.block_no);
    if (!persisted) {
      append_block(p.batch, p.timestamp_ms);
      ++report.recreated_blocks;
      continue;
    }
    auto bytes = store_->get(*persisted);
    if (!bytes) {
      fail(ErrorCode::corrupt_data, "block map names missing block " + std::to_string(p.block_no));
    }
    auto block = DataBlock::deserialize(*bytes);
    if (block.block_no != p.block_no || block.txn_ids != p.batch.txn_ids()) {
      fail(ErrorCode::corrupt_data, "persisted block " + std::to_string(p.block_no) +
                                        " disagrees with the write-ahead log");
    }
    if (block.state_root != empty_tree_hash() && !store_->contains(block.state_root)) {
      fail(ErrorCode::corrupt_data, "state root of block " + std::to_string(p.block_no) + " missing");
    }
    std::lock_guard guard(append_mu_);
    TreeRoot lower{block.state_root, state_root().entry_count + new_key_count(p.batch)};
    publish(block, *persisted, lower, p.batch.writes);
    ++report.reused_blocks;
  }
  report.digest = digest();
  return report;
}

BlockWithPath Ledger::get_block(std::uint64_t block_no) const {
  return get_block(block_no, digest());
}

BlockWithPath Ledger::get_block(std::uint64_t block_no, const LedgerDigest& at) const {
  if (!knows(at)) fail(ErrorCode::not_found, "unknown digest");
  if (block_no == 0 || block_no > at.block_no) {
    fail(ErrorCode::not_found, "block " + std::to_string(block_no) + " not in ledger");
  }
  auto found = postree::lookup(at.digest, be64_key(block_no), *store_);
  if (!found.entry) fail(ErrorCode::corrupt_tree, "upper tree lacks block " + std::to_string(block_no));
  BlockWithPath out;
  out.block_hash = Hash::from_view(found.entry->value);
  auto bytes = store_->get(out.block_hash);
  if (!bytes) fail(ErrorCode::corrupt_tree, "missing data block " + out.block_hash.hex());
  out.block = DataBlock::deserialize(*bytes);
  out.upper_path = std::move(found.path);
  return out;
}

std::optional<VersionedValue> Ledger::get_versioned(std::string_view key, VersionSelector at) const {
  std::uint64_t block_no = 0;
  if (auto* b = std::get_if<AtBlock>(&at)) {
    if (b->block_no > latest_block()) {
      fail(ErrorCode::out_of_range, "block " + std::to_string(b->block_no) + " beyond ledger");
    }
    block_no = b->block_no;
  } else {
    // Greatest block whose timestamp is <= the requested one.
    const auto ts = std::get<AtTimestamp>(at).timestamp_ms;
    const auto latest = digest();
    std::uint64_t lo = 1, hi = latest.block_no;
    while (lo <= hi) {
      auto mid = lo + (hi - lo) / 2;
      if (get_block(mid, latest).block.timestamp_ms <= ts) {
        block_no = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
  }
  if (block_no == 0) return std::nullopt;

  std::uint64_t version = 0;
  Hash root;
  {
    std::shared_lock lock(mu_);
    auto it = versions_.find(ByteString(key));
    if (it == versions_.end()) return std::nullopt;
    auto pos = std::upper_bound(it->second.begin(), it->second.end(), block_no);
    if (pos == it->second.begin()) return std::nullopt;
    version = *(pos - 1);
    root = heads_[block_no].lower.root_hash;
  }
  auto found = postree::lookup(root, key, *store_);
  if (!found.entry) fail(ErrorCode::corrupt_tree, "version index and state tree disagree");
  return VersionedValue{found.entry->value, version};
}

std::optional<VersionedValue> Ledger::get_latest(std::string_view key) const {
  return get_versioned(key, AtBlock{latest_block()});
}

std::optional<std::uint64_t> Ledger::latest_version(std::string_view key) const {
  std::shared_lock lock(mu_);
  auto it = versions_.find(ByteString(key));
  if (it == versions_.end()) return std::nullopt;
  return it->second.back();
}

std::vector<std::uint64_t> Ledger::versions(std::string_view key) const {
  std::shared_lock lock(mu_);
  auto it = versions_.find(ByteString(key));
  if (it == versions_.end()) return {};
  return it->second;
}

LedgerDigest Ledger::digest() const {
  std::shared_lock lock(mu_);
  return LedgerDigest{heads_.back().upper.root_hash, heads_.size() - 1};
}

LedgerDigest Ledger::digest_at(std::uint64_t block_no) const {
  std::shared_lock lock(mu_);
  if (block_no >= heads_.size()) {
    fail(ErrorCode::not_found, "block " + std::to_string(block_no) + " not in ledger");
  }
  return LedgerDigest{heads_[block_no].upper.root_hash, block_no};
}

bool Ledger::knows(const LedgerDigest& d) const {
  std::shared_lock lock(mu_);
  return d.block_no < heads_.size() && heads_[d.block_no].upper.root_hash == d.digest;
}

std::uint64_t Ledger::latest_block() const {
  std::shared_lock lock(mu_);
  return heads_.size() - 1;
}

TreeRoot Ledger::state_root() const {
  std::shared_lock lock(mu_);
  return heads_.back().lower;
}

TreeRoot Ledger::state_root_at(std::uint64_t block_no) const {
  std::shared_lock lock(mu_);
  if (block_no >= heads_.size()) {
    fail(ErrorCode::not_found, "block " + std::to_string(block_no) + " not in ledger");
  }
  return heads_[block_no].lower;
}

std::vector<BatchWrite> Ledger::block_writes(std::uint64_t block_no) const {
  std::shared_lock lock(mu_);
  if (block_no == 0 || block_no >= writes_.size()) {
    fail(ErrorCode::not_found, "block " + std::to_string(block_no) + " not in ledger");
  }
  return writes_[block_no];
}

}  // namespace glassdb

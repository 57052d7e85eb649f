#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "glassdb/common.hpp"

namespace glassdb {

enum class WalType : std::uint8_t { prepare = 1, commit = 2, abort = 3, tick = 4 };

struct WalRecord {
  WalType type;
  ByteString payload;
  bool operator==(const WalRecord&) const = default;
};

/// Append-only log after a "GWAL" u16 version header. Each record is
/// u32 length (type + payload), u8 type, payload, u32 crc32(type + payload).
class Wal {
 public:
  using WriteHook = std::function<void(std::string_view site)>;

  /// In-memory log.
  Wal() = default;
  /// File-backed log; `fsync` controls whether sync_to() reaches the disk.
  explicit Wal(std::string path, bool fsync = true,
               std::chrono::microseconds group_window = std::chrono::microseconds(1000));
  ~Wal();
  Wal(const Wal&) = delete;
  Wal& operator=(const Wal&) = delete;

  /// All intact records. A torn or corrupt tail is cut off at the last
  /// valid record (see truncated_bytes()).
  std::vector<WalRecord> replay();

  /// Appends one record; returns the log offset after it.
  std::uint64_t append(WalType type, std::string_view payload);
  /// Makes everything up to `offset` durable. Concurrent callers share one
  /// fdatasync.
  void sync_to(std::uint64_t offset);

  std::uint64_t truncated_bytes() const { return truncated_; }
  std::uint64_t size() const;
  void set_write_hook(WriteHook hook) { hook_ = std::move(hook); }

 private:
  std::string path_;
  int fd_ = -1;
  bool fsync_ = true;
  std::chrono::microseconds window_{0};
  mutable std::mutex mu_;
  std::mutex sync_mu_;
  std::uint64_t end_ = 0;
  std::uint64_t synced_ = 0;
  std::uint64_t truncated_ = 0;
  ByteString memory_;  // record bytes when not file-backed
  WriteHook hook_;
};

}  // namespace glassdb

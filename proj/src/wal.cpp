#include "glassdb/wal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <thread>

#include "fileio.hpp"
#include "glassdb/codec.hpp"
#include "glassdb/crypto.hpp"

namespace glassdb {

namespace {
constexpr std::string_view kWalMagic = "GWAL";
constexpr std::uint16_t kWalVersion = 1;
constexpr std::size_t kHeaderSize = 6;

ByteString header() { return Writer().raw(kWalMagic).u16(kWalVersion).bytes(); }

bool known_type(std::uint8_t t) { return t >= 1 && t <= 4; }
}  // namespace

Wal::Wal(std::string path, bool fsync, std::chrono::microseconds group_window)
    : path_(std::move(path)), fsync_(fsync), window_(group_window) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fileio::throw_errno("open " + path_);
}

Wal::~Wal() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<WalRecord> Wal::replay() {
  std::lock_guard lock(mu_);
  ByteString data;
  std::size_t pos = 0;
  if (fd_ >= 0) {
    if (::lseek(fd_, 0, SEEK_SET) < 0) fileio::throw_errno("seek " + path_);
    data = fileio::read_all(fd_, path_);
    if (data.size() < kHeaderSize) {
      if (::ftruncate(fd_, 0) != 0) fileio::throw_errno("truncate " + path_);
      if (::lseek(fd_, 0, SEEK_SET) < 0) fileio::throw_errno("seek " + path_);
      fileio::write_all(fd_, header(), path_);
      end_ = synced_ = kHeaderSize;
      return {};
    }
    if (data.compare(0, kHeaderSize, header()) != 0) {
      fail(ErrorCode::corrupt_data, path_ + ": bad WAL header");
    }
    pos = kHeaderSize;
  } else {
    data = memory_;
  }

  std::vector<WalRecord> out;
  while (data.size() - pos >= 9) {
    Reader r(std::string_view(data).substr(pos));
    auto len = r.u32();
    if (len == 0 || r.remaining() < std::size_t{len} + 4) break;
    auto body = r.raw(len);
    auto crc = r.u32();
    if (crypto::crc32(body) != crc) break;
    auto type = static_cast<std::uint8_t>(body[0]);
    if (!known_type(type)) break;
    out.push_back(WalRecord{static_cast<WalType>(type), ByteString(body.substr(1))});
    pos += 4 + len + 4;
  }
  truncated_ = data.size() - pos;
  if (fd_ >= 0) {
    if (truncated_ > 0 && ::ftruncate(fd_, static_cast<off_t>(pos)) != 0) {
      fileio::throw_errno("truncate " + path_);
    }
    if (::lseek(fd_, 0, SEEK_END) < 0) fileio::throw_errno("seek " + path_);
  } else {
    memory_.resize(pos);
  }
  end_ = synced_ = pos;
  return out;
}

std::uint64_t Wal::append(WalType type, std::string_view payload) {
  Writer body;
  body.u8(static_cast<std::uint8_t>(type)).raw(payload);
  Writer rec;
  rec.u32(static_cast<std::uint32_t>(body.size())).raw(body.bytes()).u32(crypto::crc32(body.bytes()));
  std::lock_guard lock(mu_);
  if (hook_) hook_("wal-append");
  if (fd_ >= 0) {
    if (end_ == 0) {
      // Fresh file that was never replayed.
      if (::lseek(fd_, 0, SEEK_END) == 0) fileio::write_all(fd_, header(), path_);
      end_ = static_cast<std::uint64_t>(::lseek(fd_, 0, SEEK_END));
    }
    fileio::write_all(fd_, rec.bytes(), path_);
  } else {
    memory_ += rec.bytes();
  }
  end_ += rec.size();
  return end_;
}

void Wal::sync_to(std::uint64_t offset) {
  std::lock_guard sync(sync_mu_);
  std::uint64_t target;
  {
    std::lock_guard lock(mu_);
    if (synced_ >= offset) return;
  }
  if (window_.count() > 0) std::this_thread::sleep_for(window_);
  {
    std::lock_guard lock(mu_);
    if (hook_) hook_("wal-sync");
    target = end_;
  }
  if (fd_ >= 0 && fsync_ && ::fdatasync(fd_) != 0) fileio::throw_errno("fdatasync " + path_);
  std::lock_guard lock(mu_);
  synced_ = std::max(synced_, target);
}

std::uint64_t Wal::size() const {
  std::lock_guard lock(mu_);
  return end_;
}

}  // namespace glassdb

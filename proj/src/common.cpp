#include "glassdb/common.hpp"

#include <sodium.h>
#include <zlib.h>

#include "glassdb/crypto.hpp"

namespace glassdb {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::storage_error: return "storage_error";
    case ErrorCode::corrupt_tree: return "corrupt_tree";
    case ErrorCode::corrupt_data: return "corrupt_data";
    case ErrorCode::not_yet_persisted: return "not_yet_persisted";
    case ErrorCode::txn_aborted: return "txn_aborted";
    case ErrorCode::txn_unknown: return "txn_unknown";
    case ErrorCode::bad_signature: return "bad_signature";
    case ErrorCode::transport_error: return "transport_error";
    case ErrorCode::tamper_detected: return "tamper_detected";
    case ErrorCode::injected_crash: return "injected_crash";
  }
  return "unknown";
}

std::string to_hex(std::string_view raw) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xf]);
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(ErrorCode::invalid_input, "bad hex digit");
  };
  if (hex.size() % 2 != 0) fail(ErrorCode::invalid_input, "odd hex length");
  std::string out(hex.size() / 2, '\0');
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<char>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

Hash Hash::from_view(std::string_view raw) {
  if (raw.size() != kSize) fail(ErrorCode::invalid_input, "hash must be 32 bytes");
  Hash h;
  std::memcpy(h.bytes.data(), raw.data(), kSize);
  return h;
}

std::string Hash::hex() const { return to_hex(view()); }

Hash Hash::from_hex(std::string_view hex) { return from_view(glassdb::from_hex(hex)); }

namespace crypto {
namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) fail(ErrorCode::storage_error, "libsodium initialisation failed");
}

}  // namespace

Hash blake2b256(std::string_view data) {
  Hash out;
  crypto_generichash(out.bytes.data(), out.bytes.size(),
                     reinterpret_cast<const unsigned char*>(data.data()), data.size(),
                     nullptr, 0);
  return out;
}

std::uint32_t crc32(std::string_view data) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

KeyPair KeyPair::generate() {
  ensure_sodium();
  KeyPair kp;
  kp.public_key.resize(crypto_sign_PUBLICKEYBYTES);
  kp.secret_key.resize(crypto_sign_SECRETKEYBYTES);
  crypto_sign_keypair(reinterpret_cast<unsigned char*>(kp.public_key.data()),
                      reinterpret_cast<unsigned char*>(kp.secret_key.data()));
  return kp;
}

KeyPair KeyPair::from_seed(std::string_view seed32) {
  ensure_sodium();
  if (seed32.size() != crypto_sign_SEEDBYTES) {
    fail(ErrorCode::invalid_input, "seed must be 32 bytes");
  }
  KeyPair kp;
  kp.public_key.resize(crypto_sign_PUBLICKEYBYTES);
  kp.secret_key.resize(crypto_sign_SECRETKEYBYTES);
  crypto_sign_seed_keypair(reinterpret_cast<unsigned char*>(kp.public_key.data()),
                           reinterpret_cast<unsigned char*>(kp.secret_key.data()),
                           reinterpret_cast<const unsigned char*>(seed32.data()));
  return kp;
}

ByteString sign(const KeyPair& keys, std::string_view message) {
  ensure_sodium();
  ByteString sig(crypto_sign_BYTES, '\0');
  crypto_sign_detached(reinterpret_cast<unsigned char*>(sig.data()), nullptr,
                       reinterpret_cast<const unsigned char*>(message.data()), message.size(),
                       reinterpret_cast<const unsigned char*>(keys.secret_key.data()));
  return sig;
}

bool verify_signature(std::string_view public_key, std::string_view message,
                      std::string_view signature) {
  ensure_sodium();
  if (public_key.size() != crypto_sign_PUBLICKEYBYTES ||
      signature.size() != crypto_sign_BYTES) {
    return false;
  }
  return crypto_sign_verify_detached(
             reinterpret_cast<const unsigned char*>(signature.data()),
             reinterpret_cast<const unsigned char*>(message.data()), message.size(),
             reinterpret_cast<const unsigned char*>(public_key.data())) == 0;
}

}  // namespace crypto
}  // namespace glassdb

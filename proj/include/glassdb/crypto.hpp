#pragma once

#include <array>
#include <string_view>

#include "glassdb/common.hpp"

namespace glassdb::crypto {

/// BLAKE2b with a 32-byte output (not a truncated BLAKE2b-512).
Hash blake2b256(std::string_view data);

std::uint32_t crc32(std::string_view data);

constexpr std::size_t kPublicKeySize = 32;
constexpr std::size_t kSecretKeySize = 64;
constexpr std::size_t kSignatureSize = 64;

struct KeyPair {
  ByteString public_key;  // 32 bytes
  ByteString secret_key;  // 64 bytes (seed || public key)

  static KeyPair generate();
  /// Deterministic key pair from a 32-byte seed; used by tests and benches.
  static KeyPair from_seed(std::string_view seed32);
};

ByteString sign(const KeyPair& keys, std::string_view message);
bool verify_signature(std::string_view public_key, std::string_view message,
                      std::string_view signature);

}  // namespace glassdb::crypto

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glassdb/ledger.hpp"
#include "glassdb/postree.hpp"

namespace glassdb {

struct KeyValue {
  ByteString key;
  ByteString value;
  auto operator<=>(const KeyValue&) const = default;
};

/// Proof that `entries` are in the state committed by block `block_no`,
/// which in turn is in the upper tree of some digest. Lower paths of all
/// keys are merged into one duplicate-free node set.
struct InclusionProof {
  std::uint64_t block_no = 0;
  std::vector<PosNode> upper_path;  // root first
  DataBlock data_block;
  std::vector<PosNode> lower_nodes;
  std::vector<KeyValue> entries;  // sorted by key, unique

  /// Tree nodes carried (upper + lower); the data block is not counted.
  std::size_t node_count() const { return upper_path.size() + lower_nodes.size(); }
  bool operator==(const InclusionProof&) const = default;
};

/// Proof that the history behind `old_digest` is a prefix of the history
/// behind `new_digest`: the new tree's paths to the old and the new last
/// block. Empty when the digests are equal or the old one is genesis.
struct AppendOnlyProof {
  LedgerDigest old_digest;
  LedgerDigest new_digest;
  std::vector<PosNode> nodes;

  bool operator==(const AppendOnlyProof&) const = default;
};

/// Several proofs sharing one node table, so nodes common to them (upper
/// paths in particular) are sent once.
struct ProofBundle {
  std::vector<InclusionProof> inclusion;
  std::vector<AppendOnlyProof> append;

  ByteString encode() const;
  /// Strict decoding; malformed input throws Error(corrupt_data).
  static ProofBundle decode(std::string_view bytes);
  std::size_t node_count() const;
  bool operator==(const ProofBundle&) const = default;
};

namespace proofs {

/// Errors: block beyond `at` -> out_of_range; unknown digest or absent key
/// -> not_found.
InclusionProof prove_inclusion(const Ledger& ledger, const LedgerDigest& at, std::uint64_t block_no,
                               std::span<const ByteString> keys);
InclusionProof prove_current(const Ledger& ledger, const LedgerDigest& at,
                             std::span<const ByteString> keys);
AppendOnlyProof prove_append(const Ledger& ledger, const LedgerDigest& old_digest,
                             const LedgerDigest& new_digest);

/// Every entry of the proof is present at proof.block_no under `digest`.
bool verify_inclusion(const InclusionProof& proof, const LedgerDigest& digest);
/// As above, and the proven entries are exactly `expected` (any order).
bool verify_inclusion(const InclusionProof& proof, const LedgerDigest& digest,
                      std::span<const KeyValue> expected);
/// Inclusion at the digest's own last block, checked to be the rightmost
/// leaf of the upper tree.
bool verify_current(const InclusionProof& proof, const LedgerDigest& digest);
bool verify_current(const InclusionProof& proof, const LedgerDigest& digest,
                    std::span<const KeyValue> expected);
bool verify_append(const AppendOnlyProof& proof, const LedgerDigest& old_digest,
                   const LedgerDigest& new_digest);

}  // namespace proofs
}  // namespace glassdb

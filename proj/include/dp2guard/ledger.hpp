#pragma once

// Append-only hash-chained log of per-round aggregation results.
//
// One block per line (JSONL), keys sorted, no whitespace. A block's hash is
// SHA-256 over le64(index) | le64(round) | prev_hash | canonical payload,
// where the canonical payload is the compact sorted-key JSON of `payload`.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dp2guard {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& d);
Digest digest_from_hex(const std::string& hex);
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct LedgerPayload {
  Digest agg_share_digest{};
  std::map<std::uint32_t, double> trust_weights;
  Digest global_model_digest{};
  std::vector<std::uint8_t> agg_share_blob;

  friend bool operator==(const LedgerPayload&, const LedgerPayload&) = default;
};

struct Block {
  std::uint64_t index = 0;
  std::uint64_t round = 0;
  Digest prev_hash{};
  LedgerPayload payload;
  Digest hash{};
};

struct VerifyResult {
  bool ok = true;
  std::size_t first_bad_index = 0;

  static VerifyResult good() { return {}; }
  static VerifyResult bad(std::size_t i) { return {false, i}; }
};

std::string canonical_payload(const LedgerPayload& payload);
Digest block_hash(std::uint64_t index, std::uint64_t round, const Digest& prev_hash,
                  const LedgerPayload& payload);
/// Serialised line without the trailing newline.
std::string block_to_line(const Block& block);

/// Checks every line: exact canonical encoding, consecutive indices,
/// prev-hash linkage and stored hash.
VerifyResult verify_lines(std::span<const std::string> lines);
VerifyResult verify(std::span<const Block> chain);
/// A file whose last line lacks its newline is flagged at that line.
VerifyResult verify_file(const std::filesystem::path& path);

class Ledger {
 public:
  /// In-memory only.
  Ledger() = default;
  /// Backed by `path`; an existing file is loaded and must verify.
  explicit Ledger(std::filesystem::path path);

  /// Links, hashes and persists a new block before returning it.
  const Block& append(std::uint64_t round, LedgerPayload payload);
  /// Payload of the latest block recorded for `round`; throws NotFound.
  const LedgerPayload& read_round(std::uint64_t round) const;

  const std::vector<Block>& blocks() const { return blocks_; }
  VerifyResult verify() const { return dp2guard::verify(blocks_); }
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<Block> blocks_;
};

}  // namespace dp2guard

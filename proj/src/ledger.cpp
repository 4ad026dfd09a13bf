#include "dp2guard/ledger.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include "json.hpp"

#include "dp2guard/errors.hpp"
#include "dp2guard/wire.hpp"

namespace dp2guard {

using nlohmann::json;

Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw Error("sha256: digest failed");
  return out;
}

std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (std::uint8_t b : d) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xF]);
  }
  return s;
}

Digest digest_from_hex(const std::string& hex) {
  if (hex.size() != 64) throw FormatError("digest: expected 64 hex characters");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw FormatError("digest: invalid hex character");
  };
  Digest d{};
  for (std::size_t i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return d;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  if (base64_encode(out) != text) throw FormatError("base64: non-canonical encoding");
  return out;
}

namespace {

json payload_json(const LedgerPayload& p) {
  json weights = json::object();
  for (const auto& [client, w] : p.trust_weights) weights[std::to_string(client)] = w;
  return json{{"agg_share_digest", to_hex(p.agg_share_digest)},
              {"trust_weights", std::move(weights)},
              {"global_model_digest", to_hex(p.global_model_digest)},
              {"agg_share_blob", base64_encode(p.agg_share_blob)}};
}

std::uint32_t parse_client_key(const std::string& key) {
  if (key.empty() || key.size() > 10 || (key.size() > 1 && key[0] == '0')) throw FormatError("ledger: bad client key");
  std::uint64_t v = 0;
  for (char c : key) {
    if (c < '0' || c > '9') throw FormatError("ledger: bad client key");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  if (v > 0xFFFFFFFFull) throw FormatError("ledger: bad client key");
  return static_cast<std::uint32_t>(v);
}

LedgerPayload payload_from_json(const json& j) {
  if (!j.is_object() || j.size() != 4) throw FormatError("ledger: payload must have exactly four fields");
  LedgerPayload p;
  p.agg_share_digest = digest_from_hex(j.at("agg_share_digest").get<std::string>());
  p.global_model_digest = digest_from_hex(j.at("global_model_digest").get<std::string>());
  p.agg_share_blob = base64_decode(j.at("agg_share_blob").get<std::string>());
  const json& w = j.at("trust_weights");
  if (!w.is_object()) throw FormatError("ledger: trust_weights must be an object");
  for (const auto& [key, value] : w.items()) {
    if (!value.is_number()) throw FormatError("ledger: weight must be a number");
    p.trust_weights[parse_client_key(key)] = value.get<double>();
  }
  return p;
}

Block block_from_line(const std::string& line) {
  const json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object() || j.size() != 5) throw FormatError("ledger: malformed block");
  for (const char* key : {"index", "round"})
    if (!j.at(key).is_number_unsigned()) throw FormatError("ledger: index/round must be unsigned");
  Block b;
  b.index = j.at("index").get<std::uint64_t>();
  b.round = j.at("round").get<std::uint64_t>();
  b.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
  b.hash = digest_from_hex(j.at("hash").get<std::string>());
  b.payload = payload_from_json(j.at("payload"));
  if (block_to_line(b) != line) throw FormatError("ledger: non-canonical encoding");
  return b;
}

}  // namespace

std::string canonical_payload(const LedgerPayload& payload) { return payload_json(payload).dump(); }

Digest block_hash(std::uint64_t index, std::uint64_t round, const Digest& prev_hash, const LedgerPayload& payload) {
  ByteWriter w;
  w.u64(index);
  w.u64(round);
  w.bytes(prev_hash);
  const std::string body = canonical_payload(payload);
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  const std::vector<std::uint8_t> bytes = w.take();
  return sha256(bytes);
}

std::string block_to_line(const Block& block) {
  const json j{{"index", block.index},
               {"round", block.round},
               {"prev_hash", to_hex(block.prev_hash)},
               {"payload", payload_json(block.payload)},
               {"hash", to_hex(block.hash)}};
  return j.dump();
}

VerifyResult verify(std::span<const Block> chain) {
  Digest prev{};
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const Block& b = chain[i];
    if (b.index != i || b.prev_hash != prev) return VerifyResult::bad(i);
    if (block_hash(b.index, b.round, b.prev_hash, b.payload) != b.hash) return VerifyResult::bad(i);
    prev = b.hash;
  }
  return VerifyResult::good();
}

VerifyResult verify_lines(std::span<const std::string> lines) {
  std::vector<Block> chain;
  chain.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      chain.push_back(block_from_line(lines[i]));
    } catch (const std::exception&) {
      const VerifyResult prefix = verify(chain);
      return prefix.ok ? VerifyResult::bad(i) : prefix;
    }
  }
  return verify(chain);
}

namespace {

/// Splits into lines; `complete` is false if the final line lacks '\n'.
std::vector<std::string> split_lines(const std::string& text, bool& complete) {
  std::vector<std::string> lines;
  std::size_t begin = 0;
  while (begin < text.size()) {
    const std::size_t nl = text.find('\n', begin);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(begin));
      complete = false;
      return lines;
    }
    lines.push_back(text.substr(begin, nl - begin));
    begin = nl + 1;
  }
  complete = true;
  return lines;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

VerifyResult verify_file(const std::filesystem::path& path) {
  bool complete = true;
  const std::vector<std::string> lines = split_lines(read_text(path), complete);
  const VerifyResult r = verify_lines(lines);
  if (!r.ok) return r;
  if (!complete) return VerifyResult::bad(lines.size() - 1);
  return r;
}

Ledger::Ledger(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(*path_)) {
    std::ofstream create(*path_, std::ios::binary);
    if (!create) throw IOError("cannot create " + path_->string());
    return;
  }
  const VerifyResult r = verify_file(*path_);
  if (!r.ok) throw FormatError("ledger " + path_->string() + " fails verification at block " + std::to_string(r.first_bad_index));
  bool complete = true;
  for (const std::string& line : split_lines(read_text(*path_), complete)) blocks_.push_back(block_from_line(line));
}

const Block& Ledger::append(std::uint64_t round, LedgerPayload payload) {
  Block b;
  b.index = blocks_.size();
  b.round = round;
  b.prev_hash = blocks_.empty() ? Digest{} : blocks_.back().hash;
  b.payload = std::move(payload);
  b.hash = block_hash(b.index, b.round, b.prev_hash, b.payload);
  if (path_) {
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    out << block_to_line(b) << '\n';
    out.flush();
    if (!out) throw IOError("ledger: write failed for " + path_->string());
  }
  blocks_.push_back(std::move(b));
  return blocks_.back();
}

const LedgerPayload& Ledger::read_round(std::uint64_t round) const {
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
    if (it->round == round) return it->payload;
  throw NotFound("ledger: round " + std::to_string(round) + " not recorded");
}

}  // namespace dp2guard

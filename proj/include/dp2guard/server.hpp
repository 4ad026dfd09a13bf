#pragma once

// Dual-server protocol: share collection, mean-centering exchange,
// detection and trust weighting at S2, weighted partial aggregation and
// reassembly at S1. Every inter-party message goes through the wire codec.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dp2guard/client.hpp"
#include "dp2guard/defense.hpp"
#include "dp2guard/ledger.hpp"
#include "dp2guard/numeric.hpp"
#include "dp2guard/trust.hpp"

namespace dp2guard {

using ClientId = std::uint32_t;
using ShareMap = std::map<ClientId, RingVector>;

/// Per-share centering, computed exactly in the ring and scaled by N:
/// out_i = N * share_i - sum_j share_j. decode(out_i) / N is the centered
/// share. The scaling keeps the two servers' outputs additive without a
/// ring division, so masks cancel bit-exactly in reconstruct_centered.
std::vector<RingVector> mean_center(std::span<const RingVector> shares);

/// g_i - mean(g) for every client: decode(c1_i + c2_i) / N. Throws
/// ClientSetMismatch unless both maps cover the same clients.
std::map<ClientId, GradientVector> reconstruct_centered(const ShareMap& c1, const ShareMap& c2);

/// sum_i w_i * share_i with w_i = round(tau_i * 2^kWeightBits); the result
/// carries scale_bits + kWeightBits fractional bits. Throws WeightError if
/// tau is negative, non-finite, misses a client or does not sum to 1 +- 1e-9.
RingVector partial_aggregate(const ShareMap& shares, const std::map<ClientId, double>& tau);

/// decode(a1 + a2).
GradientVector reassemble_global(const RingVector& a1, const RingVector& a2);

// ---------------------------------------------------------------------------
// Wire format: [kind u8][round u32][sender u32][payload_len u64][payload], LE.

enum class MessageKind : std::uint8_t {
  ShareUpload = 1,
  CenteredBatch = 2,
  AggDigestAndWeights = 3,
  GlobalUpdate = 4,
};

struct ProtocolMessage {
  MessageKind kind = MessageKind::ShareUpload;
  std::uint32_t round = 0;
  std::uint32_t sender = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const ProtocolMessage&, const ProtocolMessage&) = default;
};

std::vector<std::uint8_t> encode_message(const ProtocolMessage& msg);
/// Throws FormatError on unknown kind, bad length or trailing bytes.
ProtocolMessage decode_message(std::span<const std::uint8_t> bytes);

/// Sender ids for the servers; clients use their own ids (< kServerSenderBase).
inline constexpr std::uint32_t kServerSenderBase = 0xFFFFFF00u;
inline constexpr std::uint32_t kS1Sender = kServerSenderBase + 1;
inline constexpr std::uint32_t kS2Sender = kServerSenderBase + 2;

ProtocolMessage share_upload(const MaskedShare& share);
ProtocolMessage centered_batch_message(std::uint32_t round, const ShareMap& centered);
ShareMap parse_centered_batch(std::span<const std::uint8_t> payload);
/// Payload: agg digest(32) | model digest(32) | count u32 | (client u32, tau f64)* | agg share bytes.
ProtocolMessage agg_digest_message(std::uint32_t round, const LedgerPayload& payload);
LedgerPayload parse_agg_digest(std::span<const std::uint8_t> payload);

// ---------------------------------------------------------------------------

enum class Phase { Collecting, Centering, Detecting, Aggregating, Done };
enum class ServerId : std::uint8_t { S1 = 1, S2 = 2 };

/// Shared collection logic. Phases only move forward within a round; a
/// message that does not fit the current phase throws PhaseError.
class ServerState {
 public:
  explicit ServerState(ServerId id) : id_(id) {}

  ServerId id() const { return id_; }
  Phase phase() const { return phase_; }
  std::uint32_t round() const { return round_; }
  const ShareMap& received_shares() const { return shares_; }
  /// (kind, sender) of every message accepted, in arrival order.
  const std::vector<std::pair<MessageKind, std::uint32_t>>& audit_log() const { return audit_; }

  void begin_round(std::uint32_t round, std::span<const ClientId> expected_clients);

 protected:
  void accept_share(const ProtocolMessage& msg);
  void check_round(const ProtocolMessage& msg) const;
  void advance(Phase next);
  void log(const ProtocolMessage& msg) { audit_.emplace_back(msg.kind, msg.sender); }

  ServerId id_;
  Phase phase_ = Phase::Done;
  std::uint32_t round_ = 0;
  std::vector<ClientId> expected_;
  ShareMap shares_;
  std::vector<std::pair<MessageKind, std::uint32_t>> audit_;
};

class Server1 : public ServerState {
 public:
  Server1() : ServerState(ServerId::S1) {}

  /// Accepts ShareUpload while collecting.
  void receive(std::span<const std::uint8_t> wire);
  /// Centering -> Aggregating. Emits the CenteredBatch for S2.
  std::vector<std::uint8_t> send_centered_batch();
  /// Aggregating -> Done. Reads S2's aggregate share and weights from the
  /// ledger, aggregates its own shares and reassembles. Returns the
  /// GlobalUpdate message (payload: the reassembled ring vector).
  std::vector<std::uint8_t> finish_round(const Ledger& ledger);

  const GradientVector& global_gradient() const { return global_; }

 private:
  GradientVector global_;
};

/// Trust bookkeeping shared by the dual-server pipeline and its plaintext
/// twin: detection on centered rows, gamma, EMA update, weights.
struct TrustWeighting {
  TrustState trust;
  ExclusionMode exclusion = ExclusionMode::Soft;

  /// Rows are clients in ascending id order; returns tau in the same order.
  std::vector<double> step(const GradientMatrix& centered, SeededRng& rng, DetectionResult* out = nullptr);
};

struct S2Config {
  double beta = 0.5;
  ExclusionMode exclusion = ExclusionMode::Soft;
  bool detection = true;  // false: uniform weights (secure FedAvg)
  std::uint64_t seed = 0;
};

class Server2 : public ServerState {
 public:
  Server2(std::size_t n_clients, S2Config cfg);

  /// ShareUpload while collecting, CenteredBatch while centering.
  void receive(std::span<const std::uint8_t> wire);
  /// Detecting -> Aggregating -> Done: detection, trust update, weighted
  /// aggregation of its shares, ledger append. Returns the appended block.
  const Block& detect_and_publish(Ledger& ledger, const Digest& global_model_digest);

  const TrustState& trust() const { return weighting_.trust; }
  const std::optional<DetectionResult>& last_detection() const { return detection_; }
  const std::map<ClientId, double>& last_weights() const { return tau_; }
  const std::map<ClientId, GradientVector>& last_centered() const { return centered_; }

 private:
  S2Config cfg_;
  TrustWeighting weighting_;
  ShareMap peer_centered_;
  std::map<ClientId, GradientVector> centered_;
  std::optional<DetectionResult> detection_;
  std::map<ClientId, double> tau_;
};

/// Clustering stream used by S2 (and by the plaintext twin of the pipeline).
SeededRng detection_rng(std::uint64_t seed, std::uint32_t round);

}  // namespace dp2guard

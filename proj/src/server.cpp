#include "dp2guard/server.hpp"

#include <algorithm>
#include <cmath>

#include "dp2guard/errors.hpp"
#include "dp2guard/wire.hpp"

namespace dp2guard {

namespace {

void require_same_shape(std::span<const RingVector> v, const char* what) {
  for (const auto& r : v)
    if (r.size() != v.front().size() || r.scale_bits != v.front().scale_bits)
      throw DimensionMismatch(std::string(what) + ": shares differ in dimension or scale");
}

RingVector read_ring(ByteReader& rd) {
  const std::uint32_t d = rd.u32();
  const int scale = rd.u8();
  RingVector out(static_cast<Eigen::Index>(d), scale);
  for (std::uint32_t k = 0; k < d; ++k) out.words(k) = rd.u64();
  return out;
}

}  // namespace

std::vector<RingVector> mean_center(std::span<const RingVector> shares) {
  if (shares.size() < 2) throw PreconditionError("mean_center: need at least two shares");
  require_same_shape(shares, "mean_center");
  RingVector sum(shares.front().size(), shares.front().scale_bits);
  for (const auto& s : shares) sum = sum + s;
  const auto n = static_cast<std::uint64_t>(shares.size());
  std::vector<RingVector> out;
  out.reserve(shares.size());
  for (const auto& s : shares) out.push_back(ring_scale(s, n) - sum);
  return out;
}

std::map<ClientId, GradientVector> reconstruct_centered(const ShareMap& c1, const ShareMap& c2) {
  if (c1.size() != c2.size() || !std::equal(c1.begin(), c1.end(), c2.begin(), [](const auto& a, const auto& b) { return a.first == b.first; }))
    throw ClientSetMismatch("reconstruct_centered: servers hold different client sets");
  const double n = static_cast<double>(c1.size());
  std::map<ClientId, GradientVector> out;
  for (const auto& [id, share] : c1) out.emplace(id, decode_fixed(share + c2.at(id)) / n);
  return out;
}

RingVector partial_aggregate(const ShareMap& shares, const std::map<ClientId, double>& tau) {
  if (shares.empty()) throw PreconditionError("partial_aggregate: no shares");
  if (tau.size() != shares.size()) throw WeightError("partial_aggregate: one weight per client required");
  double total = 0.0;
  for (const auto& [id, w] : tau) {
    if (!shares.contains(id)) throw WeightError("partial_aggregate: weight for unknown client");
    if (!std::isfinite(w) || w < 0.0) throw WeightError("partial_aggregate: weights must be finite and non-negative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw WeightError("partial_aggregate: weights must sum to 1");
  const RingVector& first = shares.begin()->second;
  if (first.scale_bits + kWeightBits > 62) throw OverflowError("partial_aggregate: scale too large for weighting");
  RingVector acc(first.size(), first.scale_bits + kWeightBits);
  for (const auto& [id, share] : shares) {
    if (share.size() != first.size() || share.scale_bits != first.scale_bits)
      throw DimensionMismatch("partial_aggregate: shares differ in dimension or scale");
    const auto w = static_cast<std::uint64_t>(std::llround(std::ldexp(tau.at(id), kWeightBits)));
    acc.words += share.words * w;
  }
  return acc;
}

GradientVector reassemble_global(const RingVector& a1, const RingVector& a2) { return decode_fixed(a1 + a2); }

std::vector<std::uint8_t> encode_message(const ProtocolMessage& msg) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(msg.kind));
  w.u32(msg.round);
  w.u32(msg.sender);
  w.u64(msg.payload.size());
  w.bytes(msg.payload);
  return w.take();
}

ProtocolMessage decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  ProtocolMessage msg;
  const std::uint8_t kind = rd.u8();
  if (kind < 1 || kind > 4) throw FormatError("message: unknown kind " + std::to_string(kind));
  msg.kind = static_cast<MessageKind>(kind);
  msg.round = rd.u32();
  msg.sender = rd.u32();
  const std::uint64_t len = rd.u64();
  if (len != rd.remaining()) throw FormatError("message: payload length mismatch");
  const auto body = rd.bytes(static_cast<std::size_t>(len));
  msg.payload.assign(body.begin(), body.end());
  return msg;
}

ProtocolMessage share_upload(const MaskedShare& share) {
  return {MessageKind::ShareUpload, share.round, share.client_id, serialize(share.payload)};
}

ProtocolMessage centered_batch_message(std::uint32_t round, const ShareMap& centered) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(centered.size()));
  for (const auto& [id, v] : centered) {
    w.u32(id);
    w.bytes(serialize(v));
  }
  return {MessageKind::CenteredBatch, round, kS1Sender, w.take()};
}

ShareMap parse_centered_batch(std::span<const std::uint8_t> payload) {
  ByteReader rd(payload);
  const std::uint32_t n = rd.u32();
  ShareMap out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const ClientId id = rd.u32();
    if (!out.emplace(id, read_ring(rd)).second) throw FormatError("centered batch: duplicate client");
  }
  if (!rd.done()) throw FormatError("centered batch: trailing bytes");
  return out;
}

ProtocolMessage agg_digest_message(std::uint32_t round, const LedgerPayload& p) {
  ByteWriter w;
  w.bytes(p.agg_share_digest);
  w.bytes(p.global_model_digest);
  w.u32(static_cast<std::uint32_t>(p.trust_weights.size()));
  for (const auto& [id, tau] : p.trust_weights) {
    w.u32(id);
    w.f64(tau);
  }
  w.bytes(p.agg_share_blob);
  return {MessageKind::AggDigestAndWeights, round, kS2Sender, w.take()};
}

LedgerPayload parse_agg_digest(std::span<const std::uint8_t> payload) {
  ByteReader rd(payload);
  LedgerPayload p;
  const auto digest = rd.bytes(32);
  std::copy(digest.begin(), digest.end(), p.agg_share_digest.begin());
  const auto model = rd.bytes(32);
  std::copy(model.begin(), model.end(), p.global_model_digest.begin());
  const std::uint32_t n = rd.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const ClientId id = rd.u32();
    p.trust_weights[id] = rd.f64();
  }
  const auto blob = rd.bytes(rd.remaining());
  p.agg_share_blob.assign(blob.begin(), blob.end());
  return p;
}

// ---------------------------------------------------------------------------

void ServerState::begin_round(std::uint32_t round, std::span<const ClientId> expected_clients) {
  if (phase_ != Phase::Done) throw PhaseError("begin_round: previous round still in progress");
  if (expected_clients.size() < 2) throw PreconditionError("begin_round: need at least two clients");
  expected_.assign(expected_clients.begin(), expected_clients.end());
  std::sort(expected_.begin(), expected_.end());
  if (std::adjacent_find(expected_.begin(), expected_.end()) != expected_.end())
    throw PreconditionError("begin_round: duplicate client id");
  round_ = round;
  shares_.clear();
  phase_ = Phase::Collecting;
}

void ServerState::check_round(const ProtocolMessage& msg) const {
  if (msg.round != round_)
    throw PhaseError("message for round " + std::to_string(msg.round) + " during round " + std::to_string(round_));
}

void ServerState::advance(Phase next) {
  if (static_cast<int>(next) <= static_cast<int>(phase_)) throw PhaseError("phase may only move forward");
  phase_ = next;
}

void ServerState::accept_share(const ProtocolMessage& msg) {
  if (phase_ != Phase::Collecting) throw PhaseError("share upload outside collection phase");
  check_round(msg);
  if (!std::binary_search(expected_.begin(), expected_.end(), msg.sender))
    throw ClientSetMismatch("share from unexpected client " + std::to_string(msg.sender));
  if (shares_.contains(msg.sender)) throw PhaseError("duplicate share from client " + std::to_string(msg.sender));
  RingVector share = deserialize_ring(msg.payload);
  if (!shares_.empty()) {
    const RingVector& ref = shares_.begin()->second;
    if (ref.size() != share.size() || ref.scale_bits != share.scale_bits)
      throw DimensionMismatch("share dimension differs from other clients");
  }
  shares_.emplace(msg.sender, std::move(share));
  log(msg);
  if (shares_.size() == expected_.size()) advance(Phase::Centering);
}

void Server1::receive(std::span<const std::uint8_t> wire) {
  const ProtocolMessage msg = decode_message(wire);
  if (msg.kind != MessageKind::ShareUpload) throw PhaseError("S1 only accepts share uploads");
  accept_share(msg);
}

std::vector<std::uint8_t> Server1::send_centered_batch() {
  if (phase_ != Phase::Centering) throw PhaseError("S1: centering requires every share");
  std::vector<RingVector> ordered;
  for (const auto& [id, s] : shares_) ordered.push_back(s);
  const std::vector<RingVector> centered = mean_center(ordered);
  ShareMap batch;
  std::size_t k = 0;
  for (const auto& [id, s] : shares_) batch.emplace(id, centered[k++]);
  advance(Phase::Aggregating);
  return encode_message(centered_batch_message(round_, batch));
}

std::vector<std::uint8_t> Server1::finish_round(const Ledger& ledger) {
  if (phase_ != Phase::Aggregating) throw PhaseError("S1: aggregation before centering finished");
  const LedgerPayload& published = ledger.read_round(round_);
  if (sha256(published.agg_share_blob) != published.agg_share_digest)
    throw FormatError("S1: published aggregate does not match its digest");
  const RingVector a2 = deserialize_ring(published.agg_share_blob);
  const RingVector a1 = partial_aggregate(shares_, published.trust_weights);
  const RingVector combined = a1 + a2;
  global_ = decode_fixed(combined);
  advance(Phase::Done);
  return encode_message({MessageKind::GlobalUpdate, round_, kS1Sender, serialize(combined)});
}

std::vector<double> TrustWeighting::step(const GradientMatrix& centered, SeededRng& rng, DetectionResult* out) {
  DetectionResult det = detect(centered, rng);
  trust = update_trust(trust, round_gammas(det));
  std::vector<double> tau = weights(trust, exclusion, det);
  if (out) *out = std::move(det);
  return tau;
}

SeededRng detection_rng(std::uint64_t seed, std::uint32_t round) {
  return SeededRng::derive(seed, kS2Sender, round, Purpose::Clustering);
}

Server2::Server2(std::size_t n_clients, S2Config cfg)
    : ServerState(ServerId::S2), cfg_(cfg), weighting_{TrustState::initial(n_clients, cfg.beta), cfg.exclusion} {}

void Server2::receive(std::span<const std::uint8_t> wire) {
  const ProtocolMessage msg = decode_message(wire);
  switch (msg.kind) {
    case MessageKind::ShareUpload:
      accept_share(msg);
      return;
    case MessageKind::CenteredBatch: {
      if (phase_ != Phase::Centering) throw PhaseError("S2: centered batch before all shares arrived");
      check_round(msg);
      if (msg.sender != kS1Sender) throw PhaseError("S2: centered batch must come from S1");
      peer_centered_ = parse_centered_batch(msg.payload);
      std::vector<RingVector> ordered;
      for (const auto& [id, s] : shares_) ordered.push_back(s);
      const std::vector<RingVector> mine = mean_center(ordered);
      ShareMap own;
      std::size_t k = 0;
      for (const auto& [id, s] : shares_) own.emplace(id, mine[k++]);
      centered_ = reconstruct_centered(peer_centered_, own);
      log(msg);
      advance(Phase::Detecting);
      return;
    }
    default:
      throw PhaseError("S2: unexpected message kind");
  }
}

const Block& Server2::detect_and_publish(Ledger& ledger, const Digest& global_model_digest) {
  if (phase_ != Phase::Detecting) throw PhaseError("S2: detection before reconstruction");
  if (centered_.size() != weighting_.trust.trust.size())
    throw ClientSetMismatch("S2: client count differs from trust state");
  tau_.clear();
  if (cfg_.detection) {
    std::vector<GradientVector> rows;
    for (const auto& [id, g] : centered_) rows.push_back(g);
    SeededRng rng = detection_rng(cfg_.seed, round_);
    DetectionResult det;
    const std::vector<double> tau = weighting_.step(stack_rows(rows), rng, &det);
    detection_ = std::move(det);
    std::size_t k = 0;
    for (const auto& [id, g] : centered_) tau_[id] = tau[k++];
  } else {
    detection_.reset();
    for (const auto& [id, g] : centered_) tau_[id] = 1.0 / static_cast<double>(centered_.size());
  }
  advance(Phase::Aggregating);

  const RingVector a2 = partial_aggregate(shares_, tau_);
  LedgerPayload payload;
  payload.agg_share_blob = serialize(a2);
  payload.agg_share_digest = sha256(payload.agg_share_blob);
  payload.trust_weights = tau_;
  payload.global_model_digest = global_model_digest;
  // What reaches the ledger is exactly the wire form S2 submits.
  const ProtocolMessage submission = decode_message(encode_message(agg_digest_message(round_, payload)));
  const Block& block = ledger.append(round_, parse_agg_digest(submission.payload));
  advance(Phase::Done);
  return block;
}

}  // namespace dp2guard

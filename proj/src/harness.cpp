#include "dp2guard/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dp2guard/baselines.hpp"
#include "dp2guard/client.hpp"
#include "dp2guard/defense.hpp"
#include "dp2guard/errors.hpp"
#include "dp2guard/server.hpp"
#include "dp2guard/wire.hpp"

namespace dp2guard {

using nlohmann::json;

namespace {

// Stream actors that are not clients.
constexpr std::uint64_t kRootActor = 0xFFFFFF20u;
constexpr std::uint64_t kAttackerActor = 0xFFFFFF30u;

template <class E>
using NameTable = std::vector<std::pair<E, const char*>>;

const NameTable<DatasetKind> kDatasetNames{
    {DatasetKind::Synthetic, "synthetic"}, {DatasetKind::Mnist, "mnist"}, {DatasetKind::Fashion, "fashion"}};
const NameTable<ModelKind> kModelNames{{ModelKind::LogReg, "logreg"}, {ModelKind::Mlp, "mlp"}};
const NameTable<AttackKind> kAttackNames{{AttackKind::None, "none"},
                                         {AttackKind::LabelFlip, "label_flip"},
                                         {AttackKind::Fang, "fang"},
                                         {AttackKind::MinMax, "minmax"},
                                         {AttackKind::MinSum, "minsum"}};
const NameTable<Direction> kDirectionNames{
    {Direction::PlusMean, "plus_mean"}, {Direction::MinusMean, "minus_mean"}, {Direction::Sign, "sign"}};
const NameTable<AggregatorKind> kAggregatorNames{{AggregatorKind::Dp2Guard, "dp2guard"},
                                                 {AggregatorKind::FedAvg, "fedavg"},
                                                 {AggregatorKind::MultiKrum, "multikrum"},
                                                 {AggregatorKind::Dnc, "dnc"},
                                                 {AggregatorKind::FlTrust, "fltrust"}};
const NameTable<PipelineKind> kPipelineNames{
    {PipelineKind::Auto, "auto"}, {PipelineKind::DualServer, "dual_server"}, {PipelineKind::Plaintext, "plaintext"}};
const NameTable<PartitionMode> kPartitionNames{{PartitionMode::Iid, "iid"}, {PartitionMode::Dirichlet, "dirichlet"}};
const NameTable<ExclusionMode> kExclusionNames{{ExclusionMode::Soft, "soft"}, {ExclusionMode::Hard, "hard"}};
const NameTable<LocalMode> kLocalModeNames{
    {LocalMode::Epoch, "epoch"}, {LocalMode::MiniBatch, "minibatch"}, {LocalMode::Full, "full"}};

template <class E>
std::string name_of(const NameTable<E>& table, E value) {
  for (const auto& [e, n] : table)
    if (e == value) return n;
  throw ConfigError("unnamed enum value");
}

template <class E>
E parse_name(const NameTable<E>& table, const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("config: '" + key + "' must be a string");
  const auto text = j.get<std::string>();
  for (const auto& [e, n] : table)
    if (text == n) return e;
  throw ConfigError("config: unknown value '" + text + "' for '" + key + "'");
}

// Reads known keys from an object, rejecting anything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  template <class E>
  void get_enum(const char* key, const NameTable<E>& table, E& out) {
    seen_.insert(key);
    if (j_.contains(key)) out = parse_name(table, j_.at(key), qualified(key));
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("config: unknown key '" + qualified(k) + "'");
  }

 private:
  std::string qualified(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = name_of(kDatasetNames, c.dataset);
  j["data_dir"] = c.data_dir;
  j["train_subset"] = c.train_subset;
  j["test_subset"] = c.test_subset;
  j["synthetic"] = {{"n_train", c.synthetic.n_train},
                    {"n_test", c.synthetic.n_test},
                    {"dim", c.synthetic.dim},
                    {"classes", c.synthetic.classes},
                    {"separation", c.synthetic.separation}};
  j["model"] = name_of(kModelNames, c.model);
  j["hidden"] = c.hidden;
  j["n_clients"] = c.n_clients;
  j["rounds"] = c.rounds;
  j["adv_ratio"] = c.adv_ratio;
  j["attack"] = {{"kind", name_of(kAttackNames, c.attack.kind)},
                 {"l_flip", c.attack.l_flip},
                 {"flip_fraction", c.attack.flip_fraction},
                 {"lambda0", c.attack.lambda0},
                 {"fang_step", c.attack.fang_step},
                 {"gamma0", c.attack.gamma0},
                 {"step", c.attack.step},
                 {"gamma_min", c.attack.gamma_min},
                 {"direction", name_of(kDirectionNames, c.attack.direction)},
                 {"identical_malicious", c.attack.identical_malicious}};
  j["aggregator"] = name_of(kAggregatorNames, c.aggregator);
  j["pipeline"] = name_of(kPipelineNames, c.pipeline);
  j["partition"] = name_of(kPartitionNames, c.partition);
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["exclusion"] = name_of(kExclusionNames, c.exclusion);
  j["seed"] = c.seed;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["local_mode"] = name_of(kLocalModeNames, c.local_mode);
  j["scale_bits"] = c.scale_bits;
  j["assumed_malicious"] = c.assumed_malicious;
  j["dnc_iters"] = c.dnc_iters;
  j["dnc_sub_dim"] = c.dnc_sub_dim;
  j["dnc_filter_frac"] = c.dnc_filter_frac;
  j["fltrust_root"] = c.fltrust_root;
  j["threads"] = c.threads;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.get_enum("dataset", kDatasetNames, c.dataset);
  r.get("data_dir", c.data_dir);
  r.get("train_subset", c.train_subset);
  r.get("test_subset", c.test_subset);
  if (const json* s = r.child("synthetic")) {
    ObjectReader rs(*s, "synthetic");
    rs.get("n_train", c.synthetic.n_train);
    rs.get("n_test", c.synthetic.n_test);
    rs.get("dim", c.synthetic.dim);
    rs.get("classes", c.synthetic.classes);
    rs.get("separation", c.synthetic.separation);
    rs.finish();
  }
  r.get_enum("model", kModelNames, c.model);
  r.get("hidden", c.hidden);
  r.get("n_clients", c.n_clients);
  r.get("rounds", c.rounds);
  r.get("adv_ratio", c.adv_ratio);
  if (const json* a = r.child("attack")) {
    ObjectReader ra(*a, "attack");
    ra.get_enum("kind", kAttackNames, c.attack.kind);
    ra.get("l_flip", c.attack.l_flip);
    ra.get("flip_fraction", c.attack.flip_fraction);
    ra.get("lambda0", c.attack.lambda0);
    ra.get("fang_step", c.attack.fang_step);
    ra.get("gamma0", c.attack.gamma0);
    ra.get("step", c.attack.step);
    ra.get("gamma_min", c.attack.gamma_min);
    ra.get_enum("direction", kDirectionNames, c.attack.direction);
    ra.get("identical_malicious", c.attack.identical_malicious);
    ra.finish();
  }
  r.get_enum("aggregator", kAggregatorNames, c.aggregator);
  r.get_enum("pipeline", kPipelineNames, c.pipeline);
  r.get_enum("partition", kPartitionNames, c.partition);
  r.get("alpha", c.alpha);
  r.get("beta", c.beta);
  r.get_enum("exclusion", kExclusionNames, c.exclusion);
  r.get("seed", c.seed);
  r.get("lr", c.lr);
  r.get("batch_size", c.batch_size);
  r.get_enum("local_mode", kLocalModeNames, c.local_mode);
  r.get("scale_bits", c.scale_bits);
  r.get("assumed_malicious", c.assumed_malicious);
  r.get("dnc_iters", c.dnc_iters);
  r.get("dnc_sub_dim", c.dnc_sub_dim);
  r.get("dnc_filter_frac", c.dnc_filter_frac);
  r.get("fltrust_root", c.fltrust_root);
  r.get("threads", c.threads);
  r.finish();
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2); }

std::size_t ExperimentConfig::malicious_count() const {
  if (adv_ratio <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(adv_ratio * static_cast<double>(n_clients) - 1e-9));
}

PipelineKind ExperimentConfig::resolved_pipeline() const {
  if (pipeline != PipelineKind::Auto) return pipeline;
  return aggregator == AggregatorKind::Dp2Guard ? PipelineKind::DualServer : PipelineKind::Plaintext;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require(n_clients >= 2, "n_clients must be at least 2");
  require(rounds >= 1, "rounds must be at least 1");
  require(adv_ratio >= 0.0 && adv_ratio < 1.0, "adv_ratio must be in [0, 1)");
  require(!(adv_ratio > 0.0 && attack.kind == AttackKind::None), "adv_ratio > 0 needs an attack kind");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(scale_bits >= 1 && scale_bits + kWeightBits <= 62, "scale_bits must be in [1, 30]");
  require(beta >= 0.0 && beta < 1.0, "beta must be in [0, 1)");
  require(alpha > 0.0, "alpha must be positive");
  require(hidden >= 1, "hidden must be positive");
  require(threads >= 1, "threads must be positive");
  require(synthetic.classes >= 2 && synthetic.dim >= 1, "synthetic data needs >= 2 classes and dim >= 1");
  const std::size_t m = malicious_count();
  require(m < n_clients, "at least one client must be honest");
  const bool adaptive = attack.kind == AttackKind::Fang || attack.kind == AttackKind::MinMax ||
                        attack.kind == AttackKind::MinSum;
  require(!adaptive || n_clients - m >= 2, "adaptive attacks need at least two honest clients");
  require(!(resolved_pipeline() == PipelineKind::DualServer && aggregator != AggregatorKind::Dp2Guard &&
            aggregator != AggregatorKind::FedAvg),
          "dual_server pipeline supports dp2guard and fedavg only");
  require(dnc_filter_frac >= 0.0 && dnc_filter_frac < 1.0, "dnc_filter_frac must be in [0, 1)");
  require(assumed_malicious >= -1, "assumed_malicious must be -1 or a count");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ExperimentConfig::from_json(ss.str());
}

ExperimentConfig with_override(const ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  json j = config_to_json(cfg);
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  json* node = &j;
  std::string rest = key;
  for (std::size_t dot; (dot = rest.find('.')) != std::string::npos;) {
    const std::string head = rest.substr(0, dot);
    if (!node->contains(head)) throw ConfigError("config: unknown key '" + key + "'");
    node = &(*node)[head];
    rest = rest.substr(dot + 1);
  }
  if (!node->is_object() || !node->contains(rest)) throw ConfigError("config: unknown key '" + key + "'");
  (*node)[rest] = v;
  return config_from_json(j);
}

// ---------------------------------------------------------------------------

std::pair<std::optional<double>, std::optional<double>> detection_scores(std::span<const std::size_t> flagged,
                                                                         std::size_t n_clients,
                                                                         std::size_t n_malicious) {
  if (n_malicious == 0) return {std::nullopt, std::nullopt};
  std::size_t hits = 0;
  for (std::size_t i : flagged) {
    if (i >= n_clients) throw PreconditionError("detection_scores: flagged index out of range");
    if (i < n_malicious) ++hits;
  }
  const double precision = flagged.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(flagged.size());
  const double recall = static_cast<double>(hits) / static_cast<double>(n_malicious);
  return {precision, recall};
}

namespace {

struct Splits {
  Dataset train;
  Dataset test;
  Dataset root;
};

std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* suffix : {".gz", ""}) {
    const auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  throw IOError("missing " + (dir / stem).string() + "[.gz]");
}

Splits load_splits(const ExperimentConfig& cfg) {
  Splits s;
  Dataset test_all;
  if (cfg.dataset == DatasetKind::Synthetic) {
    const auto& sc = cfg.synthetic;
    SeededRng rng = SeededRng::derive(cfg.seed, 0, 0, Purpose::Data);
    const Dataset all = synth_dataset(sc.n_train + sc.n_test + cfg.fltrust_root, sc.dim, sc.classes, sc.separation, rng);
    std::vector<std::size_t> idx(all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    s.train = all.subset(std::span(idx).subspan(0, sc.n_train));
    test_all = all.subset(std::span(idx).subspan(sc.n_train));
  } else {
    const std::filesystem::path dir = cfg.data_dir;
    Dataset train = load_idx(find_idx(dir, "train-images-idx3-ubyte"), find_idx(dir, "train-labels-idx1-ubyte"));
    test_all = load_idx(find_idx(dir, "t10k-images-idx3-ubyte"), find_idx(dir, "t10k-labels-idx1-ubyte"));
    s.train = cfg.train_subset > 0 && cfg.train_subset < train.size() ? train.head(cfg.train_subset) : std::move(train);
  }
  const std::size_t n_test = cfg.dataset == DatasetKind::Synthetic
                                 ? cfg.synthetic.n_test
                                 : (cfg.test_subset > 0 ? std::min(cfg.test_subset, test_all.size()) : test_all.size());
  s.test = test_all.head(n_test);
  if (test_all.size() >= n_test + cfg.fltrust_root) {
    std::vector<std::size_t> idx(cfg.fltrust_root);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = n_test + k;
    s.root = test_all.subset(idx);
  } else {
    SeededRng rng = SeededRng::derive(cfg.seed, kRootActor, 0, Purpose::RootData);
    std::vector<std::size_t> perm = rng.permutation(test_all.size());
    perm.resize(std::min(cfg.fltrust_root, perm.size()));
    s.root = test_all.subset(perm);
  }
  return s;
}

Digest model_digest(const GradientVector& flat) {
  ByteWriter w;
  for (Eigen::Index k = 0; k < flat.size(); ++k) w.f64(flat(k));
  return sha256(w.take());
}

LedgerPayload plaintext_payload(const GradientVector& agg, std::span<const double> tau, int scale_bits,
                                const Digest& model) {
  LedgerPayload p;
  p.agg_share_blob = serialize(encode_fixed(agg, scale_bits));
  p.agg_share_digest = sha256(p.agg_share_blob);
  for (std::size_t i = 0; i < tau.size(); ++i) p.trust_weights[static_cast<std::uint32_t>(i)] = tau[i];
  p.global_model_digest = model;
  return p;
}

GradientVector weighted_sum(std::span<const GradientVector> g, std::span<const double> tau) {
  GradientVector sum = GradientVector::Zero(g.front().size());
  for (std::size_t i = 0; i < g.size(); ++i) sum += tau[i] * g[i];
  return sum;
}

std::vector<double> uniform_over(std::span<const std::size_t> chosen, std::size_t n) {
  std::vector<double> tau(n, 0.0);
  for (std::size_t i : chosen) tau[i] = 1.0 / static_cast<double>(chosen.size());
  return tau;
}

std::vector<std::size_t> complement(std::span<const std::size_t> chosen, std::size_t n) {
  std::vector<bool> in(n, false);
  for (std::size_t i : chosen) in[i] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (!in[i]) out.push_back(i);
  return out;
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

AttackSpec attack_spec(const AttackConfig& a) {
  ScaleSearchSpec search{a.gamma0, a.step, a.gamma_min, a.direction};
  switch (a.kind) {
    case AttackKind::LabelFlip:
      return LabelFlipSpec{a.l_flip, a.flip_fraction};
    case AttackKind::Fang:
      return FangSpec{a.lambda0, a.fang_step, a.gamma_min};
    case AttackKind::MinMax:
      return MinMaxSpec{search};
    case AttackKind::MinSum:
      return MinSumSpec{search};
    case AttackKind::None:
      break;
  }
  throw ConfigError("attack_spec: no attack configured");
}

class Experiment {
 public:
  Experiment(const ExperimentConfig& cfg, ExperimentTrace* trace, const std::filesystem::path& ledger_path)
      : cfg_(cfg), trace_(trace) {
    cfg_.validate();
    if (!ledger_path.empty()) ledger_ = Ledger(ledger_path);
    splits_ = load_splits(cfg_);
    n_ = cfg_.n_clients;
    m_ = cfg_.malicious_count();
    f_ = cfg_.assumed_malicious < 0 ? m_ : static_cast<std::size_t>(cfg_.assumed_malicious);
    pipeline_ = cfg_.resolved_pipeline();

    SeededRng part_rng = SeededRng::derive(cfg_.seed, 0, 0, Purpose::Partition);
    const PartitionPlan plan = partition(splits_.train, n_, cfg_.partition, cfg_.alpha, part_rng);
    for (std::size_t i = 0; i < n_; ++i) {
      ClientState c;
      c.client_id = static_cast<std::uint32_t>(i);
      c.local_data = splits_.train.subset(plan.assignment[i]);
      if (i < m_) c.role = Malicious{attack_spec(cfg_.attack)};
      clients_.push_back(std::move(c));
    }
    SeededRng init_rng = SeededRng::derive(cfg_.seed, 0, 0, Purpose::ModelInit);
    model_ = ModelParams::make(cfg_.model, splits_.train.dim(), splits_.train.num_classes, cfg_.hidden, init_rng);

    ctx_.seed = cfg_.seed;
    ctx_.scale_bits = cfg_.scale_bits;
    ctx_.training = TrainingConfig{cfg_.local_mode, cfg_.lr, cfg_.batch_size};

    if (cfg_.aggregator == AggregatorKind::Dp2Guard) {
      if (pipeline_ == PipelineKind::DualServer) {
        s2_.emplace(n_, S2Config{cfg_.beta, cfg_.exclusion, true, cfg_.seed});
      } else {
        plain_trust_.emplace(TrustWeighting{TrustState::initial(n_, cfg_.beta), cfg_.exclusion});
      }
    } else if (cfg_.aggregator == AggregatorKind::FedAvg && pipeline_ == PipelineKind::DualServer) {
      s2_.emplace(n_, S2Config{cfg_.beta, cfg_.exclusion, false, cfg_.seed});
    }
  }

  ExperimentResult run() {
    ExperimentResult out;
    for (std::size_t t = 1; t <= cfg_.rounds; ++t) out.metrics.push_back(round(static_cast<std::uint32_t>(t)));
    out.ledger = std::move(ledger_);
    out.final_model = model_;
    return out;
  }

 private:
  struct Aggregate {
    GradientVector global;
    std::vector<double> weights;
    std::optional<std::vector<std::size_t>> selected;
  };

  RoundMetrics round(std::uint32_t t) {
    const auto start = std::chrono::steady_clock::now();
    ctx_.round = t;
    const double bound = clip_bound(cfg_.scale_bits);

    std::vector<GradientVector> grads(n_);
    const bool adaptive = m_ > 0 && cfg_.attack.kind != AttackKind::LabelFlip;
    parallel_for(n_, cfg_.threads, [&](std::size_t i) {
      if (adaptive && i < m_) return;
      grads[i] = clip_linf(client_gradient(clients_[i], model_, ctx_), bound);
    });

    GradientVector root_grad;
    if (cfg_.aggregator == AggregatorKind::FlTrust) {
      SeededRng rng = SeededRng::derive(cfg_.seed, kRootActor, t, Purpose::LocalTraining);
      root_grad = clip_linf(local_update(model_, splits_.root, ctx_.training, rng), bound);
    }

    if (adaptive) {
      AttackKnowledge knowledge;
      knowledge.benign.assign(grads.begin() + static_cast<std::ptrdiff_t>(m_), grads.end());
      const std::size_t crafters = cfg_.attack.identical_malicious ? 1 : m_;
      for (std::size_t i = 0; i < crafters; ++i) {
        knowledge.accepts = [&, i](const GradientVector& candidate) {
          return attacker_accepts(knowledge.benign, clip_linf(candidate, bound), root_grad, t, kAttackerActor + i);
        };
        grads[i] = clip_linf(client_gradient(clients_[i], model_, ctx_, &knowledge), bound);
      }
      for (std::size_t i = crafters; i < m_; ++i) grads[i] = grads[0];
    }

    const GradientVector before = model_.flatten();
    const Digest digest = model_digest(before);
    Aggregate agg = pipeline_ == PipelineKind::DualServer ? dual_server(grads, t, digest)
                                                          : plaintext(grads, root_grad, t, digest);
    const GradientVector after = before - cfg_.lr * agg.global;
    model_ = model_.unflatten(after);

    RoundMetrics rm;
    rm.round = t;
    rm.accuracy = accuracy(model_, splits_.test);
    if (agg.selected) {
      const auto flagged = complement(*agg.selected, n_);
      std::tie(rm.precision, rm.recall) = detection_scores(flagged, n_, m_);
    }
    const TrustState* trust = s2_ && cfg_.aggregator == AggregatorKind::Dp2Guard ? &s2_->trust()
                              : plain_trust_                                    ? &plain_trust_->trust
                                                                                : nullptr;
    if (trust) {
      rm.trust = trust->trust;
      auto mean_of = [&](std::size_t lo, std::size_t hi) -> std::optional<double> {
        if (lo >= hi) return std::nullopt;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += rm.trust[i];
        return s / static_cast<double>(hi - lo);
      };
      rm.mean_trust_malicious = mean_of(0, m_);
      rm.mean_trust_benign = mean_of(m_, n_);
    }
    if (m_ > 0) rm.crafted_norm = grads[0].norm();
    rm.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (trace_) {
      RoundTrace rt;
      rt.gradients = grads;
      rt.weights = agg.weights;
      if (agg.selected) rt.benign_set = *agg.selected;
      rt.global_update = agg.global;
      rt.model = after;
      trace_->rounds.push_back(std::move(rt));
    }
    return rm;
  }

  // Whether the defence would let at least one copy of `candidate` through
  // (every copy, for dp2guard, whose benign set is all-or-nothing here).
  bool attacker_accepts(std::span<const GradientVector> benign, const GradientVector& candidate,
                        const GradientVector& root_grad, std::uint32_t t, std::uint64_t actor) const {
    std::vector<GradientVector> all(m_, candidate);
    all.insert(all.end(), benign.begin(), benign.end());
    switch (cfg_.aggregator) {
      case AggregatorKind::FedAvg:
        return true;
      case AggregatorKind::Dp2Guard: {
        SeededRng rng = SeededRng::derive(cfg_.seed, actor, t, Purpose::Clustering);
        const DetectionResult det = detect(center_rows(stack_rows(all)), rng);
        for (std::size_t i = 0; i < m_; ++i)
          if (!det.is_benign(i)) return false;
        return true;
      }
      case AggregatorKind::MultiKrum: {
        const auto sel = multi_krum_select(all, f_, n_ - f_);
        return !sel.empty() && sel.front() < m_;
      }
      case AggregatorKind::Dnc: {
        SeededRng rng = SeededRng::derive(cfg_.seed, actor, t, Purpose::DnC);
        const auto sel = dnc_select(all, dnc_config(all.front().size()), rng);
        return !sel.empty() && sel.front() < m_;
      }
      case AggregatorKind::FlTrust: {
        const auto scores = fltrust_scores(all, root_grad);
        return scores.front() > 0.0;
      }
    }
    return true;
  }

  DncConfig dnc_config(Eigen::Index d) const {
    DncConfig c = DncConfig::defaults(n_, f_, d);
    c.n_iters = cfg_.dnc_iters;
    c.sub_dim = std::min(d, cfg_.dnc_sub_dim);
    if (cfg_.dnc_filter_frac > 0.0) c.filter_frac = cfg_.dnc_filter_frac;
    return c;
  }

  Aggregate dual_server(std::span<const GradientVector> grads, std::uint32_t t, const Digest& digest) {
    std::vector<ClientId> ids(n_);
    for (std::size_t i = 0; i < n_; ++i) ids[i] = static_cast<ClientId>(i);
    s1_.begin_round(t, ids);
    s2_->begin_round(t, ids);
    for (std::size_t i = 0; i < n_; ++i) {
      SeededRng rng = SeededRng::derive(cfg_.seed, i, t, Purpose::ShareSplit);
      auto [a, b] = split_and_mask(grads[i], rng, cfg_.scale_bits, ids[i], t);
      s1_.receive(encode_message(share_upload(a)));
      s2_->receive(encode_message(share_upload(b)));
    }
    s2_->receive(s1_.send_centered_batch());
    s2_->detect_and_publish(ledger_, digest);
    const ProtocolMessage update = decode_message(s1_.finish_round(ledger_));
    if (update.kind != MessageKind::GlobalUpdate) throw FormatError("expected a global update");

    Aggregate agg;
    agg.global = decode_fixed(deserialize_ring(update.payload));
    for (const auto& [id, tau] : s2_->last_weights()) agg.weights.push_back(tau);
    if (const auto& det = s2_->last_detection()) agg.selected = det->benign_set;
    return agg;
  }

  Aggregate plaintext(std::span<const GradientVector> grads, const GradientVector& root_grad, std::uint32_t t,
                      const Digest& digest) {
    Aggregate agg;
    switch (cfg_.aggregator) {
      case AggregatorKind::Dp2Guard: {
        // Same quantisation as the masked uploads, so both pipelines see the same inputs.
        std::vector<GradientVector> q;
        q.reserve(n_);
        for (const auto& g : grads) q.push_back(decode_fixed(encode_fixed(g, cfg_.scale_bits)));
        SeededRng rng = detection_rng(cfg_.seed, t);
        DetectionResult det;
        agg.weights = plain_trust_->step(center_rows(stack_rows(q)), rng, &det);
        agg.selected = det.benign_set;
        agg.global = weighted_sum(q, agg.weights);
        break;
      }
      case AggregatorKind::FedAvg:
        agg.global = fedavg(grads);
        agg.weights.assign(n_, 1.0 / static_cast<double>(n_));
        break;
      case AggregatorKind::MultiKrum: {
        const auto sel = multi_krum_select(grads, f_, n_ - f_);
        agg.weights = uniform_over(sel, n_);
        agg.global = multi_krum(grads, f_, n_ - f_);
        agg.selected = sel;
        break;
      }
      case AggregatorKind::Dnc: {
        const DncConfig c = dnc_config(grads.front().size());
        SeededRng rng = SeededRng::derive(cfg_.seed, kS2Sender, t, Purpose::DnC);
        const auto sel = dnc_select(grads, c, rng);
        agg.weights = uniform_over(sel, n_);
        agg.global = weighted_sum(grads, agg.weights);
        agg.selected = sel;
        break;
      }
      case AggregatorKind::FlTrust: {
        const auto scores = fltrust_scores(grads, root_grad);
        std::vector<std::size_t> kept;
        double total = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
          total += scores[i];
          if (scores[i] > 0.0) kept.push_back(i);
        }
        agg.weights = total > 0.0 ? scores : std::vector<double>(n_, 1.0 / static_cast<double>(n_));
        if (total > 0.0)
          for (double& w : agg.weights) w /= total;
        agg.global = fltrust(grads, root_grad);
        agg.selected = kept;
        break;
      }
    }
    ledger_.append(t, plaintext_payload(agg.global, agg.weights, cfg_.scale_bits, digest));
    return agg;
  }

  ExperimentConfig cfg_;
  ExperimentTrace* trace_;
  Ledger ledger_;
  Splits splits_;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::size_t f_ = 0;
  PipelineKind pipeline_ = PipelineKind::Plaintext;
  std::vector<ClientState> clients_;
  ModelParams model_;
  RoundContext ctx_;
  Server1 s1_;
  std::optional<Server2> s2_;
  std::optional<TrustWeighting> plain_trust_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, ExperimentTrace* trace,
                                const std::filesystem::path& ledger_path) {
  return Experiment(cfg, trace, ledger_path).run();
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); }

std::optional<double> parse_cell(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw FormatError("metrics line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

const char* kMetricsHeader = "round,accuracy,precision,recall,mean_trust_benign,mean_trust_malicious";

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

void emit_metrics(std::span<const RoundMetrics> metrics, const std::filesystem::path& path) {
  if (metrics.empty()) throw PreconditionError("emit_metrics: no metrics");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& m : metrics)
    out << m.round << ',' << fmt17(m.accuracy) << ',' << opt_cell(m.precision) << ',' << opt_cell(m.recall) << ','
        << opt_cell(m.mean_trust_benign) << ',' << opt_cell(m.mean_trust_malicious) << '\n';
  if (!out) throw IOError("failed writing " + path.string());
}

std::vector<RoundMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics: bad header");
  std::vector<RoundMetrics> out;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) throw FormatError("metrics line " + std::to_string(n) + ": expected 6 cells");
    RoundMetrics m;
    const auto r = parse_cell(cells[0], n);
    const auto a = parse_cell(cells[1], n);
    if (!r || !a) throw FormatError("metrics line " + std::to_string(n) + ": round and accuracy are required");
    m.round = static_cast<std::size_t>(*r);
    m.accuracy = *a;
    m.precision = parse_cell(cells[2], n);
    m.recall = parse_cell(cells[3], n);
    m.mean_trust_benign = parse_cell(cells[4], n);
    m.mean_trust_malicious = parse_cell(cells[5], n);
    out.push_back(std::move(m));
  }
  return out;
}

void write_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
               const std::string& y_label, const std::filesystem::path& path) {
  constexpr double W = 720, H = 440, L = 70, R = 170, T = 40, B = 55;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!any) {
        x0 = x1 = s.x[k];
        any = true;
      }
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y1 = std::max(y1, s.y[k]);
      y0 = std::min(y0, s.y[k]);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  char buf[64];
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0;
    const double yv = y0 + (y1 - y0) * k / 5.0;
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << buf << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
      << "\" stroke=\"#dddddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\">" << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\">" << xml_escape(y_label)
    << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < series[s].x.size() && k < series[s].y.size(); ++k)
      o << (k ? " " : "") << px(series[s].x[k]) << ',' << py(series[s].y[k]);
    o << "\"/>\n";
    const double ly = T + 16 + 18 * static_cast<double>(s);
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot write " + path.string());
  out << o.str();
  if (!out) throw IOError("failed writing " + path.string());
}

void plot(std::span<const RoundMetrics> metrics, const std::filesystem::path& path) {
  if (metrics.empty()) throw PreconditionError("plot: no metrics");
  Series s{"accuracy", {}, {}};
  for (const auto& m : metrics) {
    s.x.push_back(static_cast<double>(m.round));
    s.y.push_back(m.accuracy);
  }
  write_svg(std::span(&s, 1), "Test accuracy", "round", "accuracy", path);
}

ExperimentResult run_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto ledger_path = out_dir / "ledger.jsonl";
  std::filesystem::remove(ledger_path);
  {
    std::ofstream out(out_dir / "resolved-config.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write " + (out_dir / "resolved-config.json").string());
    out << cfg.to_json() << '\n';
  }
  ExperimentResult result = run_experiment(cfg, nullptr, ledger_path);
  emit_metrics(result.metrics, out_dir / "metrics.csv");
  if (cfg.malicious_count() > 0) {
    std::ofstream out(out_dir / "attack.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write " + (out_dir / "attack.csv").string());
    out << "round,crafted_norm\n";
    for (const auto& m : result.metrics) out << m.round << ',' << opt_cell(m.crafted_norm) << '\n';
  }
  plot(result.metrics, out_dir / "plot.svg");
  return result;
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const std::string& key,
                                  std::span<const std::string> values, const std::filesystem::path& out_dir) {
  if (values.empty()) throw ConfigError("sweep: no values");
  std::vector<SweepPoint> points;
  Series s{"final accuracy", {}, {}};
  for (std::size_t k = 0; k < values.size(); ++k) {
    const ExperimentConfig cfg = with_override(base, key, values[k]);
    SweepPoint p{values[k], out_dir / (key + "=" + values[k]), {}};
    p.result = run_to_dir(cfg, p.dir);
    char* end = nullptr;
    const double x = std::strtod(values[k].c_str(), &end);
    s.x.push_back(end == values[k].c_str() + values[k].size() ? x : static_cast<double>(k));
    s.y.push_back(p.result.metrics.back().accuracy);
    points.push_back(std::move(p));
  }
  write_svg(std::span(&s, 1), "Final accuracy vs " + key, key, "accuracy", out_dir / "ratio_plot.svg");
  return points;
}

}  // namespace dp2guard

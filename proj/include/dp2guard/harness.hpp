#pragma once

// Experiment orchestration: configuration, the round loop, metrics, plots.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dp2guard/attacks.hpp"
#include "dp2guard/data.hpp"
#include "dp2guard/ledger.hpp"
#include "dp2guard/model.hpp"
#include "dp2guard/trust.hpp"

namespace dp2guard {

enum class DatasetKind { Synthetic, Mnist, Fashion };
enum class AttackKind { None, LabelFlip, Fang, MinMax, MinSum };
enum class AggregatorKind { Dp2Guard, FedAvg, MultiKrum, Dnc, FlTrust };
/// Auto: dual-server for dp2guard, plaintext for everything else.
enum class PipelineKind { Auto, DualServer, Plaintext };

struct SyntheticConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  Eigen::Index dim = 20;
  int classes = 10;
  double separation = 6.0;
};

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  int l_flip = 5;
  double flip_fraction = 0.3;
  double lambda0 = 10.0;
  double fang_step = 0.5;
  double gamma0 = 10.0;
  double step = 5.0;
  double gamma_min = 1e-5;
  Direction direction = Direction::PlusMean;
  /// false: every malicious client runs its own search (own oracle stream).
  bool identical_malicious = true;
};

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string data_dir = "data/mnist-subset";
  std::size_t train_subset = 2000;  // 0: whole split
  std::size_t test_subset = 2000;   // 0: whole split
  SyntheticConfig synthetic;

  ModelKind model = ModelKind::LogReg;
  Eigen::Index hidden = 128;

  std::size_t n_clients = 20;
  std::size_t rounds = 50;
  double adv_ratio = 0.0;
  AttackConfig attack;

  AggregatorKind aggregator = AggregatorKind::Dp2Guard;
  PipelineKind pipeline = PipelineKind::Auto;
  PartitionMode partition = PartitionMode::Iid;
  double alpha = 0.5;

  double beta = 0.5;
  ExclusionMode exclusion = ExclusionMode::Soft;

  std::uint64_t seed = 1;
  double lr = 0.01;
  std::size_t batch_size = 32;
  LocalMode local_mode = LocalMode::Epoch;
  int scale_bits = kDefaultScaleBits;

  /// Multi-Krum f and DnC's assumed count; -1 means the true malicious count.
  long assumed_malicious = -1;
  std::size_t dnc_iters = 1;
  Eigen::Index dnc_sub_dim = 1000;
  double dnc_filter_frac = 0.0;  // 0: derived from assumed_malicious
  std::size_t fltrust_root = 100;

  std::size_t threads = 1;

  /// Throws ConfigError on unknown keys, bad enum names or wrong types.
  static ExperimentConfig from_json(std::string_view text);
  std::string to_json() const;
  /// Throws ConfigError on out-of-range values.
  void validate() const;

  std::size_t malicious_count() const;
  bool is_malicious(std::size_t client) const { return client < malicious_count(); }
  PipelineKind resolved_pipeline() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

struct RoundMetrics {
  std::size_t round = 0;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> mean_trust_benign;
  std::optional<double> mean_trust_malicious;
  std::vector<double> trust;
  std::optional<double> crafted_norm;  // first malicious client's upload
  double wall_seconds = 0.0;
};

struct RoundTrace {
  std::vector<GradientVector> gradients;  // clipped uploads, client order
  std::vector<double> weights;            // aggregation weights, empty if none apply
  std::vector<std::size_t> benign_set;    // selected clients, empty if none apply
  GradientVector global_update;
  GradientVector model;                   // parameters after the update
};

struct ExperimentTrace {
  std::vector<RoundTrace> rounds;
};

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  Ledger ledger;
  ModelParams final_model;
};

/// Deterministic given cfg. `ledger_path` empty: in-memory ledger.
ExperimentResult run_experiment(const ExperimentConfig& cfg, ExperimentTrace* trace = nullptr,
                                const std::filesystem::path& ledger_path = {});

/// Precision and recall of the flagged set against ground truth; absent
/// when there are no malicious clients. Precision is 0 if nothing is flagged.
std::pair<std::optional<double>, std::optional<double>> detection_scores(
    std::span<const std::size_t> flagged, std::size_t n_clients, std::size_t n_malicious);

void emit_metrics(std::span<const RoundMetrics> metrics, const std::filesystem::path& path);
std::vector<RoundMetrics> read_metrics(const std::filesystem::path& path);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
void write_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
               const std::string& y_label, const std::filesystem::path& path);
/// Accuracy vs round.
void plot(std::span<const RoundMetrics> metrics, const std::filesystem::path& path);

/// Writes metrics.csv, ledger.jsonl, plot.svg and resolved-config.json, plus
/// attack.csv (round, crafted_norm) when there are malicious clients.
ExperimentResult run_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct SweepPoint {
  std::string value;
  std::filesystem::path dir;
  ExperimentResult result;
};
/// One run per value of `key`, each in out_dir/<key>=<value>, plus
/// out_dir/ratio_plot.svg with final accuracy against the varied value.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const std::string& key,
                                  std::span<const std::string> values, const std::filesystem::path& out_dir);

/// Applies `key=value` to a config; dotted keys reach nested objects and a
/// value that is not valid JSON is taken as a string.
ExperimentConfig with_override(const ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dp2guard

#include "dp2guard/data.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "dp2guard/errors.hpp"

namespace dp2guard {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw PreconditionError("subset: index out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  if (n >= size()) return *this;
  Dataset out;
  out.num_classes = num_classes;
  out.features = features.topRows(static_cast<Eigen::Index>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw PreconditionError("dataset: feature rows and labels disagree");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw PreconditionError("dataset: label out of range");
  if (!features.allFinite()) throw PreconditionError("dataset: non-finite feature");
}

PartitionPlan partition(const Dataset& dataset, std::size_t n_clients, PartitionMode mode,
                        double alpha, SeededRng& rng) {
  if (n_clients < 1) throw PreconditionError("partition: need at least one client");
  PartitionPlan plan;
  plan.mode = mode;
  plan.alpha = alpha;

  if (mode == PartitionMode::Iid) {
    const std::size_t each = dataset.size() / n_clients;
    if (each == 0) throw EmptyClientError("partition: fewer samples than clients");
    const std::vector<std::size_t> perm = rng.permutation(dataset.size());
    plan.assignment.resize(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c)
      plan.assignment[c].assign(perm.begin() + static_cast<std::ptrdiff_t>(c * each),
                                perm.begin() + static_cast<std::ptrdiff_t>((c + 1) * each));
    return plan;
  }

  if (!(alpha > 0.0)) throw PreconditionError("partition: Dirichlet alpha must be positive");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::vector<std::size_t>> assignment(n_clients);
    for (auto members : by_class) {
      if (members.empty()) continue;
      rng.shuffle(std::span<std::size_t>(members));
      const std::vector<double> props = rng.dirichlet(n_clients, alpha);
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        cum += props[c];
        std::size_t end = c + 1 == n_clients
                              ? members.size()
                              : std::min(members.size(), static_cast<std::size_t>(std::floor(cum * static_cast<double>(members.size()))));
        end = std::max(end, begin);
        assignment[c].insert(assignment[c].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                             members.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    bool ok = true;
    for (const auto& a : assignment) ok = ok && !a.empty();
    if (ok) {
      plan.assignment = std::move(assignment);
      return plan;
    }
  }
  throw EmptyClientError("partition: Dirichlet draw left a client empty after 100 attempts");
}

namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IOError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) throw FormatError("corrupt compressed stream in " + path.string());
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (b.size() < off + 4) throw FormatError("IDX header truncated");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::vector<std::uint8_t> img = read_all(images);
  const std::vector<std::uint8_t> lbl = read_all(labels);
  if (be32(img, 0) != 0x00000803) throw FormatError("bad image magic in " + images.string());
  if (be32(lbl, 0) != 0x00000801) throw FormatError("bad label magic in " + labels.string());
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  const std::size_t n_labels = be32(lbl, 4);
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + n * pixels) throw FormatError("image payload truncated or oversized");
  if (lbl.size() != 8 + n_labels) throw FormatError("label payload truncated or oversized");
  if (n != n_labels) throw CountMismatch("image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));

  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  out.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < pixels; ++k)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = img[16 + i * pixels + k] / 255.0;
    out.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = std::max(10, max_label + 1);
  return out;
}

Dataset synth_dataset(std::size_t n, Eigen::Index p, int num_classes, double separation,
                      SeededRng& rng) {
  if (n < 1 || p < 1 || num_classes < 1) throw PreconditionError("synth_dataset: n, p, L must be >= 1");
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, p);
  const double radius = separation / std::sqrt(2.0);
  for (int c = 0; c < num_classes; ++c) {
    if (c < p) {
      means(c, c) = radius;
    } else {
      Eigen::VectorXd dir(p);
      for (Eigen::Index k = 0; k < p; ++k) dir(k) = rng.normal();
      means.row(c) = radius * dir.normalized().transpose();
    }
  }
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(n), p);
  out.labels.resize(n);
  std::vector<std::size_t> order = rng.permutation(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(order[i] % static_cast<std::size_t>(num_classes));
    out.labels[i] = y;
    for (Eigen::Index k = 0; k < p; ++k)
      out.features(static_cast<Eigen::Index>(i), k) = means(y, k) + rng.normal();
  }
  return out;
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (Eigen::Index k = 0; k < dataset.dim(); ++k) out << dataset.features(static_cast<Eigen::Index>(i), k) << ',';
    out << dataset.labels[i] << '\n';
  }
  if (!out) throw IOError("write failed for " + path.string());
}

Dataset read_csv(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError("ragged CSV row");
    rows.push_back(std::move(row));
  }
  Dataset out;
  out.num_classes = num_classes;
  if (rows.empty()) return out;
  const Eigen::Index p = static_cast<Eigen::Index>(rows.front().size()) - 1;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index k = 0; k < p; ++k) out.features(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    out.labels.push_back(static_cast<int>(rows[i].back()));
  }
  out.validate();
  return out;
}

std::vector<std::size_t> class_histogram(const Dataset& dataset,
                                         std::span<const std::size_t> indices) {
  std::vector<std::size_t> h(static_cast<std::size_t>(dataset.num_classes), 0);
  for (std::size_t i : indices) ++h[static_cast<std::size_t>(dataset.labels[i])];
  return h;
}

}  // namespace dp2guard

#include "darn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "darn/errors.hpp"
#include "darn/rng.hpp"

namespace darn {
namespace {

constexpr std::uint64_t kStreamGaussians = 0xD1;
constexpr std::uint64_t kStreamFlip = 0xD2;
constexpr std::uint64_t kStreamShuffle = 0xD3;

DomainDataset make_gaussian_domain(const std::string& name, int rows, double angle_deg,
                                   double noise, std::uint64_t domain_seed) {
  Rng rng(domain_seed);
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double cx = std::cos(t), cy = std::sin(t);
  DomainDataset d;
  d.name = name;
  d.labelled = true;
  d.features.dim = 2;
  d.features.dense.resize(rows, 2);
  d.labels.resize(rows);
  const int half = rows / 2;  // class 0 block first, then class 1
  for (int r = 0; r < rows; ++r) {
    const int y = r < half ? 0 : 1;
    const double s = (y == 1) ? 1.0 : -1.0;
    d.features.dense(r, 0) = s * cx + noise * rng.normal();
    d.features.dense(r, 1) = s * cy + noise * rng.normal();
    d.labels[r] = static_cast<double>(y);
  }
  return d;
}

DomainDataset take_rows(const DomainDataset& d, const std::vector<int>& rows,
                        const std::string& name, bool keep_labels) {
  DomainDataset out;
  out.name = name;
  out.features.dim = d.features.dim;
  out.features.sparse = d.features.sparse;
  if (d.features.sparse) {
    for (int r : rows) out.features.sparse_rows.push_back(d.features.sparse_rows[r]);
  } else {
    out.features.dense.resize(static_cast<Eigen::Index>(rows.size()), d.features.dense.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.features.dense.row(i) = d.features.dense.row(rows[i]);
  }
  if (keep_labels) {
    out.labelled = true;
    out.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out.labels[i] = d.labels[rows[i]];
  }
  return out;
}

// strict numeric token parsers: the whole token must be consumed
bool parse_double(const std::string& tok, double* out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

bool parse_index(const std::string& tok, long* out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size()) return false;
  *out = v;
  return true;
}

void format_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

MultiDomainDataset gen_rotated_gaussians(int k, int m, const std::vector<double>& angles_deg,
                                         double noise, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("gen_rotated_gaussians: k must be >= 1");
  if (static_cast<int>(angles_deg.size()) != k + 1) {
    throw std::invalid_argument("gen_rotated_gaussians: need k+1 angles (sources then target)");
  }
  if (m < 2 || m % 2 != 0) {
    throw std::invalid_argument("gen_rotated_gaussians: m must be even and >= 2");
  }
  if (noise < 0.0) throw std::invalid_argument("gen_rotated_gaussians: noise must be >= 0");

  MultiDomainDataset ds;
  for (int i = 0; i < k; ++i) {
    ds.sources.push_back(make_gaussian_domain("source" + std::to_string(i), m, angles_deg[i],
                                              noise, derive_seed(seed, kStreamGaussians, i)));
  }
  const DomainDataset target = make_gaussian_domain(
      "target", m, angles_deg[k], noise, derive_seed(seed, kStreamGaussians, k));

  // split the target: the training half is unlabelled, the rest evaluates
  const int half = m / 2;        // class block size
  const int b = m / 2;           // training-half size
  const int n0 = b / 2;          // from class 0
  const int n1 = b - n0;         // from class 1
  std::vector<int> train_rows, eval_rows;
  for (int r = 0; r < n0; ++r) train_rows.push_back(r);
  for (int r = half; r < half + n1; ++r) train_rows.push_back(r);
  for (int r = n0; r < half; ++r) eval_rows.push_back(r);
  for (int r = half + n1; r < m; ++r) eval_rows.push_back(r);
  ds.target_train = take_rows(target, train_rows, "target-train", /*keep_labels=*/false);
  ds.target_eval = take_rows(target, eval_rows, "target-eval", /*keep_labels=*/true);
  return ds;
}

DomainDataset flip_labels(const DomainDataset& d, double fraction, std::uint64_t seed) {
  if (!d.labelled) throw std::invalid_argument("flip_labels: dataset is unlabelled");
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("flip_labels: fraction must lie in [0, 1]");
  }
  const int m = d.rows();
  const int n = static_cast<int>(std::floor(fraction * m));
  DomainDataset out = d;
  if (n == 0) return out;

  double max_label = 1.0;
  for (int r = 0; r < m; ++r) max_label = std::max(max_label, d.labels[r]);
  const int classes = std::max(2, static_cast<int>(max_label) + 1);

  // partial Fisher-Yates: the first n entries are a uniform distinct sample
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, kStreamFlip));
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m - i)));
    std::swap(idx[i], idx[j]);
  }
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(out.labels[idx[i]]);
    out.labels[idx[i]] = static_cast<double>((y + 1) % classes);
  }
  return out;
}

DomainDataset load_sparse_text(const std::string& path, int declared_dim) {
  if (declared_dim < 0) throw std::invalid_argument("load_sparse_text: negative dimension");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_sparse_text: cannot open " + path);

  std::vector<SparseRow> rows;
  std::vector<double> labels;
  int max_index = -1;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;  // blank line
    double label = 0.0;
    if (!parse_double(tok, &label)) {
      throw ParseError("expected a numeric label, got '" + tok + "'", line_no);
    }
    SparseRow row;
    while (ss >> tok) {
      const std::size_t colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size()) {
        throw ParseError("expected 'index:value', got '" + tok + "'", line_no);
      }
      long idx = 0;
      if (!parse_index(tok.substr(0, colon), &idx)) {
        throw ParseError("bad feature index in '" + tok + "'", line_no);
      }
      if (idx < 0) throw ParseError("negative feature index in '" + tok + "'", line_no);
      if (declared_dim > 0 && idx >= declared_dim) {
        throw ParseError("feature index " + std::to_string(idx) + " exceeds declared dimension " +
                             std::to_string(declared_dim),
                         line_no);
      }
      double val = 0.0;
      if (!parse_double(tok.substr(colon + 1), &val)) {
        throw ParseError("bad feature value in '" + tok + "'", line_no);
      }
      row.emplace_back(static_cast<int>(idx), val);
      max_index = std::max(max_index, static_cast<int>(idx));
    }
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (row[i].first == row[i - 1].first) {
        throw ParseError("duplicate feature index " + std::to_string(row[i].first), line_no);
      }
    }
    rows.push_back(std::move(row));
    labels.push_back(label);
  }

  DomainDataset d;
  d.name = path;
  d.labelled = true;
  d.features.sparse = true;
  d.features.sparse_rows = std::move(rows);
  d.features.dim = declared_dim > 0 ? declared_dim : max_index + 1;
  d.labels = Eigen::Map<const Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return d;
}

void save_sparse_text(const std::string& path, const DomainDataset& d) {
  if (!d.labelled) throw std::invalid_argument("save_sparse_text: dataset is unlabelled");
  if (!d.features.sparse) throw std::invalid_argument("save_sparse_text: dataset is not sparse");
  std::ofstream out(path, std::ios::binary);  // binary: keep '\n' on every platform
  if (!out) throw std::runtime_error("save_sparse_text: cannot open " + path + " for writing");
  std::string buf;
  for (int r = 0; r < d.rows(); ++r) {
    buf.clear();
    format_double(buf, d.labels[r]);
    for (const auto& [idx, val] : d.features.sparse_rows[r]) {
      buf += ' ';
      buf += std::to_string(idx);
      buf += ':';
      format_double(buf, val);
    }
    buf += '\n';
    out << buf;
  }
  out.flush();
  if (!out) throw std::runtime_error("save_sparse_text: write failed for " + path);
}

std::vector<std::vector<int>> batch_iter(const DomainDataset& d, int batch_size,
                                         std::uint64_t epoch_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  const int rows = d.rows();
  std::vector<int> order(rows);
  for (int i = 0; i < rows; ++i) order[i] = i;
  Rng rng(derive_seed(epoch_seed, kStreamShuffle));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < rows; start += batch_size) {
    const int end = std::min(rows, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Batch gather(const DomainDataset& d, const std::vector<int>& indices) {
  Batch b;
  b.dim = d.features.dim;
  b.sparse = d.features.sparse;
  if (b.sparse) {
    for (int r : indices) b.sparse_rows.push_back(d.features.sparse_rows[r]);
  } else {
    b.dense.resize(static_cast<Eigen::Index>(indices.size()), d.features.dense.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      b.dense.row(static_cast<Eigen::Index>(i)) = d.features.dense.row(indices[i]);
    }
  }
  if (d.labelled) {
    b.labels.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) b.labels[i] = d.labels[indices[i]];
  }
  return b;
}

}  // namespace darn

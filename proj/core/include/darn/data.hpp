#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darn/nn.hpp"

namespace darn {

/// Feature rows for a whole domain, dense or sparse.
struct FeatureMatrix {
  bool sparse = false;
  Eigen::MatrixXd dense;
  std::vector<SparseRow> sparse_rows;
  int dim = 0;

  int rows() const {
    return sparse ? static_cast<int>(sparse_rows.size()) : static_cast<int>(dense.rows());
  }
};

struct DomainDataset {
  std::string name;
  FeatureMatrix features;
  Eigen::VectorXd labels;  // size rows() when labelled, otherwise empty
  bool labelled = false;

  int rows() const { return features.rows(); }
};

/// k labelled source domains plus the two halves of the target domain:
/// an unlabelled training half and a labelled evaluation half.
struct MultiDomainDataset {
  std::vector<DomainDataset> sources;
  DomainDataset target_train;
  DomainDataset target_eval;

  int k() const { return static_cast<int>(sources.size()); }
  int feature_dim() const { return target_train.features.dim; }
};

/// Binary 2-d Gaussian domains: class y in {0, 1} has mean +-(cos t, sin t)
/// on the unit circle at the domain's angle (degrees), isotropic noise, and
/// m/2 examples per class (m must be even). angles_deg supplies k source
/// angles followed by the target angle. The target's m rows are split
/// half/half into an unlabelled training part (the first floor(b/2) rows of
/// class 0 plus the first ceil(b/2) of class 1, b = m/2) and a labelled
/// evaluation part.
MultiDomainDataset gen_rotated_gaussians(int k, int m, const std::vector<double>& angles_deg,
                                         double noise, std::uint64_t seed);

/// Copy of a labelled dataset with floor(fraction*m) distinct rows' labels
/// flipped to (y+1) mod C, C being the number of classes present (>= 2).
DomainDataset flip_labels(const DomainDataset& d, double fraction, std::uint64_t seed);

/// Text format: one example per line, "<label> idx:val idx:val ...", with
/// 0-based feature indices. declared_dim fixes the feature dimension (and
/// bounds the indices); 0 infers it as max index + 1. Malformed content
/// raises ParseError with the 1-based line number.
DomainDataset load_sparse_text(const std::string& path, int declared_dim = 0);
void save_sparse_text(const std::string& path, const DomainDataset& d);

/// Seeded epoch order: shuffled row indices sliced into batches of
/// batch_size, keeping the final short batch.
std::vector<std::vector<int>> batch_iter(const DomainDataset& d, int batch_size,
                                         std::uint64_t epoch_seed);

/// Materialize the given rows (and labels, when present) as a Batch.
Batch gather(const DomainDataset& d, const std::vector<int>& indices);

}  // namespace darn

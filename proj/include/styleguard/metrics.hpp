#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"
#include "styleguard/tensor.hpp"

namespace sguard {

/// Rows are samples, columns are feature dimensions.
using FeatureMatrix = Eigen::MatrixXd;

/// Frozen random convolutional embedder shared by every report. Features are
/// the per-channel spatial mean and standard deviation of two strided
/// conv+ReLU stages.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = 20240917) {
    Rng rng(derive_seed(seed, "feature-extractor"));
    w1_ = rng.normal_tensor(Shape{8, 3, 3, 3}) * std::sqrt(2.0 / 27.0);
    b1_ = rng.normal_tensor(Shape{1, 8, 1, 1}) * 0.05;
    w2_ = rng.normal_tensor(Shape{8, 8, 3, 3}) * std::sqrt(2.0 / 72.0);
    b2_ = rng.normal_tensor(Shape{1, 8, 1, 1}) * 0.05;
  }

  static constexpr int kDim = 16;

  [[nodiscard]] int dim() const { return kDim; }

  [[nodiscard]] FeatureMatrix operator()(const Tensor& images) const {
    ag::Graph g;
    ag::Var x = g.constant(images);
    ag::Var h = ag::relu(ag::conv2d(x, g.constant(w1_), g.constant(b1_), 2, 1));
    h = ag::relu(ag::conv2d(h, g.constant(w2_), g.constant(b2_), 2, 1));
    const Tensor mu = ag::channel_mean(h).value();
    const Tensor sd = ag::channel_std(h).value();
    const int n = images.shape().n;
    FeatureMatrix f(n, 16);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 8; ++c) {
        f(i, c) = mu[static_cast<std::size_t>(i) * 8 + c];
        f(i, 8 + c) = sd[static_cast<std::size_t>(i) * 8 + c];
      }
    return f;
  }

 private:
  Tensor w1_, b1_, w2_, b2_;
};

/// Fréchet distance between Gaussian fits (unbiased covariance) of two
/// feature sets.
inline double fid(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) throw ContractError("fid: feature dimensions differ");
  const Eigen::Index d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1) throw ContractError("fid: need at least d+1 samples per set");
  auto fit = [](const FeatureMatrix& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd centered = f.rowwise() - mu.transpose();
    cov = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
    cov = 0.5 * (cov + cov.transpose());
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit(a, mu_a, cov_a);
  fit(b, mu_b, cov_b);
  if (!cov_a.allFinite() || !cov_b.allFinite()) throw NumericError("fid: non-finite covariance");

  // Tr((S_a S_b)^{1/2}) = Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), the latter symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(cov_a);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * cov_b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
    const double lam = em.eigenvalues()(i);
    if (lam < -1e-6) throw NumericError("fid: covariance product has a negative eigenvalue");
    tr_sqrt += std::sqrt(std::max(lam, 0.0));
  }
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(value)) throw NumericError("fid: non-finite result");
  return std::max(value, 0.0);
}

/// k-NN manifold precision: fraction of generated features inside at least
/// one real hypersphere, each sphere reaching its centre's k-th nearest real
/// neighbour (self excluded).
inline double precision_knn(const FeatureMatrix& real, const FeatureMatrix& gen, int k) {
  if (k < 1) throw ContractError("precision_knn: k must be >= 1");
  if (real.rows() <= k) throw ContractError("precision_knn: need more than k real samples");
  if (real.cols() != gen.cols()) throw ContractError("precision_knn: feature dimensions differ");
  if (gen.rows() == 0) throw ContractError("precision_knn: empty generated set");
  const Eigen::Index nr = real.rows();
  std::vector<double> radius(static_cast<std::size_t>(nr));
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < nr; ++i) {
    dist.clear();
    for (Eigen::Index j = 0; j < nr; ++j)
      if (j != i) dist.push_back((real.row(i) - real.row(j)).norm());
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    radius[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(k - 1)];
  }
  Eigen::Index inside = 0;
  for (Eigen::Index g = 0; g < gen.rows(); ++g) {
    for (Eigen::Index i = 0; i < nr; ++i) {
      if ((gen.row(g) - real.row(i)).norm() <= radius[static_cast<std::size_t>(i)]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(gen.rows());
}

/// Mean cosine similarity between each generated embedding and the mean
/// reference embedding.
inline double ims(const FeatureMatrix& gen, const FeatureMatrix& ref) {
  if (gen.rows() == 0 || ref.rows() == 0) throw ContractError("ims: empty embedding set");
  if (gen.cols() != ref.cols()) throw ContractError("ims: embedding dimensions differ");
  const Eigen::VectorXd centre = ref.colwise().mean().transpose();
  const double cn = centre.norm();
  if (cn == 0.0) throw NumericError("ims: zero mean reference embedding");
  double total = 0.0;
  for (Eigen::Index i = 0; i < gen.rows(); ++i) {
    const double gn = gen.row(i).norm();
    if (gn == 0.0) throw NumericError("ims: zero-norm generated embedding");
    total += gen.row(i).dot(centre) / (gn * cn);
  }
  return total / static_cast<double>(gen.rows());
}

/// Fraction of preference records that favour the robust mimicry.
inline double success_rate(const std::vector<bool>& preferences, int n_prompts, int n_annotators) {
  if (n_prompts < 1 || n_annotators < 1) throw ContractError("success_rate: counts must be positive");
  if (preferences.size() != static_cast<std::size_t>(n_prompts) * static_cast<std::size_t>(n_annotators)) {
    throw ContractError("success_rate: expected n_prompts * n_annotators records");
  }
  const auto yes = std::count(preferences.begin(), preferences.end(), true);
  return static_cast<double>(yes) / static_cast<double>(preferences.size());
}

}  // namespace sguard

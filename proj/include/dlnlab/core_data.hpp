#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace dlnlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace data {

struct DatasetMeta {
  int s = 0;
  double mean = 0.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
};

// Noiseless regression instance. X and y carry the 1/sqrt(n) scaling so that
// loss = 0.5*|X b - y|^2 and H = X^T X.
struct Dataset {
  int n = 0;
  int d = 0;
  Mat X;
  Vec y;
  std::optional<Vec> sparse_truth;
  Mat H;
  Mat raw_rows;
  Vec raw_y;
  DatasetMeta meta;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

inline Dataset make_dataset(Mat raw_rows, Vec raw_y, std::optional<Vec> truth = std::nullopt,
                            DatasetMeta meta = {}) {
  const auto n = raw_rows.rows();
  const auto d = raw_rows.cols();
  require(n >= 1 && d >= 1, ErrorKind::InvalidArgument, "dataset needs n >= 1 and d >= 1");
  require(raw_y.size() == n, ErrorKind::DimensionMismatch, "y length must equal n");
  require(raw_rows.allFinite() && raw_y.allFinite(), ErrorKind::InvalidArgument,
          "dataset entries must be finite");
  if (truth) {
    require(truth->size() == d, ErrorKind::DimensionMismatch, "truth length must equal d");
    require(truth->allFinite(), ErrorKind::InvalidArgument, "truth must be finite");
  }
  Dataset ds;
  ds.n = static_cast<int>(n);
  ds.d = static_cast<int>(d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  ds.X = raw_rows * scale;
  ds.y = raw_y * scale;
  ds.H = ds.X.transpose() * ds.X;
  ds.H = 0.5 * (ds.H + ds.H.transpose()).eval();
  ds.raw_rows = std::move(raw_rows);
  ds.raw_y = std::move(raw_y);
  ds.sparse_truth = std::move(truth);
  ds.meta = meta;
  if (ds.sparse_truth) {
    const Vec fit = ds.X * *ds.sparse_truth - ds.y;
    const double ref = (ds.X.cwiseAbs() * ds.sparse_truth->cwiseAbs()).maxCoeff() + ds.y.cwiseAbs().maxCoeff();
    require(fit.cwiseAbs().maxCoeff() <= 1e-12 * std::max(ref, 1e-300) || fit.isZero(0.0),
            ErrorKind::InvariantViolation, "truth does not interpolate y");
  }
  return ds;
}

inline Dataset make_gaussian_dataset(int n, int d, int s, double mean, double sigma,
                                     double truth_scale, RngStream rng) {
  require(n >= 1 && d >= 1, ErrorKind::InvalidArgument, "n and d must be positive");
  require(s >= 1 && s <= d, ErrorKind::InvalidArgument, "need 1 <= s <= d");
  require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::InvalidArgument, "sigma must be positive");
  require(std::isfinite(mean) && std::isfinite(truth_scale) && truth_scale >= 0.0,
          ErrorKind::InvalidArgument, "mean and truth_scale must be finite, truth_scale >= 0");
  Mat rows(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) rows(i, j) = mean + sigma * rng.normal();
  Vec truth = Vec::Zero(d);
  for (int j = 0; j < s; ++j) truth(j) = (rng.next_u64() >> 63) ? -truth_scale : truth_scale;
  Vec y = rows * truth;
  return make_dataset(std::move(rows), std::move(y), std::move(truth),
                      DatasetMeta{s, mean, sigma, rng.seed()});
}

struct Batch {
  std::vector<int> indices;
  int b() const { return static_cast<int>(indices.size()); }
};

inline Batch full_batch(int n) {
  Batch B;
  B.indices.resize(n);
  std::iota(B.indices.begin(), B.indices.end(), 0);
  return B;
}

// Uniform size-b subset (Floyd), returned sorted. b = n consumes no draws.
inline Batch sample_batch(int n, int b, RngStream& rng) {
  require(n >= 1 && b >= 1, ErrorKind::InvalidArgument, "need n >= 1 and b >= 1");
  require(b <= n, ErrorKind::InvalidArgument, "batch size exceeds n");
  if (b == n) return full_batch(n);
  Batch B;
  B.indices.reserve(b);
  for (int j = n - b; j < n; ++j) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(j) + 1));
    auto it = std::lower_bound(B.indices.begin(), B.indices.end(), t);
    const int pick = (it != B.indices.end() && *it == t) ? j : t;
    B.indices.insert(std::lower_bound(B.indices.begin(), B.indices.end(), pick), pick);
  }
  return B;
}

inline void check_batch(const Dataset& ds, const Batch& batch) {
  require(!batch.indices.empty(), ErrorKind::InvalidArgument, "empty batch");
  for (std::size_t t = 0; t < batch.indices.size(); ++t) {
    const int i = batch.indices[t];
    require(i >= 0 && i < ds.n, ErrorKind::InvalidArgument, "batch index out of range");
    require(t == 0 || batch.indices[t - 1] < i, ErrorKind::InvalidArgument, "batch indices must increase");
  }
}

inline double loss(const Eigen::Ref<const Vec>& beta, const Dataset& ds) {
  require(beta.size() == ds.d, ErrorKind::DimensionMismatch, "beta length must equal d");
  return 0.5 * (ds.X * beta - ds.y).squaredNorm();
}

inline Vec full_gradient(const Eigen::Ref<const Vec>& beta, const Dataset& ds) {
  require(beta.size() == ds.d, ErrorKind::DimensionMismatch, "beta length must equal d");
  return ds.X.transpose() * (ds.X * beta - ds.y);
}

inline Vec batch_gradient(const Eigen::Ref<const Vec>& beta, const Dataset& ds, const Batch& batch) {
  require(beta.size() == ds.d, ErrorKind::DimensionMismatch, "beta length must equal d");
  check_batch(ds, batch);
  Vec g = Vec::Zero(ds.d);
  for (int i : batch.indices) {
    const double r = ds.raw_rows.row(i).dot(beta) - ds.raw_y(i);
    g.noalias() += r * ds.raw_rows.row(i).transpose();
  }
  return g / static_cast<double>(batch.b());
}

inline double batch_loss(const Eigen::Ref<const Vec>& beta, const Dataset& ds, const Batch& batch) {
  check_batch(ds, batch);
  double acc = 0.0;
  for (int i : batch.indices) {
    const double r = ds.raw_rows.row(i).dot(beta) - ds.raw_y(i);
    acc += r * r;
  }
  return 0.5 * acc / static_cast<double>(batch.b());
}

inline Mat batch_hessian(const Dataset& ds, const Batch& batch) {
  check_batch(ds, batch);
  Mat Hb = Mat::Zero(ds.d, ds.d);
  for (int i : batch.indices) Hb.selfadjointView<Eigen::Lower>().rankUpdate(ds.raw_rows.row(i).transpose());
  Hb = Hb.selfadjointView<Eigen::Lower>();
  return Hb / static_cast<double>(batch.b());
}

struct SmoothnessBound {
  double L = 0.0;
};

// Certified L with |H_B b|_2 <= L|b|_2 and |H_B b|_inf <= L|b|_inf for every size-b batch.
// Per-row statistics bound single samples; for larger batches the average of the
// top-b row statistics and the (n/b)-scaled full-batch norms are both valid caps.
inline SmoothnessBound smoothness(const Dataset& ds, int b) {
  require(b >= 1 && b <= ds.n, ErrorKind::InvalidArgument, "need 1 <= b <= n");
  std::vector<double> two(ds.n), inf(ds.n);
  for (int i = 0; i < ds.n; ++i) {
    const auto row = ds.raw_rows.row(i);
    two[i] = row.squaredNorm();
    inf[i] = row.cwiseAbs().sum() * row.cwiseAbs().maxCoeff();
  }
  auto top_mean = [b](std::vector<double> v) {
    std::partial_sort(v.begin(), v.begin() + b, v.end(), std::greater<>());
    return std::accumulate(v.begin(), v.begin() + b, 0.0) / b;
  };
  double l2 = top_mean(two);
  double linf = top_mean(inf);
  if (b > 1) {
    const double ratio = static_cast<double>(ds.n) / b;
    Eigen::SelfAdjointEigenSolver<Mat> es(ds.H, Eigen::EigenvaluesOnly);
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const Mat absH = ds.X.cwiseAbs().transpose() * ds.X.cwiseAbs();
    const double rowsum = absH.rowwise().sum().maxCoeff();
    // Round-off margin keeps the bound certified when it is attained exactly.
    l2 = std::min(l2, ratio * lmax * (1.0 + 1e-12));
    linf = std::min(linf, ratio * rowsum * (1.0 + 1e-12));
  }
  return {std::max(l2, linf)};
}

}  // namespace data
}  // namespace dlnlab

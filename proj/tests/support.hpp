#pragma once

#include <dlnlab/core_data.hpp>

#include <initializer_list>
#include <optional>
#include <vector>

namespace testing_support {

using dlnlab::Mat;
using dlnlab::Vec;

inline Mat rows(std::initializer_list<std::initializer_list<double>> r) {
  Mat m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline dlnlab::data::Dataset preset(std::uint64_t seed = 1, double truth_scale = 0.1) {
  return dlnlab::data::make_gaussian_dataset(20, 30, 3, 0.0, 1.0, truth_scale, dlnlab::RngStream::data(seed));
}

// Central finite-difference gradient.
template <class F>
Vec fd_grad(F&& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline double rel_err(const Vec& a, const Vec& b) {
  const double den = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / den;
}

}  // namespace testing_support

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"

namespace fedsim::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

inline Batch random_batch(std::size_t n, std::size_t dims, std::size_t classes, Rng& rng) {
  Batch b{random_matrix(n, dims, rng), std::vector<int>(n)};
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  for (auto& y : b.labels) y = label(rng);
  return b;
}

inline ParameterVector random_params(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return ParameterVector(std::move(v));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

// Two well-separated Gaussian blobs; labels alternate.
inline Dataset blobs(std::size_t n, std::size_t dims, std::size_t classes, double spread,
                     std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.dims = dims;
  spec.examples = n;
  spec.cluster_spread = spread;
  spec.center_scale = 1.0;
  spec.speakers = 10;
  Rng rng(seed);
  return generate_synthetic(spec, rng);
}

}  // namespace fedsim::testing

namespace fedsim::testing {

// Smallest |pre-activation| over all hidden units and rows. Central
// differences are meaningless within eps of a ReLU kink.
inline double min_abs_preactivation(const Mlp& model, const Matrix& inputs) {
  double m = INFINITY;
  Matrix x = inputs;
  for (std::size_t l = 0; l + 1 < model.num_layers(); ++l) {
    const Matrix& w = model.weights(l);
    Matrix z(x.rows(), w.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = model.bias(l)[c];
        for (std::size_t k = 0; k < w.rows(); ++k) s += x(r, k) * w(k, c);
        m = std::min(m, std::abs(s));
        z(r, c) = model.architecture().activation == Activation::kReLU ? std::max(0.0, s)
                                                                        : std::tanh(s);
      }
    }
    x = std::move(z);
  }
  return m;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), or 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double denom = std::max(norm(a), norm(b));
  return denom == 0.0 ? 0.0 : norm(d) / denom;
}

}  // namespace fedsim::testing

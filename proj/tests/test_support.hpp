#pragma once

// Independent reference helpers for tests: naive dense arithmetic and seeded
// random generators. Nothing here calls the sparse kernels under test.

#include "affold/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace affold::testing {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

/// Random triplets at the given density; values uniform in [-1, 1].
inline std::vector<Triplet> random_triplets(std::size_t rows, std::size_t cols, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  std::vector<Triplet> out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (u(rng) < density) out.push_back({r, c, val(rng)});
    }
  }
  return out;
}

inline SparseMatrix random_sparse(std::size_t rows, std::size_t cols, double density, std::uint64_t seed) {
  return SparseMatrix::from_triplets(rows, cols, random_triplets(rows, cols, density, seed));
}

/// Dense nested-vector image of a matrix built straight from triplets.
inline std::vector<std::vector<double>> dense_of(const std::vector<Triplet>& trips, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<double>> d(rows, std::vector<double>(cols, 0.0));
  for (const auto& t : trips) d[t.row][t.col] += t.value;
  return d;
}

inline std::vector<std::vector<double>> dense_of(const SparseMatrix& m) {
  std::vector<std::vector<double>> d(m.rows(), std::vector<double>(m.cols(), 0.0));
  const auto rp = m.row_ptr();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) d[r][m.col_idx()[k]] = m.values()[k];
  }
  return d;
}

using Dense = std::vector<std::vector<double>>;

inline Dense naive_matmul(const Dense& a, const Dense& b) {
  const std::size_t n = a.size();
  const std::size_t inner = b.size();
  const std::size_t m = inner ? b[0].size() : 0;
  Dense c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][k] * b[k][j];
    }
  }
  return c;
}

inline std::vector<double> naive_matvec(const Dense& a, const std::vector<double>& x) {
  std::vector<double> y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
  }
  return y;
}

/// max |a - b| / (1 + max |a|) over equal-length vectors.
inline double rel_inf_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(a[i]));
  }
  return diff / (1.0 + scale);
}

inline double max_abs_diff(const Dense& a, const Dense& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) d = std::max(d, std::abs(a[i][j] - b[i][j]));
  }
  return d;
}

} // namespace affold::testing

#pragma once

#include "affold/errors.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

// Dense and compressed-sparse-row arithmetic in double precision. Every
// SparseMatrix is kept in canonical form: column indices strictly increasing
// within a row, duplicates summed, exact zeros dropped. Two matrices holding the
// same values therefore compare equal array-for-array.

namespace affold {

using Vector = std::vector<double>;

namespace detail {

inline std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace detail

class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("dense data length " + std::to_string(data_.size()) + " does not match " +
                           detail::dims(rows_, cols_));
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

class SparseMatrix {
public:
  /// Empty rows x cols matrix (all entries zero).
  SparseMatrix(std::size_t rows = 0, std::size_t cols = 0) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  /// Canonicalizes arbitrary triplets. Duplicates are summed in a fixed order
  /// (sorted by value) so that any permutation of the input gives identical arrays.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
    for (const auto& t : triplets) {
      if (t.row >= rows || t.col >= cols) {
        throw DimensionError("triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                             ") outside " + detail::dims(rows, cols));
      }
    }
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col, a.value) < std::tie(b.row, b.col, b.value);
    });
    SparseMatrix m(rows, cols);
    m.col_idx_.reserve(triplets.size());
    m.values_.reserve(triplets.size());
    std::size_t i = 0;
    while (i < triplets.size()) {
      const std::size_t r = triplets[i].row;
      const std::size_t c = triplets[i].col;
      double sum = 0.0;
      for (; i < triplets.size() && triplets[i].row == r && triplets[i].col == c; ++i) sum += triplets[i].value;
      if (sum != 0.0) {
        m.col_idx_.push_back(c);
        m.values_.push_back(sum);
        ++m.row_ptr_[r + 1];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  /// Adopts raw CSR arrays after checking they are already canonical.
  static SparseMatrix from_csr(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                               std::vector<std::size_t> col_idx, std::vector<double> values) {
    if (row_ptr.size() != rows + 1 || row_ptr.front() != 0 || row_ptr.back() != values.size() ||
        col_idx.size() != values.size()) {
      throw DimensionError("inconsistent CSR array lengths for " + detail::dims(rows, cols));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_ptr[r] > row_ptr[r + 1]) throw DimensionError("row_ptr must be nondecreasing");
      for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
        if (col_idx[k] >= cols) throw DimensionError("column index out of range");
        if (k > row_ptr[r] && col_idx[k] <= col_idx[k - 1]) throw DimensionError("columns not strictly increasing");
        if (values[k] == 0.0) throw DimensionError("explicit zero in CSR values");
      }
    }
    SparseMatrix m(rows, cols);
    m.row_ptr_ = std::move(row_ptr);
    m.col_idx_ = std::move(col_idx);
    m.values_ = std::move(values);
    return m;
  }

  static SparseMatrix identity(std::size_t n) {
    SparseMatrix m(n, n);
    m.col_idx_.resize(n);
    m.values_.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      m.col_idx_[i] = i;
      m.row_ptr_[i + 1] = i + 1;
    }
    return m;
  }

  static SparseMatrix from_dense(const DenseMatrix& d) {
    SparseMatrix m(d.rows(), d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t c = 0; c < d.cols(); ++c) {
        if (d(r, c) != 0.0) {
          m.col_idx_.push_back(c);
          m.values_.push_back(d(r, c));
        }
      }
      m.row_ptr_[r + 1] = m.values_.size();
    }
    return m;
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d(r, col_idx_[k]) = values_[k];
    }
    return d;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  std::span<const std::size_t> row_ptr() const { return row_ptr_; }
  std::span<const std::size_t> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }

  bool is_identity() const {
    if (rows_ != cols_ || nnz() != rows_) return false;
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_ptr_[r] != r || col_idx_[r] != r || values_[r] != 1.0) return false;
    }
    return true;
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, col_idx_[k], values_[k]});
    }
    return out;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;

  friend SparseMatrix spmm(const SparseMatrix&, const SparseMatrix&);
  friend SparseMatrix sparse_scale_add(double, const SparseMatrix&, double, const SparseMatrix&);
  friend SparseMatrix transpose(const SparseMatrix&);
};

inline Vector spmv(const SparseMatrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw DimensionError("spmv: matrix " + detail::dims(m.rows(), m.cols()) + " vs vector " + std::to_string(x.size()));
  }
  Vector y(m.rows(), 0.0);
  const auto rp = m.row_ptr();
  const auto ci = m.col_idx();
  const auto v = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) acc += v[k] * x[ci[k]];
    y[r] = acc;
  }
  return y;
}

/// y = m^T x without materializing the transpose.
inline Vector spmv_transposed(const SparseMatrix& m, std::span<const double> x) {
  if (m.rows() != x.size()) {
    throw DimensionError("spmv_transposed: matrix " + detail::dims(m.rows(), m.cols()) + " vs vector " +
                         std::to_string(x.size()));
  }
  Vector y(m.cols(), 0.0);
  const auto rp = m.row_ptr();
  const auto ci = m.col_idx();
  const auto v = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double xr = x[r];
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) y[ci[k]] += v[k] * xr;
  }
  return y;
}

/// Row-by-row Gustavson product with a dense accumulator. Each output entry is
/// summed in increasing order of the inner index, so results are reproducible.
inline SparseMatrix spmm(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("spmm: " + detail::dims(a.rows(), a.cols()) + " times " + detail::dims(b.rows(), b.cols()));
  }
  SparseMatrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols(), 0.0);
  std::vector<char> touched(b.cols(), 0);
  std::vector<std::size_t> pattern;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    pattern.clear();
    for (std::size_t ka = a.row_ptr_[r]; ka < a.row_ptr_[r + 1]; ++ka) {
      const std::size_t inner = a.col_idx_[ka];
      const double av = a.values_[ka];
      for (std::size_t kb = b.row_ptr_[inner]; kb < b.row_ptr_[inner + 1]; ++kb) {
        const std::size_t c = b.col_idx_[kb];
        if (!touched[c]) {
          touched[c] = 1;
          pattern.push_back(c);
        }
        acc[c] += av * b.values_[kb];
      }
    }
    std::sort(pattern.begin(), pattern.end());
    for (const std::size_t c : pattern) {
      if (acc[c] != 0.0) {
        out.col_idx_.push_back(c);
        out.values_.push_back(acc[c]);
      }
      acc[c] = 0.0;
      touched[c] = 0;
    }
    out.row_ptr_[r + 1] = out.values_.size();
  }
  return out;
}

/// alpha*a + beta*b, dropping entries that cancel to exactly zero.
inline SparseMatrix sparse_scale_add(double alpha, const SparseMatrix& a, double beta, const SparseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("sparse_scale_add: " + detail::dims(a.rows(), a.cols()) + " vs " +
                         detail::dims(b.rows(), b.cols()));
  }
  SparseMatrix out(a.rows(), a.cols());
  auto emit = [&out](std::size_t c, double v) {
    if (v != 0.0) {
      out.col_idx_.push_back(c);
      out.values_.push_back(v);
    }
  };
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::size_t ka = a.row_ptr_[r];
    std::size_t kb = b.row_ptr_[r];
    const std::size_t ea = a.row_ptr_[r + 1];
    const std::size_t eb = b.row_ptr_[r + 1];
    while (ka < ea || kb < eb) {
      if (kb == eb || (ka < ea && a.col_idx_[ka] < b.col_idx_[kb])) {
        emit(a.col_idx_[ka], alpha * a.values_[ka]);
        ++ka;
      } else if (ka == ea || b.col_idx_[kb] < a.col_idx_[ka]) {
        emit(b.col_idx_[kb], beta * b.values_[kb]);
        ++kb;
      } else {
        emit(a.col_idx_[ka], alpha * a.values_[ka] + beta * b.values_[kb]);
        ++ka;
        ++kb;
      }
    }
    out.row_ptr_[r + 1] = out.values_.size();
  }
  return out;
}

inline SparseMatrix transpose(const SparseMatrix& m) {
  SparseMatrix t(m.cols(), m.rows());
  t.col_idx_.resize(m.nnz());
  t.values_.resize(m.nnz());
  for (const std::size_t c : m.col_idx_) ++t.row_ptr_[c + 1];
  for (std::size_t r = 0; r < t.rows_; ++r) t.row_ptr_[r + 1] += t.row_ptr_[r];
  std::vector<std::size_t> next(t.row_ptr_.begin(), t.row_ptr_.end() - 1);
  for (std::size_t r = 0; r < m.rows_; ++r) {
    for (std::size_t k = m.row_ptr_[r]; k < m.row_ptr_[r + 1]; ++k) {
      const std::size_t dst = next[m.col_idx_[k]]++;
      t.col_idx_[dst] = r;
      t.values_[dst] = m.values_[k];
    }
  }
  return t;
}

inline Vector matvec(const DenseMatrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw DimensionError("matvec: matrix " + detail::dims(m.rows(), m.cols()) + " vs vector " + std::to_string(x.size()));
  }
  Vector y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

/// The affine map x -> weight * x + bias.
struct AffineMap {
  DenseMatrix weight;
  Vector bias;

  AffineMap() = default;
  AffineMap(DenseMatrix w, Vector b) : weight(std::move(w)), bias(std::move(b)) {
    if (weight.rows() != bias.size()) {
      throw DimensionError("affine map weight has " + std::to_string(weight.rows()) + " rows but bias has length " +
                           std::to_string(bias.size()));
    }
  }

  std::size_t out_dim() const { return weight.rows(); }
  std::size_t in_dim() const { return weight.cols(); }

  friend bool operator==(const AffineMap&, const AffineMap&) = default;
};

inline Vector apply_affine(const AffineMap& f, std::span<const double> x) {
  Vector y = matvec(f.weight, x);
  for (std::size_t r = 0; r < y.size(); ++r) y[r] += f.bias[r];
  return y;
}

// Small vector helpers used across modules.

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (const double v : x) m = std::max(m, v < 0 ? -v : v);
  return m;
}

} // namespace affold

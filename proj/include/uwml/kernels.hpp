#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uwml/sparse.hpp"

namespace uwml {

/// Quantile bins of one feature. Bin 0 holds zero (absent) values; bins
/// 1..size() hold non-zero values v with upper[b-2] < v <= upper[b-1].
struct FeatureBins {
  std::vector<double> upper;  // ascending; the last entry is the largest finite double
  std::size_t offset = 0;     // global histogram index of bin 1

  std::size_t size() const { return upper.size(); }
  std::uint32_t bin_of(double v) const;
};

/// Training rows as global bin indices, row-major and ascending within a row.
struct BinnedMatrix {
  std::vector<FeatureBins> features;
  std::size_t total_bins = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> bins;

  std::size_t rows() const { return row_ptr.size() - 1; }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return {bins.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  /// Local bin (0 = zero) of feature f in row r.
  std::uint32_t bin(std::size_t r, std::size_t f) const;
};

/// Builds at most max_bins - 1 non-zero bins per feature from the training
/// matrix. Distinct values get their own bin while they fit; otherwise bins
/// hold roughly equal counts and never split a repeated value.
BinnedMatrix bin_matrix(const SparseMatrix& m, int max_bins);

struct HistEntry {
  double g = 0;
  double h = 0;
  double count = 0;
};

/// Sums gradients of `rows` into `hist` (size total_bins, overwritten).
/// Reference implementation; rows are visited in order.
void build_histogram_serial(const BinnedMatrix& data, std::span<const std::uint32_t> rows,
                            std::span<const double> grad, std::span<const double> hess,
                            std::span<HistEntry> hist);

/// Same contract as the serial kernel and bit-identical output: each thread
/// owns a contiguous bin range and adds rows in the same order.
void build_histogram(const BinnedMatrix& data, std::span<const std::uint32_t> rows,
                     std::span<const double> grad, std::span<const double> hess,
                     std::span<HistEntry> hist);

}  // namespace uwml

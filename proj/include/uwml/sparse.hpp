#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace uwml {

/// Read-only view of one sparse row; columns ascending.
struct SparseRow {
  std::span<const std::uint32_t> cols;
  std::span<const double> vals;

  double get(std::uint32_t c) const {
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return vals[static_cast<std::size_t>(it - cols.begin())];
  }
};

/// Dense row accessor with the same interface as SparseRow.
struct DenseRow {
  std::span<const double> values;
  double get(std::uint32_t c) const { return c < values.size() ? values[c] : 0.0; }
};

/// CSR matrix; absent entries are 0.
struct SparseMatrix {
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  std::size_t rows() const { return row_ptr.size() - 1; }
  std::size_t nnz() const { return val.size(); }

  /// Entries must be sorted by column; zeros are skipped.
  void add_row(std::span<const std::pair<std::uint32_t, double>> entries) {
    for (const auto& [c, v] : entries) {
      if (v == 0.0) continue;
      col.push_back(c);
      val.push_back(v);
    }
    row_ptr.push_back(val.size());
  }
  void add_dense_row(std::span<const double> values) {
    for (std::size_t c = 0; c < values.size(); ++c) {
      if (values[c] == 0.0) continue;
      col.push_back(static_cast<std::uint32_t>(c));
      val.push_back(values[c]);
    }
    row_ptr.push_back(val.size());
  }

  SparseRow row(std::size_t r) const {
    return SparseRow{{col.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]},
                     {val.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]}};
  }

  static SparseMatrix from_dense(const std::vector<std::vector<double>>& rows, std::size_t n_cols) {
    SparseMatrix m;
    m.n_cols = n_cols;
    for (const auto& r : rows) m.add_dense_row(r);
    return m;
  }
};

}  // namespace uwml

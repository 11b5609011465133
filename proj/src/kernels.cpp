#include "uwml/kernels.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include <omp.h>

namespace uwml {

std::uint32_t FeatureBins::bin_of(double v) const {
  if (v == 0.0 || upper.empty()) return 0;
  auto it = std::lower_bound(upper.begin(), upper.end(), v);
  if (it == upper.end()) --it;
  return static_cast<std::uint32_t>(it - upper.begin()) + 1;
}

std::uint32_t BinnedMatrix::bin(std::size_t r, std::size_t f) const {
  const auto& fb = features[f];
  const auto lo = static_cast<std::uint32_t>(fb.offset);
  const auto row_bins = row(r);
  auto it = std::lower_bound(row_bins.begin(), row_bins.end(), lo);
  if (it == row_bins.end() || *it >= lo + fb.size()) return 0;
  return *it - lo + 1;
}

namespace {

std::vector<double> make_bounds(std::vector<double>& values, int max_nonzero_bins) {
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, std::size_t>> distinct;
  for (double v : values) {
    if (distinct.empty() || distinct.back().first != v) {
      distinct.emplace_back(v, 1);
    } else {
      ++distinct.back().second;
    }
  }
  std::vector<double> upper;
  if (distinct.empty()) return upper;
  constexpr double kTop = std::numeric_limits<double>::max();
  auto midpoint = [&](std::size_t i) { return distinct[i].first / 2 + distinct[i + 1].first / 2; };
  if (distinct.size() <= static_cast<std::size_t>(max_nonzero_bins)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) upper.push_back(midpoint(i));
    upper.push_back(kTop);
    return upper;
  }
  const double per_bin = static_cast<double>(values.size()) / max_nonzero_bins;
  std::size_t cumulative = 0;
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    cumulative += distinct[i].second;
    if (static_cast<int>(upper.size()) + 1 >= max_nonzero_bins) break;
    if (static_cast<double>(cumulative) >= per_bin * static_cast<double>(upper.size() + 1)) {
      upper.push_back(midpoint(i));
    }
  }
  upper.push_back(kTop);
  return upper;
}

}  // namespace

BinnedMatrix bin_matrix(const SparseMatrix& m, int max_bins) {
  if (max_bins < 2 || max_bins > 256) throw std::invalid_argument("max_bins must lie in [2, 256]");
  std::vector<std::vector<double>> columns(m.n_cols);
  for (std::size_t i = 0; i < m.nnz(); ++i) columns[m.col[i]].push_back(m.val[i]);

  BinnedMatrix out;
  out.features.resize(m.n_cols);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(m.n_cols); ++f) {
    auto& col = columns[static_cast<std::size_t>(f)];
    out.features[static_cast<std::size_t>(f)].upper = make_bounds(col, max_bins - 1);
    std::vector<double>().swap(col);
  }
  for (auto& fb : out.features) {
    fb.offset = out.total_bins;
    out.total_bins += fb.size();
  }
  if (out.total_bins > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("too many histogram bins");
  }
  out.bins.reserve(m.nnz());
  out.row_ptr.reserve(m.rows() + 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t i = 0; i < row.cols.size(); ++i) {
      const auto& fb = out.features[row.cols[i]];
      const auto b = fb.bin_of(row.vals[i]);
      if (b > 0) out.bins.push_back(static_cast<std::uint32_t>(fb.offset + b - 1));
    }
    out.row_ptr.push_back(out.bins.size());
  }
  return out;
}

void build_histogram_serial(const BinnedMatrix& data, std::span<const std::uint32_t> rows,
                            std::span<const double> grad, std::span<const double> hess,
                            std::span<HistEntry> hist) {
  std::fill(hist.begin(), hist.end(), HistEntry{});
  for (const auto r : rows) {
    const double g = grad[r];
    const double h = hess[r];
    for (const auto b : data.row(r)) {
      auto& e = hist[b];
      e.g += g;
      e.h += h;
      e.count += 1;
    }
  }
}

void build_histogram(const BinnedMatrix& data, std::span<const std::uint32_t> rows,
                     std::span<const double> grad, std::span<const double> hess,
                     std::span<HistEntry> hist) {
  const int threads = omp_get_max_threads();
  if (threads <= 1 || hist.size() < 1024) {
    build_histogram_serial(data, rows, grad, hess, hist);
    return;
  }
  const std::size_t n_bins = hist.size();
#pragma omp parallel num_threads(threads)
  {
    const auto t = static_cast<std::size_t>(omp_get_thread_num());
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto lo = static_cast<std::uint32_t>(n_bins * t / nt);
    const auto hi = static_cast<std::uint32_t>(n_bins * (t + 1) / nt);
    std::fill(hist.begin() + lo, hist.begin() + hi, HistEntry{});
    for (const auto r : rows) {
      const auto row_bins = data.row(r);
      auto it = std::lower_bound(row_bins.begin(), row_bins.end(), lo);
      if (it == row_bins.end() || *it >= hi) continue;
      const double g = grad[r];
      const double h = hess[r];
      for (; it != row_bins.end() && *it < hi; ++it) {
        auto& e = hist[*it];
        e.g += g;
        e.h += h;
        e.count += 1;
      }
    }
  }
}

}  // namespace uwml

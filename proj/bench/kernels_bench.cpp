// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>
#include <random>

#include "uwml/gbdt.hpp"
#include "uwml/kernels.hpp"

namespace {

// Sparse count-like data: ~5% density, skewed target.
uwml::SparseMatrix make_matrix(std::size_t rows, std::size_t cols, std::vector<double>* y) {
  std::mt19937_64 rng(42);
  std::bernoulli_distribution present(0.05);
  std::poisson_distribution<int> count(2);
  uwml::SparseMatrix m;
  m.n_cols = cols;
  std::vector<double> dense(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double target = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      dense[c] = present(rng) ? std::log1p(count(rng) + 1.0) : 0.0;
      target += dense[c] * static_cast<double>(c % 7);
    }
    m.add_dense_row(dense);
    if (y) y->push_back(target);
  }
  return m;
}

struct HistFixture {
  uwml::BinnedMatrix binned;
  std::vector<std::uint32_t> rows;
  std::vector<double> grad, hess;
  std::vector<uwml::HistEntry> hist;

  explicit HistFixture(std::size_t n) {
    binned = uwml::bin_matrix(make_matrix(n, 400, nullptr), 64);
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), 0u);
    grad.assign(n, 0.5);
    hess.assign(n, 1.0);
    hist.resize(binned.total_bins);
  }
};

void BM_HistogramSerial(benchmark::State& state) {
  HistFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    uwml::build_histogram_serial(f.binned, f.rows, f.grad, f.hess, f.hist);
    benchmark::DoNotOptimize(f.hist.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_HistogramParallel(benchmark::State& state) {
  HistFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    uwml::build_histogram(f.binned, f.rows, f.grad, f.hess, f.hist);
    benchmark::DoNotOptimize(f.hist.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

struct PredictFixture {
  uwml::SparseMatrix x;
  uwml::GbdtModel model;

  PredictFixture() {
    std::vector<double> y;
    x = make_matrix(5000, 200, &y);
    uwml::TrainConfig cfg;
    cfg.num_trees = 200;
    model = uwml::fit({&x, y}, {}, cfg);
  }
};

const PredictFixture& predict_fixture() {
  static const PredictFixture f;
  return f;
}

void BM_PredictSerial(benchmark::State& state) {
  const auto& f = predict_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.model.predict_serial(f.x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.x.rows()));
}

void BM_PredictParallel(benchmark::State& state) {
  const auto& f = predict_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.model.predict(f.x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.x.rows()));
}

}  // namespace

BENCHMARK(BM_HistogramSerial)->Arg(10000)->Arg(50000);
BENCHMARK(BM_HistogramParallel)->Arg(10000)->Arg(50000);
BENCHMARK(BM_PredictSerial);
BENCHMARK(BM_PredictParallel);

BENCHMARK_MAIN();

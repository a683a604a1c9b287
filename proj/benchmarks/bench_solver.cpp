#include <benchmark/benchmark.h>

#include "reid/adapt.hpp"
#include "reid/rng.hpp"

using namespace reid;

namespace {

void BM_GraphDictionarySolve(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    const int m = static_cast<int>(state.range(1));
    Rng rng(3);
    Eigen::MatrixXd y(dim, m);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < i; ++j)
            if (rng.uniform01() < 0.1) w(i, j) = w(j, i) = 1.0;

    for (auto _ : state) {
        const DictModel model = solve_graph_dictionary(y, w, 0.1, dim / 2, 30, 5);
        benchmark::DoNotOptimize(model.codes.sum());
    }
}

}  // namespace

BENCHMARK(BM_GraphDictionarySolve)->Args({32, 80})->Args({64, 160})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

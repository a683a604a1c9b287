// Single-image vs cross-image scoring cost. SIR ranks pre-computed gallery
// vectors with Euclidean distances; CIR pushes every probe/gallery pair
// through the verification subnet. No threshold is asserted here; the ratio
// is hardware-dependent and reported for inspection.

#include <benchmark/benchmark.h>

#include "reid/model.hpp"
#include "reid/rng.hpp"

using namespace reid;

namespace {

struct BenchSetup {
    Eigen::MatrixXd gallery;
    Eigen::VectorXd probe;
    VerificationSubnet subnet;

    BenchSetup(int dim, int gallery_size) : subnet("bench", dim, dim) {
        Rng rng(42);
        gallery.resize(gallery_size, dim);
        for (Eigen::Index i = 0; i < gallery.size(); ++i) gallery.data()[i] = rng.normal();
        probe.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) probe[i] = rng.normal();
        Rng init(7);
        subnet.fc.init(init, 0.05);
        subnet.out.init(init, 0.05);
    }
};

void BM_SirQuery(benchmark::State& state) {
    BenchSetup setup(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    for (auto _ : state) {
        double sink = 0;
        for (Eigen::Index g = 0; g < setup.gallery.rows(); ++g)
            sink += (setup.gallery.row(g).transpose() - setup.probe).squaredNorm();
        benchmark::DoNotOptimize(sink);
    }
}

void BM_CirQuery(benchmark::State& state) {
    BenchSetup setup(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    for (auto _ : state) {
        double sink = 0;
        for (Eigen::Index g = 0; g < setup.gallery.rows(); ++g)
            sink += verification_logits(setup.subnet, setup.probe, setup.gallery.row(g).transpose())[1];
        benchmark::DoNotOptimize(sink);
    }
}

}  // namespace

BENCHMARK(BM_SirQuery)->Args({1024, 100})->Args({1024, 500})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_CirQuery)->Args({1024, 100})->Args({1024, 500})->Unit(benchmark::kMicrosecond);

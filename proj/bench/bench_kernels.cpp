// Serial reference vs OpenMP kernels, and example-parallel decoding at one
// thread vs all threads.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "slic/data.hpp"
#include "slic/kernels.hpp"
#include "slic/pipeline.hpp"

namespace {

std::vector<double> random_matrix(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <auto Kernel>
void bm_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Kernel(n, n, n, a, b, c, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void gemm_nn_serial(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                    std::span<const double> b, std::span<double> c, bool acc) {
    slic::kernels::serial::gemm_nn(m, n, k, a, b, c, acc);
}
void gemm_nn_omp(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, bool acc) {
    slic::kernels::gemm_nn(m, n, k, a, b, c, acc);
}
void gemm_nt_serial(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                    std::span<const double> b, std::span<double> c, bool acc) {
    slic::kernels::serial::gemm_nt(m, n, k, a, b, c, acc);
}
void gemm_nt_omp(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, bool acc) {
    slic::kernels::gemm_nt(m, n, k, a, b, c, acc);
}

void bm_decode(benchmark::State& state) {
    const int threads = state.range(0) == 0 ? 1 : omp_get_max_threads();
    slic::SyntheticTaskSpec spec;
    spec.num_train = 1;
    spec.num_val = 1;
    spec.num_test = 32;
    const auto data = slic::generate_dataset(spec).test;
    const slic::Seq2SeqModel model{slic::ModelConfig{}};
    slic::DecodeConfig d;
    d.num_candidates = 4;
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    for (auto _ : state) benchmark::DoNotOptimize(slic::decode_quality(model, data, d, 4).r_m);
    omp_set_num_threads(saved);
    state.counters["threads"] = threads;
}

}  // namespace

BENCHMARK(bm_gemm<gemm_nn_serial>)->Name("gemm_nn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<gemm_nn_omp>)->Name("gemm_nn/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<gemm_nt_serial>)->Name("gemm_nt/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<gemm_nt_omp>)->Name("gemm_nt/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_decode)->Name("decode_quality")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

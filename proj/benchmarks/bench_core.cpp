#include <benchmark/benchmark.h>

#include "clbench/continual.hpp"
#include "clbench/grad.hpp"
#include "clbench/importance.hpp"
#include "clbench/rng.hpp"

namespace {

using namespace clbench;

Matrix random_batch(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.gaussian();
    return x;
}

void BM_Forward(benchmark::State& state) {
    Network net = make_mlp({784, 128, 128}, Activation::ReLU, Activation::ReLU, 7);
    Rng rng(8);
    add_linear_head(net, 0, 10, rng);
    const Matrix x = random_batch(state.range(0), 784, 9);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, 0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(200);

void BM_GradCrossEntropy(benchmark::State& state) {
    Network net = make_mlp({784, 128, 128}, Activation::ReLU, Activation::ReLU, 7);
    Rng rng(8);
    add_linear_head(net, 0, 10, rng);
    const Matrix x = random_batch(state.range(0), 784, 9);
    ObjectiveAux aux;
    aux.labels.assign(static_cast<std::size_t>(x.rows()), 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(grad_scalar(net, x, 0, Objective::CrossEntropy, aux));
}
BENCHMARK(BM_GradCrossEntropy)->Arg(32)->Arg(200);

void BM_MasUpdate(benchmark::State& state) {
    Network net = make_mlp({784, 128, 128}, Activation::ReLU, Activation::ReLU, 7);
    Rng rng(8);
    add_linear_head(net, 0, 10, rng);
    const Matrix x = random_batch(state.range(0), 784, 9);
    ImportanceMap map = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    for (auto _ : state) mas_update(map, net, x, 0);
}
BENCHMARK(BM_MasUpdate)->Arg(200);

void BM_HebbianUpdate(benchmark::State& state) {
    Network net = make_mlp({784, 128, 128}, Activation::ReLU, Activation::ReLU, 7);
    const Matrix x = random_batch(state.range(0), 784, 9);
    ImportanceMap map = ImportanceMap::zero(Method::LMas, net.flatten());
    for (auto _ : state) hebbian_update(map, net, x);
}
BENCHMARK(BM_HebbianUpdate)->Arg(200);

}  // namespace

BENCHMARK_MAIN();

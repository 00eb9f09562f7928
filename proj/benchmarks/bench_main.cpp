#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fusim/cccu/fedcccu.hpp"
#include "fusim/fed/fedsim.hpp"
#include "fusim/nn/network.hpp"
#include "fusim/random.hpp"

using namespace fusim;

namespace {

nn::Tensor random_image(const nn::Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor x(shape);
    for (double& v : x.values()) v = u(rng);
    return x;
}

std::vector<nn::LabeledExample> random_batch(const nn::ModelSpec& spec, std::size_t n) {
    std::vector<nn::LabeledExample> batch;
    for (std::size_t i = 0; i < n; ++i) batch.push_back({random_image(spec.input_shape, i), i % spec.class_count});
    return batch;
}

nn::ModelSpec model(int which) {
    return which == 0 ? nn::small_mlp({1, 16, 16}, 10, 128) : nn::small_cnn({1, 16, 16}, 10);
}

void BM_Forward(benchmark::State& state) {
    const auto spec = model(static_cast<int>(state.range(0)));
    const auto params = nn::init_parameters(spec, 1);
    const auto x = random_image(spec.input_shape, 7);
    for (auto _ : state) benchmark::DoNotOptimize(nn::forward(spec, params, x));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

void BM_LossAndGradient(benchmark::State& state) {
    const auto spec = model(static_cast<int>(state.range(0)));
    const auto params = nn::init_parameters(spec, 1);
    const auto batch = random_batch(spec, 32);
    for (auto _ : state) benchmark::DoNotOptimize(nn::loss_and_gradient(spec, params, batch));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_LossAndGradient)->Arg(0)->Arg(1);

void BM_AttributeAllHiddenUnits(benchmark::State& state) {
    const auto spec = nn::small_mlp({1, 16, 16}, 10, 128);
    const auto params = nn::init_parameters(spec, 1);
    const auto x = random_image(spec.input_shape, 3);
    const auto units = spec.units(spec.hidden_layers());
    const auto steps = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        const nn::ForwardCache cache(spec, params, x);
        benchmark::DoNotOptimize(cccu::attribute_units(cache, 0, units, steps));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(units.size()));
}
BENCHMARK(BM_AttributeAllHiddenUnits)->Arg(1)->Arg(20)->Arg(100);

void BM_Aggregate(benchmark::State& state) {
    const auto spec = nn::small_mlp({1, 16, 16}, 10, 128);
    const auto clients = static_cast<std::size_t>(state.range(0));
    std::vector<nn::ParameterSet> sets;
    for (std::size_t k = 0; k < clients; ++k) sets.push_back(nn::init_parameters(spec, k));
    std::vector<fed::WeightedUpdate> ups;
    for (std::size_t k = 0; k < clients; ++k) ups.push_back({k, &sets[k], static_cast<double>(100 + k)});
    for (auto _ : state) benchmark::DoNotOptimize(fed::aggregate(ups));
}
BENCHMARK(BM_Aggregate)->Arg(2)->Arg(10)->Arg(50);

}  // namespace

BENCHMARK_MAIN();

#include "fusim/unlearn/routes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fusim/error.hpp"
#include "fusim/nn/network.hpp"
#include "fusim/random.hpp"

namespace fusim::unlearn {

Shard delete_retrain_prepare(const Shard& shard, std::size_t forget_class) {
    Shard out;
    std::copy_if(shard.begin(), shard.end(), std::back_inserter(out),
                 [&](const LabeledExample& ex) { return ex.label != forget_class; });
    if (out.empty()) throw ValueError("delete route: shard would be empty after removing class " + std::to_string(forget_class));
    return out;
}

Shard relabel_poison_prepare(const Shard& shard, std::size_t forget_class, std::size_t class_count,
                             std::uint64_t seed) {
    if (class_count < 2) throw ValueError("relabel route needs at least two classes");
    if (forget_class >= class_count) throw ValueError("forget class out of range");
    Shard out = shard;
    Rng rng(derive_seed(seed, {0x2E1AB}));
    std::uniform_int_distribution<std::size_t> pick(0, class_count - 2);
    for (auto& ex : out) {
        if (ex.label != forget_class) continue;
        const std::size_t draw = pick(rng);
        ex.label = draw >= forget_class ? draw + 1 : draw;
    }
    return out;
}

ParameterSet zero_units(const ModelSpec& spec, const ParameterSet& params, std::span<const UnitId> units) {
    nn::check_parameters(spec, params);
    ParameterSet out = params;
    for (const UnitId& u : units) {
        spec.check_unit(u);
        auto& weight = out.at(nn::weight_name(u.layer));
        const std::size_t row = weight.size() / weight.shape()[0];
        std::fill_n(weight.values().begin() + static_cast<std::ptrdiff_t>(u.unit * row), row, 0.0);
        out.at(nn::bias_name(u.layer))[u.unit] = 0.0;
    }
    return out;
}

std::vector<double> mean_activations(const ModelSpec& spec, const ParameterSet& params,
                                     std::span<const LabeledExample> inputs, std::size_t layer) {
    std::vector<double> sum(spec.unit_count(layer), 0.0);
    if (inputs.empty()) return sum;
    for (const auto& ex : inputs) {
        const nn::ForwardCache cache(spec, params, ex.image);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += cache.unit_beta({layer, k});
    }
    for (double& v : sum) v /= static_cast<double>(inputs.size());
    return sum;
}

ZeroingResult naive_zeroing(const ModelSpec& spec, const ParameterSet& params, std::size_t forget_class,
                            std::span<const LabeledExample> probes, std::optional<std::size_t> top_m,
                            ZeroingScope scope) {
    const auto hidden = scope == ZeroingScope::hidden ? spec.hidden_layers() : spec.parameterized_layers();
    if (hidden.empty()) throw ValueError("naive zeroing: model has no hidden layer");
    for (std::size_t l : hidden) {
        if (top_m && *top_m > spec.unit_count(l)) {
            throw ValueError("naive zeroing: top_m " + std::to_string(*top_m) + " exceeds the " +
                             std::to_string(spec.unit_count(l)) + " units of layer " + std::to_string(l));
        }
    }
    std::vector<LabeledExample> forget;
    std::copy_if(probes.begin(), probes.end(), std::back_inserter(forget),
                 [&](const LabeledExample& ex) { return ex.label == forget_class; });
    if (forget.empty()) throw ValueError("naive zeroing: probe set has no example of class " + std::to_string(forget_class));

    ZeroingResult result;
    for (std::size_t l : hidden) {
        const std::size_t units = spec.unit_count(l);
        const std::size_t take =
            top_m ? *top_m : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(units))));
        if (take == 0) continue;
        const auto act = mean_activations(spec, params, forget, l);
        std::vector<std::size_t> order(units);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return act[a] > act[b]; });
        for (std::size_t i = 0; i < take; ++i) result.selected.push_back({l, order[i]});
    }
    result.params = zero_units(spec, params, result.selected);
    return result;
}

}  // namespace fusim::unlearn

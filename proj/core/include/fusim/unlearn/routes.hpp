#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fusim/fed/fedsim.hpp"
#include "fusim/nn/model.hpp"

namespace fusim::unlearn {

using fed::Shard;
using nn::LabeledExample;
using nn::ModelSpec;
using nn::ParameterSet;
using nn::UnitId;

/// Removes every example of `forget_class`, keeping order. Throws ValueError
/// if nothing would remain.
Shard delete_retrain_prepare(const Shard& shard, std::size_t forget_class);

/// Rewrites each `forget_class` label to a uniform draw from the other
/// class_count - 1 classes. Images and other labels are untouched.
Shard relabel_poison_prepare(const Shard& shard, std::size_t forget_class, std::size_t class_count,
                             std::uint64_t seed);

/// Zeroes the incoming weights and bias of each unit, so its activation is 0
/// for every input. All other parameters are copied bit for bit.
ParameterSet zero_units(const ModelSpec& spec, const ParameterSet& params, std::span<const UnitId> units);

/// Mean activation of every unit of `layer` over the inputs.
std::vector<double> mean_activations(const ModelSpec& spec, const ParameterSet& params,
                                     std::span<const LabeledExample> inputs, std::size_t layer);

struct ZeroingResult {
    ParameterSet params;
    std::vector<UnitId> selected;
};

/// Candidate layers for naive zeroing: hidden layers only, or every
/// parameterized layer including the logits.
enum class ZeroingScope { hidden, all };

/// Ranks the units of each candidate layer by mean activation over the
/// forget-class probes and zeroes the `top_m` most activated per layer
/// (ties: lower unit index first). nullopt means 10% of each layer, rounded,
/// at least one.
ZeroingResult naive_zeroing(const ModelSpec& spec, const ParameterSet& params, std::size_t forget_class,
                            std::span<const LabeledExample> probes, std::optional<std::size_t> top_m = std::nullopt,
                            ZeroingScope scope = ZeroingScope::hidden);

}  // namespace fusim::unlearn

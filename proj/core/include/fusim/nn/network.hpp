#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fusim/nn/example.hpp"
#include "fusim/nn/model.hpp"
#include "fusim/nn/tensor.hpp"

namespace fusim::nn {

/// Post-activation outputs of every parameterized layer for one input.
///
/// `beta[i][k]` is the scalar activation of unit k of `layers[i]`: the unit's
/// output for dense layers, the spatial mean of the channel map for conv2d.
struct ActivationTrace {
    std::vector<std::size_t> layers;
    std::vector<Tensor> activations;
    std::vector<std::vector<double>> beta;

    double unit_beta(const UnitId& unit) const;
    const std::vector<double>& layer_beta(std::size_t layer) const;
};

struct ForwardResult {
    std::vector<double> probabilities;
    ActivationTrace trace;
};

/// Every intermediate output of one forward pass. Holds references to the
/// spec and parameters, which must outlive it. Used to re-run only the part of
/// the network downstream of an intervention.
class ForwardCache {
public:
    ForwardCache(const ModelSpec& spec, const ParameterSet& params, const Tensor& input);

    const ModelSpec& spec() const noexcept { return *spec_; }
    const ParameterSet& params() const noexcept { return *params_; }
    const Tensor& input() const noexcept { return input_; }
    const Tensor& output(std::size_t layer) const { return outputs_.at(layer); }
    const std::vector<double>& probabilities() const noexcept { return probabilities_; }

    /// Scalar activation of one unit (channel mean for conv2d).
    double unit_beta(const UnitId& unit) const;
    ActivationTrace trace() const;

    /// Probabilities with the unit's post-activation output multiplied by `scale`.
    std::vector<double> scaled_probabilities(const UnitId& unit, double scale) const;

    /// d P(target | input) / d(activation of `unit`) with the activation scaled
    /// by `scale`. For conv2d channels the activation is the channel mean and
    /// the derivative follows the path that scales the whole map, i.e. the
    /// spatial sum of map gradients weighted by the map's share of the mean.
    double scaled_unit_gradient(std::size_t target_class, const UnitId& unit, double scale) const;

private:
    const ModelSpec* spec_;
    const ParameterSet* params_;
    Tensor input_;
    std::vector<Tensor> outputs_;
    std::vector<double> probabilities_;
};

ForwardResult forward(const ModelSpec& spec, const ParameterSet& params, const Tensor& input);

/// forward() without the trace.
std::vector<double> predict(const ModelSpec& spec, const ParameterSet& params, const Tensor& input);
std::size_t predict_class(const ModelSpec& spec, const ParameterSet& params, const Tensor& input);

struct LossGradient {
    double loss = 0.0;
    ParameterSet gradient;
};

/// Mean cross-entropy over the batch and its exact gradient.
LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterSet& params,
                               std::span<const LabeledExample> batch);

/// params - learning_rate * gradient, element-wise.
ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& gradient, double learning_rate);

std::vector<double> forward_with_scaled_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input,
                                             const UnitId& unit, double scale);

double gradient_wrt_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input,
                         std::size_t target_class, const UnitId& unit, double scale);

}  // namespace fusim::nn

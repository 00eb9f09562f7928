#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fusim/nn/tensor.hpp"

namespace fusim::nn {

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten, softmax };

std::string to_string(LayerKind kind);

/// One layer of a feed-forward model.
///
/// dense:     `in` inputs, `out` units.
/// conv2d:    `in` input channels, `out` output channels, square `kernel`,
///            stride 1 with zero "same" padding of kernel/2.
/// maxpool2d: non-overlapping `kernel` x `kernel` windows (floor division).
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 0;

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0}; }
    static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
        return {LayerKind::conv2d, in_channels, out_channels, kernel};
    }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0}; }
    static LayerSpec maxpool2d(std::size_t window) { return {LayerKind::maxpool2d, 0, 0, window}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0}; }
    static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0}; }

    bool has_parameters() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Addresses one output unit of a dense layer or one output channel of a conv2d
/// layer. `layer` indexes ModelSpec::layers.
struct UnitId {
    std::size_t layer = 0;
    std::size_t unit = 0;

    friend auto operator<=>(const UnitId&, const UnitId&) = default;
};

std::string to_string(const UnitId& id);

/// Layered model definition. The model output is always a probability vector:
/// a trailing softmax layer is optional and implied when absent.
struct ModelSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;
    Shape input_shape;

    /// Throws ShapeError naming the first incompatible layer.
    void validate() const;

    /// Output shape of every layer (softmax keeps its input shape).
    std::vector<Shape> output_shapes() const;

    std::vector<std::size_t> parameterized_layers() const;
    /// Parameterized layers whose units feed another parameterized layer.
    std::vector<std::size_t> hidden_layers() const;
    std::size_t unit_count(std::size_t layer) const;
    /// Index of the layer whose output carries the unit activation of `layer`:
    /// the following relu when there is one, the layer itself otherwise.
    std::size_t activation_layer(std::size_t layer) const;
    /// Index one past the last layer that is not a softmax.
    std::size_t logit_end() const;

    /// Throws ValueError when `id` does not address a dense/conv unit.
    void check_unit(const UnitId& id) const;
    std::vector<UnitId> units(std::span<const std::size_t> layers) const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// flatten -> dense 128 -> relu -> dense C -> softmax
ModelSpec small_mlp(const Shape& input_shape, std::size_t class_count, std::size_t hidden = 128);
/// conv 8 3x3 -> relu -> pool 2 -> conv 16 3x3 -> relu -> pool 2 -> flatten -> dense C -> softmax
ModelSpec small_cnn(const Shape& input_shape, std::size_t class_count);
/// Looks up "SmallMLP" / "SmallCNN". Throws ValueError for other names.
ModelSpec model_by_name(const std::string& name, const Shape& input_shape, std::size_t class_count);

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

/// Named parameter tensors in layer order ("layer<l>.weight", "layer<l>.bias").
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
        friend bool operator==(const Entry&, const Entry&) = default;
    };

    void add(std::string name, Tensor value);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const Tensor* find(const std::string& name) const;

    std::span<Entry> entries() noexcept { return entries_; }
    std::span<const Entry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t scalar_count() const noexcept;

    /// Same names and shapes, in the same order.
    bool same_layout(const ParameterSet& other) const noexcept;
    bool all_finite() const noexcept;

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<Entry> entries_;
};

ParameterSet zero_parameters(const ModelSpec& spec);
/// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
ParameterSet init_parameters(const ModelSpec& spec, std::uint64_t seed);
/// Throws ShapeError unless `params` has exactly the layout `spec` implies.
void check_parameters(const ModelSpec& spec, const ParameterSet& params);

}  // namespace fusim::nn

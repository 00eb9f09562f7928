#include "fusim/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "fusim/error.hpp"
#include "fusim/random.hpp"

namespace fusim::nn {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

std::string to_string(const UnitId& id) {
    return "(layer " + std::to_string(id.layer) + ", unit " + std::to_string(id.unit) + ")";
}

namespace {

[[noreturn]] void layer_error(std::size_t index, const LayerSpec& layer, const std::string& what) {
    throw ShapeError("layer " + std::to_string(index) + " (" + to_string(layer.kind) + "): " + what);
}

Shape next_shape(std::size_t index, const LayerSpec& layer, const Shape& in) {
    switch (layer.kind) {
        case LayerKind::dense:
            if (layer.in == 0 || layer.out == 0) layer_error(index, layer, "zero width");
            if (in.size() != 1 || in[0] != layer.in) {
                layer_error(index, layer, "expected input " + shape_to_string({layer.in}) + ", got " + shape_to_string(in));
            }
            return {layer.out};
        case LayerKind::conv2d:
            if (layer.in == 0 || layer.out == 0 || layer.kernel == 0) layer_error(index, layer, "zero dimension");
            if (layer.kernel % 2 == 0) layer_error(index, layer, "kernel size must be odd");
            if (in.size() != 3 || in[0] != layer.in) {
                layer_error(index, layer,
                            "expected input [" + std::to_string(layer.in) + "xHxW], got " + shape_to_string(in));
            }
            return {layer.out, in[1], in[2]};
        case LayerKind::relu:
        case LayerKind::softmax:
            return in;
        case LayerKind::maxpool2d:
            if (layer.kernel == 0) layer_error(index, layer, "zero window");
            if (in.size() != 3 || in[1] < layer.kernel || in[2] < layer.kernel) {
                layer_error(index, layer, "input " + shape_to_string(in) + " too small for window " +
                                              std::to_string(layer.kernel));
            }
            return {in[0], in[1] / layer.kernel, in[2] / layer.kernel};
        case LayerKind::flatten:
            return {shape_size(in)};
    }
    layer_error(index, layer, "unknown kind");
}

}  // namespace

std::vector<Shape> ModelSpec::output_shapes() const {
    if (input_shape.empty() || shape_size(input_shape) == 0) throw ShapeError("model input shape must be non-empty");
    std::vector<Shape> shapes;
    shapes.reserve(layers.size());
    Shape current = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        current = next_shape(i, layers[i], current);
        shapes.push_back(current);
    }
    return shapes;
}

void ModelSpec::validate() const {
    if (class_count == 0) throw ShapeError("class_count must be positive");
    if (layers.empty()) throw ShapeError("model has no layers");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::softmax) layer_error(i, layers[i], "softmax is only allowed as the last layer");
    }
    const auto shapes = output_shapes();
    const Shape& logits = shapes[logit_end() - 1];
    if (logits.size() != 1 || logits[0] != class_count) {
        throw ShapeError("final layer output " + shape_to_string(logits) + " does not match class_count " +
                         std::to_string(class_count));
    }
    if (parameterized_layers().empty()) throw ShapeError("model has no parameterized layer");
}

std::vector<std::size_t> ModelSpec::parameterized_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].has_parameters()) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> ModelSpec::hidden_layers() const {
    auto out = parameterized_layers();
    if (!out.empty()) out.pop_back();
    return out;
}

std::size_t ModelSpec::unit_count(std::size_t layer) const {
    if (layer >= layers.size() || !layers[layer].has_parameters()) {
        throw ValueError("layer " + std::to_string(layer) + " has no units");
    }
    return layers[layer].out;
}

std::size_t ModelSpec::activation_layer(std::size_t layer) const {
    if (layer + 1 < layers.size() && layers[layer + 1].kind == LayerKind::relu) return layer + 1;
    return layer;
}

std::size_t ModelSpec::logit_end() const {
    if (!layers.empty() && layers.back().kind == LayerKind::softmax) return layers.size() - 1;
    return layers.size();
}

void ModelSpec::check_unit(const UnitId& id) const {
    if (id.layer >= layers.size() || !layers[id.layer].has_parameters()) {
        throw ValueError("unit " + to_string(id) + ": layer is not dense or conv2d");
    }
    if (id.unit >= layers[id.layer].out) {
        throw ValueError("unit " + to_string(id) + ": index out of range, layer has " +
                         std::to_string(layers[id.layer].out) + " units");
    }
}

std::vector<UnitId> ModelSpec::units(std::span<const std::size_t> layer_ids) const {
    std::vector<UnitId> out;
    for (std::size_t l : layer_ids) {
        for (std::size_t k = 0; k < unit_count(l); ++k) out.push_back({l, k});
    }
    return out;
}

ModelSpec small_mlp(const Shape& input_shape, std::size_t class_count, std::size_t hidden) {
    ModelSpec spec;
    spec.name = "SmallMLP";
    spec.class_count = class_count;
    spec.input_shape = input_shape;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(shape_size(input_shape), hidden), LayerSpec::relu(),
                   LayerSpec::dense(hidden, class_count), LayerSpec::softmax()};
    spec.validate();
    return spec;
}

ModelSpec small_cnn(const Shape& input_shape, std::size_t class_count) {
    if (input_shape.size() != 3) throw ShapeError("SmallCNN needs a [C x H x W] input shape");
    ModelSpec spec;
    spec.name = "SmallCNN";
    spec.class_count = class_count;
    spec.input_shape = input_shape;
    const std::size_t h = input_shape[1] / 2 / 2;
    const std::size_t w = input_shape[2] / 2 / 2;
    spec.layers = {LayerSpec::conv2d(input_shape[0], 8, 3),  LayerSpec::relu(),      LayerSpec::maxpool2d(2),
                   LayerSpec::conv2d(8, 16, 3),              LayerSpec::relu(),      LayerSpec::maxpool2d(2),
                   LayerSpec::flatten(),                     LayerSpec::dense(16 * h * w, class_count),
                   LayerSpec::softmax()};
    spec.validate();
    return spec;
}

ModelSpec model_by_name(const std::string& name, const Shape& input_shape, std::size_t class_count) {
    if (name == "SmallMLP") return small_mlp(input_shape, class_count);
    if (name == "SmallCNN") return small_cnn(input_shape, class_count);
    throw ValueError("unknown model '" + name + "' (expected SmallMLP or SmallCNN)");
}

std::string weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

void ParameterSet::add(std::string name, Tensor value) {
    if (find(name) != nullptr) throw ValueError("duplicate parameter " + name);
    entries_.push_back({std::move(name), std::move(value)});
}

const Tensor* ParameterSet::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return &e.value;
    }
    return nullptr;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    const Tensor* t = find(name);
    if (t == nullptr) throw ValueError("no parameter named " + name);
    return *t;
}

Tensor& ParameterSet::at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ParameterSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const noexcept {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name) return false;
        if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
    }
    return true;
}

bool ParameterSet::all_finite() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.value.all_finite(); });
}

namespace {

Shape weight_shape(const LayerSpec& layer) {
    if (layer.kind == LayerKind::dense) return {layer.out, layer.in};
    return {layer.out, layer.in, layer.kernel, layer.kernel};
}

}  // namespace

ParameterSet zero_parameters(const ModelSpec& spec) {
    spec.validate();
    ParameterSet params;
    for (std::size_t l : spec.parameterized_layers()) {
        params.add(weight_name(l), Tensor(weight_shape(spec.layers[l])));
        params.add(bias_name(l), Tensor({spec.layers[l].out}));
    }
    return params;
}

ParameterSet init_parameters(const ModelSpec& spec, std::uint64_t seed) {
    ParameterSet params = zero_parameters(spec);
    for (std::size_t l : spec.parameterized_layers()) {
        const LayerSpec& layer = spec.layers[l];
        const std::size_t fan_in = layer.kind == LayerKind::dense ? layer.in : layer.in * layer.kernel * layer.kernel;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, {0x1417, l}));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& w : params.at(weight_name(l)).values()) w = dist(rng);
    }
    return params;
}

void check_parameters(const ModelSpec& spec, const ParameterSet& params) {
    const ParameterSet expected = zero_parameters(spec);
    if (!expected.same_layout(params)) {
        std::string detail;
        for (const auto& e : expected.entries()) {
            const Tensor* t = params.find(e.name);
            if (t == nullptr) {
                detail = "missing " + e.name;
                break;
            }
            if (t->shape() != e.value.shape()) {
                detail = e.name + " expected " + shape_to_string(e.value.shape()) + ", got " + shape_to_string(t->shape());
                break;
            }
        }
        if (detail.empty()) detail = "unexpected or reordered entries";
        throw ShapeError("parameter set does not match model " + spec.name + ": " + detail);
    }
}

}  // namespace fusim::nn

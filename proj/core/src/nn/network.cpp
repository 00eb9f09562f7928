#include "fusim/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fusim/error.hpp"

namespace fusim::nn {

namespace {

struct LayerParams {
    const Tensor* weight = nullptr;
    const Tensor* bias = nullptr;
};

LayerParams layer_params(const ParameterSet& params, std::size_t layer, const LayerSpec& spec) {
    if (!spec.has_parameters()) return {};
    return {&params.at(weight_name(layer)), &params.at(bias_name(layer))};
}

Tensor dense_forward(const LayerSpec& layer, const LayerParams& p, const Tensor& in) {
    Tensor out({layer.out});
    const auto w = p.weight->values();
    const auto b = p.bias->values();
    const auto x = in.values();
    for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = b[o];
        const double* row = w.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * x[i];
        out[o] = acc;
    }
    return out;
}

Tensor conv_forward(const LayerSpec& layer, const LayerParams& p, const Tensor& in) {
    const std::size_t h = in.shape()[1];
    const std::size_t w = in.shape()[2];
    const std::size_t k = layer.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    Tensor out({layer.out, h, w});
    const auto wt = p.weight->values();
    const auto x = in.values();
    for (std::size_t o = 0; o < layer.out; ++o) {
        const double bias = (*p.bias)[o];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                double acc = bias;
                for (std::size_t c = 0; c < layer.in; ++c) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += wt[((o * layer.in + c) * k + ky) * k + kx] *
                                   x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    return out;
}

Tensor maxpool_forward(const LayerSpec& layer, const Tensor& in) {
    const std::size_t c = in.shape()[0];
    const std::size_t h = in.shape()[1];
    const std::size_t w = in.shape()[2];
    const std::size_t k = layer.kernel;
    const std::size_t oh = h / k;
    const std::size_t ow = w / k;
    Tensor out({c, oh, ow});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t dy = 0; dy < k; ++dy) {
                    for (std::size_t dx = 0; dx < k; ++dx) {
                        best = std::max(best, in[(ch * h + y * k + dy) * w + x * k + dx]);
                    }
                }
                out[(ch * oh + y) * ow + x] = best;
            }
        }
    }
    return out;
}

Tensor layer_forward(const LayerSpec& layer, const LayerParams& p, const Tensor& in) {
    switch (layer.kind) {
        case LayerKind::dense: return dense_forward(layer, p, in);
        case LayerKind::conv2d: return conv_forward(layer, p, in);
        case LayerKind::relu: {
            Tensor out = in;
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case LayerKind::maxpool2d: return maxpool_forward(layer, in);
        case LayerKind::flatten: return in.reshaped({in.size()});
        case LayerKind::softmax: break;
    }
    throw ShapeError("softmax cannot appear inside the network body");
}

/// Gradient with respect to the layer input. Accumulates parameter gradients
/// into `grad_w` / `grad_b` when they are non-null.
Tensor layer_backward(const LayerSpec& layer, const LayerParams& p, const Tensor& in, const Tensor& grad_out,
                      Tensor* grad_w, Tensor* grad_b, bool want_input_grad = true) {
    Tensor grad_in(in.shape());
    switch (layer.kind) {
        case LayerKind::dense: {
            const auto w = p.weight->values();
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double g = grad_out[o];
                if (g == 0.0) continue;
                const double* row = w.data() + o * layer.in;
                if (want_input_grad) {
                    for (std::size_t i = 0; i < layer.in; ++i) grad_in[i] += row[i] * g;
                }
                if (grad_w != nullptr) {
                    double* grow = grad_w->values().data() + o * layer.in;
                    for (std::size_t i = 0; i < layer.in; ++i) grow[i] += g * in[i];
                }
                if (grad_b != nullptr) (*grad_b)[o] += g;
            }
            return grad_in;
        }
        case LayerKind::conv2d: {
            const std::size_t h = in.shape()[1];
            const std::size_t w = in.shape()[2];
            const std::size_t k = layer.kernel;
            const auto pad = static_cast<std::ptrdiff_t>(k / 2);
            const auto wt = p.weight->values();
            for (std::size_t o = 0; o < layer.out; ++o) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const double g = grad_out[(o * h + y) * w + xx];
                        if (g == 0.0) continue;
                        if (grad_b != nullptr) (*grad_b)[o] += g;
                        for (std::size_t c = 0; c < layer.in; ++c) {
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const auto ix = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    const std::size_t wi = ((o * layer.in + c) * k + ky) * k + kx;
                                    const std::size_t xi =
                                        (c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                                    if (want_input_grad) grad_in[xi] += wt[wi] * g;
                                    if (grad_w != nullptr) (*grad_w)[wi] += g * in[xi];
                                }
                            }
                        }
                    }
                }
            }
            return grad_in;
        }
        case LayerKind::relu:
            for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
            return grad_in;
        case LayerKind::maxpool2d: {
            const std::size_t c = in.shape()[0];
            const std::size_t h = in.shape()[1];
            const std::size_t w = in.shape()[2];
            const std::size_t k = layer.kernel;
            const std::size_t oh = h / k;
            const std::size_t ow = w / k;
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                        // first maximum in scan order receives the gradient
                        std::size_t arg = (ch * h + y * k) * w + x * k;
                        for (std::size_t dy = 0; dy < k; ++dy) {
                            for (std::size_t dx = 0; dx < k; ++dx) {
                                const std::size_t idx = (ch * h + y * k + dy) * w + x * k + dx;
                                if (in[idx] > in[arg]) arg = idx;
                            }
                        }
                        grad_in[arg] += grad_out[(ch * oh + y) * ow + x];
                    }
                }
            }
            return grad_in;
        }
        case LayerKind::flatten:
            return grad_out.reshaped(in.shape());
        case LayerKind::softmax: break;
    }
    throw ShapeError("softmax cannot appear inside the network body");
}

std::vector<double> softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - top);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

void check_input(const ModelSpec& spec, const Tensor& input) {
    if (input.shape() != spec.input_shape) {
        throw ShapeError("model " + spec.name + " input: expected " + shape_to_string(spec.input_shape) + ", got " +
                         shape_to_string(input.shape()));
    }
}

/// Runs layers [first, logit_end) starting from `in`, appending outputs.
void run_layers(const ModelSpec& spec, const ParameterSet& params, std::size_t first, const Tensor& in,
                std::vector<Tensor>& outputs) {
    const Tensor* current = &in;
    for (std::size_t i = first; i < spec.logit_end(); ++i) {
        outputs.push_back(layer_forward(spec.layers[i], layer_params(params, i, spec.layers[i]), *current));
        current = &outputs.back();
    }
}

/// Input tensor of layer `i` given the input and the per-layer outputs.
const Tensor& layer_input(std::size_t i, const Tensor& input, const std::vector<Tensor>& outputs) {
    return i == 0 ? input : outputs[i - 1];
}

/// dP(target)/dlogits for a softmax output.
Tensor probability_gradient(const std::vector<double>& p, std::size_t target) {
    Tensor g({p.size()});
    for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[target] * ((j == target ? 1.0 : 0.0) - p[j]);
    return g;
}

void scale_unit(Tensor& activation, std::size_t unit, double scale) {
    const std::size_t block = activation.rank() == 1 ? 1 : activation.size() / activation.shape()[0];
    for (std::size_t i = unit * block; i < (unit + 1) * block; ++i) activation[i] *= scale;
}

double block_mean(const Tensor& activation, std::size_t unit) {
    const std::size_t block = activation.rank() == 1 ? 1 : activation.size() / activation.shape()[0];
    double sum = 0.0;
    for (std::size_t i = unit * block; i < (unit + 1) * block; ++i) sum += activation[i];
    return sum / static_cast<double>(block);
}

void check_scale(double scale) {
    if (!(scale >= 0.0 && scale <= 1.0)) throw ValueError("activation scale must lie in [0, 1]");
}

}  // namespace

double ActivationTrace::unit_beta(const UnitId& unit) const { return layer_beta(unit.layer).at(unit.unit); }

const std::vector<double>& ActivationTrace::layer_beta(std::size_t layer) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] == layer) return beta[i];
    }
    throw ValueError("layer " + std::to_string(layer) + " is not in the activation trace");
}

ForwardCache::ForwardCache(const ModelSpec& spec, const ParameterSet& params, const Tensor& input)
    : spec_(&spec), params_(&params), input_(input) {
    check_input(spec, input);
    outputs_.reserve(spec.logit_end());
    run_layers(spec, params, 0, input_, outputs_);
    probabilities_ = softmax(outputs_.back().values());
}

double ForwardCache::unit_beta(const UnitId& unit) const {
    spec_->check_unit(unit);
    return block_mean(outputs_[spec_->activation_layer(unit.layer)], unit.unit);
}

ActivationTrace ForwardCache::trace() const {
    ActivationTrace trace;
    for (std::size_t l : spec_->parameterized_layers()) {
        const Tensor& act = outputs_[spec_->activation_layer(l)];
        std::vector<double> beta(spec_->layers[l].out);
        for (std::size_t k = 0; k < beta.size(); ++k) beta[k] = block_mean(act, k);
        trace.layers.push_back(l);
        trace.activations.push_back(act);
        trace.beta.push_back(std::move(beta));
    }
    return trace;
}

std::vector<double> ForwardCache::scaled_probabilities(const UnitId& unit, double scale) const {
    spec_->check_unit(unit);
    check_scale(scale);
    const std::size_t a = spec_->activation_layer(unit.layer);
    if (scale == 1.0) return probabilities_;
    Tensor scaled = outputs_[a];
    scale_unit(scaled, unit.unit, scale);
    if (a + 1 == spec_->logit_end()) return softmax(scaled.values());
    std::vector<Tensor> tail;
    run_layers(*spec_, *params_, a + 1, scaled, tail);
    return softmax(tail.back().values());
}

double ForwardCache::scaled_unit_gradient(std::size_t target_class, const UnitId& unit, double scale) const {
    spec_->check_unit(unit);
    check_scale(scale);
    if (target_class >= spec_->class_count) throw ValueError("target class out of range");
    const std::size_t a = spec_->activation_layer(unit.layer);
    const std::size_t end = spec_->logit_end();

    Tensor scaled = outputs_[a];
    scale_unit(scaled, unit.unit, scale);
    std::vector<Tensor> tail;  // tail[i - a - 1] is the output of layer i
    if (a + 1 < end) run_layers(*spec_, *params_, a + 1, scaled, tail);
    const Tensor& logits = tail.empty() ? scaled : tail.back();

    Tensor grad = probability_gradient(softmax(logits.values()), target_class);
    for (std::size_t i = end; i-- > a + 1;) {
        const Tensor& in = i == a + 1 ? scaled : tail[i - a - 2];
        grad = layer_backward(spec_->layers[i], layer_params(*params_, i, spec_->layers[i]), in, grad, nullptr,
                              nullptr);
    }

    const Tensor& original = outputs_[a];
    const std::size_t block = original.rank() == 1 ? 1 : original.size() / original.shape()[0];
    const double beta = block_mean(original, unit.unit);
    double sum = 0.0;
    for (std::size_t i = unit.unit * block; i < (unit.unit + 1) * block; ++i) {
        sum += beta != 0.0 ? grad[i] * original[i] / beta : grad[i];
    }
    return sum;
}

ForwardResult forward(const ModelSpec& spec, const ParameterSet& params, const Tensor& input) {
    ForwardCache cache(spec, params, input);
    return {cache.probabilities(), cache.trace()};
}

std::vector<double> predict(const ModelSpec& spec, const ParameterSet& params, const Tensor& input) {
    check_input(spec, input);
    std::vector<Tensor> outputs;
    outputs.reserve(spec.logit_end());
    run_layers(spec, params, 0, input, outputs);
    return softmax(outputs.back().values());
}

std::size_t predict_class(const ModelSpec& spec, const ParameterSet& params, const Tensor& input) {
    const auto p = predict(spec, params, input);
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterSet& params,
                               std::span<const LabeledExample> batch) {
    if (batch.empty()) throw ValueError("loss_and_gradient: empty batch");
    check_parameters(spec, params);
    LossGradient result{0.0, zero_parameters(spec)};
    const std::size_t end = spec.logit_end();
    const std::size_t first_param = spec.parameterized_layers().front();
    std::vector<Tensor> outputs;
    for (const LabeledExample& ex : batch) {
        if (ex.label >= spec.class_count) {
            throw ValueError("label " + std::to_string(ex.label) + " out of range for " +
                             std::to_string(spec.class_count) + " classes");
        }
        check_input(spec, ex.image);
        outputs.clear();
        run_layers(spec, params, 0, ex.image, outputs);
        const auto logits = outputs.back().values();
        const double top = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double z : logits) sum += std::exp(z - top);
        const double log_norm = top + std::log(sum);
        result.loss += log_norm - logits[ex.label];

        Tensor grad({spec.class_count});
        for (std::size_t j = 0; j < spec.class_count; ++j) {
            grad[j] = std::exp(logits[j] - log_norm) - (j == ex.label ? 1.0 : 0.0);
        }
        for (std::size_t i = end; i-- > first_param;) {
            const LayerSpec& layer = spec.layers[i];
            Tensor* gw = layer.has_parameters() ? &result.gradient.at(weight_name(i)) : nullptr;
            Tensor* gb = layer.has_parameters() ? &result.gradient.at(bias_name(i)) : nullptr;
            grad = layer_backward(layer, layer_params(params, i, layer), layer_input(i, ex.image, outputs), grad, gw,
                                  gb, i > first_param);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    result.loss *= inv;
    for (auto& e : result.gradient.entries()) {
        for (double& v : e.value.values()) v *= inv;
    }
    return result;
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& gradient, double learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValueError("learning rate must be >= 0");
    if (!params.same_layout(gradient)) throw ShapeError("sgd_step: gradient layout differs from parameters");
    if (!gradient.all_finite()) throw ValueError("sgd_step: non-finite gradient");
    ParameterSet out = params;
    for (std::size_t e = 0; e < out.size(); ++e) {
        auto dst = out.entries()[e].value.values();
        const auto g = gradient.entries()[e].value.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= learning_rate * g[i];
    }
    return out;
}

std::vector<double> forward_with_scaled_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input,
                                             const UnitId& unit, double scale) {
    spec.check_unit(unit);
    check_scale(scale);
    return ForwardCache(spec, params, input).scaled_probabilities(unit, scale);
}

double gradient_wrt_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input,
                         std::size_t target_class, const UnitId& unit, double scale) {
    spec.check_unit(unit);
    check_scale(scale);
    return ForwardCache(spec, params, input).scaled_unit_gradient(target_class, unit, scale);
}

}  // namespace fusim::nn

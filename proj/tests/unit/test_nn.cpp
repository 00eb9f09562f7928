#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "fusim/error.hpp"
#include "fusim/nn/checkpoint.hpp"
#include "fusim/nn/network.hpp"
#include "oracles.hpp"
#include "tiny_nets.hpp"

using namespace fusim;
using namespace fusim::nn;

namespace {

LabeledExample example(const Tensor& x, std::size_t y) { return {x, y}; }

}  // namespace

TEST(Tensor, ShapeAndReshape) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
    EXPECT_THROW(t.reshaped({4}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_EQ(shape_to_string({1, 16, 16}), "[1x16x16]");
}

TEST(ModelSpec, ReferenceArchitectures) {
    const auto mlp = small_mlp({1, 16, 16}, 10);
    EXPECT_EQ(mlp.hidden_layers(), (std::vector<std::size_t>{1}));
    EXPECT_EQ(mlp.unit_count(1), 128u);
    EXPECT_EQ(mlp.activation_layer(1), 2u);
    EXPECT_EQ(init_parameters(mlp, 1).scalar_count(), 256u * 128 + 128 + 128 * 10 + 10);

    const auto cnn = small_cnn({1, 16, 16}, 10);
    EXPECT_EQ(cnn.hidden_layers(), (std::vector<std::size_t>{0, 3}));
    EXPECT_EQ(cnn.output_shapes().back(), (Shape{10}));
    EXPECT_THROW(model_by_name("ResNet18", {1, 16, 16}, 10), ValueError);
}

TEST(ModelSpec, RejectsIncompatibleLayers) {
    ModelSpec bad{"bad", {LayerSpec::dense(4, 3), LayerSpec::dense(2, 2)}, 2, {4}};
    EXPECT_THROW(bad.validate(), ShapeError);
    ModelSpec wrong_classes{"bad", {LayerSpec::dense(4, 3)}, 2, {4}};
    EXPECT_THROW(wrong_classes.validate(), ShapeError);
    EXPECT_THROW(small_mlp({4}, 3).check_unit({0, 0}), ValueError);  // flatten carries no units
    EXPECT_THROW(small_mlp({4}, 3).check_unit({1, 128}), ValueError);
}

TEST(ModelSpec, InitIsSeededAndFanInBounded) {
    const auto spec = small_mlp({1, 8, 8}, 4, 16);
    const auto a = init_parameters(spec, 5);
    EXPECT_EQ(a, init_parameters(spec, 5));
    EXPECT_NE(a, init_parameters(spec, 6));
    const double bound = std::sqrt(6.0 / 64.0);
    for (double w : a.at("layer1.weight").values()) EXPECT_LE(std::abs(w), bound);
    for (double b : a.at("layer1.bias").values()) EXPECT_EQ(b, 0.0);
}

TEST(Forward, ZeroWeightsGiveUniformProbabilities) {
    ModelSpec spec{"one", {LayerSpec::dense(3, 4), LayerSpec::softmax()}, 4, {3}};
    const auto p = predict(spec, zero_parameters(spec), Tensor({3}, {0.3, -2.0, 7.0}));
    for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, IdentityDenseGivesSoftmaxOfInput) {
    ModelSpec spec{"id", {LayerSpec::flatten(), LayerSpec::dense(3, 3)}, 3, {3}};
    auto params = zero_parameters(spec);
    for (std::size_t i = 0; i < 3; ++i) params.at("layer1.weight")[i * 3 + i] = 1.0;
    const auto p = predict(spec, params, Tensor({3}, {0, 1, 0}));
    const double z = 2.0 + std::exp(1.0);
    EXPECT_NEAR(p[0], 1.0 / z, 1e-15);
    EXPECT_NEAR(p[1], std::exp(1.0) / z, 1e-15);
}

TEST(Forward, HandComputed222) {
    const auto c = tiny::net222();
    const auto p = predict(c.spec, c.params, c.input);
    EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(0.46)), 1e-14);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
    const auto half = forward_with_scaled_unit(c.spec, c.params, c.input, {0, 0}, 0.5);
    EXPECT_NEAR(half[0], 1.0 / (1.0 + std::exp(0.82)), 1e-14);
}

TEST(Forward, MatchesOracleOnBattery) {
    for (std::uint64_t i = 0; i < 40; ++i) {
        const auto c = tiny::make_case(i);
        const auto r = forward(c.spec, c.params, c.input);
        const auto ref = oracle::forward(c.spec, c.params, c.input);
        ASSERT_EQ(r.probabilities.size(), ref.size());
        double sum = 0;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            EXPECT_NEAR(r.probabilities[k], ref[k], 1e-12) << "case " << i;
            sum += r.probabilities[k];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        EXPECT_EQ(r.trace.layers, c.spec.parameterized_layers());
    }
}

TEST(Forward, ShapeMismatchNamesShapes) {
    const auto spec = small_mlp({1, 4, 4}, 3, 5);
    try {
        predict(spec, init_parameters(spec, 1), Tensor({1, 5, 4}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[1x4x4]"), std::string::npos) << e.what();
    }
}

TEST(Forward, ScaledUnitIdentityAndNoOp) {
    for (std::uint64_t i = 0; i < 12; ++i) {
        const auto c = tiny::make_case(i);
        const auto plain = predict(c.spec, c.params, c.input);
        for (const auto& u : c.spec.units(c.spec.parameterized_layers())) {
            EXPECT_EQ(forward_with_scaled_unit(c.spec, c.params, c.input, u, 1.0), plain);
        }
    }
    // A unit whose outgoing weights are zero cannot change the output.
    auto c = tiny::net222();
    c.params.at("layer2.weight")[1] = 0.0;
    c.params.at("layer2.weight")[3] = 0.0;
    const auto plain = predict(c.spec, c.params, c.input);
    EXPECT_EQ(forward_with_scaled_unit(c.spec, c.params, c.input, {0, 1}, 0.0), plain);
    EXPECT_EQ(gradient_wrt_unit(c.spec, c.params, c.input, 0, {0, 1}, 0.3), 0.0);
    EXPECT_THROW(forward_with_scaled_unit(c.spec, c.params, c.input, {0, 1}, 1.5), ValueError);
    EXPECT_THROW(forward_with_scaled_unit(c.spec, c.params, c.input, {1, 0}, 0.5), ValueError);
}

TEST(Forward, ScaledUnitMatchesOracle) {
    for (std::uint64_t i = 0; i < 24; ++i) {
        const auto c = tiny::make_case(i);
        for (const auto& u : c.spec.units(c.spec.parameterized_layers())) {
            for (double s : {0.0, 0.25, 0.7}) {
                const auto got = forward_with_scaled_unit(c.spec, c.params, c.input, u, s);
                const auto ref = oracle::forward(c.spec, c.params, c.input, oracle::Intervention{u, s});
                for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(got[k], ref[k], 1e-12);
            }
        }
    }
}

TEST(Gradient, PerfectPredictionHasTinyLoss) {
    ModelSpec spec{"one", {LayerSpec::dense(2, 2)}, 2, {2}};
    auto params = zero_parameters(spec);
    params.at("layer0.bias")[0] = 50.0;
    const LabeledExample batch[] = {example(Tensor({2}, {0.1, 0.2}), 0)};
    const auto lg = loss_and_gradient(spec, params, batch);
    EXPECT_LT(lg.loss, 1e-20);
    for (const auto& e : lg.gradient.entries())
        for (double g : e.value.values()) EXPECT_LT(std::abs(g), 1e-20);
}

TEST(Gradient, ZeroModelLossIsLogC) {
    ModelSpec spec{"one", {LayerSpec::dense(3, 7)}, 7, {3}};
    const LabeledExample batch[] = {example(Tensor({3}, {1, 2, 3}), 4)};
    EXPECT_NEAR(loss_and_gradient(spec, zero_parameters(spec), batch).loss, std::log(7.0), 1e-14);
}

TEST(Gradient, Errors) {
    const auto c = tiny::net222();
    EXPECT_THROW(loss_and_gradient(c.spec, c.params, {}), ValueError);
    const LabeledExample bad[] = {example(c.input, 2)};
    EXPECT_THROW(loss_and_gradient(c.spec, c.params, bad), ValueError);
}

// Central differences with step 1e-5 on the oracle loss, >= 100 random models.
TEST(Gradient, FiniteDifferenceBattery) {
    std::size_t checked = 0;
    for (std::uint64_t i = 0; i < 120; ++i) {
        const auto c = tiny::make_case(i);
        ASSERT_LE(c.params.scalar_count(), 200u);
        auto second = c.input;
        for (double& v : second.values()) v = 1.0 - v;
        const std::size_t other = (c.label + 1) % c.spec.class_count;
        const LabeledExample batch[] = {example(c.input, c.label), example(second, other)};
        const std::vector<std::pair<Tensor, std::size_t>> ref_batch = {{c.input, c.label}, {second, other}};
        const auto lg = loss_and_gradient(c.spec, c.params, batch);
        EXPECT_NEAR(lg.loss, oracle::cross_entropy(c.spec, c.params, ref_batch), 1e-12);

        auto probe = c.params;
        for (std::size_t e = 0; e < probe.size(); ++e) {
            auto vals = probe.entries()[e].value.values();
            const auto grad = lg.gradient.entries()[e].value.values();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double orig = vals[j];
                const double h = 1e-5;
                vals[j] = orig + h;
                const double up = oracle::cross_entropy(c.spec, probe, ref_batch);
                vals[j] = orig - h;
                const double down = oracle::cross_entropy(c.spec, probe, ref_batch);
                vals[j] = orig;
                const double fd = (up - down) / (2 * h);
                // Absolute slack for entries that are zero up to rounding.
                if (std::abs(fd) < 1e-7 && std::abs(grad[j]) < 1e-7) continue;
                EXPECT_LT(oracle::relative_error(grad[j], fd), 1e-4)
                    << "case " << i << " " << probe.entries()[e].name << "[" << j << "] analytic " << grad[j]
                    << " fd " << fd;
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 1000u);
}

TEST(Gradient, UnitGradientMatchesFiniteDifference) {
    for (std::uint64_t i = 0; i < 60; ++i) {
        const auto c = tiny::make_case(i);
        for (const auto& u : c.spec.units(c.spec.hidden_layers())) {
            double beta = 0;
            oracle::forward(c.spec, c.params, c.input, oracle::Intervention{u, 1.0}, &beta);
            if (beta <= 1e-3) continue;
            for (double s : {0.3, 0.8}) {
                const double g = gradient_wrt_unit(c.spec, c.params, c.input, c.label, u, s);
                const double a = s * beta;
                const double h = 1e-6;
                const double fd = (oracle::prob_at_activation(c.spec, c.params, c.input, c.label, u, a + h, beta) -
                                   oracle::prob_at_activation(c.spec, c.params, c.input, c.label, u, a - h, beta)) /
                                  (2 * h);
                if (std::abs(fd) < 1e-8 && std::abs(g) < 1e-8) continue;
                EXPECT_LT(oracle::relative_error(g, fd), 1e-4) << "case " << i << " unit " << to_string(u);
            }
        }
    }
}

TEST(Gradient, DeadReluPathHasZeroGradient) {
    auto c = tiny::net222();
    // Second layer feeds a relu that stays negative whatever unit (0,0) does.
    ModelSpec spec{"dead",
                   {LayerSpec::dense(2, 2), LayerSpec::relu(), LayerSpec::dense(2, 2), LayerSpec::relu(),
                    LayerSpec::dense(2, 2)},
                   2,
                   {2}};
    auto params = zero_parameters(spec);
    params.at("layer0.weight")[0] = 1.0;
    params.at("layer2.bias")[0] = -10.0;
    params.at("layer2.bias")[1] = -10.0;
    params.at("layer2.weight")[0] = 1.0;
    params.at("layer4.weight")[0] = 1.0;
    EXPECT_EQ(gradient_wrt_unit(spec, params, c.input, 0, {0, 0}, 0.5), 0.0);
}

TEST(Sgd, ExactArithmetic) {
    ModelSpec spec{"one", {LayerSpec::dense(1, 1)}, 1, {1}};
    auto p = zero_parameters(spec);
    auto g = zero_parameters(spec);
    p.at("layer0.weight")[0] = 1.0;
    g.at("layer0.weight")[0] = 0.5;
    EXPECT_EQ(sgd_step(p, g, 0.1).at("layer0.weight")[0], 0.95);
    EXPECT_EQ(sgd_step(p, g, 0.0), p);
    EXPECT_EQ(sgd_step(p, zero_parameters(spec), 0.3), p);
    g.at("layer0.bias")[0] = std::nan("");
    EXPECT_THROW(sgd_step(p, g, 0.1), ValueError);
}

TEST(Sgd, RandomizedMatchesRecomputation) {
    const auto c = tiny::make_case(7);
    auto g = c.params;
    Rng rng(99);
    tiny::randomize(g, rng, 3.0);
    const double lr = 0.037;
    const auto out = sgd_step(c.params, g, lr);
    for (std::size_t e = 0; e < out.size(); ++e) {
        const auto o = out.entries()[e].value.values();
        const auto p = c.params.entries()[e].value.values();
        const auto d = g.entries()[e].value.values();
        for (std::size_t j = 0; j < o.size(); ++j) EXPECT_EQ(o[j], p[j] - lr * d[j]);
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto spec = small_cnn({1, 8, 8}, 5);
    auto params = init_parameters(spec, 3);
    params.at("layer0.bias")[1] = -0.0;
    params.at("layer3.bias")[0] = 1e-308;
    const auto bytes = encode_checkpoint(params);
    EXPECT_EQ(bytes.rfind("FUSIM1\n", 0), 0u);
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(back, params);
    EXPECT_TRUE(std::signbit(back.at("layer0.bias")[1]));
    EXPECT_EQ(encode_checkpoint(back), bytes);

    const auto path = std::filesystem::temp_directory_path() / "fusim_ckpt_test.ckpt";
    save_checkpoint(params, path);
    EXPECT_EQ(load_checkpoint(path), params);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
    const auto spec = small_mlp({4}, 2, 3);
    const auto bytes = encode_checkpoint(init_parameters(spec, 1));
    EXPECT_THROW(decode_checkpoint("FUSIM2\n" + bytes.substr(7)), IoError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
    EXPECT_THROW(load_checkpoint("/nonexistent/fusim.ckpt"), IoError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "fusim/data/datasets.hpp"
#include "fusim/data/partition.hpp"
#include "fusim/fed/fedsim.hpp"
#include "fusim/nn/network.hpp"
#include "fusim/random.hpp"
#include "fusim/unlearn/routes.hpp"
#include "oracles.hpp"
#include "tiny_nets.hpp"

using namespace fusim;
using namespace fusim::fed;

namespace {

struct SmallTask {
    nn::ModelSpec spec;
    std::vector<Shard> shards;
    Shard validation;
};

SmallTask small_task(std::size_t clients, std::uint64_t seed) {
    data::SyntheticDomainSpec ds;
    ds.resolution = {8, 8};
    ds.samples_per_class = 24;
    const auto domain = data::synth_domain(ds, seed);
    const auto split = data::split_holdout(domain, 0.2, 0.0, seed);
    const auto plan = data::partition_iid(split.train, clients, seed);
    std::vector<data::DomainDataset> domains = {split.train};
    return {nn::small_mlp({1, 8, 8}, 10, 16), data::materialize(plan, domains), split.validation.examples};
}

FedConfig quick_config() {
    FedConfig c;
    c.rounds_max = 3;
    c.local_epochs = 1;
    c.batch_size = 8;
    c.learning_rate = 0.1;
    c.epsilon = 1e-9;  // below any reachable nonzero error
    c.seed = 42;
    c.unlearn_rounds_max = 2;
    return c;
}

/// Plain sequential training on one shard: round t runs local_train from the
/// previous round's parameters. No aggregation involved.
ParameterSet centralized(const nn::ModelSpec& spec, const Shard& shard, const ParameterSet& initial,
                         const FedConfig& config) {
    ClientState solo{0, shard, initial, 0};
    ParameterSet params = initial;
    for (std::size_t t = 1; t <= config.rounds_max; ++t) params = local_train(spec, solo, params, config, t).params;
    return params;
}

}  // namespace

TEST(Aggregate, ScalarArithmetic) {
    nn::ModelSpec spec{"s", {nn::LayerSpec::dense(1, 1)}, 1, {1}};
    auto a = nn::zero_parameters(spec);
    auto b = nn::zero_parameters(spec);
    b.at("layer0.weight")[0] = 4.0;
    const WeightedUpdate ups[] = {{0, &a, 1.0}, {1, &b, 3.0}};
    EXPECT_EQ(aggregate(ups).at("layer0.weight")[0], 3.0);
}

TEST(Aggregate, IdenticalUpdatesReproduceInput) {
    const auto c = tiny::make_case(5);
    const WeightedUpdate ups[] = {{0, &c.params, 0.3}, {1, &c.params, 7.0}, {2, &c.params, 1.1}};
    EXPECT_EQ(aggregate(ups), c.params);
}

TEST(Aggregate, MatchesIndependentWeightedMean) {
    Rng rng(77);
    std::uniform_real_distribution<double> w(0.5, 50.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto base = tiny::make_case(static_cast<std::uint64_t>(trial));
        std::vector<ParameterSet> sets(5, base.params);
        std::vector<WeightedUpdate> ups;
        std::vector<double> weights;
        for (std::size_t k = 0; k < sets.size(); ++k) {
            tiny::randomize(sets[k], rng, 2.0);
            weights.push_back(std::floor(w(rng)));
            ups.push_back({k, &sets[k], weights.back()});
        }
        const auto got = aggregate(ups);
        for (std::size_t e = 0; e < got.size(); ++e) {
            std::vector<std::vector<double>> xs;
            for (const auto& s : sets) xs.emplace_back(s.entries()[e].value.values().begin(), s.entries()[e].value.values().end());
            const auto ref = oracle::weighted_mean(xs, weights);
            for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got.entries()[e].value[i], ref[i], 1e-12);
        }
        const auto shares = aggregation_weights(ups);
        double total = 0;
        for (double s : shares) total += s;
        EXPECT_NEAR(total, 1.0, 1e-15);
    }
}

TEST(Aggregate, OrderOfInputsDoesNotMatter) {
    Rng rng(3);
    const auto base = tiny::make_case(2);
    std::vector<ParameterSet> sets(4, base.params);
    for (auto& s : sets) tiny::randomize(s, rng, 1.0);
    std::vector<WeightedUpdate> ups;
    for (std::size_t k = 0; k < sets.size(); ++k) ups.push_back({k, &sets[k], static_cast<double>(k + 2)});
    const auto reference = aggregate(ups);
    std::reverse(ups.begin(), ups.end());
    EXPECT_EQ(aggregate(ups), reference);
    std::swap(ups[0], ups[2]);
    EXPECT_EQ(aggregate(ups), reference);
}

TEST(Aggregate, Errors) {
    const auto a = tiny::make_case(0).params;
    const auto b = tiny::make_case(3).params;
    const WeightedUpdate mismatch[] = {{0, &a, 1.0}, {1, &b, 1.0}};
    EXPECT_THROW(aggregate(mismatch), ShapeError);
    const WeightedUpdate zero[] = {{0, &a, 0.0}, {1, &a, 0.0}};
    EXPECT_THROW(aggregate(zero), ValueError);
    EXPECT_THROW(aggregate({}), ValueError);
}

TEST(LocalTrain, ZeroEpochsReturnsGlobal) {
    auto task = small_task(1, 1);
    auto cfg = quick_config();
    cfg.local_epochs = 0;
    const auto init = nn::init_parameters(task.spec, 1);
    ClientState s{0, task.shards[0], init, 0};
    const auto r = local_train(task.spec, s, init, cfg, 1);
    EXPECT_EQ(r.params, init);
    EXPECT_EQ(r.steps, 0u);
    EXPECT_EQ(s.local_step_counter, 0u);
}

TEST(LocalTrain, SingleExampleIsOneSgdStep) {
    const auto c = tiny::make_case(4);
    auto cfg = quick_config();
    ClientState s{0, {{c.input, c.label}}, c.params, 0};
    const auto r = local_train(c.spec, s, c.params, cfg, 1);
    const nn::LabeledExample one[] = {{c.input, c.label}};
    EXPECT_EQ(r.params, nn::sgd_step(c.params, nn::loss_and_gradient(c.spec, c.params, one).gradient, cfg.learning_rate));
    EXPECT_EQ(s.local_step_counter, 1u);
}

TEST(LocalTrain, SeparableShardLossDecreases) {
    // Two classes separated by the sign of the first coordinate.
    Rng rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Shard shard;
    for (int i = 0; i < 200; ++i) {
        double x0 = u(rng);
        if (std::abs(x0) < 0.1) x0 = x0 < 0 ? -0.1 : 0.1;
        shard.push_back({nn::Tensor({2}, {x0, u(rng)}), x0 > 0 ? 1u : 0u});
    }
    nn::ModelSpec spec{"lin", {nn::LayerSpec::dense(2, 2)}, 2, {2}};
    auto cfg = quick_config();
    ClientState s{0, shard, nn::zero_parameters(spec), 0};
    auto params = s.cached;
    double previous = 1e9;
    for (std::size_t epoch = 1; epoch <= 5; ++epoch) {
        const auto r = local_train(spec, s, params, cfg, epoch);
        EXPECT_LT(r.mean_loss, previous) << "epoch " << epoch;
        previous = r.mean_loss;
        params = r.params;
    }
}

TEST(LocalTrain, NonFiniteLossAborts) {
    const auto c = tiny::make_case(0);
    auto cfg = quick_config();
    cfg.learning_rate = 1e300;
    cfg.local_epochs = 5;
    ClientState s{0, {{c.input, c.label}, {c.input, (c.label + 1) % c.spec.class_count}}, c.params, 0};
    cfg.batch_size = 1;
    EXPECT_THROW(local_train(c.spec, s, c.params, cfg, 1), Error);
}

TEST(RunTraining, ZeroRoundsReturnsInitial) {
    auto task = small_task(2, 2);
    auto cfg = quick_config();
    cfg.rounds_max = 0;
    const auto init = nn::init_parameters(task.spec, 2);
    auto states = make_client_states(task.shards, init);
    const auto r = run_training(task.spec, states, init, task.validation, cfg);
    EXPECT_EQ(r.global, init);
    EXPECT_TRUE(r.logs.empty());
    EXPECT_FALSE(r.convergence_round.has_value());
}

TEST(RunTraining, SingleClientEqualsCentralized) {
    auto task = small_task(1, 3);
    const auto cfg = quick_config();
    const auto init = nn::init_parameters(task.spec, 3);
    auto states = make_client_states(task.shards, init);
    const auto r = run_training(task.spec, states, init, task.validation, cfg);
    EXPECT_EQ(r.global, centralized(task.spec, task.shards[0], init, cfg));
    EXPECT_EQ(r.logs.size(), cfg.rounds_max);
}

TEST(RunTraining, IdenticalShardsEqualCentralized) {
    auto task = small_task(1, 4);
    const auto cfg = quick_config();
    const auto init = nn::init_parameters(task.spec, 4);
    auto states = make_client_states({task.shards[0], task.shards[0], task.shards[0]}, init);
    const auto r = run_training(task.spec, states, init, task.validation, cfg);
    EXPECT_EQ(r.global, centralized(task.spec, task.shards[0], init, cfg));
}

TEST(RunTraining, DeterministicAndLogged) {
    auto task = small_task(3, 5);
    auto cfg = quick_config();
    cfg.epsilon = 0.9;
    const auto init = nn::init_parameters(task.spec, 5);
    auto s1 = make_client_states(task.shards, init);
    auto s2 = make_client_states(task.shards, init);
    const auto a = run_training(task.spec, s1, init, task.validation, cfg);
    const auto b = run_training(task.spec, s2, init, task.validation, cfg);
    EXPECT_EQ(a.global, b.global);
    EXPECT_EQ(a.logs, b.logs);
    EXPECT_EQ(a.convergence_round, b.convergence_round);
    ASSERT_EQ(a.logs.size(), 3u);
    EXPECT_EQ(a.logs[0].participants, (std::vector<std::size_t>{0, 1, 2}));
    const auto csv = round_log_csv(a.logs, 3);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,val_error,loss_c0,loss_c1,loss_c2");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(FairUnlearn, AllRequestersMatchesTraining) {
    auto task = small_task(3, 6);
    auto cfg = quick_config();
    const auto init = nn::init_parameters(task.spec, 6);
    auto s1 = make_client_states(task.shards, init);
    auto s2 = make_client_states(task.shards, init);
    const auto fair = fair_unlearn_rounds(task.spec, init, s2, {{0, 1, 2}, 0}, task.validation, cfg);
    ASSERT_FALSE(fair.logs.empty());
    cfg.rounds_max = fair.logs.size();
    const auto trained = run_training(task.spec, s1, init, task.validation, cfg);
    EXPECT_EQ(fair.global, trained.global);
    EXPECT_EQ(fair.logs, trained.logs);
}

TEST(FairUnlearn, ZeroRoundsLeavesGlobal) {
    auto task = small_task(3, 7);
    auto cfg = quick_config();
    cfg.unlearn_rounds_max = 0;
    const auto init = nn::init_parameters(task.spec, 7);
    auto states = make_client_states(task.shards, init);
    EXPECT_EQ(fair_unlearn_rounds(task.spec, init, states, {{1}, 0}, task.validation, cfg).global, init);
}

TEST(FairUnlearn, NonRequestersDoNoWork) {
    auto task = small_task(9, 8);
    auto cfg = quick_config();
    const auto init = nn::init_parameters(task.spec, 8);
    auto states = make_client_states(task.shards, init);
    const auto trained = run_training(task.spec, states, init, task.validation, cfg);
    for (auto& s : states) s.cached = trained.global;
    std::vector<std::size_t> before;
    for (const auto& s : states) before.push_back(s.local_step_counter);

    states[1].shard = unlearn::delete_retrain_prepare(states[1].shard, 0);
    const auto r = fair_unlearn_rounds(task.spec, trained.global, states, {{1}, 0}, task.validation, cfg);
    ASSERT_FALSE(r.logs.empty());
    for (std::size_t k = 0; k < states.size(); ++k) {
        if (k == 1) {
            EXPECT_GT(states[k].local_step_counter, before[k]);
        } else {
            EXPECT_EQ(states[k].local_step_counter, before[k]) << "client " << k;
            EXPECT_EQ(states[k].cached, trained.global);
        }
    }
    for (const auto& log : r.logs) EXPECT_EQ(log.participants, (std::vector<std::size_t>{1}));
}

TEST(FairUnlearn, StopsOnceValidationErrorIsLow) {
    auto task = small_task(2, 9);
    auto cfg = quick_config();
    cfg.epsilon = 0.99;
    const auto init = nn::init_parameters(task.spec, 9);
    auto states = make_client_states(task.shards, init);
    const auto r = fair_unlearn_rounds(task.spec, init, states, {{0}, 0}, task.validation, cfg);
    EXPECT_EQ(r.logs.size(), 1u);
    EXPECT_EQ(r.convergence_round, 1u);
}

TEST(UnlearnRequestTest, Validation) {
    EXPECT_THROW((UnlearnRequest{{}, 0}.validate(3)), ValueError);
    EXPECT_THROW((UnlearnRequest{{3}, 0}.validate(3)), ValueError);
    EXPECT_NO_THROW((UnlearnRequest{{2}, 0}.validate(3)));
    EXPECT_TRUE((UnlearnRequest{{0, 2}, 0}.is_requesting(2)));
    EXPECT_FALSE((UnlearnRequest{{0, 2}, 0}.is_requesting(1)));
}

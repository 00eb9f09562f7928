#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <vector>

#include "fusim/error.hpp"
#include "fusim/eval/evalkit.hpp"
#include "fusim/nn/network.hpp"
#include "oracles.hpp"
#include "tiny_nets.hpp"

using namespace fusim;
using namespace fusim::eval;

namespace {

ClientAccuracy client(std::size_t id, std::string domain, std::map<std::size_t, ClassTally> classes) {
    return {id, std::move(domain), std::move(classes)};
}

EvaluationReport report(std::string strategy, std::vector<ClientAccuracy> clients) {
    return {std::move(strategy), 1, 7, std::move(clients)};
}

/// 10 clients over 9 classes with tallies derived from the indices.
EvaluationReport grid(const std::string& strategy, std::size_t shift) {
    std::vector<ClientAccuracy> cs;
    for (std::size_t k = 0; k < 10; ++k) {
        std::map<std::size_t, ClassTally> m;
        for (std::size_t c = 0; c < 9; ++c) m[c] = {(k * 3 + c * 5 + shift) % 16, 15 + (k + c) % 2};
        cs.push_back(client(k, k < 5 ? "a" : "b", m));
    }
    return report(strategy, cs);
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(ClassAccuracy, PerfectAndConstantPredictors) {
    // Identity logits: the predicted class is the argmax input coordinate.
    nn::ModelSpec spec{"id", {nn::LayerSpec::dense(2, 2)}, 2, {2}};
    auto params = nn::zero_parameters(spec);
    params.at("layer0.weight")[0] = 1.0;
    params.at("layer0.weight")[3] = 1.0;
    const std::vector<nn::LabeledExample> shard = {
        {nn::Tensor({2}, {1, 0}), 0}, {nn::Tensor({2}, {0, 1}), 1}, {nn::Tensor({2}, {0.9, 0.2}), 0}, {nn::Tensor({2}, {0.1, 0.3}), 1}};
    const auto perfect = per_class_accuracy(spec, params, shard);
    EXPECT_EQ(perfect, (std::map<std::size_t, double>{{0, 1.0}, {1, 1.0}}));

    auto constant = nn::zero_parameters(spec);
    constant.at("layer0.bias")[0] = 5.0;
    EXPECT_EQ(per_class_accuracy(spec, constant, shard), (std::map<std::size_t, double>{{0, 1.0}, {1, 0.0}}));
    EXPECT_THROW(per_class_accuracy(spec, params, {}), ValueError);
}

TEST(ClassAccuracy, MatchesHandTally) {
    const auto t = tiny::make_case(8);
    std::vector<nn::LabeledExample> shard;
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < 10; ++i) {
        nn::Tensor x(t.spec.input_shape);
        for (double& v : x.values()) v = u(rng);
        shard.push_back({x, i % t.spec.class_count});
    }
    std::map<std::size_t, ClassTally> expected;
    for (const auto& ex : shard) {
        const auto p = oracle::forward(t.spec, t.params, ex.image);
        const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        expected[ex.label].total += 1;
        expected[ex.label].correct += pred == ex.label;
    }
    EXPECT_EQ(class_tallies(t.spec, t.params, shard), expected);
    for (const auto& [c, acc] : per_class_accuracy(t.spec, t.params, shard))
        EXPECT_EQ(acc, static_cast<double>(expected[c].correct) / static_cast<double>(expected[c].total));
}

TEST(Report, PooledAndMacroAccuracy) {
    const auto r = report("x", {client(0, "a", {{0, {3, 4}}, {1, {1, 4}}}), client(1, "b", {{0, {10, 10}}})});
    EXPECT_DOUBLE_EQ(r.global_accuracy(), 14.0 / 18.0);
    EXPECT_DOUBLE_EQ(r.macro_accuracy(), 0.5 * (4.0 / 8.0 + 1.0));
    EXPECT_EQ(r.client(1).domain_id, "b");
    EXPECT_THROW(r.client(2), ValueError);
    EXPECT_THROW(r.client(1).class_accuracy(1), ValueError);

    // Pooled-count identity.
    const auto g = grid("x", 0);
    std::size_t correct = 0, total = 0;
    for (const auto& c : g.clients) {
        correct += c.overall().correct;
        total += c.overall().total;
    }
    EXPECT_EQ(g.global_accuracy(), static_cast<double>(correct) / static_cast<double>(total));
}

TEST(Evaluate, OneEntryPerShard) {
    const auto t = tiny::make_case(0);
    std::vector<TestShard> shards = {{"a", {{t.input, t.label}}}, {"b", {{t.input, t.label}, {t.input, t.label}}}};
    const auto r = evaluate(t.spec, t.params, shards, "Before", 3, 9);
    ASSERT_EQ(r.clients.size(), 2u);
    EXPECT_EQ(r.clients[1].client_id, 1u);
    EXPECT_EQ(r.clients[1].domain_id, "b");
    EXPECT_EQ(r.clients[1].classes.at(t.label).total, 2u);
    EXPECT_EQ(r.strategy, "Before");
    EXPECT_EQ(r.round, 3u);
    EXPECT_EQ(r.seed, 9u);
}

TEST(Metrics, IdenticalReportsGiveZero) {
    const auto g = grid("x", 0);
    const auto m = forgetting_metrics(g, g, {{0, 3}, 2});
    EXPECT_EQ(m, ForgettingMetrics{});
}

TEST(Metrics, PublishedForgetEfficacy) {
    const auto before = report("b", {client(0, "a", {{0, {9433, 10000}}, {1, {50, 100}}})});
    const auto after = report("a", {client(0, "a", {{0, {1655, 10000}}, {1, {50, 100}}})});
    const auto m = forgetting_metrics(before, after, {{0}, 0});
    EXPECT_NEAR(m.forget_efficacy, 77.78, 1e-9);
    EXPECT_EQ(m.collateral_retained, 0.0);
}

TEST(Metrics, HandComputedMeans) {
    // Client 0 requests class 0. Client 1 has no class-0 test examples.
    const auto before = report("b", {client(0, "a", {{0, {9, 10}}, {1, {8, 10}}, {2, {10, 10}}}),
                                     client(1, "b", {{1, {6, 10}}, {2, {7, 10}}}),
                                     client(2, "b", {{0, {8, 10}}, {1, {5, 10}}, {2, {9, 10}}})});
    const auto after = report("a", {client(0, "a", {{0, {1, 10}}, {1, {7, 10}}, {2, {10, 10}}}),
                                    client(1, "b", {{1, {6, 10}}, {2, {4, 10}}}),
                                    client(2, "b", {{0, {6, 10}}, {1, {5, 10}}, {2, {8, 10}}})});
    const auto m = forgetting_metrics(before, after, {{0}, 0});
    EXPECT_NEAR(m.forget_efficacy, 80.0, 1e-12);
    // Retained cells: (0,1) 10, (0,2) 0, (1,1) 0, (1,2) 30, (2,1) 0, (2,2) 10.
    EXPECT_NEAR(m.collateral_retained, 50.0 / 6.0, 1e-12);
    EXPECT_NEAR(m.collateral_nonrequesting_forget, 20.0, 1e-12);

    const auto back = forgetting_metrics(after, before, {{0}, 0});
    EXPECT_NEAR(back.forget_efficacy, -m.forget_efficacy, 1e-12);
    EXPECT_NEAR(back.collateral_retained, -m.collateral_retained, 1e-12);
    EXPECT_NEAR(back.collateral_nonrequesting_forget, -m.collateral_nonrequesting_forget, 1e-12);
}

TEST(Metrics, AntisymmetricOnGrid) {
    const auto a = grid("a", 0);
    const auto b = grid("b", 5);
    const fed::UnlearnRequest req{{1, 4}, 3};
    const auto ab = forgetting_metrics(a, b, req);
    const auto ba = forgetting_metrics(b, a, req);
    EXPECT_NEAR(ab.forget_efficacy, -ba.forget_efficacy, 1e-12);
    EXPECT_NEAR(ab.collateral_retained, -ba.collateral_retained, 1e-12);
    EXPECT_NEAR(ab.collateral_nonrequesting_forget, -ba.collateral_nonrequesting_forget, 1e-12);
}

TEST(Metrics, MismatchedCoverageThrows) {
    const auto a = grid("a", 0);
    auto fewer_clients = a;
    fewer_clients.clients.pop_back();
    EXPECT_THROW(forgetting_metrics(a, fewer_clients, {{0}, 0}), ValueError);
    auto fewer_classes = a;
    fewer_classes.clients[2].classes.erase(4);
    EXPECT_THROW(forgetting_metrics(a, fewer_classes, {{0}, 0}), ValueError);
}

TEST(Emit, CsvRowsAndFormatting) {
    const auto g = grid("FedCCCU", 0);
    const auto csv = report_to_csv(g);
    EXPECT_EQ(count_lines(csv), 91u);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "client,domain,class,FedCCCU");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    // client 0, class 0: 0 of 15 correct
    EXPECT_EQ(line, "0,a,0,0.00");
    std::getline(lines, line);
    // client 0, class 1: 5 of 16 correct
    EXPECT_EQ(line, "0,a,1,31.25");

    const auto two = report("Delete", {client(0, "a", {{0, {2, 3}}})});
    EXPECT_EQ(report_to_csv(two), "client,domain,class,Delete\n0,a,0,66.67\n");
}

TEST(Emit, JsonRoundTripAndByteStability) {
    const auto g = grid("Relabel", 3);
    const ForgettingMetrics m{12.5, 1.25, -0.5};
    const auto dir = std::filesystem::temp_directory_path() / "fusim_emit_test";
    std::filesystem::create_directories(dir);
    emit_report(g, m, dir / "a.json", ReportFormat::json);
    emit_report(g, m, dir / "b.json", ReportFormat::json);
    emit_report(g, std::nullopt, dir / "a.csv", ReportFormat::csv);
    emit_report(g, std::nullopt, dir / "b.csv", ReportFormat::csv);
    EXPECT_EQ(read_text_file(dir / "a.json"), read_text_file(dir / "b.json"));
    EXPECT_EQ(read_text_file(dir / "a.csv"), read_text_file(dir / "b.csv"));
    EXPECT_EQ(report_from_json(read_text_file(dir / "a.json")), g);
    EXPECT_EQ(report_to_json(report_from_json(report_to_json(g, m)), m), report_to_json(g, m));
    std::filesystem::remove_all(dir);
    EXPECT_THROW(read_text_file(dir / "missing.json"), IoError);
    EXPECT_THROW(report_from_json("{}"), Error);
}

TEST(Emit, ComparisonAndPlotTables) {
    const auto before = grid("Before", 0);
    const std::vector<EvaluationReport> after = {grid("Delete", 1), grid("FedCCCU", 2)};
    const auto cmp = comparison_csv(before, after);
    EXPECT_EQ(cmp.substr(0, cmp.find('\n')), "client,domain,class,Before,Delete,FedCCCU");
    EXPECT_EQ(count_lines(cmp), 91u);
    const auto plot = plot_data_csv(before, after);
    EXPECT_EQ(count_lines(plot), 3u);
    EXPECT_EQ(plot.substr(0, plot.find('\n')), "strategy,global_before,global_after,macro_before,macro_after");

    auto short_report = grid("Bad", 0);
    short_report.clients.pop_back();
    const std::vector<EvaluationReport> bad = {short_report};
    EXPECT_THROW(comparison_csv(before, bad), ValueError);
}

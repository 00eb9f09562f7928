#include "fusim/eval/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fusim/error.hpp"
#include "fusim/nn/network.hpp"
#include "fusim/text.hpp"

namespace fusim::eval {

double ClassTally::accuracy() const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

ClassTally& ClassTally::operator+=(const ClassTally& other) noexcept {
    correct += other.correct;
    total += other.total;
    return *this;
}

ClassTally ClientAccuracy::overall() const noexcept {
    ClassTally sum;
    for (const auto& [cls, tally] : classes) sum += tally;
    return sum;
}

double ClientAccuracy::class_accuracy(std::size_t class_id) const {
    const auto it = classes.find(class_id);
    if (it == classes.end()) {
        throw ValueError("client " + std::to_string(client_id) + " has no test examples of class " +
                         std::to_string(class_id));
    }
    return it->second.accuracy();
}

double EvaluationReport::global_accuracy() const noexcept {
    ClassTally pooled;
    for (const auto& c : clients) pooled += c.overall();
    return pooled.accuracy();
}

double EvaluationReport::macro_accuracy() const noexcept {
    if (clients.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& c : clients) sum += c.accuracy();
    return sum / static_cast<double>(clients.size());
}

const ClientAccuracy& EvaluationReport::client(std::size_t client_id) const {
    for (const auto& c : clients) {
        if (c.client_id == client_id) return c;
    }
    throw ValueError("report has no client " + std::to_string(client_id));
}

std::map<std::size_t, ClassTally> class_tallies(const ModelSpec& spec, const ParameterSet& params,
                                               std::span<const LabeledExample> shard) {
    std::map<std::size_t, ClassTally> tallies;
    for (const auto& ex : shard) {
        auto& t = tallies[ex.label];
        ++t.total;
        if (nn::predict_class(spec, params, ex.image) == ex.label) ++t.correct;
    }
    return tallies;
}

std::map<std::size_t, double> per_class_accuracy(const ModelSpec& spec, const ParameterSet& params,
                                                 std::span<const LabeledExample> shard) {
    if (shard.empty()) throw ValueError("per_class_accuracy: empty shard");
    std::map<std::size_t, double> out;
    for (const auto& [cls, tally] : class_tallies(spec, params, shard)) out[cls] = tally.accuracy();
    return out;
}

EvaluationReport evaluate(const ModelSpec& spec, const ParameterSet& params, std::span<const TestShard> test_shards,
                          const std::string& strategy, std::size_t round, std::uint64_t seed) {
    EvaluationReport report{strategy, round, seed, {}};
    for (std::size_t k = 0; k < test_shards.size(); ++k) {
        report.clients.push_back({k, test_shards[k].domain_id, class_tallies(spec, params, test_shards[k].examples)});
    }
    return report;
}

namespace {

void check_coverage(const EvaluationReport& a, const EvaluationReport& b) {
    if (a.clients.size() != b.clients.size()) {
        throw ValueError("reports cover " + std::to_string(a.clients.size()) + " and " +
                         std::to_string(b.clients.size()) + " clients");
    }
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
        const auto& x = a.clients[i];
        const auto& y = b.clients[i];
        if (x.client_id != y.client_id) throw ValueError("reports list different clients");
        const bool same_classes =
            std::equal(x.classes.begin(), x.classes.end(), y.classes.begin(), y.classes.end(),
                       [](const auto& p, const auto& q) { return p.first == q.first; });
        if (!same_classes) throw ValueError("client " + std::to_string(x.client_id) + " covers different classes");
    }
}

double mean_or_zero(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

}  // namespace

ForgettingMetrics forgetting_metrics(const EvaluationReport& before, const EvaluationReport& after,
                                     const fed::UnlearnRequest& request) {
    check_coverage(before, after);
    double forget_sum = 0.0, retained_sum = 0.0, other_sum = 0.0;
    std::size_t forget_n = 0, retained_n = 0, other_n = 0;
    for (std::size_t i = 0; i < before.clients.size(); ++i) {
        const auto& b = before.clients[i];
        const auto& a = after.clients[i];
        const bool requesting = request.is_requesting(b.client_id);
        for (const auto& [cls, tally] : b.classes) {
            const double drop = 100.0 * (tally.accuracy() - a.classes.at(cls).accuracy());
            if (cls != request.forget_class) {
                retained_sum += drop;
                ++retained_n;
            } else if (requesting) {
                forget_sum += drop;
                ++forget_n;
            } else {
                other_sum += drop;
                ++other_n;
            }
        }
    }
    return {mean_or_zero(forget_sum, forget_n), mean_or_zero(retained_sum, retained_n),
            mean_or_zero(other_sum, other_n)};
}

std::string report_to_csv(const EvaluationReport& report) {
    std::string out = "client,domain,class," + report.strategy + "\n";
    for (const auto& c : report.clients) {
        for (const auto& [cls, tally] : c.classes) {
            out += std::to_string(c.client_id) + "," + c.domain_id + "," + std::to_string(cls) + "," +
                   format_fixed(100.0 * tally.accuracy(), 2) + "\n";
        }
    }
    return out;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson metrics_json(const ForgettingMetrics& m) {
    return ojson{{"forget_efficacy", m.forget_efficacy},
                 {"collateral_retained", m.collateral_retained},
                 {"collateral_nonrequesting_forget", m.collateral_nonrequesting_forget}};
}

}  // namespace

std::string report_to_json(const EvaluationReport& report, const std::optional<ForgettingMetrics>& metrics) {
    ojson j;
    j["strategy"] = report.strategy;
    j["round"] = report.round;
    j["seed"] = report.seed;
    j["global_accuracy"] = report.global_accuracy();
    j["macro_accuracy"] = report.macro_accuracy();
    auto clients = ojson::array();
    for (const auto& c : report.clients) {
        auto classes = ojson::array();
        for (const auto& [cls, tally] : c.classes) {
            classes.push_back(ojson{{"class", cls},
                                    {"correct", tally.correct},
                                    {"total", tally.total},
                                    {"accuracy", tally.accuracy()}});
        }
        clients.push_back(ojson{{"client", c.client_id},
                                {"domain", c.domain_id},
                                {"accuracy", c.accuracy()},
                                {"classes", std::move(classes)}});
    }
    j["clients"] = std::move(clients);
    j["metrics"] = metrics ? metrics_json(*metrics) : ojson(nullptr);
    return j.dump(1) + "\n";
}

EvaluationReport report_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EvaluationReport report;
        report.strategy = j.at("strategy").get<std::string>();
        report.round = j.at("round").get<std::size_t>();
        report.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& c : j.at("clients")) {
            ClientAccuracy client{c.at("client").get<std::size_t>(), c.at("domain").get<std::string>(), {}};
            for (const auto& cls : c.at("classes")) {
                ClassTally t{cls.at("correct").get<std::size_t>(), cls.at("total").get<std::size_t>()};
                if (t.correct > t.total) throw ValueError("report: correct exceeds total");
                client.classes[cls.at("class").get<std::size_t>()] = t;
            }
            report.clients.push_back(std::move(client));
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("report JSON: ") + e.what());
    }
}

std::string metrics_to_json(const ForgettingMetrics& metrics) { return metrics_json(metrics).dump(1) + "\n"; }

void emit_report(const EvaluationReport& report, const std::optional<ForgettingMetrics>& metrics,
                 const std::filesystem::path& path, ReportFormat format) {
    write_text_file(path, format == ReportFormat::csv ? report_to_csv(report) : report_to_json(report, metrics));
}

std::string comparison_csv(const EvaluationReport& before, std::span<const EvaluationReport> after) {
    for (const auto& r : after) check_coverage(before, r);
    std::string out = "client,domain,class,Before";
    for (const auto& r : after) out += "," + r.strategy;
    out += "\n";
    for (std::size_t i = 0; i < before.clients.size(); ++i) {
        const auto& c = before.clients[i];
        for (const auto& [cls, tally] : c.classes) {
            out += std::to_string(c.client_id) + "," + c.domain_id + "," + std::to_string(cls) + "," +
                   format_fixed(100.0 * tally.accuracy(), 2);
            for (const auto& r : after) out += "," + format_fixed(100.0 * r.clients[i].classes.at(cls).accuracy(), 2);
            out += "\n";
        }
    }
    return out;
}

std::string plot_data_csv(const EvaluationReport& before, std::span<const EvaluationReport> after) {
    std::string out = "strategy,global_before,global_after,macro_before,macro_after\n";
    for (const auto& r : after) {
        out += r.strategy + "," + format_fixed(100.0 * before.global_accuracy(), 2) + "," +
               format_fixed(100.0 * r.global_accuracy(), 2) + "," + format_fixed(100.0 * before.macro_accuracy(), 2) +
               "," + format_fixed(100.0 * r.macro_accuracy(), 2) + "\n";
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fusim::eval

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusim/fed/fedsim.hpp"
#include "fusim/nn/model.hpp"

namespace fusim::eval {

using nn::LabeledExample;
using nn::ModelSpec;
using nn::ParameterSet;

struct ClassTally {
    std::size_t correct = 0;
    std::size_t total = 0;

    double accuracy() const noexcept;
    ClassTally& operator+=(const ClassTally& other) noexcept;

    friend bool operator==(const ClassTally&, const ClassTally&) = default;
};

struct ClientAccuracy {
    std::size_t client_id = 0;
    std::string domain_id;
    std::map<std::size_t, ClassTally> classes;  // classes absent from the test shard are omitted

    ClassTally overall() const noexcept;
    double accuracy() const noexcept { return overall().accuracy(); }
    /// Throws ValueError when the client has no test examples of `class_id`.
    double class_accuracy(std::size_t class_id) const;

    friend bool operator==(const ClientAccuracy&, const ClientAccuracy&) = default;
};

struct EvaluationReport {
    std::string strategy;
    std::size_t round = 0;
    std::uint64_t seed = 0;
    std::vector<ClientAccuracy> clients;

    /// Pooled correct / pooled total over every client's test shard.
    double global_accuracy() const noexcept;
    /// Unweighted mean of per-client accuracies.
    double macro_accuracy() const noexcept;
    const ClientAccuracy& client(std::size_t client_id) const;

    friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

std::map<std::size_t, ClassTally> class_tallies(const ModelSpec& spec, const ParameterSet& params,
                                               std::span<const LabeledExample> shard);

/// Argmax accuracy per class present in the shard. Throws on an empty shard.
std::map<std::size_t, double> per_class_accuracy(const ModelSpec& spec, const ParameterSet& params,
                                                 std::span<const LabeledExample> shard);

struct TestShard {
    std::string domain_id;
    std::vector<LabeledExample> examples;
};

EvaluationReport evaluate(const ModelSpec& spec, const ParameterSet& params, std::span<const TestShard> test_shards,
                          const std::string& strategy, std::size_t round, std::uint64_t seed);

/// Accuracy drops in percentage points, before minus after.
struct ForgettingMetrics {
    double forget_efficacy = 0.0;                  // forget class, requesting clients
    double collateral_retained = 0.0;              // retained classes, all clients
    double collateral_nonrequesting_forget = 0.0;  // forget class, other clients

    friend bool operator==(const ForgettingMetrics&, const ForgettingMetrics&) = default;
};

/// Means are taken over (client, class) cells that exist in the reports; a
/// client without test examples of the forget class does not contribute to
/// the forget-class means. Throws ValueError when the reports cover different
/// clients or classes.
ForgettingMetrics forgetting_metrics(const EvaluationReport& before, const EvaluationReport& after,
                                     const fed::UnlearnRequest& request);

enum class ReportFormat { csv, json };

/// client,domain,class,<strategy>; one row per (client, class), percentages with two decimals.
std::string report_to_csv(const EvaluationReport& report);
std::string report_to_json(const EvaluationReport& report, const std::optional<ForgettingMetrics>& metrics = {});
EvaluationReport report_from_json(const std::string& text);
std::string metrics_to_json(const ForgettingMetrics& metrics);

void emit_report(const EvaluationReport& report, const std::optional<ForgettingMetrics>& metrics,
                 const std::filesystem::path& path, ReportFormat format);

/// client,domain,class,Before,<route>...; every report must cover the same cells as `before`.
std::string comparison_csv(const EvaluationReport& before, std::span<const EvaluationReport> after);

/// strategy,global_before,global_after,macro_before,macro_after (percent).
std::string plot_data_csv(const EvaluationReport& before, std::span<const EvaluationReport> after);

/// Writes `content` to `path` in binary mode; throws IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace fusim::eval

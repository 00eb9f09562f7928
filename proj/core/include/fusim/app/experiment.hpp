#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusim/app/config.hpp"
#include "fusim/cccu/fedcccu.hpp"
#include "fusim/data/partition.hpp"
#include "fusim/eval/evalkit.hpp"
#include "fusim/fed/fedsim.hpp"

namespace fusim::app {

/// Raised by a pipeline stage; the message starts with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Everything derived from the config before training. Pure function of the config.
struct PreparedData {
    nn::ModelSpec spec;
    std::vector<data::DomainDataset> train_domains;  // what the plan indexes
    data::PartitionPlan plan;
    std::vector<nn::LabeledExample> validation;  // pooled over domains
    std::vector<eval::TestShard> test_shards;    // one per client: its domain's held-out split
};

PreparedData prepare_data(const ExperimentConfig& config);

struct UnlearnOutcome {
    Route route = Route::none;
    nn::ParameterSet params;
    std::vector<fed::RoundLog> logs;          // delete / relabel only
    std::optional<cccu::Audit> audit;         // fedcccu only
    std::vector<nn::UnitId> zeroed;           // zeroing / fedcccu
    std::vector<std::size_t> step_counters;   // per client, counted during unlearning only
};

/// In-memory pipeline over one config; the stage functions below persist it.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config);
    Experiment(ExperimentConfig config, PreparedData data);

    const ExperimentConfig& config() const noexcept { return config_; }
    const PreparedData& data() const noexcept { return data_; }
    const nn::ModelSpec& spec() const noexcept { return data_.spec; }

    nn::ParameterSet initial_parameters() const;
    std::vector<fed::Shard> shards() const;
    fed::TrainingResult train() const;
    UnlearnOutcome unlearn(const nn::ParameterSet& global, Route route) const;
    eval::EvaluationReport evaluate(const nn::ParameterSet& params, const std::string& strategy,
                                    std::size_t round) const;

private:
    ExperimentConfig config_;
    PreparedData data_;
};

// Stages. Each writes into <out>/.<stage>.tmp and renames it to <out>/<stage>
// when complete; later stages read the artifacts of earlier ones.
//   partition           plan.json, clients.csv, config.ini
//   train               global.ckpt, round_log.csv, training.json, report.json
//   unlearn-<route>     global.ckpt, unlearn.json, [round_log.csv], [audit.json]
//   evaluate-<route>    report-before.json, report-after.json, report.csv, metrics.json

void stage_partition(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_train(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_unlearn(const ExperimentConfig& config, const std::filesystem::path& out);
void stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& out);

/// All four stages in order.
void run_experiment(const ExperimentConfig& config, const std::filesystem::path& out);

/// Configs must differ only in their route. Trains once, runs every route and
/// writes <out>/compare/{comparison.csv, plot.csv, metrics.csv}.
void compare_routes(std::span<const ExperimentConfig> configs, const std::filesystem::path& out);

std::string stage_dir_name(const std::string& stage, Route route);

}  // namespace fusim::app

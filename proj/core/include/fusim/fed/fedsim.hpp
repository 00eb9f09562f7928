#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusim/nn/example.hpp"
#include "fusim/nn/model.hpp"

namespace fusim::fed {

using nn::LabeledExample;
using nn::ModelSpec;
using nn::ParameterSet;
using Shard = std::vector<LabeledExample>;

struct FedConfig {
    std::size_t rounds_max = 50;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double epsilon = 0.15;  // validation-error threshold
    std::uint64_t seed = 0;
    std::size_t unlearn_rounds_max = 20;

    void validate() const;
};

struct ClientState {
    std::size_t client_id = 0;
    Shard shard;
    ParameterSet cached;  // last submission
    std::size_t local_step_counter = 0;

    std::size_t sample_count() const noexcept { return shard.size(); }
};

/// Builds one state per shard, ids 0..K-1, each cache set to `initial`.
std::vector<ClientState> make_client_states(std::vector<Shard> shards, const ParameterSet& initial);

struct RoundLog {
    std::size_t round = 0;  // 1-based within its phase
    double validation_error = 0.0;
    std::vector<std::size_t> participants;
    std::vector<double> train_loss;  // aligned with participants

    friend bool operator==(const RoundLog&, const RoundLog&) = default;
};

struct UnlearnRequest {
    std::vector<std::size_t> requesting_clients;
    std::size_t forget_class = 0;

    /// Throws ValueError on an empty or out-of-range request.
    void validate(std::size_t client_count) const;
    bool is_requesting(std::size_t client_id) const;
};

struct LocalResult {
    ParameterSet params;
    double mean_loss = 0.0;
    std::size_t steps = 0;
};

/// Mini-batch SGD over the client's shard starting from `global`. Batch order
/// is a pure function of (config.seed, round, epoch), so clients holding equal
/// shards produce equal updates. Increments the client's step counter once per
/// gradient computation.
LocalResult local_train(const ModelSpec& spec, ClientState& state, const ParameterSet& global, const FedConfig& config,
                        std::size_t round);

struct WeightedUpdate {
    std::size_t client_id = 0;
    const ParameterSet* params = nullptr;
    double weight = 0.0;  // n_k
};

/// Weighted mean with weights n_k / sum(n), reduced in ascending client id as a
/// running mean: m += (n_k / N_so_far) * (x_k - m). Equal inputs therefore
/// reproduce the input exactly.
ParameterSet aggregate(std::span<const WeightedUpdate> updates);

/// n_k / sum(n) in ascending client id order.
std::vector<double> aggregation_weights(std::span<const WeightedUpdate> updates);

double validation_error(const ModelSpec& spec, const ParameterSet& params, std::span<const LabeledExample> validation);

struct TrainingResult {
    ParameterSet global;
    std::vector<RoundLog> logs;
    std::optional<std::size_t> convergence_round;
};

/// FedAvg: each round every client trains locally from the global model and the
/// server aggregates. Runs rounds_max rounds; the convergence round is the first
/// whose validation error is below epsilon.
TrainingResult run_training(const ModelSpec& spec, std::vector<ClientState>& states, const ParameterSet& initial,
                            std::span<const LabeledExample> validation, const FedConfig& config);

/// Unlearning rounds under the fair protocol: only requesting clients train;
/// every other client contributes its cached parameters with its own n_k.
/// Stops at the first round with validation error below epsilon, or after
/// unlearn_rounds_max rounds.
TrainingResult fair_unlearn_rounds(const ModelSpec& spec, const ParameterSet& global, std::vector<ClientState>& states,
                                   const UnlearnRequest& request, std::span<const LabeledExample> validation,
                                   const FedConfig& config);

/// round,val_error,loss_c0,...,loss_c{K-1}; empty cells for clients that sat a round out.
std::string round_log_csv(std::span<const RoundLog> logs, std::size_t client_count);

}  // namespace fusim::fed

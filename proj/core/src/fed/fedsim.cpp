#include "fusim/fed/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "fusim/error.hpp"
#include "fusim/nn/network.hpp"
#include "fusim/random.hpp"
#include "fusim/text.hpp"

namespace fusim::fed {

void FedConfig::validate() const {
    if (rounds_max < 1) throw ValueError("rounds_max must be >= 1");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValueError("learning_rate must be > 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ValueError("epsilon must lie in (0, 1)");
}

std::vector<ClientState> make_client_states(std::vector<Shard> shards, const ParameterSet& initial) {
    std::vector<ClientState> states;
    states.reserve(shards.size());
    for (std::size_t k = 0; k < shards.size(); ++k) states.push_back({k, std::move(shards[k]), initial, 0});
    return states;
}

void UnlearnRequest::validate(std::size_t client_count) const {
    if (requesting_clients.empty()) throw ValueError("unlearning request names no client");
    for (std::size_t id : requesting_clients) {
        if (id >= client_count) {
            throw ValueError("requesting client " + std::to_string(id) + " does not exist (" +
                             std::to_string(client_count) + " clients)");
        }
    }
}

bool UnlearnRequest::is_requesting(std::size_t client_id) const {
    return std::find(requesting_clients.begin(), requesting_clients.end(), client_id) != requesting_clients.end();
}

LocalResult local_train(const ModelSpec& spec, ClientState& state, const ParameterSet& global, const FedConfig& config,
                        std::size_t round) {
    if (state.shard.empty()) throw ValueError("client " + std::to_string(state.client_id) + " has an empty shard");
    if (config.batch_size == 0) throw ValueError("batch_size must be >= 1");
    LocalResult result{global, 0.0, 0};
    double loss_sum = 0.0;
    std::vector<std::size_t> order(state.shard.size());
    std::vector<LabeledExample> batch;
    for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, {0xBA7C4, round, epoch}));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(state.shard[order[i]]);
            auto [loss, grad] = nn::loss_and_gradient(spec, result.params, batch);
            ++state.local_step_counter;
            if (!std::isfinite(loss) || !grad.all_finite()) {
                throw Error("client " + std::to_string(state.client_id) + ", round " + std::to_string(round) +
                            ", epoch " + std::to_string(epoch) + ", step " + std::to_string(result.steps) +
                            ": non-finite loss " + format_shortest(loss) + " (learning rate " +
                            format_shortest(config.learning_rate) + ")");
            }
            result.params = nn::sgd_step(result.params, grad, config.learning_rate);
            loss_sum += loss;
            ++result.steps;
        }
    }
    result.mean_loss = result.steps > 0 ? loss_sum / static_cast<double>(result.steps) : 0.0;
    return result;
}

ParameterSet aggregate(std::span<const WeightedUpdate> updates) {
    if (updates.empty()) throw ValueError("aggregate: no updates");
    std::vector<const WeightedUpdate*> ordered;
    for (const auto& u : updates) {
        if (u.params == nullptr) throw ValueError("aggregate: null update");
        if (!(u.weight >= 0.0) || !std::isfinite(u.weight)) throw ValueError("aggregate: weights must be finite and >= 0");
        if (!u.params->same_layout(*updates.front().params)) {
            throw ShapeError("aggregate: update of client " + std::to_string(u.client_id) + " has a different layout");
        }
        ordered.push_back(&u);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const WeightedUpdate* a, const WeightedUpdate* b) { return a->client_id < b->client_id; });
    const double total = std::accumulate(ordered.begin(), ordered.end(), 0.0,
                                         [](double acc, const WeightedUpdate* u) { return acc + u->weight; });
    if (!(total > 0.0)) throw ValueError("aggregate: total weight is zero");

    auto first = std::find_if(ordered.begin(), ordered.end(), [](const WeightedUpdate* u) { return u->weight > 0.0; });
    ParameterSet mean = *(*first)->params;
    double seen = (*first)->weight;
    for (auto it = std::next(first); it != ordered.end(); ++it) {
        const WeightedUpdate& u = **it;
        if (u.weight == 0.0) continue;
        seen += u.weight;
        const double share = u.weight / seen;
        for (std::size_t e = 0; e < mean.size(); ++e) {
            auto dst = mean.entries()[e].value.values();
            const auto src = u.params->entries()[e].value.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += share * (src[i] - dst[i]);
        }
    }
    return mean;
}

std::vector<double> aggregation_weights(std::span<const WeightedUpdate> updates) {
    std::vector<WeightedUpdate> ordered(updates.begin(), updates.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const WeightedUpdate& a, const WeightedUpdate& b) { return a.client_id < b.client_id; });
    double total = 0.0;
    for (const auto& u : ordered) total += u.weight;
    if (!(total > 0.0)) throw ValueError("aggregate: total weight is zero");
    std::vector<double> weights;
    for (const auto& u : ordered) weights.push_back(u.weight / total);
    return weights;
}

double validation_error(const ModelSpec& spec, const ParameterSet& params, std::span<const LabeledExample> validation) {
    if (validation.empty()) throw ValueError("validation set is empty");
    std::size_t wrong = 0;
    for (const auto& ex : validation) {
        if (nn::predict_class(spec, params, ex.image) != ex.label) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(validation.size());
}

namespace {

/// One round: `trains(k)` clients train from `global`, the rest submit their cache.
RoundLog run_round(const ModelSpec& spec, std::vector<ClientState>& states, ParameterSet& global,
                   std::span<const LabeledExample> validation, const FedConfig& config, std::size_t round,
                   const std::function<bool(std::size_t)>& trains) {
    RoundLog log;
    log.round = round;
    for (auto& s : states) {
        if (!trains(s.client_id)) continue;
        auto local = local_train(spec, s, global, config, round);
        s.cached = std::move(local.params);
        log.participants.push_back(s.client_id);
        log.train_loss.push_back(local.mean_loss);
    }
    std::vector<WeightedUpdate> updates;
    updates.reserve(states.size());
    for (const auto& s : states) updates.push_back({s.client_id, &s.cached, static_cast<double>(s.sample_count())});
    global = aggregate(updates);
    log.validation_error = validation_error(spec, global, validation);
    return log;
}

void check_states(const ModelSpec& spec, const std::vector<ClientState>& states) {
    if (states.empty()) throw ValueError("federation has no clients");
    for (std::size_t k = 0; k < states.size(); ++k) {
        if (states[k].client_id != k) throw ValueError("client states must carry ids 0..K-1 in order");
        nn::check_parameters(spec, states[k].cached);
    }
}

}  // namespace

TrainingResult run_training(const ModelSpec& spec, std::vector<ClientState>& states, const ParameterSet& initial,
                            std::span<const LabeledExample> validation, const FedConfig& config) {
    nn::check_parameters(spec, initial);
    TrainingResult result{initial, {}, std::nullopt};
    if (config.rounds_max == 0) return result;
    config.validate();
    check_states(spec, states);
    for (std::size_t t = 1; t <= config.rounds_max; ++t) {
        result.logs.push_back(run_round(spec, states, result.global, validation, config, t, [](std::size_t) { return true; }));
        if (!result.convergence_round && result.logs.back().validation_error < config.epsilon) {
            result.convergence_round = t;
        }
    }
    return result;
}

TrainingResult fair_unlearn_rounds(const ModelSpec& spec, const ParameterSet& global, std::vector<ClientState>& states,
                                   const UnlearnRequest& request, std::span<const LabeledExample> validation,
                                   const FedConfig& config) {
    nn::check_parameters(spec, global);
    request.validate(states.size());
    TrainingResult result{global, {}, std::nullopt};
    if (config.unlearn_rounds_max == 0) return result;
    config.validate();
    check_states(spec, states);
    for (std::size_t t = 1; t <= config.unlearn_rounds_max; ++t) {
        result.logs.push_back(run_round(spec, states, result.global, validation, config, t,
                                        [&](std::size_t id) { return request.is_requesting(id); }));
        if (result.logs.back().validation_error < config.epsilon) {
            result.convergence_round = t;
            break;
        }
    }
    return result;
}

std::string round_log_csv(std::span<const RoundLog> logs, std::size_t client_count) {
    std::string out = "round,val_error";
    for (std::size_t k = 0; k < client_count; ++k) out += ",loss_c" + std::to_string(k);
    out += "\n";
    for (const auto& log : logs) {
        out += std::to_string(log.round) + "," + format_fixed(log.validation_error, 6);
        std::vector<std::string> cells(client_count);
        for (std::size_t i = 0; i < log.participants.size(); ++i) {
            if (log.participants[i] < client_count) cells[log.participants[i]] = format_fixed(log.train_loss[i], 6);
        }
        for (const auto& c : cells) out += "," + c;
        out += "\n";
    }
    return out;
}

}  // namespace fusim::fed

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusim/fed/fedsim.hpp"
#include "fusim/nn/model.hpp"
#include "fusim/nn/network.hpp"

namespace fusim::cccu {

using nn::LabeledExample;
using nn::ModelSpec;
using nn::ParameterSet;
using nn::Tensor;
using nn::UnitId;

struct SensitivityRecord {
    UnitId unit;
    std::size_t class_id = 0;
    double score = 0.0;

    friend bool operator==(const SensitivityRecord&, const SensitivityRecord&) = default;
};

/// What one client uploads: per class, at most N records sorted by descending score.
struct SensitivityReport {
    std::size_t client_id = 0;
    std::map<std::size_t, std::vector<SensitivityRecord>> classes;

    /// nullptr when the client sent no list for `class_id`.
    const std::vector<SensitivityRecord>* records(std::size_t class_id) const;

    friend bool operator==(const SensitivityReport&, const SensitivityReport&) = default;
};

struct DominanceEntry {
    UnitId unit;
    double s_forget = 0.0;
    double s_max_other = 0.0;
    double ratio = 0.0;  // s_max_other / s_forget

    friend bool operator==(const DominanceEntry&, const DominanceEntry&) = default;
};

struct Selection {
    std::vector<UnitId> units;
    bool truncated = false;  // fewer entries than requested

    friend bool operator==(const Selection&, const Selection&) = default;
};

// ---------------------------------------------------------------------------
// Client side

/// Integrated-gradient attribution of `unit` to P(target | input), as a
/// Riemann sum over `steps` points: (beta / m) * sum_{j=1..m} dP/da at a = (j/m) beta,
/// where beta is the unit's unmodified activation.
double attribute_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input, std::size_t target_class,
                      const UnitId& unit, std::size_t steps);

/// attribute_unit for many units of one input, sharing a single forward pass.
std::vector<double> attribute_units(const nn::ForwardCache& cache, std::size_t target_class,
                                    std::span<const UnitId> units, std::size_t steps);

/// Mean attribution over `shard` for every unit in `units` (all hidden units
/// when empty), in the order of `units`.
std::vector<SensitivityRecord> sensitivity_scores(const ModelSpec& spec, const ParameterSet& params,
                                                  std::span<const LabeledExample> shard, std::size_t target_class,
                                                  std::size_t steps, std::span<const UnitId> units = {});

/// Keeps the N highest scores per class, descending; ties by (layer, unit).
SensitivityReport top_n_report(std::span<const SensitivityRecord> scores, std::size_t client_id, std::size_t top_n);

// ---------------------------------------------------------------------------
// Server side: consumes reports only.

/// One entry per unit of the forget client's forget-class list with a
/// positive score. s_max_other is the largest score of that unit in any other
/// client's forget-class list, 0 when it appears in none.
std::vector<DominanceEntry> compute_dominance(std::span<const SensitivityReport> reports, std::size_t forget_client,
                                              std::size_t forget_class);

/// Ascending ratio; ties by descending s_forget, then (layer, unit). Returns the first n.
Selection rank_select(std::span<const DominanceEntry> entries, std::size_t n);

/// Zeroes incoming weights and bias of every selected unit. Idempotent.
ParameterSet apply_unlearning(const ModelSpec& spec, const ParameterSet& params, std::span<const UnitId> units);

// ---------------------------------------------------------------------------
// Orchestration

struct CccuConfig {
    std::size_t steps = 20;                 // Riemann steps m
    std::size_t top_n = 32;                 // records uploaded per class, N
    std::optional<std::size_t> select_n;    // units zeroed, n; defaults to N / 2
    std::size_t probe_cap = 256;            // examples per client and class
    bool score_all_classes = false;
    std::uint64_t seed = 0;

    std::size_t selection_budget() const { return select_n.value_or(top_n / 2); }
    void validate() const;
};

struct Audit {
    std::size_t forget_class = 0;
    std::vector<std::size_t> requesting_clients;
    std::vector<SensitivityReport> reports;
    std::vector<DominanceEntry> entries;
    Selection selection;

    friend bool operator==(const Audit&, const Audit&) = default;
};

struct CccuResult {
    ParameterSet params;
    Audit audit;
};

/// Client phase: report of one client for the configured classes, each class
/// scored over the client's examples of that class (at most probe_cap, a
/// seeded subsample beyond that).
SensitivityReport client_report(const ModelSpec& spec, const ParameterSet& global, const fed::ClientState& client,
                                std::size_t forget_class, const CccuConfig& config);

/// Every client reports, the server ranks dominance and zeroes the selected
/// units. With several requesting clients each is scored against the
/// non-requesting clients and a unit keeps its lowest ratio.
CccuResult fedcccu_pipeline(const ModelSpec& spec, const ParameterSet& global,
                            std::span<const fed::ClientState> clients, const fed::UnlearnRequest& request,
                            const CccuConfig& config);

/// [{"client", "class", "records": [{"layer", "unit", "score"}]}, ...]
std::string reports_to_json(std::span<const SensitivityReport> reports);
/// {"forget_class", "requesting_clients", "reports": [...], "entries": [...], "selected": [...], "truncated"}
std::string audit_to_json(const Audit& audit);
Audit audit_from_json(const std::string& text);

}  // namespace fusim::cccu

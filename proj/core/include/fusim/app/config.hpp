#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusim/cccu/fedcccu.hpp"
#include "fusim/data/datasets.hpp"
#include "fusim/fed/fedsim.hpp"
#include "fusim/unlearn/routes.hpp"

namespace fusim::app {

enum class Route { none, delete_retrain, relabel, zeroing, fedcccu };

/// "none", "delete", "relabel", "zeroing", "fedcccu".
std::string to_string(Route route);
/// Column title used in reports: "None", "Delete", "Relabel", "Zeroing", "FedCCCU".
std::string display_name(Route route);
std::optional<Route> parse_route(const std::string& text);

struct DomainConfig {
    enum class Source { synthetic, idx };

    std::string id;
    Source source = Source::synthetic;
    data::SyntheticDomainSpec synthetic;
    std::filesystem::path images;
    std::filesystem::path labels;
    std::size_t limit = 0;
};

struct PartitionConfig {
    std::string strategy = "real_noniid";  // iid | dirichlet | real_noniid
    std::vector<std::size_t> groups;       // clients per domain, real_noniid
    std::size_t clients = 0;               // iid | dirichlet
    double alpha = 100.0;
    data::Resolution working_resolution{16, 16};
    double validation_fraction = 0.1;
    double test_fraction = 0.1;

    std::size_t client_count() const;
};

struct UnlearnConfig {
    Route route = Route::none;
    std::vector<std::size_t> requesting{0};
    std::size_t forget_class = 0;
    std::optional<std::size_t> top_m;  // naive zeroing, per candidate layer
    unlearn::ZeroingScope zeroing_scope = unlearn::ZeroingScope::hidden;
    cccu::CccuConfig cccu;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::string model = "SmallMLP";
    std::size_t hidden = 128;
    std::vector<DomainConfig> domains;
    PartitionConfig partition;
    fed::FedConfig federation;
    UnlearnConfig unlearn;

    fed::UnlearnRequest request() const { return {unlearn.requesting, unlearn.forget_class}; }
};

/// Parses the sectioned key = value format documented in configs/README.md and
/// fills every default. Relative IDX paths resolve against `base_dir`. Throws
/// ConfigError carrying the offending line for syntax errors, unknown sections
/// or keys, range violations and missing files.
ExperimentConfig validate_config(const std::string& text, const std::filesystem::path& base_dir = {});

/// Reads and validates a config file; paths resolve against its directory.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text of a validated config; parsing it yields the same config.
std::string render_config(const ExperimentConfig& config);

}  // namespace fusim::app

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusim/data/datasets.hpp"

namespace fusim::data {

struct ClientAssignment {
    std::string domain_id;
    std::vector<std::size_t> indices;

    std::size_t count() const noexcept { return indices.size(); }
    friend bool operator==(const ClientAssignment&, const ClientAssignment&) = default;
};

/// Which examples of which domain each client holds. Index lists are disjoint
/// within a domain and every client holds at least one example.
struct PartitionPlan {
    std::vector<ClientAssignment> clients;
    std::string strategy;
    std::uint64_t seed = 0;
    std::optional<double> alpha;

    std::size_t client_count() const noexcept { return clients.size(); }
    std::vector<std::size_t> sample_counts() const;
    std::size_t total() const;
    /// Throws ValueError on an empty client or an index used twice in one domain.
    void validate() const;

    friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

/// Shuffled indices split into K parts whose sizes differ by at most one.
PartitionPlan partition_iid(const DomainDataset& dataset, std::size_t clients, std::uint64_t seed);

/// Label skew: per label, client shares are drawn from Dirichlet(alpha, ..., alpha).
/// A draw that leaves a client empty is retried with the next seed, up to 100 times.
PartitionPlan partition_dirichlet(const DomainDataset& dataset, std::size_t clients, double alpha,
                                  std::uint64_t seed);

/// Labels shared by every domain and, per domain, a map from original label to
/// its position in `shared_labels`.
struct LabelAlignment {
    std::vector<std::size_t> shared_labels;
    std::vector<std::map<std::size_t, std::size_t>> remap;
};

LabelAlignment label_intersection(std::span<const DomainDataset> domains);
/// Drops examples outside the shared set and relabels the rest contiguously.
std::vector<DomainDataset> apply_alignment(std::span<const DomainDataset> domains, const LabelAlignment& alignment);

struct RealNoniidTask {
    std::vector<DomainDataset> domains;  // aligned and resized; plan indices refer to these
    LabelAlignment alignment;
    PartitionPlan plan;
};

/// Group g of `group_sizes` holds only domain g, split among its clients by
/// partition_dirichlet(alpha). Every domain is first reduced to the shared
/// labels and resized to `working_resolution`.
RealNoniidTask partition_real_noniid(std::span<const DomainDataset> domains, std::span<const std::size_t> group_sizes,
                                     Resolution working_resolution, double alpha, std::uint64_t seed);

/// {"clients": [{"domain", "indices", "count"}], "seed", "strategy", "alpha"}
std::string plan_to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const std::string& text);

/// Copies each client's examples out of `domains` (looked up by domain_id).
std::vector<std::vector<LabeledExample>> materialize(const PartitionPlan& plan,
                                                     std::span<const DomainDataset> domains);

}  // namespace fusim::data

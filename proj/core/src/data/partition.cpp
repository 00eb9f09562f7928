#include "fusim/data/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "fusim/random.hpp"

namespace fusim::data {

std::vector<std::size_t> PartitionPlan::sample_counts() const {
    std::vector<std::size_t> counts;
    counts.reserve(clients.size());
    for (const auto& c : clients) counts.push_back(c.count());
    return counts;
}

std::size_t PartitionPlan::total() const {
    std::size_t n = 0;
    for (const auto& c : clients) n += c.count();
    return n;
}

void PartitionPlan::validate() const {
    if (clients.empty()) throw ValueError("partition plan has no clients");
    std::map<std::string, std::set<std::size_t>> used;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        if (clients[k].indices.empty()) throw ValueError("client " + std::to_string(k) + " has no examples");
        auto& seen = used[clients[k].domain_id];
        for (std::size_t i : clients[k].indices) {
            if (!seen.insert(i).second) {
                throw ValueError("index " + std::to_string(i) + " of domain " + clients[k].domain_id +
                                 " is assigned twice");
            }
        }
    }
}

PartitionPlan partition_iid(const DomainDataset& dataset, std::size_t clients, std::uint64_t seed) {
    if (clients == 0) throw ValueError("partition_iid: need at least one client");
    if (clients > dataset.size()) {
        throw ValueError("partition_iid: " + std::to_string(clients) + " clients but only " +
                         std::to_string(dataset.size()) + " examples");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x11D}));
    std::shuffle(order.begin(), order.end(), rng);

    PartitionPlan plan;
    plan.strategy = "iid";
    plan.seed = seed;
    const std::size_t base = dataset.size() / clients;
    const std::size_t extra = dataset.size() % clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
        const std::size_t take = base + (k < extra ? 1 : 0);
        ClientAssignment a{dataset.domain_id, {order.begin() + static_cast<std::ptrdiff_t>(pos),
                                               order.begin() + static_cast<std::ptrdiff_t>(pos + take)}};
        std::sort(a.indices.begin(), a.indices.end());
        plan.clients.push_back(std::move(a));
        pos += take;
    }
    return plan;
}

namespace {

constexpr int kDirichletRetries = 100;

std::vector<double> dirichlet(std::size_t k, double alpha, Rng& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(k);
    double sum = 0.0;
    for (double& v : p) {
        v = gamma(rng);
        sum += v;
    }
    if (!(sum > 0.0)) {
        // every draw underflowed: all mass on one client
        std::fill(p.begin(), p.end(), 0.0);
        p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
        return p;
    }
    for (double& v : p) v /= sum;
    return p;
}

std::optional<PartitionPlan> try_dirichlet(const DomainDataset& dataset, std::size_t clients, double alpha,
                                           std::uint64_t draw_seed) {
    std::vector<std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t l = dataset.examples[i].label;
        if (l >= by_label.size()) by_label.resize(l + 1);
        by_label[l].push_back(i);
    }
    std::vector<std::vector<std::size_t>> assigned(clients);
    for (std::size_t l = 0; l < by_label.size(); ++l) {
        auto& idx = by_label[l];
        if (idx.empty()) continue;
        Rng rng(derive_seed(draw_seed, {0xD1, l}));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto shares = dirichlet(clients, alpha, rng);
        double cumulative = 0.0;
        std::size_t start = 0;
        for (std::size_t k = 0; k < clients; ++k) {
            cumulative += shares[k];
            std::size_t stop = k + 1 == clients
                                   ? idx.size()
                                   : static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(idx.size())));
            stop = std::clamp(stop, start, idx.size());
            assigned[k].insert(assigned[k].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                               idx.begin() + static_cast<std::ptrdiff_t>(stop));
            start = stop;
        }
    }
    PartitionPlan plan;
    plan.strategy = "dirichlet";
    plan.alpha = alpha;
    for (auto& a : assigned) {
        if (a.empty()) return std::nullopt;
        std::sort(a.begin(), a.end());
        plan.clients.push_back({dataset.domain_id, std::move(a)});
    }
    return plan;
}

}  // namespace

PartitionPlan partition_dirichlet(const DomainDataset& dataset, std::size_t clients, double alpha,
                                  std::uint64_t seed) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValueError("partition_dirichlet: alpha must be > 0");
    if (clients == 0) throw ValueError("partition_dirichlet: need at least one client");
    if (clients > dataset.size()) {
        throw ValueError("partition_dirichlet: cannot give " + std::to_string(clients) + " clients a sample from " +
                         std::to_string(dataset.size()) + " examples");
    }
    for (int attempt = 0; attempt <= kDirichletRetries; ++attempt) {
        if (auto plan = try_dirichlet(dataset, clients, alpha, seed + static_cast<std::uint64_t>(attempt))) {
            plan->seed = seed;
            return *std::move(plan);
        }
    }
    throw ValueError("partition_dirichlet: no draw gave every client an example after " +
                     std::to_string(kDirichletRetries) + " retries");
}

LabelAlignment label_intersection(std::span<const DomainDataset> domains) {
    if (domains.empty()) throw ValueError("label_intersection: no domains");
    std::vector<std::size_t> shared = domains.front().labels();
    for (const auto& d : domains.subspan(1)) {
        const auto labels = d.labels();
        std::vector<std::size_t> next;
        std::set_intersection(shared.begin(), shared.end(), labels.begin(), labels.end(), std::back_inserter(next));
        shared = std::move(next);
    }
    if (shared.empty()) throw ValueError("label_intersection: domains share no label");
    LabelAlignment alignment;
    alignment.shared_labels = shared;
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t i = 0; i < shared.size(); ++i) remap[shared[i]] = i;
    alignment.remap.assign(domains.size(), remap);
    return alignment;
}

std::vector<DomainDataset> apply_alignment(std::span<const DomainDataset> domains, const LabelAlignment& alignment) {
    if (alignment.remap.size() != domains.size()) throw ValueError("alignment covers a different number of domains");
    std::vector<DomainDataset> out;
    for (std::size_t d = 0; d < domains.size(); ++d) {
        DomainDataset aligned = domains[d];
        aligned.examples.clear();
        aligned.class_count = alignment.shared_labels.size();
        for (const auto& ex : domains[d].examples) {
            const auto it = alignment.remap[d].find(ex.label);
            if (it == alignment.remap[d].end()) continue;
            aligned.examples.push_back({ex.image, it->second});
        }
        out.push_back(std::move(aligned));
    }
    return out;
}

RealNoniidTask partition_real_noniid(std::span<const DomainDataset> domains, std::span<const std::size_t> group_sizes,
                                     Resolution working_resolution, double alpha, std::uint64_t seed) {
    if (domains.size() != group_sizes.size()) {
        throw ValueError("partition_real_noniid: " + std::to_string(domains.size()) + " domains but " +
                         std::to_string(group_sizes.size()) + " group sizes");
    }
    std::set<std::string> ids;
    for (const auto& d : domains) {
        if (!ids.insert(d.domain_id).second) throw ValueError("duplicate domain id " + d.domain_id);
    }
    RealNoniidTask task;
    task.alignment = label_intersection(domains);
    for (auto& d : apply_alignment(domains, task.alignment)) task.domains.push_back(resize(d, working_resolution));

    task.plan.strategy = "real_noniid";
    task.plan.seed = seed;
    task.plan.alpha = alpha;
    for (std::size_t g = 0; g < task.domains.size(); ++g) {
        if (group_sizes[g] == 0) throw ValueError("group " + std::to_string(g) + " has no clients");
        const auto group = partition_dirichlet(task.domains[g], group_sizes[g], alpha, derive_seed(seed, {0x6A0, g}));
        for (const auto& c : group.clients) task.plan.clients.push_back(c);
    }
    return task;
}

std::string plan_to_json(const PartitionPlan& plan) {
    nlohmann::ordered_json j;
    auto clients = nlohmann::ordered_json::array();
    for (const auto& c : plan.clients) {
        nlohmann::ordered_json entry;
        entry["domain"] = c.domain_id;
        entry["indices"] = c.indices;
        entry["count"] = c.count();
        clients.push_back(std::move(entry));
    }
    j["clients"] = std::move(clients);
    j["seed"] = plan.seed;
    j["strategy"] = plan.strategy;
    j["alpha"] = plan.alpha ? nlohmann::ordered_json(*plan.alpha) : nlohmann::ordered_json(nullptr);
    return j.dump(1) + "\n";
}

PartitionPlan plan_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        PartitionPlan plan;
        for (const auto& c : j.at("clients")) {
            ClientAssignment a{c.at("domain").get<std::string>(), c.at("indices").get<std::vector<std::size_t>>()};
            if (a.count() != c.at("count").get<std::size_t>()) throw ValueError("client count does not match indices");
            plan.clients.push_back(std::move(a));
        }
        plan.seed = j.at("seed").get<std::uint64_t>();
        plan.strategy = j.at("strategy").get<std::string>();
        if (!j.at("alpha").is_null()) plan.alpha = j.at("alpha").get<double>();
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("partition plan JSON: ") + e.what());
    }
}

std::vector<std::vector<LabeledExample>> materialize(const PartitionPlan& plan,
                                                     std::span<const DomainDataset> domains) {
    std::vector<std::vector<LabeledExample>> shards;
    for (const auto& c : plan.clients) {
        const auto it = std::find_if(domains.begin(), domains.end(),
                                     [&](const DomainDataset& d) { return d.domain_id == c.domain_id; });
        if (it == domains.end()) throw ValueError("plan refers to unknown domain " + c.domain_id);
        std::vector<LabeledExample> shard;
        shard.reserve(c.count());
        for (std::size_t i : c.indices) {
            if (i >= it->size()) throw ValueError("plan index " + std::to_string(i) + " outside domain " + c.domain_id);
            shard.push_back(it->examples[i]);
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

}  // namespace fusim::data

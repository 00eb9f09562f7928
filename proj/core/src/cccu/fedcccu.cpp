#include "fusim/cccu/fedcccu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "fusim/error.hpp"
#include "fusim/random.hpp"
#include "fusim/unlearn/routes.hpp"

namespace fusim::cccu {

const std::vector<SensitivityRecord>* SensitivityReport::records(std::size_t class_id) const {
    const auto it = classes.find(class_id);
    return it == classes.end() ? nullptr : &it->second;
}

double attribute_unit(const ModelSpec& spec, const ParameterSet& params, const Tensor& input, std::size_t target_class,
                      const UnitId& unit, std::size_t steps) {
    spec.check_unit(unit);
    const nn::ForwardCache cache(spec, params, input);
    const UnitId units[] = {unit};
    return attribute_units(cache, target_class, units, steps).front();
}

std::vector<double> attribute_units(const nn::ForwardCache& cache, std::size_t target_class,
                                    std::span<const UnitId> units, std::size_t steps) {
    if (steps < 1) throw ValueError("attribution needs at least one Riemann step");
    if (target_class >= cache.spec().class_count) throw ValueError("target class out of range");
    std::vector<double> out;
    out.reserve(units.size());
    const double m = static_cast<double>(steps);
    for (const UnitId& unit : units) {
        const double beta = cache.unit_beta(unit);
        if (beta == 0.0) {
            out.push_back(0.0);
            continue;
        }
        double sum = 0.0;
        for (std::size_t j = 1; j <= steps; ++j) {
            sum += cache.scaled_unit_gradient(target_class, unit, static_cast<double>(j) / m);
        }
        out.push_back(beta / m * sum);
    }
    return out;
}

std::vector<SensitivityRecord> sensitivity_scores(const ModelSpec& spec, const ParameterSet& params,
                                                  std::span<const LabeledExample> shard, std::size_t target_class,
                                                  std::size_t steps, std::span<const UnitId> units) {
    if (shard.empty()) throw ValueError("sensitivity_scores: empty shard");
    std::vector<UnitId> all;
    if (units.empty()) {
        all = spec.units(spec.hidden_layers());
        units = all;
    }
    for (const auto& u : units) spec.check_unit(u);
    std::vector<double> sum(units.size(), 0.0);
    for (const auto& ex : shard) {
        const nn::ForwardCache cache(spec, params, ex.image);
        const auto att = attribute_units(cache, target_class, units, steps);
        for (std::size_t i = 0; i < units.size(); ++i) sum[i] += att[i];
    }
    std::vector<SensitivityRecord> records;
    records.reserve(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
        records.push_back({units[i], target_class, sum[i] / static_cast<double>(shard.size())});
    }
    return records;
}

SensitivityReport top_n_report(std::span<const SensitivityRecord> scores, std::size_t client_id, std::size_t top_n) {
    if (top_n < 1) throw ValueError("top_n_report: N must be >= 1");
    SensitivityReport report{client_id, {}};
    for (const auto& r : scores) {
        if (!std::isfinite(r.score)) throw ValueError("non-finite sensitivity score for unit " + nn::to_string(r.unit));
        report.classes[r.class_id].push_back(r);
    }
    for (auto& [cls, list] : report.classes) {
        std::sort(list.begin(), list.end(), [](const SensitivityRecord& a, const SensitivityRecord& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.unit < b.unit;
        });
        if (list.size() > top_n) list.resize(top_n);
    }
    return report;
}

std::vector<DominanceEntry> compute_dominance(std::span<const SensitivityReport> reports, std::size_t forget_client,
                                              std::size_t forget_class) {
    const auto forget_report = std::find_if(reports.begin(), reports.end(),
                                            [&](const SensitivityReport& r) { return r.client_id == forget_client; });
    if (forget_report == reports.end()) throw ValueError("no report from forget client " + std::to_string(forget_client));
    const auto* own = forget_report->records(forget_class);
    if (own == nullptr) {
        throw ValueError("forget client " + std::to_string(forget_client) + " reported no list for class " +
                         std::to_string(forget_class));
    }
    std::vector<DominanceEntry> entries;
    for (const auto& rec : *own) {
        if (!(rec.score > 0.0)) continue;
        double max_other = 0.0;
        for (const auto& report : reports) {
            if (report.client_id == forget_client) continue;
            const auto* list = report.records(forget_class);
            if (list == nullptr) continue;
            for (const auto& other : *list) {
                if (other.unit == rec.unit) max_other = std::max(max_other, other.score);
            }
        }
        entries.push_back({rec.unit, rec.score, max_other, max_other / rec.score});
    }
    return entries;
}

Selection rank_select(std::span<const DominanceEntry> entries, std::size_t n) {
    std::vector<DominanceEntry> sorted(entries.begin(), entries.end());
    std::sort(sorted.begin(), sorted.end(), [](const DominanceEntry& a, const DominanceEntry& b) {
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        if (a.s_forget != b.s_forget) return a.s_forget > b.s_forget;
        return a.unit < b.unit;
    });
    Selection selection;
    selection.truncated = n > sorted.size();
    const std::size_t take = std::min(n, sorted.size());
    for (std::size_t i = 0; i < take; ++i) selection.units.push_back(sorted[i].unit);
    return selection;
}

ParameterSet apply_unlearning(const ModelSpec& spec, const ParameterSet& params, std::span<const UnitId> units) {
    return unlearn::zero_units(spec, params, units);
}

void CccuConfig::validate() const {
    if (steps < 1) throw ValueError("Riemann steps must be >= 1");
    if (top_n < 1) throw ValueError("top_n must be >= 1");
    if (probe_cap < 1) throw ValueError("probe_cap must be >= 1");
}

SensitivityReport client_report(const ModelSpec& spec, const ParameterSet& global, const fed::ClientState& client,
                                std::size_t forget_class, const CccuConfig& config) {
    std::vector<std::size_t> classes;
    if (config.score_all_classes) {
        classes.resize(spec.class_count);
        std::iota(classes.begin(), classes.end(), 0);
    } else {
        classes.push_back(forget_class);
    }
    const auto units = spec.units(spec.hidden_layers());
    std::vector<SensitivityRecord> scores;
    for (std::size_t cls : classes) {
        std::vector<LabeledExample> probes;
        for (const auto& ex : client.shard) {
            if (ex.label == cls) probes.push_back(ex);
        }
        if (probes.empty()) continue;
        if (probes.size() > config.probe_cap) {
            Rng rng(derive_seed(config.seed, {0x9808E, client.client_id, cls}));
            std::shuffle(probes.begin(), probes.end(), rng);
            probes.resize(config.probe_cap);
        }
        auto s = sensitivity_scores(spec, global, probes, cls, config.steps, units);
        scores.insert(scores.end(), s.begin(), s.end());
    }
    return top_n_report(scores, client.client_id, config.top_n);
}

CccuResult fedcccu_pipeline(const ModelSpec& spec, const ParameterSet& global,
                            std::span<const fed::ClientState> clients, const fed::UnlearnRequest& request,
                            const CccuConfig& config) {
    config.validate();
    request.validate(clients.size());
    CccuResult result;
    result.audit.forget_class = request.forget_class;
    result.audit.requesting_clients = request.requesting_clients;
    for (const auto& c : clients) {
        result.audit.reports.push_back(client_report(spec, global, c, request.forget_class, config));
    }

    // server side from here on: reports only
    std::map<UnitId, DominanceEntry> merged;
    for (std::size_t forget_client : request.requesting_clients) {
        std::vector<SensitivityReport> view;
        for (const auto& r : result.audit.reports) {
            if (r.client_id == forget_client || !request.is_requesting(r.client_id)) view.push_back(r);
        }
        for (const auto& e : compute_dominance(view, forget_client, request.forget_class)) {
            auto [it, inserted] = merged.emplace(e.unit, e);
            if (!inserted && (e.ratio < it->second.ratio ||
                              (e.ratio == it->second.ratio && e.s_forget > it->second.s_forget))) {
                it->second = e;
            }
        }
    }
    for (const auto& [unit, e] : merged) result.audit.entries.push_back(e);
    result.audit.selection = rank_select(result.audit.entries, config.selection_budget());
    result.params = apply_unlearning(spec, global, result.audit.selection.units);
    return result;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson unit_json(const UnitId& u) { return ojson{{"layer", u.layer}, {"unit", u.unit}}; }

ojson reports_json(std::span<const SensitivityReport> reports) {
    auto out = ojson::array();
    for (const auto& r : reports) {
        for (const auto& [cls, list] : r.classes) {
            auto records = ojson::array();
            for (const auto& rec : list) {
                records.push_back(ojson{{"layer", rec.unit.layer}, {"unit", rec.unit.unit}, {"score", rec.score}});
            }
            out.push_back(ojson{{"client", r.client_id}, {"class", cls}, {"records", std::move(records)}});
        }
    }
    return out;
}

}  // namespace

std::string reports_to_json(std::span<const SensitivityReport> reports) { return reports_json(reports).dump(1) + "\n"; }

std::string audit_to_json(const Audit& audit) {
    ojson j;
    j["forget_class"] = audit.forget_class;
    j["requesting_clients"] = audit.requesting_clients;
    j["reports"] = reports_json(audit.reports);
    auto entries = ojson::array();
    for (const auto& e : audit.entries) {
        entries.push_back(ojson{{"layer", e.unit.layer},
                                {"unit", e.unit.unit},
                                {"s_forget", e.s_forget},
                                {"s_max_other", e.s_max_other},
                                {"r", e.ratio}});
    }
    j["entries"] = std::move(entries);
    auto selected = ojson::array();
    for (const auto& u : audit.selection.units) selected.push_back(unit_json(u));
    j["selected"] = std::move(selected);
    j["truncated"] = audit.selection.truncated;
    return j.dump(1) + "\n";
}

Audit audit_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        Audit audit;
        audit.forget_class = j.at("forget_class").get<std::size_t>();
        audit.requesting_clients = j.at("requesting_clients").get<std::vector<std::size_t>>();
        for (const auto& r : j.at("reports")) {
            const auto client = r.at("client").get<std::size_t>();
            const auto cls = r.at("class").get<std::size_t>();
            auto it = std::find_if(audit.reports.begin(), audit.reports.end(),
                                   [&](const SensitivityReport& s) { return s.client_id == client; });
            if (it == audit.reports.end()) {
                audit.reports.push_back({client, {}});
                it = std::prev(audit.reports.end());
            }
            auto& list = it->classes[cls];
            for (const auto& rec : r.at("records")) {
                list.push_back({{rec.at("layer").get<std::size_t>(), rec.at("unit").get<std::size_t>()},
                                cls,
                                rec.at("score").get<double>()});
            }
        }
        for (const auto& e : j.at("entries")) {
            audit.entries.push_back({{e.at("layer").get<std::size_t>(), e.at("unit").get<std::size_t>()},
                                     e.at("s_forget").get<double>(),
                                     e.at("s_max_other").get<double>(),
                                     e.at("r").get<double>()});
        }
        for (const auto& u : j.at("selected")) {
            audit.selection.units.push_back({u.at("layer").get<std::size_t>(), u.at("unit").get<std::size_t>()});
        }
        audit.selection.truncated = j.at("truncated").get<bool>();
        return audit;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("audit JSON: ") + e.what());
    }
}

}  // namespace fusim::cccu

#include "fusim/app/experiment.hpp"

#include <algorithm>
#include <system_error>

#include <nlohmann/json.hpp>

#include "fusim/nn/checkpoint.hpp"
#include "fusim/random.hpp"
#include "fusim/text.hpp"
#include "fusim/unlearn/routes.hpp"

namespace fusim::app {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

PreparedData prepare_data(const ExperimentConfig& config) {
    const auto& p = config.partition;
    std::vector<data::DomainDataset> raw;
    for (std::size_t i = 0; i < config.domains.size(); ++i) {
        const auto& d = config.domains[i];
        if (d.source == DomainConfig::Source::synthetic) {
            raw.push_back(data::synth_domain(d.synthetic, derive_seed(config.seed, {0xD0A1, i})));
        } else {
            raw.push_back(data::load_idx(d.images, d.labels, d.id, d.limit));
        }
    }
    const auto alignment = data::label_intersection(raw);
    auto aligned = data::apply_alignment(raw, alignment);

    PreparedData out;
    std::vector<data::DomainDataset> train_parts;
    std::vector<data::DomainDataset> test_parts;
    for (std::size_t i = 0; i < aligned.size(); ++i) {
        auto split = data::split_holdout(data::resize(aligned[i], p.working_resolution), p.validation_fraction,
                                         p.test_fraction, derive_seed(config.seed, {0x5917, i}));
        out.validation.insert(out.validation.end(), split.validation.examples.begin(),
                              split.validation.examples.end());
        if (split.test.size() == 0) throw ValueError("domain " + split.test.domain_id + " has an empty test split");
        train_parts.push_back(std::move(split.train));
        test_parts.push_back(std::move(split.test));
    }
    if (out.validation.empty()) throw ValueError("validation split is empty; raise validation_fraction");

    const std::uint64_t plan_seed = derive_seed(config.seed, {0x9A27});
    if (p.strategy == "real_noniid") {
        auto task = data::partition_real_noniid(train_parts, p.groups, p.working_resolution, p.alpha, plan_seed);
        out.train_domains = std::move(task.domains);
        out.plan = std::move(task.plan);
    } else {
        out.plan = p.strategy == "iid" ? data::partition_iid(train_parts.front(), p.clients, plan_seed)
                                       : data::partition_dirichlet(train_parts.front(), p.clients, p.alpha, plan_seed);
        out.train_domains = std::move(train_parts);
    }
    out.plan.validate();

    const std::size_t classes = alignment.shared_labels.size();
    if (config.unlearn.forget_class >= classes) {
        throw ValueError("forget_class " + std::to_string(config.unlearn.forget_class) + " is outside the " +
                         std::to_string(classes) + " shared classes");
    }
    const nn::Shape input{aligned.front().channels, p.working_resolution.height, p.working_resolution.width};
    out.spec = config.model == "SmallMLP" ? nn::small_mlp(input, classes, config.hidden) : nn::small_cnn(input, classes);

    for (const auto& c : out.plan.clients) {
        const auto it = std::find_if(test_parts.begin(), test_parts.end(),
                                     [&](const data::DomainDataset& d) { return d.domain_id == c.domain_id; });
        out.test_shards.push_back({c.domain_id, it->examples});
    }
    return out;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)), data_(prepare_data(config_)) {}

Experiment::Experiment(ExperimentConfig config, PreparedData data)
    : config_(std::move(config)), data_(std::move(data)) {}

nn::ParameterSet Experiment::initial_parameters() const {
    return nn::init_parameters(data_.spec, derive_seed(config_.seed, {0x1A17}));
}

std::vector<fed::Shard> Experiment::shards() const { return data::materialize(data_.plan, data_.train_domains); }

fed::TrainingResult Experiment::train() const {
    const auto initial = initial_parameters();
    auto states = fed::make_client_states(shards(), initial);
    return fed::run_training(data_.spec, states, initial, data_.validation, config_.federation);
}

UnlearnOutcome Experiment::unlearn(const nn::ParameterSet& global, Route route) const {
    const auto request = config_.request();
    auto shards = this->shards();
    request.validate(shards.size());
    UnlearnOutcome out;
    out.route = route;
    out.params = global;
    out.step_counters.assign(shards.size(), 0);

    switch (route) {
        case Route::none:
            break;
        case Route::delete_retrain:
        case Route::relabel: {
            for (std::size_t k : request.requesting_clients) {
                shards[k] = route == Route::delete_retrain
                                ? unlearn::delete_retrain_prepare(shards[k], request.forget_class)
                                : unlearn::relabel_poison_prepare(shards[k], request.forget_class,
                                                                  data_.spec.class_count,
                                                                  derive_seed(config_.seed, {0x2E1A, k}));
            }
            auto states = fed::make_client_states(std::move(shards), global);
            auto result = fed::fair_unlearn_rounds(data_.spec, global, states, request, data_.validation,
                                                   config_.federation);
            out.params = std::move(result.global);
            out.logs = std::move(result.logs);
            for (const auto& s : states) out.step_counters[s.client_id] = s.local_step_counter;
            break;
        }
        case Route::zeroing: {
            std::vector<nn::LabeledExample> probes;
            for (std::size_t k : request.requesting_clients) probes.insert(probes.end(), shards[k].begin(), shards[k].end());
            auto result = unlearn::naive_zeroing(data_.spec, global, request.forget_class, probes, config_.unlearn.top_m,
                                                 config_.unlearn.zeroing_scope);
            out.params = std::move(result.params);
            out.zeroed = std::move(result.selected);
            break;
        }
        case Route::fedcccu: {
            const auto states = fed::make_client_states(std::move(shards), global);
            auto result = cccu::fedcccu_pipeline(data_.spec, global, states, request, config_.unlearn.cccu);
            out.params = std::move(result.params);
            out.zeroed = result.audit.selection.units;
            out.audit = std::move(result.audit);
            break;
        }
    }
    return out;
}

eval::EvaluationReport Experiment::evaluate(const nn::ParameterSet& params, const std::string& strategy,
                                            std::size_t round) const {
    return eval::evaluate(data_.spec, params, data_.test_shards, strategy, round, config_.seed);
}

std::string stage_dir_name(const std::string& stage, Route route) { return stage + "-" + to_string(route); }

namespace {

/// Collects a stage's files in a hidden temporary directory; commit() swaps it into place.
class StageDir {
public:
    StageDir(const fs::path& out, const std::string& name)
        : final_(out / name), tmp_(out / ("." + name + ".tmp")) {
        fs::create_directories(out);
        fs::remove_all(tmp_);
        fs::create_directories(tmp_);
    }

    fs::path operator/(const std::string& file) const { return tmp_ / file; }

    void commit() {
        fs::remove_all(final_);
        fs::rename(tmp_, final_);
    }

private:
    fs::path final_;
    fs::path tmp_;
};

template <typename Body>
void run_stage(const std::string& stage, Body&& body) {
    try {
        body();
    } catch (const StageError&) {
        throw;
    } catch (const fs::filesystem_error& e) {
        throw StageError(stage, e.what());
    } catch (const Error& e) {
        throw StageError(stage, e.what());
    }
}

fs::path require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) throw IoError("missing " + path.string() + "; run the " + producer + " stage first");
    return path;
}

/// Data plus the on-disk plan, which must agree with the config.
Experiment load_experiment(const ExperimentConfig& config, const fs::path& out) {
    auto data = prepare_data(config);
    const auto plan = data::plan_from_json(eval::read_text_file(require(out / "partition" / "plan.json", "partition")));
    if (!(plan == data.plan)) throw ValueError(out.string() + "/partition/plan.json was produced by a different config");
    return Experiment(config, std::move(data));
}

ojson units_json(std::span<const nn::UnitId> units) {
    auto a = ojson::array();
    for (const auto& u : units) a.push_back(ojson{{"layer", u.layer}, {"unit", u.unit}});
    return a;
}

std::size_t training_rounds(const fs::path& out) {
    const auto j = nlohmann::json::parse(eval::read_text_file(require(out / "train" / "training.json", "train")));
    return j.at("rounds").get<std::size_t>();
}

}  // namespace

void stage_partition(const ExperimentConfig& config, const fs::path& out) {
    run_stage("partition", [&] {
        const auto data = prepare_data(config);
        StageDir dir(out, "partition");
        eval::write_text_file(dir / "plan.json", data::plan_to_json(data.plan));
        std::string csv = "client,domain,count";
        for (std::size_t c = 0; c < data.spec.class_count; ++c) csv += ",class_" + std::to_string(c);
        csv += "\n";
        const auto shards = data::materialize(data.plan, data.train_domains);
        for (std::size_t k = 0; k < shards.size(); ++k) {
            std::vector<std::size_t> hist(data.spec.class_count, 0);
            for (const auto& ex : shards[k]) ++hist[ex.label];
            csv += std::to_string(k) + "," + data.plan.clients[k].domain_id + "," + std::to_string(shards[k].size());
            for (std::size_t n : hist) csv += "," + std::to_string(n);
            csv += "\n";
        }
        eval::write_text_file(dir / "clients.csv", csv);
        eval::write_text_file(dir / "config.ini", render_config(config));
        dir.commit();
    });
}

void stage_train(const ExperimentConfig& config, const fs::path& out) {
    run_stage("train", [&] {
        const auto exp = load_experiment(config, out);
        const auto result = exp.train();
        StageDir dir(out, "train");
        nn::save_checkpoint(result.global, dir / "global.ckpt");
        eval::write_text_file(dir / "round_log.csv", fed::round_log_csv(result.logs, exp.data().plan.client_count()));
        ojson j;
        j["rounds"] = result.logs.size();
        j["convergence_round"] = result.convergence_round ? ojson(*result.convergence_round) : ojson(nullptr);
        j["final_validation_error"] = result.logs.empty() ? ojson(nullptr) : ojson(result.logs.back().validation_error);
        eval::write_text_file(dir / "training.json", j.dump(1) + "\n");
        const auto report = exp.evaluate(result.global, "Before", result.logs.size());
        eval::emit_report(report, std::nullopt, dir / "report.json", eval::ReportFormat::json);
        dir.commit();
    });
}

void stage_unlearn(const ExperimentConfig& config, const fs::path& out) {
    const Route route = config.unlearn.route;
    const std::string name = stage_dir_name("unlearn", route);
    run_stage(name, [&] {
        const auto exp = load_experiment(config, out);
        const auto global = nn::load_checkpoint(require(out / "train" / "global.ckpt", "train"));
        nn::check_parameters(exp.spec(), global);
        const auto outcome = exp.unlearn(global, route);
        StageDir dir(out, name);
        nn::save_checkpoint(outcome.params, dir / "global.ckpt");
        ojson j;
        j["route"] = to_string(route);
        j["forget_class"] = config.unlearn.forget_class;
        j["requesting_clients"] = config.unlearn.requesting;
        j["rounds"] = outcome.logs.size();
        j["zeroed"] = units_json(outcome.zeroed);
        j["step_counters"] = outcome.step_counters;
        eval::write_text_file(dir / "unlearn.json", j.dump(1) + "\n");
        if (route == Route::delete_retrain || route == Route::relabel) {
            eval::write_text_file(dir / "round_log.csv",
                                  fed::round_log_csv(outcome.logs, exp.data().plan.client_count()));
        }
        if (outcome.audit) eval::write_text_file(dir / "audit.json", cccu::audit_to_json(*outcome.audit));
        dir.commit();
    });
}

void stage_evaluate(const ExperimentConfig& config, const fs::path& out) {
    const Route route = config.unlearn.route;
    const std::string name = stage_dir_name("evaluate", route);
    run_stage(name, [&] {
        const auto exp = load_experiment(config, out);
        const auto before_params = nn::load_checkpoint(require(out / "train" / "global.ckpt", "train"));
        const auto unlearn_dir = out / stage_dir_name("unlearn", route);
        const auto after_params = nn::load_checkpoint(require(unlearn_dir / "global.ckpt", "unlearn"));
        const auto meta = nlohmann::json::parse(eval::read_text_file(unlearn_dir / "unlearn.json"));

        const auto before = exp.evaluate(before_params, "Before", training_rounds(out));
        const auto after = exp.evaluate(after_params, display_name(route), meta.at("rounds").get<std::size_t>());
        const auto metrics = eval::forgetting_metrics(before, after, config.request());

        StageDir dir(out, name);
        eval::emit_report(before, std::nullopt, dir / "report-before.json", eval::ReportFormat::json);
        eval::emit_report(after, metrics, dir / "report-after.json", eval::ReportFormat::json);
        const eval::EvaluationReport afters[] = {after};
        eval::write_text_file(dir / "report.csv", eval::comparison_csv(before, afters));
        eval::write_text_file(dir / "metrics.json", eval::metrics_to_json(metrics));
        dir.commit();
    });
}

void run_experiment(const ExperimentConfig& config, const fs::path& out) {
    stage_partition(config, out);
    stage_train(config, out);
    stage_unlearn(config, out);
    stage_evaluate(config, out);
}

void compare_routes(std::span<const ExperimentConfig> configs, const fs::path& out) {
    if (configs.empty()) throw ConfigError(0, "compare needs at least one config");
    const auto neutral = [](ExperimentConfig c) {
        c.unlearn.route = Route::none;
        return render_config(c);
    };
    const std::string reference = neutral(configs.front());
    for (std::size_t i = 1; i < configs.size(); ++i) {
        if (neutral(configs[i]) != reference) {
            throw ConfigError(0, "config " + std::to_string(i + 1) + " differs from the first in more than its route");
        }
    }
    stage_partition(configs.front(), out);
    stage_train(configs.front(), out);
    std::vector<eval::EvaluationReport> afters;
    std::optional<eval::EvaluationReport> before;
    std::string metrics_csv = "strategy,forget_efficacy,collateral_retained,collateral_nonrequesting_forget\n";
    for (const auto& config : configs) {
        stage_unlearn(config, out);
        stage_evaluate(config, out);
        const auto dir = out / stage_dir_name("evaluate", config.unlearn.route);
        if (!before) before = eval::report_from_json(eval::read_text_file(dir / "report-before.json"));
        afters.push_back(eval::report_from_json(eval::read_text_file(dir / "report-after.json")));
        const auto m = nlohmann::json::parse(eval::read_text_file(dir / "metrics.json"));
        metrics_csv += afters.back().strategy + "," + format_fixed(m.at("forget_efficacy").get<double>(), 2) + "," +
                       format_fixed(m.at("collateral_retained").get<double>(), 2) + "," +
                       format_fixed(m.at("collateral_nonrequesting_forget").get<double>(), 2) + "\n";
    }
    run_stage("compare", [&] {
        StageDir dir(out, "compare");
        eval::write_text_file(dir / "comparison.csv", eval::comparison_csv(*before, afters));
        eval::write_text_file(dir / "plot.csv", eval::plot_data_csv(*before, afters));
        eval::write_text_file(dir / "metrics.csv", metrics_csv);
        dir.commit();
    });
}

}  // namespace fusim::app

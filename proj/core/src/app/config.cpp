#include "fusim/app/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "fusim/error.hpp"
#include "fusim/text.hpp"

namespace fusim::app {

std::string to_string(Route route) {
    switch (route) {
        case Route::none: return "none";
        case Route::delete_retrain: return "delete";
        case Route::relabel: return "relabel";
        case Route::zeroing: return "zeroing";
        case Route::fedcccu: return "fedcccu";
    }
    return "none";
}

std::string display_name(Route route) {
    switch (route) {
        case Route::none: return "None";
        case Route::delete_retrain: return "Delete";
        case Route::relabel: return "Relabel";
        case Route::zeroing: return "Zeroing";
        case Route::fedcccu: return "FedCCCU";
    }
    return "None";
}

std::optional<Route> parse_route(const std::string& text) {
    for (Route r : {Route::none, Route::delete_retrain, Route::relabel, Route::zeroing, Route::fedcccu}) {
        if (text == to_string(r)) return r;
    }
    return std::nullopt;
}

std::size_t PartitionConfig::client_count() const {
    if (strategy == "real_noniid") {
        std::size_t k = 0;
        for (std::size_t g : groups) k += g;
        return k;
    }
    return clients;
}

namespace {

struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct Section {
    std::string name;
    std::string argument;  // "[domain clean]" -> "clean"
    std::size_t line = 0;
    std::vector<Entry> entries;
};

std::vector<Section> tokenize(const std::string& text) {
    std::vector<Section> sections;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string_view s = trim(raw);
        if (s.empty() || s.front() == '#' || s.front() == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(line, "unterminated section header");
            const std::string_view inner = trim(s.substr(1, s.size() - 2));
            const auto space = inner.find_first_of(" \t");
            Section sec;
            sec.line = line;
            sec.name = std::string(inner.substr(0, space));
            if (space != std::string_view::npos) sec.argument = std::string(trim(inner.substr(space)));
            if (sec.name.empty()) throw ConfigError(line, "empty section name");
            sections.push_back(std::move(sec));
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) throw ConfigError(line, "expected 'key = value'");
        if (sections.empty()) throw ConfigError(line, "key outside of any section");
        Entry e{std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))), line};
        if (e.key.empty()) throw ConfigError(line, "missing key before '='");
        for (const auto& other : sections.back().entries) {
            if (other.key == e.key) {
                throw ConfigError(line, "duplicate key '" + e.key + "' (first set on line " +
                                            std::to_string(other.line) + ")");
            }
        }
        sections.back().entries.push_back(std::move(e));
    }
    return sections;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::string current;
    for (char c : value) {
        if (c == ',') {
            items.emplace_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    items.emplace_back(trim(current));
    return items;
}

/// Typed access to one section's keys with range checks tied to line numbers.
class Reader {
public:
    Reader(const Section& section, std::set<std::string> allowed) : section_(section) {
        for (const auto& e : section.entries) {
            if (!allowed.count(e.key)) {
                throw ConfigError(e.line, "unknown key '" + e.key + "' in section [" + section.name + "]");
            }
        }
    }

    const Entry* find(const std::string& key) const {
        for (const auto& e : section_.entries) {
            if (e.key == key) return &e;
        }
        return nullptr;
    }

    std::size_t line_of(const std::string& key) const {
        const auto* e = find(key);
        return e ? e->line : section_.line;
    }

    std::optional<std::string> text(const std::string& key) const {
        const auto* e = find(key);
        if (!e) return std::nullopt;
        if (e->value.empty()) throw ConfigError(e->line, "key '" + key + "' has an empty value");
        return e->value;
    }

    std::optional<std::uint64_t> uint(const std::string& key, std::uint64_t lo = 0,
                                      std::uint64_t hi = std::numeric_limits<std::uint64_t>::max()) const {
        const auto* e = find(key);
        if (!e) return std::nullopt;
        return to_uint(*e, e->value, lo, hi);
    }

    std::optional<double> real(const std::string& key, const std::function<bool(double)>& ok,
                               const std::string& range) const {
        const auto* e = find(key);
        if (!e) return std::nullopt;
        const auto v = parse_double(e->value);
        if (!v || !std::isfinite(*v)) throw ConfigError(e->line, "key '" + key + "' expects a number");
        if (!ok(*v)) throw ConfigError(e->line, "key '" + key + "' must be " + range + ", got " + e->value);
        return v;
    }

    std::optional<bool> boolean(const std::string& key) const {
        const auto* e = find(key);
        if (!e) return std::nullopt;
        if (e->value == "true") return true;
        if (e->value == "false") return false;
        throw ConfigError(e->line, "key '" + key + "' expects true or false");
    }

    std::optional<std::vector<std::uint64_t>> uint_list(const std::string& key, std::uint64_t lo = 0) const {
        const auto* e = find(key);
        if (!e) return std::nullopt;
        std::vector<std::uint64_t> out;
        for (const auto& item : split_list(e->value)) {
            out.push_back(to_uint(*e, item, lo, std::numeric_limits<std::uint64_t>::max()));
        }
        return out;
    }

    data::Resolution resolution(const std::string& key, data::Resolution fallback) const {
        const auto* e = find(key);
        if (!e) return fallback;
        try {
            return data::parse_resolution(e->value);
        } catch (const Error& err) {
            throw ConfigError(e->line, "key '" + key + "': " + err.what());
        }
    }

private:
    static std::uint64_t to_uint(const Entry& e, const std::string& text, std::uint64_t lo, std::uint64_t hi) {
        const auto v = parse_uint(text);
        if (!v) throw ConfigError(e.line, "key '" + e.key + "' expects a non-negative integer, got '" + text + "'");
        if (*v < lo || *v > hi) {
            std::string range = ">= " + std::to_string(lo);
            if (hi != std::numeric_limits<std::uint64_t>::max()) {
                range = "in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
            }
            throw ConfigError(e.line, "key '" + e.key + "' must be " + range + ", got " + text);
        }
        return *v;
    }

    const Section& section_;
};

const std::set<std::string> kExperimentKeys{"name", "seed", "model", "hidden"};
const std::set<std::string> kDomainKeys{"source",  "pattern_seed", "transforms", "resolution", "samples_per_class",
                                        "classes", "images",       "labels",     "limit"};
const std::set<std::string> kPartitionKeys{"strategy",           "groups",         "clients",      "alpha",
                                           "working_resolution", "validation_fraction", "test_fraction"};
const std::set<std::string> kFederationKeys{"rounds",        "local_epochs", "batch_size",
                                            "learning_rate", "epsilon",      "unlearn_rounds"};
const std::set<std::string> kUnlearnKeys{"route", "requesting", "forget_class", "top_m", "zeroing_scope",
                                         "steps", "top_n",      "select_n",     "probe_cap", "score_all_classes"};

void read_experiment(const Section& sec, ExperimentConfig& cfg) {
    const Reader r(sec, kExperimentKeys);
    if (auto v = r.text("name")) cfg.name = *v;
    if (auto v = r.uint("seed")) cfg.seed = *v;
    if (auto v = r.text("model")) {
        if (*v != "SmallMLP" && *v != "SmallCNN") {
            throw ConfigError(r.line_of("model"), "key 'model' must be SmallMLP or SmallCNN, got " + *v);
        }
        cfg.model = *v;
    }
    if (auto v = r.uint("hidden", 1, 4096)) cfg.hidden = *v;
}

DomainConfig read_domain(const Section& sec, const std::filesystem::path& base_dir) {
    if (sec.argument.empty()) throw ConfigError(sec.line, "domain section needs an id: [domain <id>]");
    const Reader r(sec, kDomainKeys);
    DomainConfig d;
    d.id = sec.argument;
    d.synthetic.domain_id = d.id;
    const std::string source = r.text("source").value_or("synthetic");
    if (source == "synthetic") {
        d.source = DomainConfig::Source::synthetic;
        for (const char* key : {"images", "labels", "limit"}) {
            if (r.find(key)) throw ConfigError(r.line_of(key), std::string("key '") + key + "' needs source = idx");
        }
        if (auto v = r.uint("pattern_seed")) d.synthetic.base_pattern_seed = *v;
        if (auto v = r.text("transforms")) {
            d.synthetic.transforms.clear();
            for (const auto& item : split_list(*v)) {
                try {
                    d.synthetic.transforms.push_back(data::Transform::parse(item));
                } catch (const Error& err) {
                    throw ConfigError(r.line_of("transforms"), "key 'transforms': " + std::string(err.what()));
                }
            }
        }
        d.synthetic.resolution = r.resolution("resolution", d.synthetic.resolution);
        if (auto v = r.uint("samples_per_class", 1, 1000000)) d.synthetic.samples_per_class = *v;
        if (auto v = r.uint("classes", 1, 256)) d.synthetic.class_count = *v;
        try {
            d.synthetic.validate();
        } catch (const Error& err) {
            throw ConfigError(sec.line, "domain " + d.id + ": " + err.what());
        }
    } else if (source == "idx") {
        d.source = DomainConfig::Source::idx;
        for (const char* key : {"pattern_seed", "transforms", "resolution", "samples_per_class", "classes"}) {
            if (r.find(key)) {
                throw ConfigError(r.line_of(key), std::string("key '") + key + "' needs source = synthetic");
            }
        }
        for (auto [key, target] : {std::pair{"images", &d.images}, std::pair{"labels", &d.labels}}) {
            const auto v = r.text(key);
            if (!v) throw ConfigError(sec.line, std::string("idx domain ") + d.id + " is missing key '" + key + "'");
            std::filesystem::path p(*v);
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            if (!std::filesystem::is_regular_file(p)) {
                throw ConfigError(r.line_of(key), std::string("key '") + key + "': no such file " + p.string());
            }
            *target = p;
        }
        if (auto v = r.uint("limit")) d.limit = *v;
    } else {
        throw ConfigError(r.line_of("source"), "key 'source' must be synthetic or idx, got " + source);
    }
    return d;
}

void read_partition(const Section& sec, PartitionConfig& p) {
    const Reader r(sec, kPartitionKeys);
    if (auto v = r.text("strategy")) {
        if (*v != "iid" && *v != "dirichlet" && *v != "real_noniid") {
            throw ConfigError(r.line_of("strategy"), "key 'strategy' must be iid, dirichlet or real_noniid, got " + *v);
        }
        p.strategy = *v;
    }
    if (auto v = r.uint_list("groups", 1)) p.groups.assign(v->begin(), v->end());
    if (auto v = r.uint("clients", 1, 100000)) p.clients = *v;
    if (auto v = r.real("alpha", [](double x) { return x > 0.0; }, "> 0")) p.alpha = *v;
    p.working_resolution = r.resolution("working_resolution", p.working_resolution);
    const auto fraction = [](double x) { return x >= 0.0 && x < 1.0; };
    if (auto v = r.real("validation_fraction", fraction, "in [0, 1)")) p.validation_fraction = *v;
    if (auto v = r.real("test_fraction", fraction, "in [0, 1)")) p.test_fraction = *v;
    if (p.validation_fraction + p.test_fraction >= 1.0) {
        throw ConfigError(r.line_of("test_fraction"), "validation_fraction + test_fraction must be < 1");
    }
    if (p.strategy == "real_noniid") {
        if (r.find("clients")) throw ConfigError(r.line_of("clients"), "real_noniid takes 'groups', not 'clients'");
        if (p.groups.empty()) throw ConfigError(sec.line, "real_noniid needs 'groups'");
    } else {
        if (r.find("groups")) throw ConfigError(r.line_of("groups"), p.strategy + " takes 'clients', not 'groups'");
        if (p.clients == 0) throw ConfigError(sec.line, p.strategy + " needs 'clients'");
    }
}

void read_federation(const Section& sec, fed::FedConfig& f) {
    const Reader r(sec, kFederationKeys);
    if (auto v = r.uint("rounds", 1, 100000)) f.rounds_max = *v;
    if (auto v = r.uint("local_epochs", 1, 1000)) f.local_epochs = *v;
    if (auto v = r.uint("batch_size", 1, 1000000)) f.batch_size = *v;
    if (auto v = r.real("learning_rate", [](double x) { return x > 0.0 && x <= 100.0; }, "in (0, 100]")) {
        f.learning_rate = *v;
    }
    if (auto v = r.real("epsilon", [](double x) { return x > 0.0 && x < 1.0; }, "in (0, 1)")) f.epsilon = *v;
    if (auto v = r.uint("unlearn_rounds", 0, 100000)) f.unlearn_rounds_max = *v;
}

void read_unlearn(const Section& sec, UnlearnConfig& u) {
    const Reader r(sec, kUnlearnKeys);
    if (auto v = r.text("route")) {
        const auto route = parse_route(*v);
        if (!route) {
            throw ConfigError(r.line_of("route"),
                              "key 'route' must be one of none, delete, relabel, zeroing, fedcccu; got " + *v);
        }
        u.route = *route;
    }
    if (auto v = r.uint_list("requesting")) {
        u.requesting.assign(v->begin(), v->end());
        std::set<std::size_t> unique(u.requesting.begin(), u.requesting.end());
        if (unique.size() != u.requesting.size()) {
            throw ConfigError(r.line_of("requesting"), "key 'requesting' lists a client twice");
        }
    }
    if (auto v = r.uint("forget_class", 0, 255)) u.forget_class = *v;
    if (auto v = r.uint("top_m")) u.top_m = *v;
    if (auto v = r.text("zeroing_scope")) {
        if (*v != "hidden" && *v != "all") {
            throw ConfigError(r.line_of("zeroing_scope"), "key 'zeroing_scope' must be hidden or all, got " + *v);
        }
        u.zeroing_scope = *v == "all" ? unlearn::ZeroingScope::all : unlearn::ZeroingScope::hidden;
    }
    if (auto v = r.uint("steps", 1, 100000)) u.cccu.steps = *v;
    if (auto v = r.uint("top_n", 1)) u.cccu.top_n = *v;
    if (auto v = r.uint("select_n")) u.cccu.select_n = *v;
    if (auto v = r.uint("probe_cap", 1)) u.cccu.probe_cap = *v;
    if (auto v = r.boolean("score_all_classes")) u.cccu.score_all_classes = *v;
}

}  // namespace

ExperimentConfig validate_config(const std::string& text, const std::filesystem::path& base_dir) {
    const auto sections = tokenize(text);
    ExperimentConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::size_t unlearn_line = 0;
    std::size_t partition_line = 0;
    for (const auto& sec : sections) {
        const std::string tag = sec.name == "domain" ? "domain " + sec.argument : sec.name;
        if (auto [it, inserted] = seen.emplace(tag, sec.line); !inserted) {
            throw ConfigError(sec.line, "section [" + tag + "] repeated (first on line " +
                                            std::to_string(it->second) + ")");
        }
        if (sec.name != "domain" && !sec.argument.empty()) {
            throw ConfigError(sec.line, "section [" + sec.name + "] takes no argument");
        }
        if (sec.name == "experiment") {
            read_experiment(sec, cfg);
        } else if (sec.name == "domain") {
            cfg.domains.push_back(read_domain(sec, base_dir));
        } else if (sec.name == "partition") {
            partition_line = sec.line;
            read_partition(sec, cfg.partition);
        } else if (sec.name == "federation") {
            read_federation(sec, cfg.federation);
        } else if (sec.name == "unlearn") {
            unlearn_line = sec.line;
            read_unlearn(sec, cfg.unlearn);
        } else {
            throw ConfigError(sec.line, "unknown section [" + sec.name + "]");
        }
    }

    if (cfg.domains.empty()) throw ConfigError(0, "config declares no [domain <id>] section");
    if (!seen.count("partition")) {
        // a bare config still needs a plan: one client per domain
        cfg.partition.groups.assign(cfg.domains.size(), 1);
    }
    const auto& p = cfg.partition;
    if (p.strategy == "real_noniid" && p.groups.size() != cfg.domains.size()) {
        throw ConfigError(partition_line, "groups lists " + std::to_string(p.groups.size()) + " sizes for " +
                                              std::to_string(cfg.domains.size()) + " domains");
    }
    if (p.strategy != "real_noniid" && cfg.domains.size() != 1) {
        throw ConfigError(partition_line, p.strategy + " partitions exactly one domain");
    }
    const std::size_t clients = p.client_count();
    for (std::size_t id : cfg.unlearn.requesting) {
        if (id >= clients) {
            throw ConfigError(unlearn_line, "requesting client " + std::to_string(id) + " does not exist (" +
                                                std::to_string(clients) + " clients, ids from 0)");
        }
    }
    for (const auto& d : cfg.domains) {
        if (d.source == DomainConfig::Source::synthetic && cfg.unlearn.forget_class >= d.synthetic.class_count) {
            throw ConfigError(unlearn_line, "forget_class " + std::to_string(cfg.unlearn.forget_class) +
                                                " is outside domain " + d.id + "'s " +
                                                std::to_string(d.synthetic.class_count) + " classes");
        }
    }
    cfg.federation.seed = cfg.seed;
    cfg.unlearn.cccu.seed = cfg.seed;
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(0, "cannot read config file " + path.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return validate_config(text, path.parent_path());
}

std::string render_config(const ExperimentConfig& c) {
    std::string out;
    const auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    const auto join = [](const auto& xs) {
        std::string s;
        for (const auto& x : xs) s += (s.empty() ? "" : ", ") + std::to_string(x);
        return s;
    };
    out += "[experiment]\n";
    kv("name", c.name);
    kv("seed", std::to_string(c.seed));
    kv("model", c.model);
    kv("hidden", std::to_string(c.hidden));
    for (const auto& d : c.domains) {
        out += "\n[domain " + d.id + "]\n";
        if (d.source == DomainConfig::Source::synthetic) {
            kv("source", "synthetic");
            kv("pattern_seed", std::to_string(d.synthetic.base_pattern_seed));
            std::string t;
            for (const auto& tr : d.synthetic.transforms) t += (t.empty() ? "" : ", ") + tr.to_string();
            kv("transforms", t);
            kv("resolution", data::to_string(d.synthetic.resolution));
            kv("samples_per_class", std::to_string(d.synthetic.samples_per_class));
            kv("classes", std::to_string(d.synthetic.class_count));
        } else {
            kv("source", "idx");
            kv("images", d.images.string());
            kv("labels", d.labels.string());
            kv("limit", std::to_string(d.limit));
        }
    }
    const auto& p = c.partition;
    out += "\n[partition]\n";
    kv("strategy", p.strategy);
    if (p.strategy == "real_noniid") {
        kv("groups", join(p.groups));
    } else {
        kv("clients", std::to_string(p.clients));
    }
    kv("alpha", format_shortest(p.alpha));
    kv("working_resolution", data::to_string(p.working_resolution));
    kv("validation_fraction", format_shortest(p.validation_fraction));
    kv("test_fraction", format_shortest(p.test_fraction));
    const auto& f = c.federation;
    out += "\n[federation]\n";
    kv("rounds", std::to_string(f.rounds_max));
    kv("local_epochs", std::to_string(f.local_epochs));
    kv("batch_size", std::to_string(f.batch_size));
    kv("learning_rate", format_shortest(f.learning_rate));
    kv("epsilon", format_shortest(f.epsilon));
    kv("unlearn_rounds", std::to_string(f.unlearn_rounds_max));
    const auto& u = c.unlearn;
    out += "\n[unlearn]\n";
    kv("route", to_string(u.route));
    kv("requesting", join(u.requesting));
    kv("forget_class", std::to_string(u.forget_class));
    if (u.top_m) kv("top_m", std::to_string(*u.top_m));
    kv("zeroing_scope", u.zeroing_scope == unlearn::ZeroingScope::all ? "all" : "hidden");
    kv("steps", std::to_string(u.cccu.steps));
    kv("top_n", std::to_string(u.cccu.top_n));
    if (u.cccu.select_n) kv("select_n", std::to_string(*u.cccu.select_n));
    kv("probe_cap", std::to_string(u.cccu.probe_cap));
    kv("score_all_classes", u.cccu.score_all_classes ? "true" : "false");
    return out;
}

}  // namespace fusim::app

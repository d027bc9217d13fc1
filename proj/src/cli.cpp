#include "iiv/cli.hpp"

#include "iiv/bounds_engine.hpp"
#include "iiv/data_model.hpp"
#include "iiv/error.hpp"
#include "iiv/inference.hpp"
#include "iiv/simlab.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace iiv {

using nlohmann::json;

namespace {

const std::vector<std::string> kDefaultRegimes = {"sdc", "lei", "mtr"};

std::string format_name(ReportFormat f) {
    switch (f) {
        case ReportFormat::json: return "json";
        case ReportFormat::csv: return "csv";
        case ReportFormat::text_table: return "text-table";
    }
    return "json";
}

ReportFormat format_from_name(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "text-table") return ReportFormat::text_table;
    throw InvalidArgument("unknown format '" + s + "'");
}

ChainMode chain_mode_of(const std::string& s) {
    return s == "lower" ? ChainMode::lower : ChainMode::upper;
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
    j[key] = v ? json(*v) : json(nullptr);
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
    if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<T>();
}

template <typename T>
void get_if(const json& j, const char* key, T& v) {
    if (j.contains(key)) j.at(key).get_to(v);
}

/// Writes through `fn` to the named file, or to `fallback` when the path is empty or "-".
template <typename Fn>
void write_to(const std::string& path, std::ostream& fallback, Fn&& fn) {
    if (path.empty() || path == "-") {
        fn(fallback);
        return;
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw InvalidArgument("cannot open " + path + " for writing");
    fn(file);
    if (!file) throw InvalidArgument("failed writing " + path);
}

std::string num(double x, int digits = 10) {
    std::ostringstream s;
    s << std::setprecision(digits) << x;
    return s.str();
}

std::string fixed(double x, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << x;
    return s.str();
}

void comment_header(std::ostream& os, const RunConfig& config, const std::string& stamp) {
    os << "# config: " << config_to_json(config).dump() << '\n';
    os << "# timestamp: " << stamp << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
    if (command != "estimate" && command != "simulate" && command != "validate")
        throw InvalidArgument("unknown command '" + command + "'");
    if (command == "estimate") {
        if (data.empty()) throw InvalidArgument("estimate needs --data");
        if (outcome.empty() || treatment.empty() || instrument.empty())
            throw InvalidArgument("estimate needs --outcome, --treatment and --instrument");
        if (!(trim_tau >= 0.0 && trim_tau < 0.5)) throw InvalidArgument("--trim-tau must lie in [0, 0.5)");
        if (support_mode != "conditional" && support_mode != "pooled")
            throw InvalidArgument("--support-mode must be conditional or pooled");
        for (const auto& r : regimes) regime_from_string(r);
        if (grid_points && *grid_points < 2) throw InvalidArgument("--grid needs at least 2 points");
        if (refine_passes && *refine_passes < 0) throw InvalidArgument("--refine must be non-negative");
        if (chain_mode != "upper" && chain_mode != "lower" && chain_mode != "none")
            throw InvalidArgument("--chain-mode must be upper, lower or none");
        if (ate_timing != "after-chain" && ate_timing != "before-chain")
            throw InvalidArgument("--ate-timing must be after-chain or before-chain");
        for (int t : target_levels)
            if (t < 0) throw InvalidArgument("target levels must be non-negative");
        if (!target_levels.empty())
            for (const auto& [a, b] : ate)
                for (int lv : {a, b})
                    if (std::find(target_levels.begin(), target_levels.end(), lv) == target_levels.end())
                        throw InvalidArgument("--ate " + std::to_string(a) + "," + std::to_string(b) +
                                              " needs level " + std::to_string(lv) + " in --target-levels");
        if (boot > 0) BootSpec{boot, level, seed}.validate();
    }
    if (command == "simulate") {
        if (dgp.empty()) throw InvalidArgument("simulate needs --dgp");
        if (n == 0) throw InvalidArgument("simulate needs --n > 0");
        if (dgp == "custom-file" && dgp_file.empty()) throw InvalidArgument("custom-file needs --dgp-file");
        if (rho && rho->size() != 3) throw InvalidArgument("--rho takes three correlations");
    }
    if (command == "validate") {
        if (in.empty()) throw InvalidArgument("validate needs --in");
        parse_checks(checks);
    }
}

json config_to_json(const RunConfig& c) {
    json j;
    j["command"] = c.command;
    j["format"] = format_name(c.format);
    if (c.command == "estimate") {
        j["data"] = c.data;
        j["outcome"] = c.outcome;
        j["treatment"] = c.treatment;
        j["instrument"] = c.instrument;
        put_optional(j, "levels", c.levels);
        put_optional(j, "cutpoints", c.cutpoints);
        put_optional(j, "instrument_cutpoints", c.instrument_cutpoints);
        json filters = json::array();
        for (const auto& [col, val] : c.filters) filters.push_back({col, val});
        j["filters"] = filters;
        j["trim_tau"] = c.trim_tau;
        j["support_mode"] = c.support_mode;
        j["regimes"] = c.regimes.empty() ? kDefaultRegimes : c.regimes;
        put_optional(j, "grid_points", c.grid_points);
        put_optional(j, "refine_passes", c.refine_passes);
        j["target_levels"] = c.target_levels;
        json ate = json::array();
        for (const auto& [a, b] : c.ate) ate.push_back({a, b});
        j["ate"] = ate;
        j["chain_mode"] = c.chain_mode;
        j["ate_timing"] = c.ate_timing;
        j["min_cell_size"] = c.min_cell_size;
        j["boot"] = c.boot;
        j["level"] = c.level;
        j["seed"] = c.seed;
    } else if (c.command == "simulate") {
        j["dgp"] = c.dgp;
        j["n"] = c.n;
        j["seed"] = c.seed;
        j["dgp_file"] = c.dgp_file;
        put_optional(j, "rho", c.rho);
        j["instrument_levels"] = c.instrument_levels;
    } else {
        j["in"] = c.in;
        j["checks"] = c.checks;
    }
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        j.at("command").get_to(c.command);
        if (j.contains("format")) c.format = format_from_name(j.at("format").get<std::string>());
        get_if(j, "data", c.data);
        get_if(j, "outcome", c.outcome);
        get_if(j, "treatment", c.treatment);
        get_if(j, "instrument", c.instrument);
        get_optional(j, "levels", c.levels);
        get_optional(j, "cutpoints", c.cutpoints);
        get_optional(j, "instrument_cutpoints", c.instrument_cutpoints);
        if (j.contains("filters"))
            for (const auto& f : j.at("filters")) c.filters.emplace_back(f.at(0).get<std::string>(), f.at(1).get<std::string>());
        get_if(j, "trim_tau", c.trim_tau);
        get_if(j, "support_mode", c.support_mode);
        get_if(j, "regimes", c.regimes);
        get_optional(j, "grid_points", c.grid_points);
        get_optional(j, "refine_passes", c.refine_passes);
        get_if(j, "target_levels", c.target_levels);
        if (j.contains("ate"))
            for (const auto& p : j.at("ate")) c.ate.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        get_if(j, "chain_mode", c.chain_mode);
        get_if(j, "ate_timing", c.ate_timing);
        get_if(j, "min_cell_size", c.min_cell_size);
        get_if(j, "boot", c.boot);
        get_if(j, "level", c.level);
        get_if(j, "seed", c.seed);
        get_if(j, "dgp", c.dgp);
        get_if(j, "n", c.n);
        get_if(j, "dgp_file", c.dgp_file);
        get_optional(j, "rho", c.rho);
        get_if(j, "instrument_levels", c.instrument_levels);
        get_if(j, "in", c.in);
        get_if(j, "checks", c.checks);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed config: ") + e.what());
    }
    return c;
}

RunConfig load_embedded_config(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw InvalidArgument("cannot open " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    const std::string text = buffer.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw InvalidArgument(path + ": " + e.what());
        }
        return config_from_json(j.contains("config") ? j.at("config") : j);
    }
    std::istringstream lines(text);
    std::string line;
    const std::string tag = "# config: ";
    while (std::getline(lines, line) && !line.empty() && line[0] == '#') {
        if (line.compare(0, tag.size(), tag) == 0) {
            try {
                return config_from_json(json::parse(line.substr(tag.size())));
            } catch (const json::exception& e) {
                throw InvalidArgument(path + ": " + e.what());
            }
        }
    }
    throw InvalidArgument(path + " carries no embedded config");
}

std::string timestamp_utc() {
    std::time_t t = 0;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    } else {
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

// ---------------------------------------------------------------------------
// estimate

namespace {

json interval_json(const Interval& iv) { return {{"lo", iv.lo}, {"hi", iv.hi}, {"empty", iv.empty}}; }

json arg_json(const ParamPoint& p) {
    json j = {{"alpha", p.alpha()}, {"beta", p.beta()}};
    if (p.dims == 3) j["mu"] = p.mu();
    return j;
}

json branch_json(const Interval& iv, const ParamPoint& lo_arg, const ParamPoint& hi_arg, bool with_args) {
    json j = interval_json(iv);
    if (with_args) j["arg"] = {{"lo", arg_json(lo_arg)}, {"hi", arg_json(hi_arg)}};
    return j;
}

struct RegimeResult {
    Regime regime;
    GridSpec grid;
    bool grid_used = false;
    ThetaBounds raw;
    ThetaBounds final;
    bool chained = false;
    std::map<int, ConfidenceRegion> boot;
    std::map<int, ManskiMiResult> mi;
    struct Ate {
        int d, d_prime;
        Interval interval;
        std::string error;
    };
    std::vector<Ate> ate;
};

std::string theta_name(int d) { return "theta_" + std::to_string(d); }
std::string ate_name(int a, int b) { return "theta_" + std::to_string(a) + "-theta_" + std::to_string(b); }

}  // namespace

int run_estimate(const RunConfig& config, std::ostream& out, std::ostream& err) {
    config.validate();
    const std::string stamp = timestamp_utc();

    LoadOptions lo;
    lo.outcome_col = config.outcome;
    lo.treatment_col = config.treatment;
    lo.instrument_col = config.instrument;
    lo.levels = config.levels;
    lo.cutpoints = config.cutpoints;
    lo.instrument_cutpoints = config.instrument_cutpoints;
    lo.filters = config.filters;
    const LoadResult loaded = load_csv(config.data, lo);
    const Sample sample = trim_outcome(loaded.sample, config.trim_tau);
    const SupportMode mode = config.support_mode == "pooled" ? SupportMode::pooled : SupportMode::conditional;
    const SupportBounds supports = estimate_supports(sample, mode);

    std::vector<int> targets = config.target_levels;
    if (targets.empty())
        for (std::size_t k = 0; k < sample.num_levels(); ++k) targets.push_back(static_cast<int>(k));
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    for (int t : targets)
        if (static_cast<std::size_t>(t) >= sample.num_levels())
            throw InvalidArgument("target level " + std::to_string(t) + " exceeds the " +
                                  std::to_string(sample.num_levels()) + " observed levels");
    for (const auto& [a, b] : config.ate)
        for (int lv : {a, b})
            if (lv < 0 || static_cast<std::size_t>(lv) >= sample.num_levels())
                throw InvalidArgument("ATE level " + std::to_string(lv) + " out of range");

    const std::vector<std::string> regime_names = config.regimes.empty() ? kDefaultRegimes : config.regimes;
    std::vector<RegimeResult> results;
    bool rejected = false;
    for (const auto& name : regime_names) {
        RegimeResult rr;
        rr.regime = regime_from_string(name);
        const bool optimized = rr.regime != Regime::manski_wc && rr.regime != Regime::manski_mi;
        const int dims = (rr.regime == Regime::lei || rr.regime == Regime::mtr) ? 3 : 2;
        rr.grid = GridSpec::defaults_for(dims);
        if (config.grid_points) rr.grid.points_per_dim = *config.grid_points;
        if (config.refine_passes) rr.grid.refine_passes = *config.refine_passes;
        rr.grid_used = optimized;

        EstimateOptions opts;
        opts.grid = rr.grid;
        opts.threads = config.threads;
        opts.min_cell_size = config.min_cell_size;
        rr.raw = estimate_regime(sample, supports, rr.regime, targets, opts);
        rr.final = rr.raw;
        if (is_mtr(rr.regime) && config.chain_mode != "none") {
            rr.final = mtr_chain(rr.raw, chain_mode_of(config.chain_mode));
            rr.chained = true;
        }
        if (rr.regime == Regime::manski_mi)
            for (int t : targets) rr.mi.emplace(t, bounds_manski_mi(sample, supports, t, config.min_cell_size));

        const ThetaBounds& for_ate = config.ate_timing == "before-chain" ? rr.raw : rr.final;
        for (const auto& [a, b] : config.ate) {
            RegimeResult::Ate entry{a, b, {}, {}};
            try {
                entry.interval = ate_bounds(for_ate, a, b);
            } catch (const RejectedModel& e) {
                entry.interval = Interval::empty_interval(0.0, 0.0);
                entry.error = e.what();
            }
            rr.ate.push_back(entry);
        }

        if (config.boot > 0) {
            const BootSpec spec{config.boot, config.level, config.seed};
            for (int t : targets) {
                const Regime regime = rr.regime;
                auto estimator = [&, t, regime](const Sample& s) {
                    EstimateOptions o = opts;
                    o.threads = 1;
                    const SupportBounds sup = estimate_supports(s, mode);
                    return *estimate_regime(s, sup, regime, {t}, o).levels[static_cast<std::size_t>(t)];
                };
                rr.boot.emplace(t, bootstrap_bounds(sample, estimator, spec, config.threads));
            }
        }
        for (int t : targets)
            if (rr.final.levels[static_cast<std::size_t>(t)]->rejected()) rejected = true;
        results.push_back(std::move(rr));
    }
    const int code = rejected ? exit_rejected : exit_ok;
    if (rejected) err << "model rejected: every branch is empty for at least one level\n";

    const auto& labels = sample.levels();
    write_to(config.out, out, [&](std::ostream& os) {
        if (config.format == ReportFormat::json) {
            json report;
            report["command"] = "estimate";
            report["config"] = config_to_json(config);
            report["timestamp"] = stamp;
            json data = {{"rows_read", loaded.rows_read},
                         {"rows_filtered", loaded.rows_filtered},
                         {"rows_dropped", loaded.rows_dropped},
                         {"n", sample.n()},
                         {"levels", labels},
                         {"level_counts", sample.level_counts()}};
            json sup = json::array();
            for (std::size_t k = 0; k < supports.size(); ++k)
                sup.push_back({{"level", k}, {"lo", supports.lo[k]}, {"hi", supports.hi[k]}});
            data["supports"] = sup;
            report["data"] = data;
            json regimes = json::array();
            for (const auto& rr : results) {
                json rj;
                rj["regime"] = to_string(rr.regime);
                if (rr.grid_used)
                    rj["grid"] = {{"points_per_dim", rr.grid.points_per_dim},
                                  {"refine_passes", rr.grid.refine_passes},
                                  {"refine_shrink", rr.grid.refine_shrink}};
                rj["chained"] = rr.chained;
                json levels = json::array();
                for (int t : targets) {
                    const BoundsSet& b = *rr.final.levels[static_cast<std::size_t>(t)];
                    json lj;
                    lj["level"] = t;
                    lj["label"] = labels[static_cast<std::size_t>(t)];
                    lj["regime"] = to_string(rr.regime);
                    lj["branch1"] = branch_json(b.branch1, b.args.lo1, b.args.hi1, rr.grid_used);
                    if (b.branch2) lj["branch2"] = branch_json(*b.branch2, b.args.lo2, b.args.hi2, rr.grid_used);
                    lj["hull"] = interval_json(b.hull());
                    lj["rejected"] = b.rejected();
                    if (rr.chained) lj["unchained_hull"] = interval_json(rr.raw.levels[static_cast<std::size_t>(t)]->hull());
                    if (const auto it = rr.mi.find(t); it != rr.mi.end()) {
                        lj["cells_used"] = it->second.cells_used;
                        lj["skipped_cells"] = it->second.skipped_cells;
                    }
                    if (const auto it = rr.boot.find(t); it != rr.boot.end()) {
                        const ConfidenceRegion& cr = it->second;
                        json bj = {{"method", "percentile-bootstrap"},
                                   {"level", cr.level},
                                   {"replications", cr.replications},
                                   {"dropped_replicates", cr.dropped_replicates},
                                   {"rejected_fraction", cr.rejected_fraction},
                                   {"ci_lo", cr.combined.lo},
                                   {"ci_hi", cr.combined.hi},
                                   {"empty", cr.combined.empty},
                                   {"disjoint", cr.disjoint}};
                        json br = json::array();
                        for (const auto& x : cr.branches)
                            br.push_back({{"ci_lo", x.region.lo}, {"ci_hi", x.region.hi},
                                          {"empty", x.region.empty}, {"empty_fraction", x.empty_fraction}});
                        bj["branches"] = br;
                        lj["bootstrap"] = bj;
                    }
                    levels.push_back(lj);
                }
                rj["levels"] = levels;
                json ates = json::array();
                for (const auto& a : rr.ate) {
                    json aj = {{"d", a.d}, {"d_prime", a.d_prime}, {"lo", a.interval.lo},
                               {"hi", a.interval.hi}, {"empty", a.interval.empty}};
                    if (!a.error.empty()) aj["error"] = a.error;
                    ates.push_back(aj);
                }
                rj["ate"] = ates;
                regimes.push_back(rj);
            }
            report["regimes"] = regimes;
            report["status"] = rejected ? "rejected" : "ok";
            report["exit_code"] = code;
            os << report.dump(2) << '\n';
        } else if (config.format == ReportFormat::csv) {
            comment_header(os, config, stamp);
            os << "regime,parameter,label,branch,lo,hi,empty,ci_lo,ci_hi\n";
            for (const auto& rr : results) {
                const std::string rn = to_string(rr.regime);
                for (int t : targets) {
                    const BoundsSet& b = *rr.final.levels[static_cast<std::size_t>(t)];
                    const auto boot = rr.boot.find(t);
                    auto row = [&](const std::string& branch, const Interval& iv, const Interval* ci) {
                        os << rn << ',' << theta_name(t) << ',' << '"' << labels[static_cast<std::size_t>(t)] << '"'
                           << ',' << branch << ',' << num(iv.lo) << ',' << num(iv.hi) << ','
                           << (iv.empty ? "true" : "false") << ',' << (ci ? num(ci->lo) : "") << ','
                           << (ci ? num(ci->hi) : "") << '\n';
                    };
                    const bool has_boot = boot != rr.boot.end();
                    row("1", b.branch1, has_boot ? &boot->second.branches[0].region : nullptr);
                    if (b.branch2) row("2", *b.branch2, has_boot ? &boot->second.branches[1].region : nullptr);
                    row("hull", b.hull(), has_boot ? &boot->second.combined : nullptr);
                }
                for (const auto& a : rr.ate)
                    os << rn << ',' << ate_name(a.d, a.d_prime) << ",,ate," << num(a.interval.lo) << ','
                       << num(a.interval.hi) << ',' << (a.interval.empty ? "true" : "false") << ",,\n";
            }
        } else {
            comment_header(os, config, stamp);
            os << "# n = " << sample.n() << " (read " << loaded.rows_read << ", filtered "
               << loaded.rows_filtered << ", dropped " << loaded.rows_dropped << ")\n";
            for (const auto& rr : results) {
                os << '\n' << "Regime: " << to_string(rr.regime);
                if (rr.grid_used)
                    os << " (grid " << rr.grid.points_per_dim << " pts/dim, " << rr.grid.refine_passes
                       << " refine passes)";
                if (rr.chained) os << ", chained (" << config.chain_mode << ")";
                os << '\n';
                os << std::left << std::setw(28) << "Parameters" << std::right << std::setw(10) << "Cf. LB"
                   << std::setw(10) << "Cf. UB" << std::setw(10) << "LB" << std::setw(10) << "UB" << "  Note\n";
                for (int t : targets) {
                    const BoundsSet& b = *rr.final.levels[static_cast<std::size_t>(t)];
                    const Interval h = b.hull();
                    const auto boot = rr.boot.find(t);
                    const std::string name = theta_name(t) + " (" + labels[static_cast<std::size_t>(t)] + ")";
                    os << std::left << std::setw(28) << name << std::right;
                    if (boot != rr.boot.end() && !boot->second.combined.empty)
                        os << std::setw(10) << fixed(boot->second.combined.lo) << std::setw(10)
                           << fixed(boot->second.combined.hi);
                    else
                        os << std::setw(10) << "-" << std::setw(10) << "-";
                    if (b.rejected())
                        os << std::setw(10) << "-" << std::setw(10) << "-" << "  rejected";
                    else
                        os << std::setw(10) << fixed(h.lo) << std::setw(10) << fixed(h.hi);
                    if (!b.rejected() && b.branch2 && (b.branch1.empty || b.branch2->empty))
                        os << "  one branch empty";
                    os << '\n';
                }
                for (const auto& a : rr.ate) {
                    os << std::left << std::setw(28) << ate_name(a.d, a.d_prime) << std::right << std::setw(10)
                       << "-" << std::setw(10) << "-";
                    if (!a.error.empty())
                        os << std::setw(10) << "-" << std::setw(10) << "-" << "  rejected";
                    else
                        os << std::setw(10) << fixed(a.interval.lo) << std::setw(10) << fixed(a.interval.hi);
                    os << '\n';
                }
            }
        }
    });
    return code;
}

// ---------------------------------------------------------------------------
// simulate

int run_simulate(const RunConfig& config, std::ostream& out, std::ostream&) {
    config.validate();
    const std::string stamp = timestamp_utc();
    PotentialSample ps;
    if (config.dgp == "custom-file") {
        ps = simulate_population(load_population_csv(config.dgp_file), config.n, config.seed);
    } else if (config.dgp == "gaussian-copula" && (config.rho || config.instrument_levels != 0)) {
        CopulaDesign design;
        if (config.rho) {
            design.rho_yd = (*config.rho)[0];
            design.rho_yz = (*config.rho)[1];
            design.rho_dz = (*config.rho)[2];
        }
        design.instrument_levels = config.instrument_levels;
        design.shift_per_level = 0.5;
        ps = simulate_gaussian_copula(design, config.n, config.seed);
    } else {
        ps = simulate_named(config.dgp, config.n, config.seed);
    }
    write_to(config.out, out, [&](std::ostream& os) {
        comment_header(os, config, stamp);
        write_potential_csv(os, ps);
    });
    if (!config.curves_out.empty()) {
        std::ofstream curves(config.curves_out, std::ios::binary);
        if (!curves) throw InvalidArgument("cannot open " + config.curves_out + " for writing");
        curves << "d,curve,threshold,plus,minus,se_plus,se_minus\n";
        for (std::size_t k = 0; k < ps.num_levels(); ++k) {
            std::ostringstream block;
            write_curves_csv(block, static_cast<int>(k), emit_curves(ps, static_cast<int>(k)));
            const std::string text = block.str();
            curves << text.substr(text.find('\n') + 1);
        }
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------
// validate

int run_validate(const RunConfig& config, std::istream& in, std::ostream& out, std::ostream& err) {
    config.validate();
    const std::string stamp = timestamp_utc();
    PotentialSample ps;
    if (config.in == "-") {
        ps = read_potential_csv(in);
    } else {
        std::ifstream file(config.in, std::ios::binary);
        if (!file) throw InvalidArgument("cannot open " + config.in);
        ps = read_potential_csv(file);
    }
    const auto checks = parse_checks(config.checks);
    const AssumptionReport report = run_checks(ps, checks);
    const auto arrows = implications(report);
    std::vector<IdentityCheck> identities;
    if (checks.count(Check::identities)) identities = check_cov_identities(ps);
    bool all_hold = true;
    for (const auto& r : report.rows) all_hold = all_hold && r.holds;
    const int code = all_hold ? exit_ok : exit_check_failed;
    if (!all_hold) err << "at least one assumption check failed\n";

    write_to(config.out, out, [&](std::ostream& os) {
        if (config.format == ReportFormat::json) {
            json j;
            j["command"] = "validate";
            j["config"] = config_to_json(config);
            j["timestamp"] = stamp;
            j["n"] = ps.n();
            j["levels"] = ps.num_levels();
            json rows = json::array();
            for (const auto& r : report.rows)
                rows.push_back({{"assumption", r.assumption}, {"holds", r.holds}, {"magnitude", r.magnitude},
                                {"tolerance", r.tolerance}, {"witness_d", r.witness_d}, {"witness", r.witness}});
            j["checks"] = rows;
            json ids = json::array();
            for (const auto& ic : identities)
                ids.push_back({{"d", ic.d},
                               {"decomposition_residual", ic.decomposition_residual},
                               {"decomposition_tolerance", 1e-10 * ic.decomposition_scale},
                               {"hoeffding_residual", ic.hoeffding_residual},
                               {"hoeffding_tolerance", ic.hoeffding_tolerance},
                               {"hoeffding_method", ic.hoeffding_exact ? "exact-sum" : "trapezoid-512"},
                               {"holds", ic.holds}});
            if (!identities.empty()) j["identities"] = ids;
            json imp = json::array();
            for (const auto& a : arrows)
                imp.push_back({{"antecedent", a.antecedent}, {"consequent", a.consequent},
                               {"antecedent_holds", a.antecedent_holds}, {"consequent_holds", a.consequent_holds},
                               {"respected", a.respected()}});
            j["implications"] = imp;
            j["status"] = all_hold ? "all hold" : "some fail";
            j["exit_code"] = code;
            os << j.dump(2) << '\n';
        } else if (config.format == ReportFormat::csv) {
            comment_header(os, config, stamp);
            os << "assumption,holds,magnitude,tolerance,witness_d,witness\n";
            for (const auto& r : report.rows)
                os << r.assumption << ',' << (r.holds ? "true" : "false") << ',' << num(r.magnitude) << ','
                   << num(r.tolerance) << ',' << r.witness_d << ",\"" << r.witness << "\"\n";
        } else {
            comment_header(os, config, stamp);
            os << "# n = " << ps.n() << ", levels = " << ps.num_levels() << "\n\n";
            os << std::left << std::setw(12) << "Assumption" << std::setw(7) << "Verdict" << std::right
               << std::setw(14) << "Violation" << std::setw(14) << "Tolerance" << "  Witness\n";
            for (const auto& r : report.rows)
                os << std::left << std::setw(12) << r.assumption << std::setw(7) << (r.holds ? "hold" : "fail")
                   << std::right << std::setw(14) << num(r.magnitude, 6) << std::setw(14) << num(r.tolerance, 6)
                   << "  " << r.witness << '\n';
            if (!arrows.empty()) {
                os << "\nImplications\n";
                for (const auto& a : arrows)
                    os << "  " << a.antecedent << " (" << (a.antecedent_holds ? "hold" : "fail") << ") => "
                       << a.consequent << " (" << (a.consequent_holds ? "hold" : "fail") << "): "
                       << (a.respected() ? "respected" : "VIOLATED") << '\n';
            }
        }
    });
    return code;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

std::pair<int, int> parse_pair(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw InvalidArgument("expected d,d' but got '" + text + "'");
    try {
        std::size_t used_a = 0, used_b = 0;
        const std::string a = text.substr(0, comma), b = text.substr(comma + 1);
        const int x = std::stoi(a, &used_a);
        const int y = std::stoi(b, &used_b);
        if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument(text);
        return {x, y};
    } catch (const std::exception&) {
        throw InvalidArgument("expected d,d' but got '" + text + "'");
    }
}

std::pair<std::string, std::string> parse_filter(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("expected col=value but got '" + text + "'");
    return {text.substr(0, eq), text.substr(eq + 1)};
}

void write_error(const RunConfig& config, std::ostream& out, const std::string& message, int code) {
    if (config.format != ReportFormat::json || config.command.empty()) return;
    json j = {{"command", config.command}, {"status", "error"}, {"error", message}, {"exit_code", code}};
    try {
        write_to(config.out, out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    } catch (const Error&) {
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bounds on treatment effects with imperfect instruments"};
    app.require_subcommand(1);
    RunConfig c;
    std::string format = "json";
    std::string config_path;
    std::vector<std::string> ate, filters;
    std::vector<std::string> levels;
    std::vector<double> cutpoints, instrument_cutpoints, rho;
    int grid = 0, refine = -1;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--format", format, "json, csv or text-table")
            ->check(CLI::IsMember({"json", "csv", "text-table"}));
        sub->add_option("--out", c.out, "output path (default stdout)");
        sub->add_option("--threads", c.threads, "worker threads")->check(CLI::Range(1u, 1024u));
        sub->add_option("--config", config_path, "re-run the config embedded in a report");
    };

    CLI::App* est = app.add_subcommand("estimate", "bound potential-outcome means and ATEs");
    est->add_option("--data", c.data, "input CSV");
    est->add_option("--outcome", c.outcome, "outcome column");
    est->add_option("--treatment", c.treatment, "treatment column");
    est->add_option("--instrument", c.instrument, "instrument column");
    est->add_option("--levels", levels, "declared treatment labels in order")->delimiter(',');
    est->add_option("--cutpoints", cutpoints, "treatment cutpoints")->delimiter(',');
    est->add_option("--instrument-cutpoints", instrument_cutpoints, "instrument cutpoints")->delimiter(',');
    est->add_option("--filter", filters, "keep rows with col=value (repeatable)");
    est->add_option("--trim-tau", c.trim_tau, "outcome trimming quantile");
    est->add_option("--support-mode", c.support_mode, "conditional or pooled")
        ->check(CLI::IsMember({"conditional", "pooled"}));
    est->add_option("--regime", c.regimes, "sdc, lei, mtr, mtr-nolei, manski-wc, manski-mi")->delimiter(',');
    est->add_option("--grid", grid, "lattice points per dimension");
    est->add_option("--refine", refine, "refinement passes");
    est->add_option("--target-levels", c.target_levels, "level indices to bound")->delimiter(',');
    est->add_option("--ate", ate, "ATE pair d,d' (repeatable)");
    est->add_option("--chain-mode", c.chain_mode, "upper, lower or none")
        ->check(CLI::IsMember({"upper", "lower", "none"}));
    est->add_option("--ate-timing", c.ate_timing, "after-chain or before-chain")
        ->check(CLI::IsMember({"after-chain", "before-chain"}));
    est->add_option("--min-cell-size", c.min_cell_size, "smallest instrument cell used by manski-mi");
    est->add_option("--boot", c.boot, "bootstrap replications (0 disables)");
    est->add_option("--level", c.level, "confidence level");
    est->add_option("--seed", c.seed, "bootstrap seed");
    common(est);

    CLI::App* sim = app.add_subcommand("simulate", "draw a sample with all potential outcomes");
    sim->add_option("--dgp", c.dgp, "example-a1, gaussian-copula, custom-file or a battery design");
    sim->add_option("--n", c.n, "units");
    sim->add_option("--seed", c.seed, "random seed");
    sim->add_option("--dgp-file", c.dgp_file, "population CSV for custom-file");
    sim->add_option("--rho", rho, "gaussian-copula correlations (Y,D),(Y,Z),(D,Z)")->delimiter(',');
    sim->add_option("--instrument-levels", c.instrument_levels, "gaussian-copula instrument bins (0: continuous)");
    sim->add_option("--emit-curves", c.curves_out, "write split-mean curves to this CSV");
    common(sim);

    CLI::App* val = app.add_subcommand("validate", "check the assumption lattice on a simulated sample");
    val->add_option("--in", c.in, "simulated sample CSV, - for stdin");
    val->add_option("--checks", c.checks, "all or a comma list of mts-miv, binarized, sdc, pqd, identities");
    common(val);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_input_error;
    }

    CLI::App* chosen = est->parsed() ? est : (sim->parsed() ? sim : val);
    c.command = chosen->get_name();
    try {
        c.format = format_from_name(format);
        if (!config_path.empty()) {
            for (const CLI::Option* opt : chosen->get_options()) {
                const std::string name = opt->get_name();
                if (opt->count() > 0 && name != "--config" && name != "--threads" && name != "--out")
                    throw InvalidArgument(name + " cannot be combined with --config");
            }
            RunConfig loaded = load_embedded_config(config_path);
            if (loaded.command != c.command)
                throw InvalidArgument(config_path + " holds a '" + loaded.command + "' config");
            loaded.threads = c.threads;
            loaded.out = c.out;
            c = loaded;
        } else {
            if (!levels.empty()) c.levels = levels;
            if (!cutpoints.empty()) c.cutpoints = cutpoints;
            if (!instrument_cutpoints.empty()) c.instrument_cutpoints = instrument_cutpoints;
            if (!rho.empty()) c.rho = rho;
            if (est->get_option("--grid")->count() > 0) c.grid_points = grid;
            if (est->get_option("--refine")->count() > 0) c.refine_passes = refine;
            for (const auto& a : ate) c.ate.push_back(parse_pair(a));
            for (const auto& f : filters) c.filters.push_back(parse_filter(f));
        }
        if (c.command == "estimate") return run_estimate(c, out, err);
        if (c.command == "simulate") return run_simulate(c, out, err);
        return run_validate(c, in, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        write_error(c, out, e.what(), exit_input_error);
        return exit_input_error;
    }
}

}  // namespace iiv

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace iiv {

enum ExitCode : int { exit_ok = 0, exit_input_error = 1, exit_rejected = 2, exit_check_failed = 3 };

enum class ReportFormat { json, csv, text_table };

/// Every resolved setting of one run. `threads`, `out` and `curves_out`
/// shape where and how fast output is produced, not what it contains, so
/// they are left out of the embedded config.
struct RunConfig {
    std::string command;  // estimate | simulate | validate
    ReportFormat format = ReportFormat::json;
    unsigned threads = 1;
    std::string out;  // empty or "-" for stdout

    // estimate
    std::string data;
    std::string outcome;
    std::string treatment;
    std::string instrument;
    std::optional<std::vector<std::string>> levels;
    std::optional<std::vector<double>> cutpoints;
    std::optional<std::vector<double>> instrument_cutpoints;
    std::vector<std::pair<std::string, std::string>> filters;
    double trim_tau = 0.0;
    std::string support_mode = "conditional";
    std::vector<std::string> regimes;  // empty: sdc, lei, mtr
    std::optional<int> grid_points;
    std::optional<int> refine_passes;
    std::vector<int> target_levels;  // empty: every level
    std::vector<std::pair<int, int>> ate;
    std::string chain_mode = "upper";  // upper | lower | none
    std::string ate_timing = "after-chain";  // after-chain | before-chain
    std::size_t min_cell_size = 10;
    std::size_t boot = 0;  // 0 disables the bootstrap
    double level = 0.95;
    std::uint64_t seed = 42;

    // simulate
    std::string dgp;
    std::size_t n = 0;
    std::string dgp_file;
    std::optional<std::vector<double>> rho;  // gaussian-copula: (Y,D), (Y,Z), (D,Z)
    int instrument_levels = 0;
    std::string curves_out;

    // validate
    std::string in;  // "-" for stdin
    std::string checks = "all";

    /// Throws InvalidArgument on inconsistent settings.
    void validate() const;
};

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

/// Reads the config embedded in a previous report: a JSON report or config
/// object, or a CSV whose leading comment lines carry "# config: {...}".
RunConfig load_embedded_config(const std::string& path);

/// Report time stamp in UTC; honours SOURCE_DATE_EPOCH when set.
std::string timestamp_utc();

int run_estimate(const RunConfig& config, std::ostream& out, std::ostream& err);
int run_simulate(const RunConfig& config, std::ostream& out, std::ostream& err);
int run_validate(const RunConfig& config, std::istream& in, std::ostream& out, std::ostream& err);

/// Parses arguments (argv[0] excluded) and dispatches; always returns one of
/// the exit codes above. Output goes to `out` unless the run names a file.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err);

}  // namespace iiv

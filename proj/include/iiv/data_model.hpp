#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace iiv {

/// Observed (Y, D, Z) triples. Treatment values are stored as indices into
/// an ordered list of level labels; the index doubles as the numeric
/// treatment value wherever one is needed (centering, standard deviation).
class Sample {
public:
    Sample(std::vector<double> y, std::vector<int> d, std::vector<double> z,
           std::vector<std::string> levels);

    std::size_t n() const noexcept { return y_.size(); }
    std::size_t num_levels() const noexcept { return levels_.size(); }

    const std::vector<double>& y() const noexcept { return y_; }
    const std::vector<int>& d() const noexcept { return d_; }
    const std::vector<double>& z() const noexcept { return z_; }
    const std::vector<std::string>& levels() const noexcept { return levels_; }

    std::vector<std::size_t> level_counts() const;

    /// Same d, z and levels with a replaced outcome vector.
    Sample with_outcome(std::vector<double> y) const;

    /// Rows picked by index, repeats allowed (bootstrap resampling).
    Sample take(std::span<const std::size_t> rows) const;

private:
    std::vector<double> y_;
    std::vector<int> d_;
    std::vector<double> z_;
    std::vector<std::string> levels_;
};

/// Per-level outcome support [lo_d, hi_d].
struct SupportBounds {
    std::vector<double> lo;
    std::vector<double> hi;

    SupportBounds(std::vector<double> lo_, std::vector<double> hi_);
    std::size_t size() const noexcept { return lo.size(); }
};

/// Centered treatment and instrument with plug-in (divisor n) standard
/// deviations.
struct MomentSummary {
    double mean_d = 0.0;
    double mean_z = 0.0;
    double sd_d = 0.0;
    double sd_z = 0.0;
    std::vector<double> d_tilde;
    std::vector<double> z_tilde;
};

/// Throws DegenerateVariable when D or Z has zero variance.
MomentSummary compute_moments(const Sample& sample);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool empty = false;

    /// Closed interval [lo, hi]; flagged empty (crossed endpoints kept) when lo > hi.
    static Interval from(double lo, double hi) noexcept { return {lo, hi, lo > hi}; }
    static Interval empty_interval(double lo, double hi) noexcept { return {lo, hi, true}; }

    bool contains(double x) const noexcept { return !empty && lo <= x && x <= hi; }
    bool contains(const Interval& other) const noexcept {
        return other.empty || (!empty && lo <= other.lo && other.hi <= hi);
    }
    double width() const noexcept { return hi - lo; }
};

/// A point of the parameter box [0,1]^dims: (alpha, beta) or (alpha, beta, mu).
struct ParamPoint {
    std::array<double, 3> x{};
    int dims = 0;

    double alpha() const noexcept { return x[0]; }
    double beta() const noexcept { return x[1]; }
    double mu() const noexcept { return dims == 3 ? x[2] : 0.0; }
};

/// Which optimizing parameter produced each endpoint.
struct EndpointArgs {
    ParamPoint lo1, hi1, lo2, hi2;
};

/// Union of the two sign branches of an identified set. Single-interval
/// regimes (worst-case and mean-independence baselines) leave branch2 unset.
struct BoundsSet {
    Interval branch1;
    std::optional<Interval> branch2;
    EndpointArgs args;

    bool rejected() const noexcept { return branch1.empty && (!branch2 || branch2->empty); }

    /// Smallest interval covering every non-empty branch; empty when rejected.
    Interval hull() const noexcept;
};

struct LoadOptions {
    std::string outcome_col;
    std::string treatment_col;
    std::string instrument_col;
    /// Declared treatment labels in order; cells must match one exactly.
    std::optional<std::vector<std::string>> levels;
    /// Discretize the treatment with these cutpoints (takes precedence over `levels`).
    std::optional<std::vector<double>> cutpoints;
    /// Discretize the instrument with these cutpoints into bin indices.
    std::optional<std::vector<double>> instrument_cutpoints;
    /// Keep only rows whose named column equals the given text (after trimming).
    std::vector<std::pair<std::string, std::string>> filters;
};

struct LoadResult {
    Sample sample;
    std::size_t rows_read = 0;
    std::size_t rows_filtered = 0;  // excluded by `filters`
    std::size_t rows_dropped = 0;   // missing or non-finite fields
};

LoadResult load_csv(const std::string& path, const LoadOptions& options);
LoadResult load_csv(const std::string& path, const std::string& outcome_col,
                    const std::string& treatment_col, const std::string& instrument_col);

/// Smallest order statistic whose empirical CDF is at least p, p in [0, 1].
double lower_quantile(std::span<const double> values, double p);
/// Same rule on data already sorted ascending.
double lower_quantile_sorted(std::span<const double> sorted, double p);

/// Clamps each outcome into [q_tau, q_{1-tau}] using lower empirical quantiles.
Sample trim_outcome(const Sample& sample, double tau);

/// Level of v = number of cutpoints <= v, so k cutpoints give k + 1 bins.
std::vector<int> discretize_treatment(std::span<const double> values,
                                      std::span<const double> cutpoints);

enum class SupportMode { conditional, pooled };

SupportBounds estimate_supports(const Sample& sample, SupportMode mode = SupportMode::conditional);

}  // namespace iiv

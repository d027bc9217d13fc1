#pragma once

#include "iiv/data_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace iiv {

/// Simulated units carrying every potential outcome. y_pot[k][i] is unit i's
/// outcome under level k; the realized outcome is y[i] = y_pot[d[i]][i].
struct PotentialSample {
    std::vector<double> v;
    std::vector<std::vector<double>> y_pot;
    std::vector<int> d;
    std::vector<double> z;
    std::vector<double> y;

    std::size_t n() const noexcept { return d.size(); }
    std::size_t num_levels() const noexcept { return y_pot.size(); }

    /// Throws InvalidArgument on ragged vectors, out-of-range levels or a
    /// realized outcome that differs from its potential outcome.
    void validate() const;

    /// Observed (Y, D, Z) view with level labels "0", "1", ...
    Sample observed() const;

    /// In-sample mean of the potential outcome for `level`.
    double theta(int level) const;
};

PotentialSample simulate_example_a1(std::size_t n, std::uint64_t seed);

/// Latent (W_y, W_d, W_z) standard normal with the given correlations.
/// D and (optionally) Z are equal-probability bins of W_d and W_z, and
/// Y_d = shift_d + Phi(W_y), or shift_d + W_y when `bounded` is false.
struct CopulaDesign {
    double rho_yd = 0.5;
    double rho_yz = 0.4;
    double rho_dz = 0.6;
    int treatment_levels = 3;
    int instrument_levels = 0;  // 0 keeps Z continuous (Z = W_z)
    double shift_per_level = 0.0;
    bool bounded = true;
};

PotentialSample simulate_gaussian_copula(const CopulaDesign& design, std::size_t n,
                                         std::uint64_t seed);

/// Discrete population read from CSV with columns d, z, y_0 .. y_{T-1} and an
/// optional nonnegative `weight`; units are drawn with probability
/// proportional to weight (uniform when the column is absent).
struct DiscretePopulation {
    std::vector<double> weight;
    std::vector<int> d;
    std::vector<double> z;
    std::vector<std::vector<double>> y_pot;  // [level][row]
};

DiscretePopulation load_population_csv(const std::string& path);
PotentialSample simulate_population(const DiscretePopulation& pop, std::size_t n,
                                    std::uint64_t seed);

struct DgpInfo {
    std::string name;
    std::string description;
    bool prd = false;  // jointly positively regression dependent by construction
};

/// Named designs used by the implication battery and the CLI.
const std::vector<DgpInfo>& dgp_battery();
PotentialSample simulate_named(const std::string& name, std::size_t n, std::uint64_t seed);

/// CSV round trip: columns v, d, z, y, y_0 .. y_{T-1}, doubles at full precision.
void write_potential_csv(std::ostream& out, const PotentialSample& ps);
PotentialSample read_potential_csv(std::istream& in);

/// One assumption verdict. `holds` is exactly `magnitude <= tolerance`; when
/// several comparisons are made the reported one is the comparison with the
/// largest excess of violation over its own tolerance.
struct CheckRow {
    std::string assumption;
    bool holds = true;
    double magnitude = 0.0;
    double tolerance = 0.0;
    int witness_d = -1;
    std::string witness;
};

struct AssumptionReport {
    std::vector<CheckRow> rows;
    const CheckRow* find(const std::string& assumption) const;
};

/// Rows "MTS", "MIV" and "MTS-MIV" (both in a common direction). Each potential
/// outcome picks its own best direction. Z with more than 20 distinct values
/// is grouped into 20 quantile cells. `only_level` restricts the check to one
/// potential outcome. Throws EmptyCell if a level is unobserved.
std::vector<CheckRow> check_mts_miv(const PotentialSample& ps,
                                    std::optional<int> only_level = std::nullopt);
CheckRow check_binarized(const PotentialSample& ps);
CheckRow check_sdc(const PotentialSample& ps);

enum class PqdPair { instrument, treatment };
/// Row "PQD(Yd,Z)" or "PQD(Yd,D)" with tolerance 3 / sqrt(n).
CheckRow check_pqd(const PotentialSample& ps, PqdPair pair);

struct IdentityCheck {
    int d = 0;
    double decomposition_residual = 0.0;
    double decomposition_scale = 0.0;
    double hoeffding_residual = 0.0;
    double hoeffding_tolerance = 0.0;
    bool hoeffding_exact = true;  // exact summation (discrete Z) or trapezoid rule
    bool holds = true;
};

/// Cov(Y_d, D) against the sum of Cov(Y_d, 1{D >= j}) (tolerance 1e-10 of
/// sd(Y_d) sd(D)), and Cov(Y_d, Z) against the integral of Cov(Y_d, 1{Z >= t})
/// over t: exact for Z with at most 20 distinct values (tolerance 1e-10 of
/// sd(Y_d) sd(Z)), else a 512-point trapezoid rule (tolerance 1e-3 |Cov|, with
/// |Cov| floored at 1e-2 sd(Y_d) sd(Z) so a near-zero covariance stays checkable).
std::vector<IdentityCheck> check_cov_identities(const PotentialSample& ps);

struct CurveRow {
    char curve = 'g';  // 'g': split on D >= threshold, 'h': split on Z >= threshold
    double threshold = 0.0;
    double plus = 0.0;
    double minus = 0.0;
    double se_plus = 0.0;
    double se_minus = 0.0;
};

std::vector<CurveRow> emit_curves(const PotentialSample& ps, int d);
void write_curves_csv(std::ostream& out, int d, const std::vector<CurveRow>& rows);

enum class Check { mts_miv, binarized, sdc, pqd, identities };
std::set<Check> parse_checks(const std::string& list);  // "all" or comma list
AssumptionReport run_checks(const PotentialSample& ps, const std::set<Check>& checks);

struct Implication {
    std::string antecedent;
    std::string consequent;
    bool antecedent_holds = false;
    bool consequent_holds = false;
    bool respected() const noexcept { return !antecedent_holds || consequent_holds; }
};

/// Arrows among the checked assumptions: MTS-MIV => binarized,
/// binarized => SDC, PQD (both pairs) => binarized, PQD (both pairs) => SDC.
/// Arrows whose rows are missing from the report are omitted.
std::vector<Implication> implications(const AssumptionReport& report);

}  // namespace iiv

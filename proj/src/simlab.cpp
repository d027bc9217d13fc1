#include "iiv/simlab.hpp"

#include "iiv/error.hpp"
#include "iiv/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

namespace iiv {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

std::vector<std::string> index_labels(std::size_t count) {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < count; ++k) out.push_back(std::to_string(k));
    return out;
}

/// Equal-probability cutpoints of a standard normal into `bins` cells.
std::vector<double> normal_cutpoints(int bins) {
    const boost::math::normal_distribution<double> unit;
    std::vector<double> cuts;
    for (int k = 1; k < bins; ++k)
        cuts.push_back(boost::math::quantile(unit, static_cast<double>(k) / bins));
    return cuts;
}

int bin_of(double x, const std::vector<double>& cuts) {
    return static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

PotentialSample allocate(std::size_t n, std::size_t levels) {
    PotentialSample ps;
    ps.v.assign(n, 0.0);
    ps.y_pot.assign(levels, std::vector<double>(n, 0.0));
    ps.d.assign(n, 0);
    ps.z.assign(n, 0.0);
    ps.y.assign(n, 0.0);
    return ps;
}

void realize(PotentialSample& ps) {
    for (std::size_t i = 0; i < ps.n(); ++i)
        ps.y[i] = ps.y_pot[static_cast<std::size_t>(ps.d[i])][i];
}

/// Latent-class design: class c uniform on {0, .., levels - 1}, D = c,
/// Z = instrument(c, rng) and Y_d = d + noise(c, z, rng).
template <typename Instrument, typename Noise>
PotentialSample latent_class(std::size_t n, std::uint64_t seed, std::size_t levels,
                             Instrument instrument, Noise noise) {
    Rng rng(seed);
    PotentialSample ps = allocate(n, levels);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<int>(rng.below(levels));
        ps.v[i] = static_cast<double>(c);
        ps.d[i] = c;
        ps.z[i] = instrument(c, rng);
        const double common = noise(c, ps.z[i], rng);
        for (std::size_t k = 0; k < levels; ++k) ps.y_pot[k][i] = static_cast<double>(k) + common;
    }
    realize(ps);
    return ps;
}

}  // namespace

// ---------------------------------------------------------------------------
// Potential samples

void PotentialSample::validate() const {
    const std::size_t n_units = d.size();
    if (n_units == 0) throw InvalidArgument("potential sample is empty");
    if (v.size() != n_units || z.size() != n_units || y.size() != n_units)
        throw InvalidArgument("potential sample columns differ in length");
    if (y_pot.empty()) throw InvalidArgument("potential sample has no levels");
    for (const auto& col : y_pot)
        if (col.size() != n_units) throw InvalidArgument("potential outcome column has wrong length");
    for (std::size_t i = 0; i < n_units; ++i) {
        if (d[i] < 0 || static_cast<std::size_t>(d[i]) >= y_pot.size())
            throw InvalidArgument("treatment level out of range at unit " + std::to_string(i));
        if (y[i] != y_pot[static_cast<std::size_t>(d[i])][i])
            throw InvalidArgument("realized outcome differs from potential outcome at unit " +
                                  std::to_string(i));
    }
}

Sample PotentialSample::observed() const { return Sample(y, d, z, index_labels(num_levels())); }

double PotentialSample::theta(int level) const {
    const auto& col = y_pot.at(static_cast<std::size_t>(level));
    return std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
}

PotentialSample simulate_example_a1(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("n must be positive");
    Rng rng(seed);
    PotentialSample ps = allocate(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.uniform(0.0, 5.0);
        const int d = v <= 1.0 ? 0 : (v <= 1.5 ? 1 : 2);
        const double u = (v >= 1.0 && v <= 2.0) ? 4.0 * v : v;
        ps.v[i] = v;
        ps.d[i] = d;
        ps.z[i] = 2.0 * d;
        for (std::size_t k = 0; k < 3; ++k) ps.y_pot[k][i] = 2.0 * static_cast<double>(k) + u;
    }
    realize(ps);
    return ps;
}

PotentialSample simulate_gaussian_copula(const CopulaDesign& design, std::size_t n,
                                         std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("n must be positive");
    if (design.treatment_levels < 2) throw InvalidArgument("copula design needs at least 2 levels");
    if (design.instrument_levels == 1 || design.instrument_levels < 0)
        throw InvalidArgument("instrument levels must be 0 (continuous) or at least 2");

    // Cholesky factor of the (y, d, z) correlation matrix.
    const double l10 = design.rho_yd;
    const double l11_sq = 1.0 - l10 * l10;
    if (!(l11_sq > 0.0)) throw InvalidArgument("copula correlations are not positive definite");
    const double l11 = std::sqrt(l11_sq);
    const double l20 = design.rho_yz;
    const double l21 = (design.rho_dz - l20 * l10) / l11;
    const double l22_sq = 1.0 - l20 * l20 - l21 * l21;
    if (!(l22_sq > 0.0)) throw InvalidArgument("copula correlations are not positive definite");
    const double l22 = std::sqrt(l22_sq);

    const auto d_cuts = normal_cutpoints(design.treatment_levels);
    const auto z_cuts = design.instrument_levels > 0 ? normal_cutpoints(design.instrument_levels)
                                                     : std::vector<double>{};
    const auto levels = static_cast<std::size_t>(design.treatment_levels);

    Rng rng(seed);
    PotentialSample ps = allocate(n, levels);
    for (std::size_t i = 0; i < n; ++i) {
        const double e0 = rng.normal();
        const double e1 = rng.normal();
        const double e2 = rng.normal();
        const double wy = e0;
        const double wd = l10 * e0 + l11 * e1;
        const double wz = l20 * e0 + l21 * e1 + l22 * e2;
        const double base = design.bounded ? normal_cdf(wy) : wy;
        ps.v[i] = wy;
        ps.d[i] = bin_of(wd, d_cuts);
        ps.z[i] = design.instrument_levels > 0 ? static_cast<double>(bin_of(wz, z_cuts)) : wz;
        for (std::size_t k = 0; k < levels; ++k)
            ps.y_pot[k][i] = design.shift_per_level * static_cast<double>(k) + base;
    }
    realize(ps);
    return ps;
}

// ---------------------------------------------------------------------------
// Discrete populations

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& text, std::size_t row, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw NonNumericCell(row, column, "expected a finite number, got '" + text + "'");
    }
}

struct Table {
    std::map<std::string, std::size_t> column;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

Table read_numeric_table(std::istream& in) {
    Table t;
    std::string line;
    bool found = false;
    while (std::getline(in, line)) {
        if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty() || line[0] != '#') {
            found = true;
            break;
        }
    }
    if (!found) throw EmptyAfterCleaning("input has no header row");
    t.header = split_csv_line(line);
    for (std::size_t k = 0; k < t.header.size(); ++k) t.column[t.header[k]] = k;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        ++row;
        const auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw NonNumericCell(row, "*", "expected " + std::to_string(t.header.size()) + " fields");
        std::vector<double> values(cells.size());
        for (std::size_t k = 0; k < cells.size(); ++k) values[k] = parse_number(cells[k], row, t.header[k]);
        t.rows.push_back(std::move(values));
    }
    if (t.rows.empty()) throw EmptyAfterCleaning("input has no data rows");
    return t;
}

std::size_t require(const Table& t, const std::string& name) {
    const auto it = t.column.find(name);
    if (it == t.column.end()) throw MissingColumn(name);
    return it->second;
}

std::size_t count_levels(const Table& t) {
    std::size_t levels = 0;
    while (t.column.count("y_" + std::to_string(levels))) ++levels;
    if (levels == 0) throw MissingColumn("y_0");
    return levels;
}

int level_value(double v, std::size_t row, std::size_t levels) {
    if (v != std::floor(v) || v < 0 || v >= static_cast<double>(levels))
        throw NonNumericCell(row, "d", "treatment must be an integer level in [0, " +
                                           std::to_string(levels) + ")");
    return static_cast<int>(v);
}

}  // namespace

DiscretePopulation load_population_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    const Table t = read_numeric_table(in);
    const std::size_t levels = count_levels(t);
    const std::size_t dc = require(t, "d");
    const std::size_t zc = require(t, "z");
    const auto wc = t.column.find("weight");

    DiscretePopulation pop;
    pop.y_pot.assign(levels, {});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const double w = wc == t.column.end() ? 1.0 : row[wc->second];
        if (w < 0) throw NonNumericCell(r + 1, "weight", "weight must be nonnegative");
        pop.weight.push_back(w);
        pop.d.push_back(level_value(row[dc], r + 1, levels));
        pop.z.push_back(row[zc]);
        for (std::size_t k = 0; k < levels; ++k)
            pop.y_pot[k].push_back(row[require(t, "y_" + std::to_string(k))]);
    }
    if (std::accumulate(pop.weight.begin(), pop.weight.end(), 0.0) <= 0.0)
        throw InvalidArgument("population weights sum to zero");
    return pop;
}

PotentialSample simulate_population(const DiscretePopulation& pop, std::size_t n,
                                    std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("n must be positive");
    if (pop.d.empty()) throw InvalidArgument("population is empty");
    std::vector<double> cumulative(pop.weight.size());
    std::partial_sum(pop.weight.begin(), pop.weight.end(), cumulative.begin());
    const double total = cumulative.back();
    Rng rng(seed);
    PotentialSample ps = allocate(n, pop.y_pot.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform() * total;
        auto r = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                          cumulative.begin());
        r = std::min(r, cumulative.size() - 1);
        ps.v[i] = static_cast<double>(r);
        ps.d[i] = pop.d[r];
        ps.z[i] = pop.z[r];
        for (std::size_t k = 0; k < pop.y_pot.size(); ++k) ps.y_pot[k][i] = pop.y_pot[k][r];
    }
    realize(ps);
    return ps;
}

// ---------------------------------------------------------------------------
// Named designs

const std::vector<DgpInfo>& dgp_battery() {
    static const std::vector<DgpInfo> battery = {
        {"example-a1", "non-monotone selection that still satisfies the binarized restriction", false},
        {"independence", "Y_d, D and a 5-level Z mutually independent", false},
        {"prd-continuous", "positive Gaussian copula, 3-level D, continuous Z", true},
        {"prd-discrete", "positive Gaussian copula, 3-level D, 4-level Z", true},
        {"prd-lei", "positive Gaussian copula, Z less endogenous than D, Y_d increasing in d", true},
        {"negative-dependence", "Y_d negatively dependent on both D and Z", false},
        {"pqd-only", "latent classes with quadrant dependence but non-monotone means", false},
        {"sdc-only", "positive covariances with a sign change in the D split gaps", false},
        {"anti-sdc", "Gaussian copula with Cov(Y_d, D) > 0 > Cov(Y_d, Z)", false},
        {"anti-sdc-discrete", "binary D and Z with Y_d = d + D - Z + noise", false},
        {"exogenous-d", "D independent of Y_d, Z positively dependent", false},
        {"exogenous-z", "Z independent of Y_d, D positively dependent", false},
    };
    return battery;
}

PotentialSample simulate_named(const std::string& name, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("n must be positive");
    auto copula = [&](double ryd, double ryz, double rdz, int z_levels, double shift) {
        CopulaDesign c;
        c.rho_yd = ryd;
        c.rho_yz = ryz;
        c.rho_dz = rdz;
        c.instrument_levels = z_levels;
        c.shift_per_level = shift;
        return simulate_gaussian_copula(c, n, seed);
    };
    if (name == "example-a1") return simulate_example_a1(n, seed);
    if (name == "independence") return copula(0.0, 0.0, 0.0, 5, 0.5);
    if (name == "prd-continuous" || name == "gaussian-copula") return copula(0.5, 0.4, 0.6, 0, 0.5);
    if (name == "prd-discrete") return copula(0.5, 0.4, 0.6, 4, 0.5);
    if (name == "prd-lei") return copula(0.6, 0.3, 0.5, 4, 0.5);
    if (name == "negative-dependence") return copula(-0.5, -0.4, 0.6, 0, 0.5);
    if (name == "anti-sdc") return copula(0.5, -0.4, 0.2, 0, 0.5);
    if (name == "exogenous-d") return copula(0.0, 0.5, 0.0, 0, 0.5);
    if (name == "exogenous-z") return copula(0.5, 0.0, 0.0, 0, 0.5);
    if (name == "pqd-only") {
        static constexpr std::array<double, 3> p = {0.2, 0.6, 0.5};
        return latent_class(
            n, seed, 3, [](int c, Rng&) { return static_cast<double>(c); },
            [](int c, double, Rng& rng) { return rng.bernoulli(p[static_cast<std::size_t>(c)]) ? 1.0 : 0.0; });
    }
    if (name == "sdc-only") {
        static constexpr std::array<double, 3> m = {0.0, 3.0, 1.0};
        return latent_class(
            n, seed, 3, [](int, Rng& rng) { return static_cast<double>(rng.below(3)); },
            [](int c, double z, Rng& rng) { return m[static_cast<std::size_t>(c)] + 0.5 * z + rng.uniform(); });
    }
    if (name == "anti-sdc-discrete") {
        return latent_class(
            n, seed, 2, [](int, Rng& rng) { return static_cast<double>(rng.below(2)); },
            [](int c, double z, Rng& rng) { return static_cast<double>(c) - z + 0.5 * rng.uniform(); });
    }
    throw InvalidArgument("unknown design '" + name + "'");
}

// ---------------------------------------------------------------------------
// CSV round trip

void write_potential_csv(std::ostream& out, const PotentialSample& ps) {
    ps.validate();
    out << "v,d,z,y";
    for (std::size_t k = 0; k < ps.num_levels(); ++k) out << ",y_" << k;
    out << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < ps.n(); ++i) {
        out << ps.v[i] << ',' << ps.d[i] << ',' << ps.z[i] << ',' << ps.y[i];
        for (const auto& col : ps.y_pot) out << ',' << col[i];
        out << '\n';
    }
}

PotentialSample read_potential_csv(std::istream& in) {
    const Table t = read_numeric_table(in);
    const std::size_t levels = count_levels(t);
    const std::size_t dc = require(t, "d");
    const std::size_t zc = require(t, "z");
    const auto vc = t.column.find("v");
    std::vector<std::size_t> yc;
    for (std::size_t k = 0; k < levels; ++k) yc.push_back(require(t, "y_" + std::to_string(k)));

    PotentialSample ps = allocate(t.rows.size(), levels);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        ps.v[r] = vc == t.column.end() ? 0.0 : row[vc->second];
        ps.d[r] = level_value(row[dc], r + 1, levels);
        ps.z[r] = row[zc];
        for (std::size_t k = 0; k < levels; ++k) ps.y_pot[k][r] = row[yc[k]];
    }
    realize(ps);
    if (const auto yit = t.column.find("y"); yit != t.column.end())
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            if (t.rows[r][yit->second] != ps.y[r])
                throw NonNumericCell(r + 1, "y", "realized outcome differs from y_d at the realized level");
    return ps;
}

// ---------------------------------------------------------------------------
// Assumption checks

const CheckRow* AssumptionReport::find(const std::string& assumption) const {
    for (const auto& r : rows)
        if (r.assumption == assumption) return &r;
    return nullptr;
}

namespace {

constexpr std::size_t kDiscreteLimit = 20;
constexpr std::size_t kMaxThresholds = 200;

struct Moments {
    double count = 0.0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double x) {
        count += 1.0;
        sum += x;
        sum_sq += x * x;
    }
    double mean() const { return sum / count; }
    double var() const { return std::max(0.0, sum_sq / count - mean() * mean()); }
    Moments operator-(const Moments& o) const { return {count - o.count, sum - o.sum, sum_sq - o.sum_sq}; }
};

std::vector<double> sorted_distinct(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    return values;
}

/// Grid of at most `limit` points: the distinct values when few, else lower
/// empirical quantiles at k / limit.
std::vector<double> quantile_grid(const std::vector<double>& values, std::size_t limit) {
    auto distinct = sorted_distinct(values);
    if (distinct.size() <= limit) return distinct;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> grid;
    for (std::size_t k = 1; k <= limit; ++k)
        grid.push_back(lower_quantile_sorted(sorted, static_cast<double>(k) / static_cast<double>(limit)));
    return sorted_distinct(grid);
}

/// Instrument cell index per unit: distinct values when few, else 20 quantile cells.
std::vector<int> instrument_cells(const std::vector<double>& z, std::vector<double>& labels) {
    const auto distinct = sorted_distinct(z);
    std::vector<int> cell(z.size());
    if (distinct.size() <= kDiscreteLimit) {
        labels = distinct;
        for (std::size_t i = 0; i < z.size(); ++i)
            cell[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), z[i]) - distinct.begin());
        return cell;
    }
    std::vector<double> sorted = z;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (std::size_t k = 1; k < kDiscreteLimit; ++k)
        edges.push_back(lower_quantile_sorted(sorted, static_cast<double>(k) / static_cast<double>(kDiscreteLimit)));
    edges = sorted_distinct(edges);
    // Cell k holds edges[k-1] < z <= edges[k].
    std::vector<int> raw(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        raw[i] = static_cast<int>(std::lower_bound(edges.begin(), edges.end(), z[i]) - edges.begin());
    std::vector<int> used = raw;
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    labels.clear();
    for (int u : used) {
        const auto k = static_cast<std::size_t>(u);
        labels.push_back(k < edges.size() ? edges[k] : sorted.back());
    }
    for (std::size_t i = 0; i < z.size(); ++i)
        cell[i] = static_cast<int>(std::lower_bound(used.begin(), used.end(), raw[i]) - used.begin());
    return cell;
}

CheckRow named_row(std::string assumption) {
    CheckRow row;
    row.assumption = std::move(assumption);
    return row;
}

std::string fmt(double x) {
    std::ostringstream s;
    s << std::setprecision(6) << x;
    return s.str();
}

/// Candidate comparison for a row: keep the one with the larger excess.
void consider(CheckRow& best, double magnitude, double tolerance, int d, std::string witness,
              bool& first) {
    const double excess = magnitude - tolerance;
    if (first || excess > best.magnitude - best.tolerance) {
        best.magnitude = magnitude;
        best.tolerance = tolerance;
        best.witness_d = d;
        best.witness = std::move(witness);
        first = false;
    }
}

struct Violation {
    double magnitude = 0.0;
    double tolerance = 0.0;
    std::size_t at = 0;  // index of the lower cell in the adjacent pair
    double excess() const { return magnitude - tolerance; }
};

/// Worst adjacent violation of monotonicity in the given direction.
Violation worst_adjacent(const std::vector<Moments>& cells, bool increasing) {
    Violation worst;
    bool first = true;
    for (std::size_t k = 0; k + 1 < cells.size(); ++k) {
        const double diff = cells[k + 1].mean() - cells[k].mean();
        const double viol = std::max(0.0, increasing ? -diff : diff);
        const double se = std::sqrt(cells[k].var() / cells[k].count + cells[k + 1].var() / cells[k + 1].count);
        const Violation v{viol, 3.0 * se, k};
        if (first || v.excess() > worst.excess()) {
            worst = v;
            first = false;
        }
    }
    return worst;
}

std::vector<Moments> cell_moments(const std::vector<double>& y, const std::vector<int>& cell,
                                  std::size_t cells) {
    std::vector<Moments> out(cells);
    for (std::size_t i = 0; i < y.size(); ++i) out[static_cast<std::size_t>(cell[i])].add(y[i]);
    return out;
}

void require_levels_observed(const PotentialSample& ps) {
    std::vector<std::size_t> counts(ps.num_levels(), 0);
    for (int d : ps.d) ++counts[static_cast<std::size_t>(d)];
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] == 0) throw EmptyCell("treatment level " + std::to_string(k) + " has no units");
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / n;
}

/// Covariance with the standard error of its plug-in estimator.
std::pair<double, double> covariance_se(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double p = (a[i] - ma) * (b[i] - mb);
        s += p;
        s2 += p * p;
    }
    const double cov = s / n;
    const double var = std::max(0.0, s2 / n - cov * cov);
    return {cov, std::sqrt(var / n)};
}

double stddev(const std::vector<double>& a) { return std::sqrt(std::max(0.0, covariance(a, a))); }

std::vector<double> as_double(const std::vector<int>& v) { return {v.begin(), v.end()}; }

/// Means of Y on either side of thresholds t of a key, {key >= t} against
/// {key < t}; thresholds leaving one side empty are skipped. Moments are
/// accumulated around the overall mean to keep the variances well conditioned.
struct Split {
    double threshold;
    Moments upper;
    Moments lower;
    double shift;
    double upper_mean() const { return upper.mean() + shift; }
    double lower_mean() const { return lower.mean() + shift; }
    double gap() const { return upper.mean() - lower.mean(); }
    double se() const { return std::sqrt(upper.var() / upper.count + lower.var() / lower.count); }
};

std::vector<Split> splits(const std::vector<double>& y, const std::vector<double>& key,
                          const std::vector<double>& thresholds) {
    std::vector<std::size_t> order(y.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    const double shift = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    Moments total;
    for (double v : y) total.add(v - shift);
    std::vector<Split> out;
    Moments below;
    std::size_t pos = 0;
    for (double t : thresholds) {
        while (pos < order.size() && key[order[pos]] < t) below.add(y[order[pos++]] - shift);
        if (below.count == 0 || below.count == total.count) continue;
        out.push_back({t, total - below, below, shift});
    }
    return out;
}

std::vector<double> treatment_thresholds(const PotentialSample& ps) {
    std::vector<double> out;
    for (std::size_t k = 1; k < ps.num_levels(); ++k) out.push_back(static_cast<double>(k));
    return out;
}

/// Observed instrument values above the minimum, or interior quantiles at
/// k / 200 when there are more than 200 of them.
std::vector<double> instrument_thresholds(const PotentialSample& ps) {
    auto distinct = sorted_distinct(ps.z);
    if (distinct.size() <= kMaxThresholds) return {distinct.begin() + 1, distinct.end()};
    std::vector<double> sorted = ps.z;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> grid;
    for (std::size_t k = 1; k < kMaxThresholds; ++k)
        grid.push_back(lower_quantile_sorted(sorted, static_cast<double>(k) / static_cast<double>(kMaxThresholds)));
    grid = sorted_distinct(grid);
    if (grid.front() == sorted.front()) grid.erase(grid.begin());
    return grid;
}

}  // namespace

std::vector<CheckRow> check_mts_miv(const PotentialSample& ps, std::optional<int> only_level) {
    ps.validate();
    require_levels_observed(ps);
    std::vector<double> z_labels;
    const auto z_cell = instrument_cells(ps.z, z_labels);

    CheckRow mts = named_row("MTS"), miv = named_row("MIV"), joint = named_row("MTS-MIV");
    bool f1 = true, f2 = true, f3 = true;
    if (only_level && (*only_level < 0 || static_cast<std::size_t>(*only_level) >= ps.num_levels()))
        throw InvalidArgument("level out of range");
    for (std::size_t k = 0; k < ps.num_levels(); ++k) {
        const int d = static_cast<int>(k);
        if (only_level && *only_level != d) continue;
        const auto by_d = cell_moments(ps.y_pot[k], ps.d, ps.num_levels());
        const auto by_z = cell_moments(ps.y_pot[k], z_cell, z_labels.size());
        std::array<Violation, 2> vd = {worst_adjacent(by_d, true), worst_adjacent(by_d, false)};
        std::array<Violation, 2> vz = {worst_adjacent(by_z, true), worst_adjacent(by_z, false)};
        const char* dir[2] = {"increasing", "decreasing"};

        const int bd = vd[1].excess() < vd[0].excess() ? 1 : 0;
        consider(mts, vd[bd].magnitude, vd[bd].tolerance, d,
                 "d=" + std::to_string(d) + " " + dir[bd] + " between D=" + std::to_string(vd[bd].at) +
                     " and D=" + std::to_string(vd[bd].at + 1),
                 f1);
        const int bz = vz[1].excess() < vz[0].excess() ? 1 : 0;
        consider(miv, vz[bz].magnitude, vz[bz].tolerance, d,
                 "d=" + std::to_string(d) + " " + dir[bz] + " between Z cells at " +
                     fmt(z_labels[std::min(vz[bz].at, z_labels.size() - 1)]) + " and " +
                     fmt(z_labels[std::min(vz[bz].at + 1, z_labels.size() - 1)]),
                 f2);
        // Common direction: the worse of the two checks, minimized over directions.
        auto pair_worst = [&](int s) { return vd[s].excess() >= vz[s].excess() ? std::pair{vd[s], 'D'} : std::pair{vz[s], 'Z'}; };
        const auto inc = pair_worst(0), dec = pair_worst(1);
        const int bj = dec.first.excess() < inc.first.excess() ? 1 : 0;
        const auto& w = bj == 0 ? inc : dec;
        consider(joint, w.first.magnitude, w.first.tolerance, d,
                 "d=" + std::to_string(d) + " " + dir[bj] + " fails along " + std::string(1, w.second),
                 f3);
    }
    for (CheckRow* r : {&mts, &miv, &joint}) r->holds = r->magnitude <= r->tolerance;
    return {mts, miv, joint};
}

CheckRow check_binarized(const PotentialSample& ps) {
    ps.validate();
    const auto dd = as_double(ps.d);
    const auto d_thresholds = treatment_thresholds(ps);
    const auto z_thresholds = instrument_thresholds(ps);
    CheckRow row = named_row("binarized");
    bool first = true;
    for (std::size_t k = 0; k < ps.num_levels(); ++k) {
        const auto g = splits(ps.y_pot[k], dd, d_thresholds);
        const auto h = splits(ps.y_pot[k], ps.z, z_thresholds);
        for (const auto& gs : g)
            for (const auto& hs : h) {
                const double a = gs.gap(), b = hs.gap();
                const double sa = gs.se(), sb = hs.se();
                const double product = a * b;
                const double tol = 3.0 * std::sqrt(a * a * sb * sb + b * b * sa * sa + sa * sa * sb * sb);
                consider(row, std::max(0.0, -product), tol, static_cast<int>(k),
                         "d=" + std::to_string(k) + " j=" + fmt(gs.threshold) + " z=" + fmt(hs.threshold),
                         first);
            }
    }
    row.holds = row.magnitude <= row.tolerance;
    return row;
}

CheckRow check_sdc(const PotentialSample& ps) {
    ps.validate();
    const auto dd = as_double(ps.d);
    CheckRow row = named_row("SDC");
    bool first = true;
    for (std::size_t k = 0; k < ps.num_levels(); ++k) {
        const auto [c1, s1] = covariance_se(ps.y_pot[k], dd);
        const auto [c2, s2] = covariance_se(ps.y_pot[k], ps.z);
        const double product = c1 * c2;
        const double tol = 3.0 * std::sqrt(c1 * c1 * s2 * s2 + c2 * c2 * s1 * s1 + s1 * s1 * s2 * s2);
        consider(row, std::max(0.0, -product), tol, static_cast<int>(k),
                 "d=" + std::to_string(k) + " Cov(Y_d,D)=" + fmt(c1) + " Cov(Y_d,Z)=" + fmt(c2), first);
    }
    row.holds = row.magnitude <= row.tolerance;
    return row;
}

CheckRow check_pqd(const PotentialSample& ps, PqdPair pair) {
    ps.validate();
    const auto dd = as_double(ps.d);
    const std::vector<double>& other = pair == PqdPair::instrument ? ps.z : dd;
    CheckRow row = named_row(pair == PqdPair::instrument ? "PQD(Yd,Z)" : "PQD(Yd,D)");
    const double n = static_cast<double>(ps.n());
    const double tol = 3.0 / std::sqrt(n);
    const auto grid_b = quantile_grid(other, kMaxThresholds);
    bool first = true;
    for (std::size_t k = 0; k < ps.num_levels(); ++k) {
        const auto& y = ps.y_pot[k];
        const auto grid_a = quantile_grid(y, kMaxThresholds);
        const std::size_t ga = grid_a.size(), gb = grid_b.size();
        // cum[a][b] counts units with y <= grid_a[a] and other <= grid_b[b].
        std::vector<double> cum(ga * gb, 0.0);
        for (std::size_t i = 0; i < ps.n(); ++i) {
            const auto ia = static_cast<std::size_t>(std::lower_bound(grid_a.begin(), grid_a.end(), y[i]) - grid_a.begin());
            const auto ib = static_cast<std::size_t>(std::lower_bound(grid_b.begin(), grid_b.end(), other[i]) - grid_b.begin());
            if (ia < ga && ib < gb) cum[ia * gb + ib] += 1.0;
        }
        for (std::size_t a = 0; a < ga; ++a)
            for (std::size_t b = 0; b < gb; ++b) {
                double v = cum[a * gb + b];
                if (a > 0) v += cum[(a - 1) * gb + b];
                if (b > 0) v += cum[a * gb + b - 1];
                if (a > 0 && b > 0) v -= cum[(a - 1) * gb + b - 1];
                cum[a * gb + b] = v;
            }
        // Marginals: units with y <= grid_a[a] regardless of the other variable.
        std::vector<double> fa(ga, 0.0), fb(gb, 0.0);
        {
            std::vector<double> sy = y, so = other;
            std::sort(sy.begin(), sy.end());
            std::sort(so.begin(), so.end());
            for (std::size_t a = 0; a < ga; ++a)
                fa[a] = static_cast<double>(std::upper_bound(sy.begin(), sy.end(), grid_a[a]) - sy.begin()) / n;
            for (std::size_t b = 0; b < gb; ++b)
                fb[b] = static_cast<double>(std::upper_bound(so.begin(), so.end(), grid_b[b]) - so.begin()) / n;
        }
        for (std::size_t a = 0; a < ga; ++a)
            for (std::size_t b = 0; b < gb; ++b) {
                const double gap = cum[a * gb + b] / n - fa[a] * fb[b];
                consider(row, std::max(0.0, -gap), tol, static_cast<int>(k),
                         "d=" + std::to_string(k) + " y=" + fmt(grid_a[a]) + " at=" + fmt(grid_b[b]), first);
            }
    }
    row.holds = row.magnitude <= row.tolerance;
    return row;
}

std::vector<IdentityCheck> check_cov_identities(const PotentialSample& ps) {
    ps.validate();
    const auto dd = as_double(ps.d);
    const auto n = static_cast<double>(ps.n());
    const auto z_distinct = sorted_distinct(ps.z);
    const bool exact = z_distinct.size() <= kDiscreteLimit;

    std::vector<std::size_t> z_order(ps.n());
    std::iota(z_order.begin(), z_order.end(), 0);
    std::sort(z_order.begin(), z_order.end(), [&](std::size_t a, std::size_t b) { return ps.z[a] < ps.z[b]; });

    std::vector<IdentityCheck> out;
    for (std::size_t k = 0; k < ps.num_levels(); ++k) {
        const auto& y = ps.y_pot[k];
        IdentityCheck ic;
        ic.d = static_cast<int>(k);

        const double cov_d = covariance(y, dd);
        double sum = 0.0;
        std::vector<double> indicator(ps.n());
        for (std::size_t j = 1; j < ps.num_levels(); ++j) {
            for (std::size_t i = 0; i < ps.n(); ++i) indicator[i] = ps.d[i] >= static_cast<int>(j) ? 1.0 : 0.0;
            sum += covariance(y, indicator);
        }
        ic.decomposition_residual = std::abs(cov_d - sum);
        ic.decomposition_scale = std::max(stddev(y) * stddev(dd), std::numeric_limits<double>::min());

        // Cov(Y, 1{Z >= t}) = sum over units with z >= t of (y - mean y) / n.
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
        std::vector<double> tail(ps.n() + 1, 0.0);  // tail[p]: sum over sorted positions >= p
        for (std::size_t p = ps.n(); p-- > 0;) tail[p] = tail[p + 1] + (y[z_order[p]] - my);
        auto cov_tail = [&](double t) {
            const auto p = static_cast<std::size_t>(
                std::lower_bound(z_order.begin(), z_order.end(), t,
                                 [&](std::size_t i, double v) { return ps.z[i] < v; }) -
                z_order.begin());
            return tail[p] / n;
        };
        const double cov_z = covariance(y, ps.z);
        double integral = 0.0;
        if (exact) {
            for (std::size_t m = 1; m < z_distinct.size(); ++m)
                integral += (z_distinct[m] - z_distinct[m - 1]) * cov_tail(z_distinct[m]);
            ic.hoeffding_tolerance = 1e-10 * std::max(stddev(y) * stddev(ps.z), std::numeric_limits<double>::min());
        } else {
            constexpr int points = 512;
            const double lo = z_distinct.front(), hi = z_distinct.back();
            const double h = (hi - lo) / (points - 1);
            for (int m = 0; m < points; ++m) {
                const double t = m == points - 1 ? hi : lo + h * m;
                const double w = (m == 0 || m == points - 1) ? 0.5 : 1.0;
                integral += w * cov_tail(t);
            }
            integral *= h;
            ic.hoeffding_tolerance = 1e-3 * std::max(std::abs(cov_z), 1e-2 * stddev(y) * stddev(ps.z));
        }
        ic.hoeffding_exact = exact;
        ic.hoeffding_residual = std::abs(cov_z - integral);
        ic.holds = ic.decomposition_residual <= 1e-10 * ic.decomposition_scale &&
                   ic.hoeffding_residual <= ic.hoeffding_tolerance;
        out.push_back(ic);
    }
    return out;
}

std::vector<CurveRow> emit_curves(const PotentialSample& ps, int d) {
    ps.validate();
    if (d < 0 || static_cast<std::size_t>(d) >= ps.num_levels())
        throw InvalidArgument("curve level out of range");
    const auto& y = ps.y_pot[static_cast<std::size_t>(d)];
    std::vector<CurveRow> out;
    auto push = [&](char curve, const std::vector<Split>& s) {
        for (const auto& sp : s)
            out.push_back({curve, sp.threshold, sp.upper_mean(), sp.lower_mean(),
                           std::sqrt(sp.upper.var() / sp.upper.count),
                           std::sqrt(sp.lower.var() / sp.lower.count)});
    };
    push('g', splits(y, as_double(ps.d), treatment_thresholds(ps)));
    push('h', splits(y, ps.z, instrument_thresholds(ps)));
    return out;
}

void write_curves_csv(std::ostream& out, int d, const std::vector<CurveRow>& rows) {
    out << "d,curve,threshold,plus,minus,se_plus,se_minus\n" << std::setprecision(10);
    for (const auto& r : rows)
        out << d << ',' << r.curve << ',' << r.threshold << ',' << r.plus << ',' << r.minus << ','
            << r.se_plus << ',' << r.se_minus << '\n';
}

std::set<Check> parse_checks(const std::string& list) {
    static const std::map<std::string, Check> names = {
        {"mts-miv", Check::mts_miv}, {"binarized", Check::binarized}, {"sdc", Check::sdc},
        {"pqd", Check::pqd},         {"identities", Check::identities}};
    std::set<Check> out;
    std::istringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "all") {
            for (const auto& [_, c] : names) out.insert(c);
            continue;
        }
        const auto it = names.find(item);
        if (it == names.end()) throw InvalidArgument("unknown check '" + item + "'");
        out.insert(it->second);
    }
    if (out.empty()) throw InvalidArgument("no checks requested");
    return out;
}

AssumptionReport run_checks(const PotentialSample& ps, const std::set<Check>& checks) {
    AssumptionReport report;
    if (checks.count(Check::mts_miv))
        for (auto& r : check_mts_miv(ps)) report.rows.push_back(std::move(r));
    if (checks.count(Check::binarized)) report.rows.push_back(check_binarized(ps));
    if (checks.count(Check::sdc)) report.rows.push_back(check_sdc(ps));
    if (checks.count(Check::pqd)) {
        report.rows.push_back(check_pqd(ps, PqdPair::instrument));
        report.rows.push_back(check_pqd(ps, PqdPair::treatment));
    }
    if (checks.count(Check::identities)) {
        CheckRow row = named_row("identities");
        bool first = true;
        for (const auto& ic : check_cov_identities(ps)) {
            consider(row, ic.decomposition_residual, 1e-10 * ic.decomposition_scale, ic.d,
                     "d=" + std::to_string(ic.d) + " decomposition", first);
            consider(row, ic.hoeffding_residual, ic.hoeffding_tolerance, ic.d,
                     "d=" + std::to_string(ic.d) + (ic.hoeffding_exact ? " hoeffding (exact)" : " hoeffding (trapezoid)"),
                     first);
        }
        row.holds = row.magnitude <= row.tolerance;
        report.rows.push_back(row);
    }
    return report;
}

std::vector<Implication> implications(const AssumptionReport& report) {
    std::vector<Implication> out;
    auto arrow = [&](const std::string& label, std::vector<const CheckRow*> from,
                     const std::string& to_name) {
        const CheckRow* to = report.find(to_name);
        if (!to) return;
        bool holds = true;
        for (const CheckRow* f : from) {
            if (!f) return;
            holds = holds && f->holds;
        }
        out.push_back({label, to_name, holds, to->holds});
    };
    const CheckRow* pqd_z = report.find("PQD(Yd,Z)");
    const CheckRow* pqd_d = report.find("PQD(Yd,D)");
    arrow("MTS-MIV", {report.find("MTS-MIV")}, "binarized");
    arrow("binarized", {report.find("binarized")}, "SDC");
    arrow("PQD", {pqd_z, pqd_d}, "binarized");
    arrow("PQD", {pqd_z, pqd_d}, "SDC");
    return out;
}

}  // namespace iiv

#include "iiv/data_model.hpp"

#include "iiv/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace iiv {

Sample::Sample(std::vector<double> y, std::vector<int> d, std::vector<double> z,
               std::vector<std::string> levels)
    : y_(std::move(y)), d_(std::move(d)), z_(std::move(z)), levels_(std::move(levels)) {
    if (y_.empty()) throw EmptyAfterCleaning("sample has no observations");
    if (d_.size() != y_.size() || z_.size() != y_.size())
        throw InvalidArgument("y, d and z must have the same length");
    if (levels_.empty()) throw InvalidArgument("sample needs at least one treatment level");
    const auto num_levels = static_cast<int>(levels_.size());
    for (std::size_t i = 0; i < y_.size(); ++i) {
        if (d_[i] < 0 || d_[i] >= num_levels)
            throw InvalidArgument("treatment index out of range at row " + std::to_string(i));
        if (!std::isfinite(y_[i]) || !std::isfinite(z_[i]))
            throw InvalidArgument("non-finite value at row " + std::to_string(i));
    }
    std::set<std::string> unique(levels_.begin(), levels_.end());
    if (unique.size() != levels_.size()) throw InvalidArgument("duplicate treatment level label");
}

std::vector<std::size_t> Sample::level_counts() const {
    std::vector<std::size_t> counts(levels_.size(), 0);
    for (int d : d_) ++counts[static_cast<std::size_t>(d)];
    return counts;
}

Sample Sample::with_outcome(std::vector<double> y) const {
    return Sample(std::move(y), d_, z_, levels_);
}

Sample Sample::take(std::span<const std::size_t> rows) const {
    std::vector<double> y;
    std::vector<int> d;
    std::vector<double> z;
    y.reserve(rows.size());
    d.reserve(rows.size());
    z.reserve(rows.size());
    for (std::size_t r : rows) {
        y.push_back(y_.at(r));
        d.push_back(d_[r]);
        z.push_back(z_[r]);
    }
    return Sample(std::move(y), std::move(d), std::move(z), levels_);
}

SupportBounds::SupportBounds(std::vector<double> lo_, std::vector<double> hi_)
    : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw InvalidArgument("support vectors differ in length");
    for (std::size_t k = 0; k < lo.size(); ++k)
        if (!(lo[k] <= hi[k]))
            throw InvalidArgument("support lower end exceeds upper end for level " +
                                  std::to_string(k));
}

Interval BoundsSet::hull() const noexcept {
    bool any = false;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    auto absorb = [&](const Interval& b) {
        if (b.empty) return;
        any = true;
        lo = std::min(lo, b.lo);
        hi = std::max(hi, b.hi);
    };
    absorb(branch1);
    if (branch2) absorb(*branch2);
    if (!any) return Interval::empty_interval(branch1.lo, branch1.hi);
    return Interval::from(lo, hi);
}

namespace {

bool all_equal(const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_about(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

MomentSummary compute_moments(const Sample& sample) {
    std::vector<double> d(sample.d().begin(), sample.d().end());
    const auto& z = sample.z();
    if (all_equal(d)) throw DegenerateVariable("treatment takes a single value; sd_d = 0");
    if (all_equal(z)) throw DegenerateVariable("instrument takes a single value; sd_z = 0");

    MomentSummary m;
    m.mean_d = mean_of(d);
    m.mean_z = mean_of(z);
    m.sd_d = sd_about(d, m.mean_d);
    m.sd_z = sd_about(z, m.mean_z);
    m.d_tilde.resize(d.size());
    m.z_tilde.resize(z.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        m.d_tilde[i] = d[i] - m.mean_d;
        m.z_tilde[i] = z[i] - m.mean_z;
    }
    return m;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(trim(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(trim(cell));
    return cells;
}

bool is_missing_token(const std::string& s) {
    return s.empty() || s == "." || s == "NA" || s == "na" || s == "N/A" || s == "NaN" ||
           s == "nan" || s == "null" || s == "NULL";
}

enum class Parsed { ok, missing, invalid };

Parsed parse_number(const std::string& s, double& out) {
    if (is_missing_token(s)) return Parsed::missing;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) return Parsed::invalid;
    if (!std::isfinite(out)) return Parsed::missing;
    return Parsed::ok;
}

std::string format_cut(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::vector<std::string> bin_labels(const std::vector<double>& cuts) {
    std::vector<std::string> labels;
    if (cuts.empty()) return {"all"};
    labels.push_back("<" + format_cut(cuts.front()));
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
        labels.push_back("[" + format_cut(cuts[k]) + "," + format_cut(cuts[k + 1]) + ")");
    labels.push_back(">=" + format_cut(cuts.back()));
    return labels;
}

void check_ascending(const std::vector<double>& cuts, const char* what) {
    for (std::size_t k = 1; k < cuts.size(); ++k)
        if (!(cuts[k - 1] < cuts[k]))
            throw InvalidArgument(std::string(what) + " cutpoints must be strictly ascending");
}

bool cell_matches(const std::string& cell, const std::string& wanted) {
    if (cell == wanted) return true;
    double a = 0.0, b = 0.0;
    return parse_number(cell, a) == Parsed::ok && parse_number(wanted, b) == Parsed::ok && a == b;
}

}  // namespace

LoadResult load_csv(const std::string& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw EmptyAfterCleaning(path + " is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = split_csv_line(line);
    auto column_index = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn(name);
        return static_cast<std::size_t>(std::distance(header.begin(), it));
    };
    const std::size_t y_col = column_index(options.outcome_col);
    const std::size_t d_col = column_index(options.treatment_col);
    const std::size_t z_col = column_index(options.instrument_col);
    std::vector<std::pair<std::size_t, std::string>> filters;
    for (const auto& [col, value] : options.filters) filters.emplace_back(column_index(col), value);

    if (options.cutpoints) check_ascending(*options.cutpoints, "treatment");
    if (options.instrument_cutpoints) check_ascending(*options.instrument_cutpoints, "instrument");

    std::vector<double> y, z, d_raw;
    std::vector<int> d_declared;
    std::size_t rows_read = 0, rows_filtered = 0, rows_dropped = 0;

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        ++rows_read;
        auto cells = split_csv_line(line);
        if (cells.size() < header.size()) cells.resize(header.size());

        bool keep = true;
        for (const auto& [col, value] : filters)
            if (!cell_matches(cells[col], value)) keep = false;
        if (!keep) {
            ++rows_filtered;
            continue;
        }

        double yv = 0.0, zv = 0.0, dv = 0.0;
        const Parsed py = parse_number(cells[y_col], yv);
        if (py == Parsed::invalid) throw NonNumericCell(row, options.outcome_col, "not a number: '" + cells[y_col] + "'");
        const Parsed pz = parse_number(cells[z_col], zv);
        if (pz == Parsed::invalid) throw NonNumericCell(row, options.instrument_col, "not a number: '" + cells[z_col] + "'");

        const std::string& dcell = cells[d_col];
        bool d_missing = false;
        int declared_index = -1;
        if (options.levels && !options.cutpoints) {
            if (is_missing_token(dcell)) {
                d_missing = true;
            } else {
                const auto& lv = *options.levels;
                auto it = std::find(lv.begin(), lv.end(), dcell);
                if (it == lv.end())
                    throw NonNumericCell(row, options.treatment_col, "undeclared treatment level '" + dcell + "'");
                declared_index = static_cast<int>(std::distance(lv.begin(), it));
            }
        } else {
            const Parsed pd = parse_number(dcell, dv);
            if (pd == Parsed::invalid) throw NonNumericCell(row, options.treatment_col, "not a number: '" + dcell + "'");
            d_missing = pd == Parsed::missing;
            if (!d_missing && !options.cutpoints && dv != std::floor(dv))
                throw NonNumericCell(row, options.treatment_col, "treatment is not integer-valued: '" + dcell + "'");
        }

        if (py == Parsed::missing || pz == Parsed::missing || d_missing) {
            ++rows_dropped;
            continue;
        }
        y.push_back(yv);
        z.push_back(zv);
        d_raw.push_back(dv);
        d_declared.push_back(declared_index);
    }
    if (y.empty()) throw EmptyAfterCleaning("no complete rows left in " + path);

    std::vector<int> d;
    std::vector<std::string> levels;
    if (options.cutpoints) {
        d = discretize_treatment(d_raw, *options.cutpoints);
        levels = bin_labels(*options.cutpoints);
    } else if (options.levels) {
        d = std::move(d_declared);
        levels = *options.levels;
    } else {
        std::map<double, int> index;
        for (double v : d_raw) index.emplace(v, 0);
        int k = 0;
        for (auto& [value, idx] : index) {
            idx = k++;
            std::ostringstream os;
            os << static_cast<long long>(value);
            levels.push_back(os.str());
        }
        d.reserve(d_raw.size());
        for (double v : d_raw) d.push_back(index.at(v));
    }
    if (options.instrument_cutpoints) {
        const auto bins = discretize_treatment(z, *options.instrument_cutpoints);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<double>(bins[i]);
    }

    return LoadResult{Sample(std::move(y), std::move(d), std::move(z), std::move(levels)),
                      rows_read, rows_filtered, rows_dropped};
}

LoadResult load_csv(const std::string& path, const std::string& outcome_col,
                    const std::string& treatment_col, const std::string& instrument_col) {
    LoadOptions options;
    options.outcome_col = outcome_col;
    options.treatment_col = treatment_col;
    options.instrument_col = instrument_col;
    return load_csv(path, options);
}

// ---------------------------------------------------------------------------
// Preprocessing

double lower_quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty vector");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile level outside [0, 1]");
    const double n = static_cast<double>(sorted.size());
    // k/n >= p  <=>  k >= p n; the slack absorbs rounding in p * n.
    auto k = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, sorted.size());
    return sorted[k - 1];
}

double lower_quantile(std::span<const double> values, double p) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return lower_quantile_sorted(sorted, p);
}

Sample trim_outcome(const Sample& sample, double tau) {
    if (!(tau >= 0.0 && tau < 0.5)) throw InvalidArgument("trim tau must lie in [0, 0.5)");
    std::vector<double> sorted = sample.y();
    std::sort(sorted.begin(), sorted.end());
    const double lo = lower_quantile_sorted(sorted, tau);
    const double hi = lower_quantile_sorted(sorted, 1.0 - tau);
    std::vector<double> y = sample.y();
    for (double& v : y) v = std::clamp(v, lo, hi);
    return sample.with_outcome(std::move(y));
}

std::vector<int> discretize_treatment(std::span<const double> values,
                                      std::span<const double> cutpoints) {
    for (std::size_t k = 1; k < cutpoints.size(); ++k)
        if (!(cutpoints[k - 1] < cutpoints[k]))
            throw InvalidArgument("cutpoints must be strictly ascending");
    std::vector<int> out;
    out.reserve(values.size());
    for (double v : values) {
        auto it = std::upper_bound(cutpoints.begin(), cutpoints.end(), v);
        out.push_back(static_cast<int>(std::distance(cutpoints.begin(), it)));
    }
    return out;
}

SupportBounds estimate_supports(const Sample& sample, SupportMode mode) {
    const std::size_t levels = sample.num_levels();
    const auto& y = sample.y();
    if (mode == SupportMode::pooled) {
        const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
        return SupportBounds(std::vector<double>(levels, *mn), std::vector<double>(levels, *mx));
    }
    std::vector<double> lo(levels, std::numeric_limits<double>::infinity());
    std::vector<double> hi(levels, -std::numeric_limits<double>::infinity());
    std::vector<bool> seen(levels, false);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto k = static_cast<std::size_t>(sample.d()[i]);
        lo[k] = std::min(lo[k], y[i]);
        hi[k] = std::max(hi[k], y[i]);
        seen[k] = true;
    }
    for (std::size_t k = 0; k < levels; ++k)
        if (!seen[k])
            throw EmptyCell("treatment level '" + sample.levels()[k] + "' has no observations");
    return SupportBounds(std::move(lo), std::move(hi));
}

}  // namespace iiv

#include "iiv/bounds_engine.hpp"

#include "iiv/error.hpp"
#include "iiv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace iiv {

void GridSpec::validate() const {
    if (points_per_dim < 2) throw InvalidArgument("grid needs at least 2 points per dimension");
    if (refine_passes < 0) throw InvalidArgument("refine passes must be non-negative");
    if (!(refine_shrink > 0.0 && refine_shrink < 1.0))
        throw InvalidArgument("refine shrink must lie in (0, 1)");
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

struct Candidate {
    double value = 0.0;
    ParamPoint point;
    bool valid = false;
};

bool lex_less(const ParamPoint& a, const ParamPoint& b) noexcept {
    for (int k = 0; k < a.dims; ++k) {
        if (a.x[k] < b.x[k]) return true;
        if (a.x[k] > b.x[k]) return false;
    }
    return false;
}

/// Strict total order: better value first, then lexicographically smaller point.
bool better(const Candidate& a, const Candidate& b, Direction dir) noexcept {
    if (!a.valid) return false;
    if (!b.valid) return true;
    const bool a_nan = std::isnan(a.value);
    const bool b_nan = std::isnan(b.value);
    if (a_nan != b_nan) return b_nan;
    if (!a_nan && a.value != b.value)
        return dir == Direction::maximize ? a.value > b.value : a.value < b.value;
    return lex_less(a.point, b.point);
}

/// Per-dimension coordinates of a box lattice. The last coordinate is set to
/// `hi` exactly so the unit lattice always contains both 0 and 1.
std::vector<double> axis(double lo, double hi, int points) {
    std::vector<double> out(static_cast<std::size_t>(points));
    const int last = points - 1;
    for (int k = 0; k < points; ++k) {
        if (lo == 0.0 && hi == 1.0)
            out[static_cast<std::size_t>(k)] = static_cast<double>(k) / static_cast<double>(last);
        else
            out[static_cast<std::size_t>(k)] = lo + (hi - lo) * (static_cast<double>(k) / static_cast<double>(last));
    }
    out.back() = hi;
    out.front() = lo;
    return out;
}

Candidate search_box(const Objective& objective, int dims, Direction dir,
                     const std::array<std::vector<double>, 3>& axes, unsigned threads) {
    std::size_t total = 1;
    for (int k = 0; k < dims; ++k) total *= axes[static_cast<std::size_t>(k)].size();

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, total);
    std::vector<Candidate> partial(workers);
    const std::size_t block = (total + workers - 1) / workers;
    parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
        const std::size_t begin = w * block;
        const std::size_t end = std::min(total, begin + block);
        Candidate best;
        for (std::size_t flat = begin; flat < end; ++flat) {
            ParamPoint p;
            p.dims = dims;
            std::size_t rest = flat;
            for (int k = dims - 1; k >= 0; --k) {
                const auto& ax = axes[static_cast<std::size_t>(k)];
                p.x[static_cast<std::size_t>(k)] = ax[rest % ax.size()];
                rest /= ax.size();
            }
            Candidate c{objective(p), p, true};
            if (better(c, best, dir)) best = c;
        }
        partial[w] = best;
    });
    Candidate best;
    for (const auto& c : partial)
        if (better(c, best, dir)) best = c;
    return best;
}

}  // namespace

OptimResult optimize(const Objective& objective, int dims, Direction direction,
                     const GridSpec& grid, unsigned threads) {
    if (dims != 2 && dims != 3) throw InvalidArgument("optimize supports 2 or 3 dimensions");
    grid.validate();

    std::array<std::vector<double>, 3> axes;
    for (int k = 0; k < dims; ++k) axes[static_cast<std::size_t>(k)] = axis(0.0, 1.0, grid.points_per_dim);
    Candidate best = search_box(objective, dims, direction, axes, threads);

    double side = 1.0;
    for (int pass = 0; pass < grid.refine_passes; ++pass) {
        side *= grid.refine_shrink;
        for (int k = 0; k < dims; ++k) {
            const double c = best.point.x[static_cast<std::size_t>(k)];
            const double lo = std::max(0.0, c - side / 2.0);
            const double hi = std::min(1.0, c + side / 2.0);
            axes[static_cast<std::size_t>(k)] = axis(lo, hi, grid.points_per_dim);
        }
        const Candidate refined = search_box(objective, dims, direction, axes, threads);
        if (better(refined, best, direction)) best = refined;
    }
    return {best.value, best.point};
}

// ---------------------------------------------------------------------------
// Kernel means

namespace {

/// Neumaier compensated sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace

KernelMean::KernelMean(const Sample& sample, const SupportBounds& supports,
                       const MomentSummary& moments, int target, KernelFamily family, Side side)
    : sd_d_(moments.sd_d), sd_z_(moments.sd_z), inv_n_(1.0 / static_cast<double>(sample.n())) {
    if (target < 0 || static_cast<std::size_t>(target) >= sample.num_levels())
        throw InvalidArgument("target level out of range");
    if (supports.size() != sample.num_levels())
        throw InvalidArgument("supports do not match the sample's levels");
    if (moments.d_tilde.size() != sample.n()) throw InvalidArgument("moments do not match the sample");

    const auto kernel = [&](double y, int d, double delta_i) {
        return family == KernelFamily::bounded_support
                   ? f_kernel(side, y, d, target, delta_i, supports)
                   : m_kernel(side, y, d, target, delta_i, supports);
    };

    std::map<std::pair<int, double>, std::size_t> cell_of;
    const auto& y = sample.y();
    const auto& d = sample.d();
    const auto& z = sample.z();
    for (std::size_t i = 0; i < sample.n(); ++i) cell_of.emplace(std::pair{d[i], z[i]}, 0);
    std::size_t next = 0;
    for (auto& [key, idx] : cell_of) idx = next++;

    d_tilde_.assign(next, 0.0);
    z_tilde_.assign(next, 0.0);
    std::vector<CompensatedSum> pos(next), neg(next);
    for (std::size_t i = 0; i < sample.n(); ++i) {
        const std::size_t c = cell_of.at({d[i], z[i]});
        d_tilde_[c] = moments.d_tilde[i];
        z_tilde_[c] = moments.z_tilde[i];
        pos[c].add(kernel(y[i], d[i], 1.0));
        neg[c].add(-kernel(y[i], d[i], -1.0));
    }
    weight_pos_.resize(next);
    weight_neg_.resize(next);
    for (std::size_t c = 0; c < next; ++c) {
        weight_pos_[c] = pos[c].value();
        weight_neg_[c] = neg[c].value();
    }
}

double KernelMean::operator()(const DeltaParams& params) const noexcept {
    CompensatedSum sum;
    for (std::size_t c = 0; c < d_tilde_.size(); ++c) {
        const double dl = delta(params, d_tilde_[c], z_tilde_[c], sd_d_, sd_z_);
        sum.add(dl * (dl >= 0.0 ? weight_pos_[c] : weight_neg_[c]));
    }
    return sum.value() * inv_n_;
}

// ---------------------------------------------------------------------------
// Identified sets

std::string to_string(Regime regime) {
    switch (regime) {
        case Regime::sdc: return "sdc";
        case Regime::lei: return "lei";
        case Regime::mtr: return "mtr";
        case Regime::mtr_nolei: return "mtr-nolei";
        case Regime::manski_wc: return "manski-wc";
        case Regime::manski_mi: return "manski-mi";
    }
    return "unknown";
}

Regime regime_from_string(const std::string& name) {
    for (Regime r : {Regime::sdc, Regime::lei, Regime::mtr, Regime::mtr_nolei, Regime::manski_wc,
                     Regime::manski_mi})
        if (to_string(r) == name) return r;
    throw InvalidArgument("unknown regime '" + name + "'");
}

bool is_mtr(Regime regime) noexcept { return regime == Regime::mtr || regime == Regime::mtr_nolei; }

namespace {

BoundsSet two_branch_bounds(const Sample& sample, const SupportBounds& supports,
                            const MomentSummary& moments, int target, const GridSpec& grid,
                            KernelFamily family, DeltaMode mode, unsigned threads) {
    const int dims = mode == DeltaMode::lei ? 3 : 2;
    const KernelMean lower(sample, supports, moments, target, family, Side::lower);
    const KernelMean upper(sample, supports, moments, target, family, Side::upper);

    auto objective = [&](const KernelMean& mean, Sign sign) {
        return [&mean, sign, mode](const ParamPoint& p) {
            return mean(DeltaParams{p.alpha(), p.beta(), p.mu(), sign, mode});
        };
    };

    const auto lo1 = optimize(objective(lower, Sign::minus), dims, Direction::maximize, grid, threads);
    const auto hi1 = optimize(objective(upper, Sign::plus), dims, Direction::minimize, grid, threads);
    const auto lo2 = optimize(objective(lower, Sign::plus), dims, Direction::maximize, grid, threads);
    const auto hi2 = optimize(objective(upper, Sign::minus), dims, Direction::minimize, grid, threads);

    BoundsSet out;
    out.branch1 = Interval::from(lo1.value, hi1.value);
    out.branch2 = Interval::from(lo2.value, hi2.value);
    out.args = {lo1.arg, hi1.arg, lo2.arg, hi2.arg};
    return out;
}

}  // namespace

BoundsSet bounds_sdc(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid,
                     unsigned threads) {
    return two_branch_bounds(sample, supports, moments, target, grid,
                             KernelFamily::bounded_support, DeltaMode::sdc, threads);
}

BoundsSet bounds_lei(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid,
                     unsigned threads) {
    return two_branch_bounds(sample, supports, moments, target, grid,
                             KernelFamily::bounded_support, DeltaMode::lei, threads);
}

BoundsSet bounds_mtr(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid, bool use_lei,
                     unsigned threads) {
    return two_branch_bounds(sample, supports, moments, target, grid,
                             KernelFamily::monotone_response,
                             use_lei ? DeltaMode::lei : DeltaMode::sdc, threads);
}

Interval bounds_manski_wc(const Sample& sample, const SupportBounds& supports, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= sample.num_levels())
        throw InvalidArgument("target level out of range");
    const auto t = static_cast<std::size_t>(target);
    CompensatedSum lo, hi;
    for (std::size_t i = 0; i < sample.n(); ++i) {
        const bool factual = sample.d()[i] == target;
        lo.add(factual ? sample.y()[i] : supports.lo[t]);
        hi.add(factual ? sample.y()[i] : supports.hi[t]);
    }
    const double inv_n = 1.0 / static_cast<double>(sample.n());
    return Interval::from(lo.value() * inv_n, hi.value() * inv_n);
}

ManskiMiResult bounds_manski_mi(const Sample& sample, const SupportBounds& supports, int target,
                                std::size_t min_cell_size) {
    if (target < 0 || static_cast<std::size_t>(target) >= sample.num_levels())
        throw InvalidArgument("target level out of range");
    const auto t = static_cast<std::size_t>(target);
    struct Cell {
        std::size_t count = 0;
        CompensatedSum lo_sum;
        CompensatedSum hi_sum;
    };
    std::map<double, Cell> cells;
    for (std::size_t i = 0; i < sample.n(); ++i) {
        Cell& c = cells[sample.z()[i]];
        const bool factual = sample.d()[i] == target;
        ++c.count;
        c.lo_sum.add(factual ? sample.y()[i] : supports.lo[t]);
        c.hi_sum.add(factual ? sample.y()[i] : supports.hi[t]);
    }
    ManskiMiResult out;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& [zv, c] : cells) {
        if (c.count < min_cell_size) {
            out.skipped_cells.push_back(zv);
            continue;
        }
        ++out.cells_used;
        const double n = static_cast<double>(c.count);
        lo = std::max(lo, c.lo_sum.value() / n);
        hi = std::min(hi, c.hi_sum.value() / n);
    }
    if (out.cells_used == 0)
        throw EmptyCell("no instrument cell has at least " + std::to_string(min_cell_size) +
                        " observations");
    out.interval = Interval::from(lo, hi);
    return out;
}

ThetaBounds estimate_regime(const Sample& sample, const SupportBounds& supports, Regime regime,
                            const std::vector<int>& targets, const EstimateOptions& options) {
    ThetaBounds theta;
    theta.regime = regime;
    theta.levels.assign(sample.num_levels(), std::nullopt);

    std::optional<MomentSummary> moments;
    if (regime != Regime::manski_wc && regime != Regime::manski_mi) moments = compute_moments(sample);
    const int dims = (regime == Regime::lei || regime == Regime::mtr) ? 3 : 2;
    const GridSpec grid = options.grid.value_or(GridSpec::defaults_for(dims));

    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= sample.num_levels())
            throw InvalidArgument("target level " + std::to_string(t) + " out of range");
        BoundsSet set;
        switch (regime) {
            case Regime::sdc: set = bounds_sdc(sample, supports, *moments, t, grid, options.threads); break;
            case Regime::lei: set = bounds_lei(sample, supports, *moments, t, grid, options.threads); break;
            case Regime::mtr: set = bounds_mtr(sample, supports, *moments, t, grid, true, options.threads); break;
            case Regime::mtr_nolei:
                set = bounds_mtr(sample, supports, *moments, t, grid, false, options.threads);
                break;
            case Regime::manski_wc: set.branch1 = bounds_manski_wc(sample, supports, t); break;
            case Regime::manski_mi:
                set.branch1 = bounds_manski_mi(sample, supports, t, options.min_cell_size).interval;
                break;
        }
        theta.levels[static_cast<std::size_t>(t)] = set;
    }
    return theta;
}

// ---------------------------------------------------------------------------
// ATE and chaining

namespace {

std::vector<Interval> nonempty_branches(const BoundsSet& set) {
    std::vector<Interval> out;
    if (!set.branch1.empty) out.push_back(set.branch1);
    if (set.branch2 && !set.branch2->empty) out.push_back(*set.branch2);
    return out;
}

const BoundsSet& level_or_throw(const ThetaBounds& theta, int d) {
    if (d < 0 || static_cast<std::size_t>(d) >= theta.levels.size() || !theta.levels[static_cast<std::size_t>(d)])
        throw InvalidArgument("ATE requires bounds for level " + std::to_string(d));
    return *theta.levels[static_cast<std::size_t>(d)];
}

}  // namespace

Interval ate_bounds(const ThetaBounds& theta, int d, int d_prime) {
    const auto first = nonempty_branches(level_or_throw(theta, d));
    const auto second = nonempty_branches(level_or_throw(theta, d_prime));
    if (first.empty() || second.empty())
        throw RejectedModel("ATE(" + std::to_string(d) + "," + std::to_string(d_prime) +
                            "): every branch pair is empty");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& a : first)
        for (const auto& b : second) {
            lo = std::min(lo, a.lo - b.hi);
            hi = std::max(hi, a.hi - b.lo);
        }
    if (is_mtr(theta.regime)) {
        if (d > d_prime) lo = std::max(lo, 0.0);
        if (d < d_prime) hi = std::min(hi, 0.0);
    }
    return Interval::from(lo, hi);
}

ThetaBounds mtr_chain(const ThetaBounds& theta, ChainMode mode) {
    ThetaBounds out = theta;
    double floor = -std::numeric_limits<double>::infinity();
    for (auto& level : out.levels) {
        if (!level) continue;
        auto raise = [floor](Interval& b) {
            if (b.empty || b.lo >= floor) return;
            b.lo = floor;
            b.empty = b.lo > b.hi;
        };
        raise(level->branch1);
        if (level->branch2) raise(*level->branch2);
        const Interval hull = level->hull();
        if (!hull.empty) floor = std::max(floor, mode == ChainMode::upper ? hull.hi : hull.lo);
    }
    return out;
}

}  // namespace iiv

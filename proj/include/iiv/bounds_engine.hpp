#pragma once

#include "iiv/data_model.hpp"
#include "iiv/kernels.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace iiv {

/// Lattice resolution and shrinking-box refinement for the sup/inf over [0,1]^k.
struct GridSpec {
    int points_per_dim = 101;
    int refine_passes = 2;
    double refine_shrink = 0.2;

    /// 101 points per dimension for (alpha, beta), 51 for (alpha, beta, mu).
    static GridSpec defaults_for(int dims) noexcept {
        return dims == 3 ? GridSpec{51, 2, 0.2} : GridSpec{101, 2, 0.2};
    }
    void validate() const;
};

enum class Direction { maximize, minimize };

struct OptimResult {
    double value = 0.0;
    ParamPoint arg;
};

using Objective = std::function<double(const ParamPoint&)>;

/// Exhaustive lattice search followed by refine_passes re-griddings of a box
/// centred on the incumbent, its side scaled by refine_shrink each pass and
/// clipped to the unit cube. Ties go to the lexicographically smallest point,
/// so the result is independent of `threads`.
OptimResult optimize(const Objective& objective, int dims, Direction direction,
                     const GridSpec& grid, unsigned threads = 1);

enum class KernelFamily { bounded_support, monotone_response };

/// Sample mean of a bounding kernel as a function of the delta parameters.
///
/// Every kernel is positively homogeneous in delta, k(c delta) = c k(delta)
/// for c >= 0, so an observation contributes delta * k(+1) when delta >= 0
/// and -delta * k(-1) otherwise. Observations sharing (d, z) share delta,
/// which lets the mean be evaluated over distinct (d, z) cells only.
class KernelMean {
public:
    KernelMean(const Sample& sample, const SupportBounds& supports, const MomentSummary& moments,
               int target, KernelFamily family, Side side);

    double operator()(const DeltaParams& params) const noexcept;
    std::size_t cells() const noexcept { return d_tilde_.size(); }

private:
    std::vector<double> d_tilde_;
    std::vector<double> z_tilde_;
    std::vector<double> weight_pos_;
    std::vector<double> weight_neg_;
    double sd_d_ = 0.0;
    double sd_z_ = 0.0;
    double inv_n_ = 0.0;
};

enum class Regime { sdc, lei, mtr, mtr_nolei, manski_wc, manski_mi };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);
bool is_mtr(Regime regime) noexcept;

/// Bounds on theta_d for every requested level (unset entries were not requested).
struct ThetaBounds {
    Regime regime = Regime::sdc;
    std::vector<std::optional<BoundsSet>> levels;
};

struct AteBounds {
    Regime regime = Regime::sdc;
    struct Pair {
        int d = 0;
        int d_prime = 0;
        Interval interval;
    };
    std::vector<Pair> pairs;
};

BoundsSet bounds_sdc(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid,
                     unsigned threads = 1);

BoundsSet bounds_lei(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid,
                     unsigned threads = 1);

BoundsSet bounds_mtr(const Sample& sample, const SupportBounds& supports,
                     const MomentSummary& moments, int target, const GridSpec& grid,
                     bool use_lei, unsigned threads = 1);

Interval bounds_manski_wc(const Sample& sample, const SupportBounds& supports, int target);

struct ManskiMiResult {
    Interval interval;
    std::size_t cells_used = 0;
    std::vector<double> skipped_cells;  // instrument values whose cell was too small
};

/// Worst-case bounds within each instrument cell, intersected across cells.
/// Cells with fewer than min_cell_size observations are skipped and listed.
ManskiMiResult bounds_manski_mi(const Sample& sample, const SupportBounds& supports, int target,
                                std::size_t min_cell_size = 10);

/// Identified-set bounds for each listed target level under one regime.
/// Grids: dims-appropriate defaults unless `grid` is given.
struct EstimateOptions {
    std::optional<GridSpec> grid;
    unsigned threads = 1;
    std::size_t min_cell_size = 10;
};

ThetaBounds estimate_regime(const Sample& sample, const SupportBounds& supports, Regime regime,
                            const std::vector<int>& targets, const EstimateOptions& options = {});

/// ATE(d, d') bounds from the branch intervals of theta_d and theta_d'.
/// Throws RejectedModel when every branch pair is empty.
Interval ate_bounds(const ThetaBounds& theta, int d, int d_prime);

enum class ChainMode { upper, lower };

/// Sweeps levels upward raising each lower bound to the (chained) upper
/// bound of the level below (upper) or to its lower bound (lower).
ThetaBounds mtr_chain(const ThetaBounds& theta, ChainMode mode = ChainMode::upper);

}  // namespace iiv

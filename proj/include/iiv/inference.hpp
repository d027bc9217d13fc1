#pragma once

#include "iiv/data_model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace iiv {

struct BootSpec {
    std::size_t replications = 2000;
    double level = 0.95;
    std::uint64_t seed = 42;

    /// Throws InvalidArgument unless replications >= 100 and 0 < level < 1.
    void validate() const;
};

/// Percentile region for one branch: [q_{a/2} of lower-bound replicates,
/// q_{1-a/2} of upper-bound replicates] with a = 1 - level.
struct BranchRegion {
    Interval estimate;
    Interval region;
    double empty_fraction = 0.0;  // share of kept replicates where the branch crossed
};

struct ConfidenceRegion {
    std::vector<BranchRegion> branches;
    Interval combined;  // hull of the non-empty branch regions
    bool disjoint = false;
    double level = 0.95;
    std::size_t replications = 0;
    std::size_t dropped_replicates = 0;
    double rejected_fraction = 0.0;  // share of kept replicates with every branch empty
};

using BoundsEstimator = std::function<BoundsSet(const Sample&)>;

/// Nonparametric bootstrap of a deterministic bounds estimator. Replicate r
/// resamples n rows with a generator seeded by derive_stream_seed(seed, r),
/// so the result does not depend on `threads`. Resamples that lose a
/// treatment level, or on which the estimator reports a degenerate or empty
/// cell, are dropped and counted. Throws InvalidArgument if all are dropped.
ConfidenceRegion bootstrap_bounds(const Sample& sample, const BoundsEstimator& estimator,
                                  const BootSpec& spec, unsigned threads = 1);

struct UnionResult {
    Interval interval;
    bool disjoint = false;
};

/// Smallest interval containing every non-empty region; `disjoint` is set
/// when the regions do not form one connected interval. Throws AllEmpty.
UnionResult union_region(const std::vector<Interval>& regions);

}  // namespace iiv

#include "iiv/inference.hpp"

#include "iiv/error.hpp"
#include "iiv/parallel.hpp"
#include "iiv/rng.hpp"

#include <algorithm>
#include <optional>

namespace iiv {

void BootSpec::validate() const {
    if (replications < 100) throw InvalidArgument("bootstrap needs at least 100 replications");
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must lie in (0, 1)");
}

UnionResult union_region(const std::vector<Interval>& regions) {
    std::vector<Interval> live;
    for (const auto& r : regions)
        if (!r.empty) live.push_back(r);
    if (live.empty()) throw AllEmpty("every branch region is empty");
    std::sort(live.begin(), live.end(), [](const Interval& a, const Interval& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });
    UnionResult out;
    double reach = live.front().hi;
    for (std::size_t k = 1; k < live.size(); ++k) {
        if (live[k].lo > reach) out.disjoint = true;
        reach = std::max(reach, live[k].hi);
    }
    out.interval = Interval::from(live.front().lo, reach);
    return out;
}

ConfidenceRegion bootstrap_bounds(const Sample& sample, const BoundsEstimator& estimator,
                                  const BootSpec& spec, unsigned threads) {
    spec.validate();
    const BoundsSet point = estimator(sample);
    const std::size_t num_branches = point.branch2 ? 2 : 1;
    const std::size_t n = sample.n();
    const std::size_t levels = sample.num_levels();

    std::vector<std::optional<BoundsSet>> reps(spec.replications);
    parallel_for(spec.replications, threads, [&](std::size_t r) {
        Rng rng(derive_stream_seed(spec.seed, r));
        std::vector<std::size_t> rows(n);
        std::vector<std::size_t> seen(levels, 0);
        for (auto& row : rows) {
            row = static_cast<std::size_t>(rng.below(n));
            ++seen[static_cast<std::size_t>(sample.d()[row])];
        }
        if (std::find(seen.begin(), seen.end(), 0) != seen.end()) return;
        try {
            reps[r] = estimator(sample.take(rows));
        } catch (const DegenerateVariable&) {
        } catch (const EmptyCell&) {
        }
    });

    ConfidenceRegion out;
    out.level = spec.level;
    std::vector<const BoundsSet*> kept;
    for (const auto& rep : reps)
        if (rep) kept.push_back(&*rep);
    out.replications = kept.size();
    out.dropped_replicates = spec.replications - kept.size();
    if (kept.empty()) throw InvalidArgument("every bootstrap resample was degenerate");

    const double a = 1.0 - spec.level;
    const auto kept_n = static_cast<double>(kept.size());
    std::size_t rejected = 0;
    for (const BoundsSet* rep : kept) rejected += rep->rejected() ? 1 : 0;
    out.rejected_fraction = static_cast<double>(rejected) / kept_n;

    std::vector<Interval> regions;
    for (std::size_t b = 0; b < num_branches; ++b) {
        std::vector<double> lo, hi;
        lo.reserve(kept.size());
        hi.reserve(kept.size());
        std::size_t empty = 0;
        for (const BoundsSet* rep : kept) {
            const Interval& br = b == 0 ? rep->branch1 : *rep->branch2;
            lo.push_back(br.lo);
            hi.push_back(br.hi);
            empty += br.empty ? 1 : 0;
        }
        BranchRegion region;
        region.estimate = b == 0 ? point.branch1 : *point.branch2;
        region.region = Interval::from(lower_quantile(lo, a / 2.0), lower_quantile(hi, 1.0 - a / 2.0));
        region.empty_fraction = static_cast<double>(empty) / kept_n;
        regions.push_back(region.region);
        out.branches.push_back(region);
    }
    try {
        const UnionResult u = union_region(regions);
        out.combined = u.interval;
        out.disjoint = u.disjoint;
    } catch (const AllEmpty&) {
        out.combined = Interval::empty_interval(regions.front().lo, regions.front().hi);
    }
    return out;
}

}  // namespace iiv

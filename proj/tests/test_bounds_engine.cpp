#include "iiv/bounds_engine.hpp"
#include "iiv/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace iiv;
using iiv::testing::random_sample;

namespace {

GridSpec grid(int points, int passes) { return GridSpec{points, passes, 0.2}; }

BoundsSet single(double lo, double hi) {
    BoundsSet b;
    b.branch1 = Interval::from(lo, hi);
    return b;
}

ThetaBounds theta_of(Regime regime, std::vector<BoundsSet> levels) {
    ThetaBounds t;
    t.regime = regime;
    for (auto& b : levels) t.levels.emplace_back(std::move(b));
    return t;
}

void expect_branch_inside(const Interval& inner, const Interval& outer, double tol) {
    if (inner.empty) return;
    ASSERT_FALSE(outer.empty);
    EXPECT_GE(inner.lo, outer.lo - tol);
    EXPECT_LE(inner.hi, outer.hi + tol);
}

}  // namespace

TEST(Optimize, ConstantObjectiveTiesToOrigin) {
    for (int dims : {2, 3}) {
        const auto r = optimize([](const ParamPoint&) { return 4.25; }, dims, Direction::maximize,
                                grid(11, 2), 3);
        EXPECT_EQ(r.value, 4.25);
        EXPECT_EQ(r.arg.dims, dims);
        for (int k = 0; k < dims; ++k) EXPECT_EQ(r.arg.x[static_cast<std::size_t>(k)], 0.0);
    }
}

TEST(Optimize, OnLatticeOptimumIsExact) {
    const Objective f = [](const ParamPoint& p) {
        return -(p.alpha() - 0.3) * (p.alpha() - 0.3) - (p.beta() - 0.7) * (p.beta() - 0.7);
    };
    const auto r = optimize(f, 2, Direction::maximize, grid(101, 0));
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.arg.alpha(), 0.3);
    EXPECT_EQ(r.arg.beta(), 0.7);
}

TEST(Optimize, RefinementConverges) {
    const Objective f = [](const ParamPoint& p) {
        return -(p.alpha() - 0.3) * (p.alpha() - 0.3) - (p.beta() - 0.7) * (p.beta() - 0.7);
    };
    const auto r = optimize(f, 2, Direction::maximize, grid(11, 2));
    EXPECT_NEAR(r.value, 0.0, 1e-4);
    const Objective g = [](const ParamPoint& p) {
        return std::abs(p.alpha() - 0.123) + std::abs(p.beta() - 0.456) + std::abs(p.mu() - 0.789);
    };
    const auto m = optimize(g, 3, Direction::minimize, grid(11, 2));
    EXPECT_NEAR(m.value, 0.0, 0.02);
}

TEST(Optimize, LatticeIncludesEndpoints) {
    const auto r = optimize([](const ParamPoint& p) { return p.alpha() + p.beta(); }, 2,
                            Direction::maximize, grid(7, 0));
    EXPECT_EQ(r.arg.alpha(), 1.0);
    EXPECT_EQ(r.arg.beta(), 1.0);
}

TEST(Optimize, ThreadCountDoesNotMatter) {
    Rng rng(3);
    std::vector<double> coef(9);
    for (auto& c : coef) c = rng.uniform(-1, 1);
    const Objective f = [&](const ParamPoint& p) {
        // Piecewise-linear with plateaus so ties are common.
        const double v = coef[0] * p.alpha() + coef[1] * p.beta() + coef[2] * p.mu();
        return std::floor(8.0 * std::abs(v - coef[3])) + std::min(0.0, coef[4] * p.alpha());
    };
    for (int dims : {2, 3})
        for (auto dir : {Direction::maximize, Direction::minimize}) {
            const auto base = optimize(f, dims, dir, grid(21, 2), 1);
            for (unsigned t : {2u, 3u, 7u, 16u}) {
                const auto r = optimize(f, dims, dir, grid(21, 2), t);
                EXPECT_EQ(r.value, base.value);
                EXPECT_EQ(r.arg.x, base.arg.x);
            }
        }
}

TEST(Optimize, RejectsBadGrid) {
    const Objective f = [](const ParamPoint&) { return 0.0; };
    EXPECT_THROW(optimize(f, 2, Direction::maximize, grid(1, 0)), InvalidArgument);
    EXPECT_THROW(optimize(f, 2, Direction::maximize, GridSpec{5, -1, 0.2}), InvalidArgument);
    EXPECT_THROW(optimize(f, 2, Direction::maximize, GridSpec{5, 1, 1.0}), InvalidArgument);
    EXPECT_THROW(optimize(f, 4, Direction::maximize, grid(5, 0)), InvalidArgument);
}

TEST(BoundsSdc, ConstantOutcomeCollapsesToPoint) {
    const std::vector<int> d = {0, 1, 2, 0, 1, 2, 1};
    std::vector<double> z(d.begin(), d.end());
    const Sample s(std::vector<double>(d.size(), 2.5), d, z, {"a", "b", "c"});
    const auto sb = estimate_supports(s);
    const auto m = compute_moments(s);
    for (int t = 0; t < 3; ++t) {
        for (const auto& b : {bounds_sdc(s, sb, m, t, grid(21, 1)), bounds_lei(s, sb, m, t, grid(11, 1)),
                              bounds_mtr(s, sb, m, t, grid(11, 1), true),
                              bounds_mtr(s, sb, m, t, grid(21, 1), false)}) {
            EXPECT_NEAR(b.branch1.lo, 2.5, 1e-12);
            EXPECT_NEAR(b.branch1.hi, 2.5, 1e-12);
            ASSERT_TRUE(b.branch2.has_value());
            EXPECT_NEAR(b.branch2->lo, 2.5, 1e-12);
            EXPECT_NEAR(b.branch2->hi, 2.5, 1e-12);
        }
    }
}

TEST(BoundsManskiWc, WorkedExample) {
    // Half the units at the target with mean outcome 0.6, support [0, 1].
    const Sample s({0.4, 0.8, 0.0, 1.0}, {1, 1, 0, 0}, {0, 1, 0, 1}, {"a", "b"});
    const SupportBounds sb({0.0, 0.0}, {1.0, 1.0});
    const Interval w = bounds_manski_wc(s, sb, 1);
    EXPECT_NEAR(w.lo, 0.3, 1e-15);
    EXPECT_NEAR(w.hi, 0.8, 1e-15);
}

TEST(BoundsManskiWc, AllTreatedGivesMean) {
    const Sample s({1.0, 2.0, 6.0}, {0, 0, 0}, {0, 1, 2}, {"a", "b"});
    const SupportBounds sb({-5.0, -5.0}, {10.0, 10.0});
    const Interval w = bounds_manski_wc(s, sb, 0);
    EXPECT_DOUBLE_EQ(w.lo, 3.0);
    EXPECT_DOUBLE_EQ(w.hi, 3.0);
}

TEST(BoundsManskiMi, TwoCellsIntersect) {
    // z=0 cell: 10 units, half treated with y=0.8, supports [0, 1]:
    //   lower 0.5*0.8 + 0.5*0 = 0.4, upper 0.4 + 0.5 = 0.9.
    // z=1 cell: 10 units, all treated except 2, treated y = 0.5:
    //   lower 0.8*0.5 = 0.4, upper 0.4 + 0.2 = 0.6.
    std::vector<double> y, z;
    std::vector<int> d;
    for (int i = 0; i < 10; ++i) {
        y.push_back(i < 5 ? 0.8 : 0.0);
        d.push_back(i < 5 ? 1 : 0);
        z.push_back(0);
    }
    for (int i = 0; i < 10; ++i) {
        y.push_back(i < 8 ? 0.5 : 1.0);
        d.push_back(i < 8 ? 1 : 0);
        z.push_back(1);
    }
    const Sample s(y, d, z, {"a", "b"});
    const SupportBounds sb({0.0, 0.0}, {1.0, 1.0});
    const auto r = bounds_manski_mi(s, sb, 1);
    EXPECT_EQ(r.cells_used, 2u);
    EXPECT_NEAR(r.interval.lo, 0.4, 1e-12);
    EXPECT_NEAR(r.interval.hi, 0.6, 1e-12);
}

TEST(BoundsManskiMi, ConstantInstrumentEqualsWorstCase) {
    const Sample base = random_sample(12, 200, 3, 1);
    const Sample s(base.y(), base.d(), std::vector<double>(base.n(), 1.0), base.levels());
    const auto sb = estimate_supports(s);
    for (int t = 0; t < 3; ++t) {
        const auto mi = bounds_manski_mi(s, sb, t);
        const auto wc = bounds_manski_wc(s, sb, t);
        EXPECT_NEAR(mi.interval.lo, wc.lo, 1e-12);
        EXPECT_NEAR(mi.interval.hi, wc.hi, 1e-12);
    }
}

TEST(BoundsManskiMi, SmallCellsSkippedOrThrow) {
    const Sample s = random_sample(13, 60, 2, 20);
    const auto sb = estimate_supports(s);
    EXPECT_THROW(bounds_manski_mi(s, sb, 0, 100), EmptyCell);
    const auto r = bounds_manski_mi(s, sb, 0, 4);
    EXPECT_EQ(r.cells_used + r.skipped_cells.size(), 20u);
}

TEST(BoundsSdcProperty, AlphaZeroSliceIsWorstCase) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const Sample s = random_sample(seed, 150, 3, 4, 2.0);
        const auto sb = estimate_supports(s);
        const auto m = compute_moments(s);
        for (int t = 0; t < 3; ++t) {
            const auto wc = bounds_manski_wc(s, sb, t);
            const KernelMean lower(s, sb, m, t, KernelFamily::bounded_support, Side::lower);
            const KernelMean upper(s, sb, m, t, KernelFamily::bounded_support, Side::upper);
            for (double beta : {0.0, 0.37, 1.0})
                for (Sign sign : {Sign::plus, Sign::minus}) {
                    DeltaParams p;
                    p.beta = beta;
                    p.sign = sign;
                    EXPECT_NEAR(lower(p), wc.lo, 1e-12);
                    EXPECT_NEAR(upper(p), wc.hi, 1e-12);
                }
            const auto b = bounds_sdc(s, sb, m, t, grid(21, 1));
            expect_branch_inside(b.branch1, wc, 1e-12);
            expect_branch_inside(*b.branch2, wc, 1e-12);
        }
    }
}

TEST(BoundsLeiProperty, NestedInsideSdc) {
    for (std::uint64_t seed = 200; seed < 215; ++seed) {
        const Sample s = random_sample(seed, 120, 3, 5, 1.5);
        const auto sb = estimate_supports(s);
        const auto m = compute_moments(s);
        for (int t = 0; t < 3; ++t) {
            const auto sdc = bounds_sdc(s, sb, m, t, grid(21, 0));
            const auto lei = bounds_lei(s, sb, m, t, grid(21, 0));
            expect_branch_inside(lei.branch1, sdc.branch1, 1e-10);
            expect_branch_inside(*lei.branch2, *sdc.branch2, 1e-10);
        }
    }
}

TEST(BoundsMtrProperty, InsideLeiUnderPooledSupports) {
    for (std::uint64_t seed = 300; seed < 310; ++seed) {
        const Sample s = random_sample(seed, 120, 3, 4, 1.0);
        const auto sb = estimate_supports(s, SupportMode::pooled);
        const auto m = compute_moments(s);
        for (int t = 0; t < 3; ++t) {
            const auto lei = bounds_lei(s, sb, m, t, grid(11, 0));
            const auto mtr = bounds_mtr(s, sb, m, t, grid(11, 0), true);
            expect_branch_inside(mtr.branch1, lei.branch1, 1e-10);
            expect_branch_inside(*mtr.branch2, *lei.branch2, 1e-10);
            const auto sdc = bounds_sdc(s, sb, m, t, grid(11, 0));
            const auto mtr2 = bounds_mtr(s, sb, m, t, grid(11, 0), false);
            expect_branch_inside(mtr2.branch1, sdc.branch1, 1e-10);
            expect_branch_inside(*mtr2.branch2, *sdc.branch2, 1e-10);
        }
    }
}

TEST(BoundsSdcProperty, FinerLatticeNeverLoosens) {
    for (std::uint64_t seed = 400; seed < 410; ++seed) {
        const Sample s = random_sample(seed, 150, 3, 4, 2.0);
        const auto sb = estimate_supports(s);
        const auto m = compute_moments(s);
        for (int t = 0; t < 3; ++t) {
            const auto coarse = bounds_sdc(s, sb, m, t, grid(11, 0));
            const auto mid = bounds_sdc(s, sb, m, t, grid(21, 0));
            const auto fine = bounds_sdc(s, sb, m, t, grid(101, 0));
            for (const auto* pair : {&coarse, &mid}) {
                const auto& finer = pair == &coarse ? mid : fine;
                EXPECT_GE(finer.branch1.lo, pair->branch1.lo);
                EXPECT_LE(finer.branch1.hi, pair->branch1.hi);
                EXPECT_GE(finer.branch2->lo, pair->branch2->lo);
                EXPECT_LE(finer.branch2->hi, pair->branch2->hi);
            }
        }
    }
}

TEST(BoundsEngine, DeterministicAcrossThreads) {
    const Sample s = random_sample(7, 400, 4, 6, 2.0);
    const auto sb = estimate_supports(s);
    for (Regime r : {Regime::sdc, Regime::lei, Regime::mtr, Regime::mtr_nolei}) {
        EstimateOptions o;
        o.grid = grid(15, 1);
        o.threads = 1;
        const auto a = estimate_regime(s, sb, r, {0, 1, 2, 3}, o);
        o.threads = 5;
        const auto b = estimate_regime(s, sb, r, {0, 1, 2, 3}, o);
        const auto c = estimate_regime(s, sb, r, {0, 1, 2, 3}, o);
        for (std::size_t k = 0; k < 4; ++k) {
            for (const auto* other : {&b, &c}) {
                const auto& x = *a.levels[k];
                const auto& y = *other->levels[k];
                EXPECT_EQ(x.branch1.lo, y.branch1.lo);
                EXPECT_EQ(x.branch1.hi, y.branch1.hi);
                EXPECT_EQ(x.branch2->lo, y.branch2->lo);
                EXPECT_EQ(x.branch2->hi, y.branch2->hi);
                EXPECT_EQ(x.args.lo1.x, y.args.lo1.x);
                EXPECT_EQ(x.args.hi2.x, y.args.hi2.x);
            }
        }
    }
}

TEST(EstimateRegime, ManskiRegimesHaveOneBranch) {
    const Sample s = random_sample(8, 300, 3, 3);
    const auto sb = estimate_supports(s);
    for (Regime r : {Regime::manski_wc, Regime::manski_mi}) {
        const auto t = estimate_regime(s, sb, r, {0, 2});
        ASSERT_EQ(t.levels.size(), 3u);
        EXPECT_FALSE(t.levels[1].has_value());
        EXPECT_FALSE(t.levels[0]->branch2.has_value());
        EXPECT_FALSE(t.levels[2]->branch2.has_value());
    }
    EXPECT_EQ(regime_from_string("mtr-nolei"), Regime::mtr_nolei);
    EXPECT_EQ(to_string(Regime::manski_mi), "manski-mi");
    EXPECT_THROW(regime_from_string("iv"), InvalidArgument);
}

TEST(AteBounds, SymmetricSingleBranch) {
    const auto t = theta_of(Regime::sdc, {single(1.0, 3.0), single(1.0, 3.0)});
    const Interval a = ate_bounds(t, 1, 0);
    EXPECT_DOUBLE_EQ(a.lo, -2.0);
    EXPECT_DOUBLE_EQ(a.hi, 2.0);
}

TEST(AteBounds, MonotoneResponseClipping) {
    const auto t = theta_of(Regime::mtr,
                            {single(5.70, 6.08), single(6.08, 6.26), single(6.32, 6.66)});
    const Interval up = ate_bounds(t, 2, 1);
    EXPECT_NEAR(up.lo, 0.06, 1e-12);
    EXPECT_NEAR(up.hi, 0.58, 1e-12);
    const Interval down = ate_bounds(t, 0, 1);
    EXPECT_NEAR(down.lo, -0.56, 1e-12);
    EXPECT_EQ(down.hi, 0.0);
}

TEST(AteBounds, UnionOverBranchPairs) {
    BoundsSet a = single(1.0, 2.0);
    a.branch2 = Interval::from(4.0, 5.0);
    BoundsSet b = single(0.0, 1.0);
    b.branch2 = Interval::from(3.0, 2.0);  // empty, ignored
    const auto t = theta_of(Regime::sdc, {b, a});
    const Interval r = ate_bounds(t, 1, 0);
    EXPECT_DOUBLE_EQ(r.lo, 0.0);
    EXPECT_DOUBLE_EQ(r.hi, 5.0);
    BoundsSet dead = single(3.0, 2.0);
    dead.branch2 = Interval::from(3.0, 2.0);
    EXPECT_THROW(ate_bounds(theta_of(Regime::sdc, {dead, a}), 1, 0), RejectedModel);
}

TEST(AteBoundsProperty, MonotoneResponseSign) {
    Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<BoundsSet> levels;
        for (int k = 0; k < 3; ++k) {
            const double lo = rng.uniform(0, 5);
            levels.push_back(single(lo, lo + rng.uniform(0, 3)));
        }
        const auto t = theta_of(rng.bernoulli(0.5) ? Regime::mtr : Regime::mtr_nolei, levels);
        const Interval r = ate_bounds(t, 2, 0);
        if (!r.empty) { EXPECT_GE(r.lo, 0.0); }
        const Interval l = ate_bounds(t, 0, 2);
        if (!l.empty) { EXPECT_LE(l.hi, 0.0); }
    }
}

TEST(MtrChain, MonotoneBoundsUnchanged) {
    const auto t = theta_of(Regime::mtr, {single(1, 2), single(2, 3), single(3.5, 4)});
    const auto c = mtr_chain(t);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(c.levels[k]->branch1.lo, t.levels[k]->branch1.lo);
        EXPECT_EQ(c.levels[k]->branch1.hi, t.levels[k]->branch1.hi);
    }
}

TEST(MtrChain, RaisesLowerBound) {
    const auto c = mtr_chain(theta_of(Regime::mtr, {single(5.70, 6.08), single(5.9, 6.26)}));
    EXPECT_EQ(c.levels[1]->branch1.lo, 6.08);
    EXPECT_EQ(c.levels[1]->branch1.hi, 6.26);
    const auto k = mtr_chain(theta_of(Regime::mtr, {single(5.70, 6.08), single(5.6, 6.26)}),
                             ChainMode::lower);
    EXPECT_EQ(k.levels[1]->branch1.lo, 5.70);
}

TEST(MtrChain, CrossingMarksEmpty) {
    const auto c = mtr_chain(theta_of(Regime::mtr, {single(4, 7), single(5, 6)}));
    const auto& b = c.levels[1]->branch1;
    EXPECT_TRUE(b.empty);
    EXPECT_EQ(b.lo, 7.0);
    EXPECT_EQ(b.hi, 6.0);
    EXPECT_TRUE(c.levels[1]->rejected());
}

// Searches tiny discrete datasets for one where both branches cross.
TEST(BoundsLei, BruteForceFindsRejectedDataset) {
    Rng rng(2024);
    const GridSpec g = grid(21, 0);
    bool found = false;
    for (int attempt = 0; attempt < 20000 && !found; ++attempt) {
        const std::size_t n = 5 + rng.below(2);
        std::vector<double> y(n), z(n);
        std::vector<int> d(n);
        for (std::size_t i = 0; i < n; ++i) {
            d[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
            z[i] = static_cast<double>(rng.below(3));
            y[i] = static_cast<double>(rng.below(4));
        }
        const Sample s(y, d, z, {"0", "1"});
        MomentSummary m;
        try {
            m = compute_moments(s);
        } catch (const DegenerateVariable&) {
            continue;
        }
        const auto sb = estimate_supports(s);
        for (int t = 0; t < 2 && !found; ++t) {
            const auto lei = bounds_lei(s, sb, m, t, g);
            if (!lei.rejected()) continue;
            found = true;
            EXPECT_GT(lei.branch1.lo, lei.branch1.hi);
            EXPECT_GT(lei.branch2->lo, lei.branch2->hi);
            EXPECT_TRUE(lei.hull().empty);
        }
    }
    EXPECT_TRUE(found);
}

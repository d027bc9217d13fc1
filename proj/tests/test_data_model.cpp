#include "iiv/data_model.hpp"
#include "iiv/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using namespace iiv;
using iiv::testing::random_sample;
using iiv::testing::write_temp;

namespace {

// Brute-force reading of the quantile definition: the smallest observed value
// whose empirical CDF reaches p.
double quantile_oracle(const std::vector<double>& values, double p) {
    double best = INFINITY;
    for (double candidate : values) {
        std::size_t at_or_below = 0;
        for (double v : values) at_or_below += v <= candidate ? 1 : 0;
        if (static_cast<double>(at_or_below) / static_cast<double>(values.size()) >= p - 1e-12)
            best = std::min(best, candidate);
    }
    return best;
}

std::string nlsym_path() { return std::string(IIV_SOURCE_DIR) + "/data/card_nlsym.csv"; }

}  // namespace

TEST(LowerQuantile, MatchesBruteForceDefinition) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        std::vector<double> v(n);
        for (auto& x : v) x = static_cast<double>(rng.below(10));
        for (double p : {0.0, 0.05, 0.1, 0.25, 0.5, 0.9, 0.95, 1.0})
            EXPECT_EQ(lower_quantile(v, p), quantile_oracle(v, p)) << "n=" << n << " p=" << p;
    }
}

TEST(LowerQuantile, RejectsBadInput) {
    std::vector<double> empty;
    EXPECT_THROW(lower_quantile(empty, 0.5), InvalidArgument);
    std::vector<double> one = {1.0};
    EXPECT_THROW(lower_quantile(one, 1.5), InvalidArgument);
}

TEST(TrimOutcome, ZeroTauIsIdentity) {
    const Sample s = random_sample(1, 200, 3, 4);
    const Sample t = trim_outcome(s, 0.0);
    EXPECT_EQ(t.y(), s.y());
    EXPECT_EQ(t.d(), s.d());
    EXPECT_EQ(t.z(), s.z());
}

TEST(TrimOutcome, IntegerGridClampsToQuantiles) {
    std::vector<double> y(100);
    std::vector<int> d(100, 0);
    std::vector<double> z(100, 0.0);
    for (int i = 0; i < 100; ++i) y[static_cast<std::size_t>(i)] = i + 1;
    const Sample s(y, d, z, {"a"});
    const Sample t = trim_outcome(s, 0.05);
    const double lo = quantile_oracle(y, 0.05);
    const double hi = quantile_oracle(y, 0.95);
    EXPECT_EQ(lo, 5.0);
    EXPECT_EQ(hi, 95.0);
    EXPECT_EQ(*std::min_element(t.y().begin(), t.y().end()), lo);
    EXPECT_EQ(*std::max_element(t.y().begin(), t.y().end()), hi);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(t.y()[i], std::clamp(y[i], lo, hi));
}

TEST(TrimOutcome, RejectsTauOutOfRange) {
    const Sample s = random_sample(2, 20, 2, 2);
    EXPECT_THROW(trim_outcome(s, 0.5), InvalidArgument);
    EXPECT_THROW(trim_outcome(s, -0.1), InvalidArgument);
}

TEST(TrimOutcomeProperty, IdempotentAndMonotoneInTau) {
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
        const Sample s = random_sample(seed, 150, 3, 5, 3.0);
        double prev_range = INFINITY;
        for (double tau : {0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.45}) {
            const Sample once = trim_outcome(s, tau);
            const Sample twice = trim_outcome(once, tau);
            EXPECT_EQ(once.y(), twice.y()) << "seed " << seed << " tau " << tau;
            const auto [mn, mx] = std::minmax_element(once.y().begin(), once.y().end());
            const double range = *mx - *mn;
            EXPECT_LE(range, prev_range);
            prev_range = range;
        }
    }
}

TEST(DiscretizeTreatment, CutpointExamples) {
    const std::vector<double> cuts = {12, 16, 18};
    const std::vector<double> v = {11, 16, 12, 17.9, 18, 25};
    EXPECT_EQ(discretize_treatment(v, cuts), (std::vector<int>{0, 2, 1, 2, 3, 3}));
    EXPECT_EQ(discretize_treatment(v, std::vector<double>{}), std::vector<int>(v.size(), 0));
    const std::vector<double> bad = {3, 2};
    EXPECT_THROW(discretize_treatment(v, bad), InvalidArgument);
}

TEST(DiscretizeTreatmentProperty, Monotone) {
    Rng rng(9);
    const std::vector<double> cuts = {-1.0, 0.0, 0.5, 2.0};
    std::vector<double> v(500);
    for (auto& x : v) x = rng.uniform(-3.0, 3.0);
    std::sort(v.begin(), v.end());
    const auto lv = discretize_treatment(v, cuts);
    EXPECT_TRUE(std::is_sorted(lv.begin(), lv.end()));
}

TEST(EstimateSupports, SmallExample) {
    const Sample s({1, 3, 2}, {0, 0, 1}, {0, 1, 0}, {"a", "b"});
    const auto c = estimate_supports(s, SupportMode::conditional);
    EXPECT_EQ(c.lo, (std::vector<double>{1, 2}));
    EXPECT_EQ(c.hi, (std::vector<double>{3, 2}));
    const auto p = estimate_supports(s, SupportMode::pooled);
    EXPECT_EQ(p.lo, (std::vector<double>{1, 1}));
    EXPECT_EQ(p.hi, (std::vector<double>{3, 3}));
}

TEST(EstimateSupports, ConstantOutcome) {
    const Sample s({4, 4, 4, 4}, {0, 1, 1, 0}, {0, 1, 2, 3}, {"a", "b"});
    for (auto mode : {SupportMode::conditional, SupportMode::pooled}) {
        const auto sb = estimate_supports(s, mode);
        EXPECT_EQ(sb.lo, (std::vector<double>{4, 4}));
        EXPECT_EQ(sb.hi, (std::vector<double>{4, 4}));
    }
}

TEST(EstimateSupports, EmptyLevelThrowsInConditionalMode) {
    const Sample s({1, 2}, {0, 0}, {0, 1}, {"a", "b"});
    EXPECT_THROW(estimate_supports(s, SupportMode::conditional), EmptyCell);
    EXPECT_NO_THROW(estimate_supports(s, SupportMode::pooled));
}

TEST(EstimateSupportsProperty, ConditionalInsidePooled) {
    for (std::uint64_t seed = 40; seed < 60; ++seed) {
        const Sample s = random_sample(seed, 80, 4, 3, 2.0);
        const auto c = estimate_supports(s, SupportMode::conditional);
        const auto p = estimate_supports(s, SupportMode::pooled);
        for (std::size_t k = 0; k < c.size(); ++k) {
            EXPECT_GE(c.lo[k], p.lo[k]);
            EXPECT_LE(c.hi[k], p.hi[k]);
        }
    }
}

TEST(SupportBounds, RejectsCrossedEnds) {
    EXPECT_THROW(SupportBounds({2.0}, {1.0}), InvalidArgument);
}

TEST(ComputeMoments, CenteredAndPluginSd) {
    const Sample s = random_sample(3, 500, 3, 4);
    const MomentSummary m = compute_moments(s);
    double sd = 0.0, zd = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < s.n(); ++i) {
        sd += m.d_tilde[i];
        zd += m.z_tilde[i];
        ss += m.d_tilde[i] * m.d_tilde[i];
    }
    EXPECT_NEAR(sd / 500.0, 0.0, 1e-10);
    EXPECT_NEAR(zd / 500.0, 0.0, 1e-10);
    EXPECT_NEAR(m.sd_d, std::sqrt(ss / 500.0), 1e-12);
}

TEST(ComputeMoments, DegenerateVariableThrows) {
    const Sample same_z({1, 2, 3}, {0, 1, 0}, {5, 5, 5}, {"a", "b"});
    EXPECT_THROW(compute_moments(same_z), DegenerateVariable);
    const Sample same_d({1, 2, 3}, {1, 1, 1}, {1, 2, 3}, {"a", "b"});
    EXPECT_THROW(compute_moments(same_d), DegenerateVariable);
}

TEST(Interval, EmptyWhenCrossed) {
    const Interval a = Interval::from(2.0, 1.0);
    EXPECT_TRUE(a.empty);
    EXPECT_EQ(a.lo, 2.0);
    EXPECT_EQ(a.hi, 1.0);
    const Interval b = Interval::from(1.0, 3.0);
    EXPECT_TRUE(b.contains(Interval::from(1.5, 2.0)));
    EXPECT_FALSE(b.contains(Interval::from(0.5, 2.0)));
}

TEST(BoundsSet, RejectedAndHull) {
    BoundsSet b;
    b.branch1 = Interval::from(1.0, 2.0);
    b.branch2 = Interval::from(3.0, 2.5);
    EXPECT_FALSE(b.rejected());
    EXPECT_EQ(b.hull().lo, 1.0);
    EXPECT_EQ(b.hull().hi, 2.0);
    b.branch1 = Interval::from(2.0, 1.0);
    EXPECT_TRUE(b.rejected());
    EXPECT_TRUE(b.hull().empty);
}

TEST(LoadCsv, BlankCellDropsRow) {
    const auto path = write_temp("blank.csv", "y,d,z\n1.5,0,2\n2.5,1,\n3.0,1,4\n");
    const LoadResult r = load_csv(path, "y", "d", "z");
    EXPECT_EQ(r.sample.n(), 2u);
    EXPECT_EQ(r.rows_dropped, 1u);
    EXPECT_EQ(r.rows_read, 3u);
    EXPECT_EQ(r.sample.y(), (std::vector<double>{1.5, 3.0}));
}

TEST(LoadCsv, UndeclaredLevelIsRejected) {
    const auto path = write_temp("labels.csv", "y,d,z\n1,low,0\n2,high,1\n3,medium,1\n");
    LoadOptions o;
    o.outcome_col = "y";
    o.treatment_col = "d";
    o.instrument_col = "z";
    o.levels = std::vector<std::string>{"low", "high"};
    try {
        load_csv(path, o);
        FAIL() << "expected NonNumericCell";
    } catch (const NonNumericCell& e) {
        EXPECT_EQ(e.row(), 3u);
    }
    o.levels = std::vector<std::string>{"low", "medium", "high"};
    const LoadResult r = load_csv(path, o);
    EXPECT_EQ(r.sample.d(), (std::vector<int>{0, 2, 1}));
}

TEST(LoadCsv, ErrorsAreTyped) {
    const auto path = write_temp("errs.csv", "y,d,z\n1,0,abc\n");
    EXPECT_THROW(load_csv(path, "y", "d", "z"), NonNumericCell);
    EXPECT_THROW(load_csv(path, "y", "d", "w"), MissingColumn);
    const auto empty = write_temp("empty_rows.csv", "y,d,z\n,0,1\n");
    EXPECT_THROW(load_csv(empty, "y", "d", "z"), EmptyAfterCleaning);
    const auto frac = write_temp("frac.csv", "y,d,z\n1,0.5,1\n");
    EXPECT_THROW(load_csv(frac, "y", "d", "z"), NonNumericCell);
}

TEST(LoadCsv, CutpointsFiltersAndInstrumentBins) {
    const auto path = write_temp("cuts.csv",
                                 "y,educ,m,black\n1,10,8,1\n2,12,12,0\n3,16,14,0\n4,19,16,1\n5,13,NA,0\n");
    LoadOptions o;
    o.outcome_col = "y";
    o.treatment_col = "educ";
    o.instrument_col = "m";
    o.cutpoints = std::vector<double>{12, 16, 18};
    o.instrument_cutpoints = std::vector<double>{12};
    o.filters = {{"black", "0"}};
    const LoadResult r = load_csv(path, o);
    EXPECT_EQ(r.rows_filtered, 2u);
    EXPECT_EQ(r.rows_dropped, 1u);
    EXPECT_EQ(r.sample.d(), (std::vector<int>{1, 2}));
    EXPECT_EQ(r.sample.z(), (std::vector<double>{1, 1}));
    EXPECT_EQ(r.sample.num_levels(), 4u);
}

TEST(LoadCsv, NlsymCompleteCases) {
    // Count rows with a usable mother's education cell directly from the file.
    std::ifstream in(nlsym_path());
    ASSERT_TRUE(in) << "missing " << nlsym_path();
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    const auto col = static_cast<std::size_t>(std::find(header.begin(), header.end(), "motheduc") - header.begin());
    std::size_t total = 0, complete = 0;
    while (std::getline(in, line)) {
        ++total;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (col < cells.size() && !cells[col].empty()) ++complete;
    }
    EXPECT_EQ(total, 3010u);

    LoadOptions o;
    o.outcome_col = "lwage";
    o.treatment_col = "educ";
    o.instrument_col = "motheduc";
    o.cutpoints = std::vector<double>{12, 16, 18};
    const LoadResult r = load_csv(nlsym_path(), o);
    EXPECT_EQ(r.rows_read, 3010u);
    EXPECT_EQ(r.sample.n(), complete);
    EXPECT_EQ(r.rows_dropped, total - complete);
}

TEST(Sample, TakeAndWithOutcome) {
    const Sample s({1, 2, 3}, {0, 1, 0}, {0, 1, 2}, {"a", "b"});
    const std::vector<std::size_t> rows = {2, 2, 0};
    const Sample t = s.take(rows);
    EXPECT_EQ(t.y(), (std::vector<double>{3, 3, 1}));
    EXPECT_EQ(t.d(), (std::vector<int>{0, 0, 0}));
    EXPECT_EQ(s.with_outcome({7, 8, 9}).y(), (std::vector<double>{7, 8, 9}));
    EXPECT_THROW(Sample({1}, {2}, {0}, {"a"}), InvalidArgument);
}

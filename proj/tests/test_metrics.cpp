#include <cmath>
#include <sstream>

#include "doctest.h"
#include "realdepth/metrics.hpp"
#include "test_util.hpp"

using namespace realdepth;

namespace {

struct Oracle {
    double abs_rel, rmse, irmse, delta;
};

// Straight per-pixel loops with long double accumulators.
Oracle brute_force(const Grid2D& d, const Grid2D& dstar, double thr) {
    long double rel = 0, sq = 0, isq = 0;
    long n = 0, m = 0, hits = 0;
    for (int y = 0; y < d.height(); ++y) {
        for (int x = 0; x < d.width(); ++x) {
            const long double p = d(y, x), t = dstar(y, x);
            if (t <= 0) continue;
            ++n;
            rel += std::fabs(p - t) / t;
            sq += (p - t) * (p - t);
            if (p <= 0) continue;
            ++m;
            isq += (1 / p - 1 / t) * (1 / p - 1 / t);
            if (p / t < thr && t / p < thr) ++hits;
        }
    }
    return {static_cast<double>(rel / n), static_cast<double>(std::sqrt(sq / n)),
            m ? static_cast<double>(std::sqrt(isq / m)) : 0.0,
            m ? 100.0 * static_cast<double>(hits) / static_cast<double>(m) : 0.0};
}

bool close(double a, double b, double rel = 1e-9) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

Grid2D random_depth(int h, int w, Rng& rng, double invalid_frac) {
    Grid2D g(h, w);
    for (double& v : g.values()) v = rng.uniform() < invalid_frac ? 0.0 : rng.uniform(0.5, 10.0);
    return g;
}

}  // namespace

TEST_CASE("identity gives perfect metrics") {
    Rng rng(1);
    const Grid2D d = random_depth(9, 9, rng, 0.1);
    const MetricReport r = evaluate_pair(d, d);
    CHECK(r.abs_rel == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.irmse == 0.0);
    CHECK(r.delta == 100.0);
}

TEST_CASE("hand cases") {
    const MetricReport r = evaluate_pair(Grid2D(1, 1, 2.0), Grid2D(1, 1, 1.0));
    CHECK(r.abs_rel == 1.0);
    CHECK(r.rmse == 1.0);
    CHECK(r.irmse == 0.5);
    CHECK(r.delta == 0.0);
    CHECK(evaluate_pair(Grid2D(1, 1, 1.04), Grid2D(1, 1, 1.0)).delta == 100.0);
    // Exactly at the threshold fails.
    CHECK(evaluate_pair(Grid2D(1, 1, 2.0), Grid2D(1, 1, 1.0), 2.0).delta == 0.0);
}

TEST_CASE("validity rules") {
    const Grid2D d(1, 3, std::vector<double>{0.0, 2.0, 5.0});
    const Grid2D t(1, 3, std::vector<double>{1.0, 2.0, 0.0});
    const MetricReport r = evaluate_pair(d, t);
    CHECK(r.n_valid == 2);
    CHECK(r.n_ratio_valid == 1);
    CHECK(r.abs_rel == 0.5);
    CHECK(r.delta == 100.0);
    CHECK_THROWS_AS(evaluate_pair(d, Grid2D(1, 3)), ParameterError);
    CHECK_THROWS_AS(evaluate_pair(d, Grid2D(3, 1, 1.0)), ParameterError);
}

TEST_CASE("metrics match the brute-force oracle on random maps") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const Grid2D d = random_depth(6, 7, rng, 0.1);
        const Grid2D t = random_depth(6, 7, rng, 0.1);
        if (t.max() <= 0) continue;
        const MetricReport r = evaluate_pair(d, t);
        const Oracle o = brute_force(d, t, 1.05);
        CHECK(close(r.abs_rel, o.abs_rel));
        CHECK(close(r.rmse, o.rmse));
        CHECK(close(r.irmse, o.irmse));
        CHECK(close(r.delta, o.delta));
    }
}

TEST_CASE("unit scale equivariance, threshold monotonicity, delta symmetry") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const Grid2D d = random_depth(8, 8, rng, 0.0);
        const Grid2D t = random_depth(8, 8, rng, 0.0);
        const double a = rng.uniform(0.01, 100.0);
        Grid2D da = d, ta = t;
        for (double& v : da.values()) v *= a;
        for (double& v : ta.values()) v *= a;
        const MetricReport r = evaluate_pair(d, t);
        const MetricReport s = evaluate_pair(da, ta);
        CHECK(close(s.abs_rel, r.abs_rel, 1e-12));
        CHECK(close(s.rmse, a * r.rmse, 1e-12));
        CHECK(close(s.irmse, r.irmse / a, 1e-12));
        CHECK(s.delta == doctest::Approx(r.delta).epsilon(1e-12));

        double previous = -1.0;
        for (double thr : {1.01, 1.05, 1.25, 1.5, 2.0, 10.0}) {
            const double delta = evaluate_pair(d, t, thr).delta;
            CHECK(delta >= previous);
            previous = delta;
        }
        CHECK(evaluate_pair(t, d).delta == r.delta);
    }
}

TEST_CASE("dataset aggregation") {
    const PairInput a{"a", Grid2D(1, 1, 1.02), Grid2D(1, 1, 1.0)};
    const PairInput b{"b", Grid2D(1, 2, std::vector<double>{1.04, 2.0}), Grid2D(1, 2, 1.0)};
    {
        const std::vector<PairInput> pairs{a, a, a};
        const DatasetReport rep = evaluate_dataset(pairs);
        const MetricReport one = evaluate_pair(a.d, a.dstar);
        CHECK(rep.aggregate.abs_rel == doctest::Approx(one.abs_rel).epsilon(1e-15));
        CHECK(rep.aggregate.rmse == doctest::Approx(one.rmse).epsilon(1e-15));
        CHECK(rep.failed == 0);
    }
    {
        const std::vector<PairInput> pairs{a, b};
        const DatasetReport rep = evaluate_dataset(pairs);
        // Unweighted: (0.02 + (0.04 + 1.0) / 2) / 2.
        CHECK(rep.aggregate.abs_rel == doctest::Approx((0.02 + 0.52) / 2).epsilon(1e-14));
        const DatasetReport weighted = evaluate_dataset(pairs, 1.05, true);
        CHECK(weighted.aggregate.abs_rel == doctest::Approx((0.02 + 1.04) / 3).epsilon(1e-14));
    }
    {
        const PairInput broken{"broken", Grid2D(1, 1, 1.0), Grid2D(1, 1, 0.0)};
        const std::vector<PairInput> pairs{a, broken};
        const DatasetReport rep = evaluate_dataset(pairs);
        CHECK(rep.failed == 1);
        CHECK_FALSE(rep.samples[1].ok);
        CHECK(rep.aggregate.abs_rel == doctest::Approx(0.02));
        std::ostringstream out;
        write_report_table(out, rep);
        const std::string table = out.str();
        CHECK(table.rfind("id\tAbsRel\tRMSE[depth]\tiRMSE[1/depth]\tdelta[%]\tn_valid\tstatus\n", 0) == 0);
        CHECK(table.find("broken\tnan") != std::string::npos);
        CHECK(table.find("\nmean\t") != std::string::npos);
        CHECK(table.find("partial") != std::string::npos);
    }
    CHECK_THROWS_AS(evaluate_dataset({}), ParameterError);
}

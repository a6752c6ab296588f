#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rareaug/metrics.hpp"

using namespace rareaug;

namespace {

RelevanceFunction flat_relevance(double phi) {
    RelevanceFunction rel;
    rel.control_points = {{0.0, phi, 0.0}, {1.0, phi, 0.0}};
    return rel;
}

/// phi rises from 0 at y = 0 to 1 at y = 10 along 3t^2 - 2t^3.
RelevanceFunction ramp_relevance() {
    RelevanceFunction rel;
    rel.mode = RelevanceMode::high_only;
    rel.control_points = {{0.0, 0.0, 0.0}, {10.0, 1.0, 0.0}};
    rel.iqr = 4.0;
    return rel;
}

const std::vector<double> kTen{1, 2, 3, 4, 5, 6, 7, 8, 9, 50};

} // namespace

TEST(Relevance, BoxplotControlPoints) {
    // q1 = 3.25, median = 5.5, q3 = 7.75; fences -3.5 and 14.5
    const auto rel = build_relevance(std::span<const double>(kTen));
    ASSERT_EQ(rel.control_points.size(), 3u);
    EXPECT_DOUBLE_EQ(rel.control_points[0].y, 1.0);
    EXPECT_DOUBLE_EQ(rel.control_points[1].y, 5.5);
    EXPECT_DOUBLE_EQ(rel.control_points[2].y, 9.0);
    EXPECT_DOUBLE_EQ(rel.iqr, 4.5);
    EXPECT_EQ(rel(5.5), 0.0);
    EXPECT_EQ(rel(9.0), 1.0);
    EXPECT_EQ(rel(50.0), 1.0);
    EXPECT_EQ(rel(1.0), 1.0);
    EXPECT_EQ(rel(-7.0), 1.0);
    EXPECT_DOUBLE_EQ(rel(7.25), 0.5);
    for (const auto& cp : rel.control_points) {
        EXPECT_EQ(cp.slope, 0.0);
    }
}

TEST(Relevance, MonotoneAndBounded) {
    Rng rng(3);
    VectorXd y(300);
    for (Index i = 0; i < 300; ++i) {
        y[i] = std::exp(rng.normal());
    }
    const auto rel = build_relevance(y);
    const double median = rel.control_points[1].y;
    double prev = rel(median);
    for (double v = median; v < 20.0; v += 0.01) {
        const double phi = rel(v);
        EXPECT_GE(phi, prev - 1e-15);
        EXPECT_GE(phi, 0.0);
        EXPECT_LE(phi, 1.0);
        prev = phi;
    }
    prev = rel(median);
    for (double v = median; v > -5.0; v -= 0.01) {
        const double phi = rel(v);
        EXPECT_GE(phi, prev - 1e-15);
        prev = phi;
    }
}

TEST(Relevance, OneSidedModes) {
    const auto high = build_relevance(std::span<const double>(kTen), RelevanceMode::high_only);
    EXPECT_EQ(high(1.0), 0.0);
    EXPECT_EQ(high(-100.0), 0.0);
    EXPECT_EQ(high(9.0), 1.0);
    const auto low = build_relevance(std::span<const double>(kTen), RelevanceMode::low_only);
    EXPECT_EQ(low(1.0), 1.0);
    EXPECT_EQ(low(50.0), 0.0);
}

TEST(Relevance, DegenerateTargets) {
    const std::vector<double> few{1, 2, 3, 4, 4, 4};
    EXPECT_THROW(build_relevance(std::span<const double>(few)), DataError);
    const std::vector<double> flat_iqr{0, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 6, 7, 8, 9};
    EXPECT_THROW(build_relevance(std::span<const double>(flat_iqr)), DataError);
}

TEST(Relevance, CsvSamples) {
    const auto rel = build_relevance(std::span<const double>(kTen));
    std::ostringstream out;
    write_relevance_csv(rel, out, 11);
    std::istringstream in(out.str());
    std::string line;
    int rows = -1;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 11);
}

TEST(ErrorScale, DistanceToFullRelevance) {
    const auto rel = build_relevance(std::span<const double>(kTen));
    // where 3t^2 - 2t^3 = 0.8 along a segment; the shorter segment
    // [5.5, 9] gives the smaller scale 3.5 (1 - t)
    const double t = oracle::bisect([](double u) { return 3 * u * u - 2 * u * u * u - 0.8; }, 0.0, 1.0);
    EXPECT_NEAR(default_error_scale(rel, 0.8), 3.5 * (1 - t), 1e-10);
    const auto cfg = make_utility_config(rel, 0.8);
    EXPECT_NEAR(cfg.error_scale, 3.5 * (1 - t), 1e-10);
    EXPECT_THROW(make_utility_config(rel, 1.0), PreconditionError);
    // no segment crosses t_R: fall back to IQR / 2
    auto flat = flat_relevance(1.0);
    flat.iqr = 6.0;
    EXPECT_DOUBLE_EQ(default_error_scale(flat, 0.8), 3.0);
}

TEST(Rmse, WorkedExample) {
    EXPECT_DOUBLE_EQ(rmse(Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 4)), std::sqrt(25.0 / 2.0));
    EXPECT_EQ(rmse(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3)), 0.0);
    EXPECT_THROW(rmse(Eigen::Vector2d(0, 0), Eigen::Vector3d(0, 0, 0)), PreconditionError);
}

TEST(Sera, FlatRelevanceLimits) {
    Rng rng(5);
    VectorXd y(40), yhat(40);
    for (Index i = 0; i < 40; ++i) {
        y[i] = rng.uniform(0, 1);
        yhat[i] = y[i] + rng.normal();
    }
    EXPECT_NEAR(sera(y, yhat, flat_relevance(1.0)), (y - yhat).squaredNorm(), 1e-12);
    EXPECT_EQ(sera(y, yhat, flat_relevance(0.0)), 0.0);
    EXPECT_EQ(sera(y, y, ramp_relevance()), 0.0);
}

TEST(Sera, ClosedFormMatchesTrapezoid) {
    Rng rng(6);
    VectorXd y(200), yhat(200);
    for (Index i = 0; i < 200; ++i) {
        y[i] = std::exp(rng.normal());
        yhat[i] = y[i] + 0.5 * rng.normal();
    }
    const auto rel = build_relevance(y);
    const double closed = sera(y, yhat, rel);
    const double trap = sera_trapezoid(y, yhat, rel, 1001);
    EXPECT_LE(std::abs(closed - trap) / closed, 0.005);
}

TEST(Sera, GrowsWithErrorScale) {
    Rng rng(7);
    VectorXd y(50), e(50);
    for (Index i = 0; i < 50; ++i) {
        y[i] = std::exp(rng.normal());
        e[i] = rng.normal();
    }
    const auto rel = build_relevance(y);
    double prev = 0.0;
    for (double c : {0.1, 0.5, 1.0, 2.0}) {
        const double s = sera(y, y + c * e, rel);
        EXPECT_GT(s, prev);
        prev = s;
    }
}

TEST(Utility, Cases) {
    UtilityConfig cfg{ramp_relevance(), 0.8, 2.0};
    const double phi9 = 3 * 0.81 - 2 * 0.729;
    EXPECT_DOUBLE_EQ(utility(9.0, 9.0, cfg), phi9);
    // error past the scale: pure penalty
    EXPECT_DOUBLE_EQ(utility(3.0, 9.0, cfg), -phi9);
    EXPECT_DOUBLE_EQ(utility(12.0, 9.0, cfg), -1.0);
    // half the scale
    EXPECT_NEAR(utility(10.0, 9.0, cfg), 0.5 * phi9 - 0.5 * 1.0, 1e-14);
    EXPECT_EQ(utility(0.0, 0.0, cfg), 0.0);
}

TEST(Utility, RangeSweep) {
    UtilityConfig cfg{ramp_relevance(), 0.8, 1.5};
    for (double y = -2; y <= 12; y += 0.25) {
        for (double yh = -2; yh <= 12; yh += 0.25) {
            const double u = utility(yh, y, cfg);
            EXPECT_GE(u, -1.0);
            EXPECT_LE(u, 1.0);
            EXPECT_LE(u, cfg.relevance(y));
        }
    }
}

TEST(FPhi, PerfectPredictions) {
    Rng rng(8);
    VectorXd y(100);
    for (Index i = 0; i < 100; ++i) {
        y[i] = std::exp(rng.normal());
    }
    const auto cfg = make_utility_config(build_relevance(y));
    const auto r = f_phi(y, y, cfg);
    ASSERT_TRUE(r.precision_defined && r.recall_defined);
    EXPECT_DOUBLE_EQ(r.precision_phi, 1.0);
    EXPECT_DOUBLE_EQ(r.recall_phi, 1.0);
    EXPECT_DOUBLE_EQ(r.f_phi1, 1.0);
    EXPECT_EQ(r.n_pred_relevant, r.n_true_relevant);
}

TEST(FPhi, NothingRelevant) {
    UtilityConfig cfg{ramp_relevance(), 0.8, 2.0};
    const auto r = f_phi(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 4), cfg);
    EXPECT_FALSE(r.precision_defined);
    EXPECT_FALSE(r.recall_defined);
    EXPECT_EQ(r.f_phi1, 0.0);
    const auto j = to_json(r);
    EXPECT_TRUE(j.at("precision_phi").is_null());
    EXPECT_FALSE(j.at("f_phi1_defined").get<bool>());
}

TEST(FPhi, SixPointHandOracle) {
    UtilityConfig cfg{ramp_relevance(), 0.8, 2.0};
    VectorXd y(6), yhat(6);
    y << 1, 9, 10, 9.5, 5, 8.5;
    yhat << 1.5, 9, 7, 10, 9.8, 8.0;
    // precision set {9, 10, 9.8, 8.0}, recall set {9, 10, 9.5, 8.5}
    const auto r = f_phi(y, yhat, cfg);
    EXPECT_EQ(r.n_pred_relevant, 4);
    EXPECT_EQ(r.n_true_relevant, 4);
    EXPECT_NEAR(r.precision_phi, 0.6276200561955433, 1e-12);
    EXPECT_NEAR(r.recall_phi, 0.624517649291498, 1e-12);
    EXPECT_NEAR(r.f_phi1, 0.6260650093449247, 1e-12);
}

TEST(FPhi, StaysInUnitInterval) {
    Rng rng(9);
    VectorXd y(80);
    for (Index i = 0; i < 80; ++i) {
        y[i] = std::exp(rng.normal());
    }
    const auto cfg = make_utility_config(build_relevance(y));
    for (double noise : {0.01, 0.3, 3.0, 30.0}) {
        VectorXd yhat = y;
        for (Index i = 0; i < 80; ++i) {
            yhat[i] += noise * rng.normal();
        }
        const auto r = f_phi(y, yhat, cfg);
        EXPECT_GE(r.precision_phi, 0.0);
        EXPECT_LE(r.precision_phi, 1.0);
        EXPECT_GE(r.recall_phi, 0.0);
        EXPECT_LE(r.recall_phi, 1.0);
        EXPECT_GE(r.f_phi1, 0.0);
        EXPECT_LE(r.f_phi1, 1.0);
    }
}

TEST(Wilcoxon, UniformShiftTenPairs) {
    std::vector<double> a, b;
    for (int i = 0; i < 10; ++i) {
        a.push_back(i * 1.7);
        b.push_back(i * 1.7 + 1.0 + 0.01 * i);
    }
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.w_plus, 0.0);
    EXPECT_DOUBLE_EQ(r.p_value, 2.0 / 1024.0);
    EXPECT_EQ(r.winner, Winner::first);
    EXPECT_EQ(r.wins_first, 10);
    const auto hi = wilcoxon_signed_rank(a, b, Direction::higher_is_better);
    EXPECT_EQ(hi.winner, Winner::second);
    EXPECT_DOUBLE_EQ(hi.p_value, r.p_value);
}

TEST(Wilcoxon, NoContest) {
    const std::vector<double> a{1, 2, 3, 4, 5, 6};
    const auto r = wilcoxon_signed_rank(a, a);
    EXPECT_TRUE(r.no_contest);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_EQ(r.winner, Winner::none);
    EXPECT_THROW(wilcoxon_signed_rank(std::vector<double>{1, 2}, std::vector<double>{2, 3}), PreconditionError);
}

TEST(Wilcoxon, AntisymmetricWinner) {
    Rng rng(10);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> a, b;
        for (int i = 0; i < 12; ++i) {
            a.push_back(rng.normal());
            b.push_back(rng.normal() + 0.3);
        }
        const auto ab = wilcoxon_signed_rank(a, b);
        const auto ba = wilcoxon_signed_rank(b, a);
        EXPECT_NEAR(ab.p_value, ba.p_value, 1e-15);
        EXPECT_EQ(ab.wins_first, ba.wins_second);
        if (ab.winner == Winner::first) {
            EXPECT_EQ(ba.winner, Winner::second);
        }
    }
}

TEST(Wilcoxon, ExactMatchesEnumeration) {
    Rng rng(11);
    for (int t = 0; t < 40; ++t) {
        const int n = 5 + static_cast<int>(rng.below(10));
        std::vector<double> a, b, diffs;
        for (int i = 0; i < n; ++i) {
            // rounding creates ties and zeros now and then
            const double d = std::round(rng.normal() * 3.0) / 2.0;
            a.push_back(10.0 + d);
            b.push_back(10.0);
        }
        const auto r = wilcoxon_signed_rank(a, b);
        if (r.no_contest) {
            continue;
        }
        std::vector<double> abs_d, sign;
        for (int i = 0; i < n; ++i) {
            if (a[i] != b[i]) {
                abs_d.push_back(std::abs(a[i] - b[i]));
                sign.push_back(a[i] > b[i]);
            }
        }
        const auto ranks = oracle::mid_ranks(abs_d);
        double wp = 0.0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            wp += sign[i] * ranks[i];
        }
        EXPECT_DOUBLE_EQ(r.w_plus, wp);
        EXPECT_NEAR(r.p_value, oracle::wilcoxon_enumerated_p(ranks, wp), 1e-12);
    }
}

TEST(Wilcoxon, RanksMatchReference) {
    const std::vector<double> v{3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5};
    EXPECT_EQ(average_ranks(v), oracle::mid_ranks(v));
}

TEST(Wilcoxon, NormalApproximationNearExactAtFifteen) {
    Rng rng(12);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> a, b;
        for (int i = 0; i < 15; ++i) {
            a.push_back(rng.normal());
            b.push_back(rng.normal() + 0.4);
        }
        const auto ex = wilcoxon_signed_rank(a, b, Direction::lower_is_better, true);
        const auto nm = wilcoxon_signed_rank(a, b, Direction::lower_is_better, false);
        EXPECT_TRUE(ex.exact);
        EXPECT_FALSE(nm.exact);
        EXPECT_NEAR(ex.p_value, nm.p_value, 0.02);
    }
}

TEST(Report, EvaluateCombinesMetrics) {
    Rng rng(13);
    VectorXd y(60), yhat(60);
    for (Index i = 0; i < 60; ++i) {
        y[i] = std::exp(rng.normal());
        yhat[i] = y[i] + 0.2 * rng.normal();
    }
    const auto cfg = make_utility_config(build_relevance(y));
    const auto r = evaluate_predictions(y, yhat, cfg);
    EXPECT_DOUBLE_EQ(r.rmse, rmse(y, yhat));
    EXPECT_DOUBLE_EQ(r.sera, sera(y, yhat, cfg.relevance));
    EXPECT_DOUBLE_EQ(r.f_phi1, f_phi(y, yhat, cfg).f_phi1);
}

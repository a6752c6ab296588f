// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion (plus the
// moment-trend property of the generator) and exits nonzero if any fails.
// Run a subset with criterion numbers as arguments, e.g. `acceptance 3 7`.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "rareaug/rareaug.hpp"

using namespace rareaug;
using Eigen::RowVectorXd;

namespace {

struct Outcome {
    bool pass = false;
    bool skipped = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

MatrixXd gaussian_sample(Rng& rng, Index n, const VectorXd& mu, const MatrixXd& s) {
    const MatrixXd l = s.llt().matrixL();
    return (oracle::normal_matrix(rng, n, mu.size()) * l.transpose()).rowwise() + mu.transpose();
}

// 1. Squared distances of Gaussian data follow chi^2_p.
Outcome chi_square_law() {
    Outcome o{true, false, ""};
    for (Index p : {3, 8}) {
        Rng rng(1000 + static_cast<std::uint64_t>(p));
        const MatrixXd data = gaussian_sample(rng, 5000, VectorXd::LinSpaced(p, -2, 3), oracle::random_spd(rng, p));
        const VectorXd d = squared_distances_from_mean(fit_gaussian(data), data);
        const boost::math::chi_squared chi2(static_cast<double>(p));
        const double ks = oracle::ks_statistic(std::vector<double>(d.begin(), d.end()),
                                               [&](double x) { return boost::math::cdf(chi2, x); });
        const double pv = oracle::ks_p_value(ks, 5000);
        o.pass = o.pass && pv > 0.01;
        o.detail += fmt("p=%ld D=%.4f KS p-value=%.3f; ", static_cast<long>(p), ks, pv);
    }
    return o;
}

// 2. Affine invariance of squared distances.
Outcome affine_invariance() {
    Rng rng(2);
    const MatrixXd data = gaussian_sample(rng, 200, VectorXd::Zero(6), oracle::random_spd(rng, 6));
    const VectorXd base = squared_distances_from_mean(fit_gaussian(data), data);
    double worst = 0.0;
    int transforms = 0;
    while (transforms < 20) {
        const MatrixXd a = oracle::normal_matrix(rng, 6, 6);
        if (std::abs(a.determinant()) < 1e-3) {
            continue;
        }
        const VectorXd c = 10.0 * oracle::normal_matrix(rng, 6, 1);
        const MatrixXd moved = (data * a.transpose()).rowwise() + c.transpose();
        const VectorXd d = squared_distances_from_mean(fit_gaussian(moved), moved);
        worst = std::max(worst, ((d - base).array().abs() / base.array()).maxCoeff());
        ++transforms;
    }
    return {worst <= 1e-6, false, fmt("20 transforms, worst relative change %.2e (tol 1e-6)", worst)};
}

// 3. Threshold root versus bracketing on the weighted density difference.
Outcome threshold_solver() {
    Rng rng(3);
    int agree = 0, with_root = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const double mu1 = rng.uniform(0, 10);
        const double mu2 = mu1 + rng.uniform(0.5, 10);
        const double v1 = rng.uniform(0.1, 10), v2 = rng.uniform(0.1, 10);
        const double w = rng.uniform(0.05, 0.95);
        const auto gap = [&](double x) { return oracle::density_gap(x, w, mu1, v1, mu2, v2); };
        // all sign changes on a fine grid, each refined by bisection; keep
        // the crossing where the majority density hands over (gap falling)
        std::vector<double> handovers, crossings;
        const int grid = 20000;
        double prev_x = mu1, prev_g = gap(mu1);
        for (int i = 1; i <= grid; ++i) {
            const double x = mu1 + (mu2 - mu1) * i / grid;
            const double g = gap(x);
            if ((g > 0) != (prev_g > 0) && i < grid) {
                const double r = oracle::bisect(gap, prev_x, x);
                crossings.push_back(r);
                if (prev_g > 0) {
                    handovers.push_back(r);
                }
            }
            prev_x = x;
            prev_g = g;
        }
        const auto root = density_intersection(w, mu1, v1, mu2, v2);
        const std::vector<double>& expect_from = handovers.empty() ? crossings : handovers;
        if (!root) {
            agree += crossings.empty();
            continue;
        }
        ++with_root;
        if (expect_from.empty()) {
            continue;
        }
        const double err = std::abs(*root - expect_from.front()) / std::max(1.0, std::abs(expect_from.front()));
        worst = std::max(worst, err);
        agree += err <= 1e-8;
    }
    const auto mid = density_intersection(0.5, 2.0, 3.0, 8.0, 3.0);
    const bool exact_mid = mid && *mid == 5.0;
    return {agree == 100 && exact_mid, false,
            fmt("%d/100 agree (%d with an in-interval root), worst rel err %.2e (tol 1e-8); symmetric midpoint %s",
                agree, with_root, worst, exact_mid ? "exact" : "WRONG")};
}

struct Mixture {
    double w2, mu1, v1, mu2, v2; // w2 is the weight of the upper component
};

double draw(Rng& rng, const Mixture& m) {
    return rng.uniform() < m.w2 ? rng.normal(m.mu2, std::sqrt(m.v2)) : rng.normal(m.mu1, std::sqrt(m.v1));
}

// Standard errors of the mixture MLE at the planted parameters: inverse of
// the Fisher information, estimated as the mean outer product of the
// per-observation score over fresh draws. Order (w2, mu1, v1, mu2, v2).
VectorXd mixture_standard_errors(Rng& rng, const Mixture& m, int n) {
    const auto pdf = [](double x, double mu, double v) {
        return std::exp(-0.5 * (x - mu) * (x - mu) / v) / std::sqrt(2 * M_PI * v);
    };
    MatrixXd info = MatrixXd::Zero(5, 5);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const double x = draw(rng, m);
        const double f1 = (1 - m.w2) * pdf(x, m.mu1, m.v1), f2 = m.w2 * pdf(x, m.mu2, m.v2);
        const double r2 = f2 / (f1 + f2), r1 = 1 - r2;
        VectorXd score(5);
        score << r2 / m.w2 - r1 / (1 - m.w2), r1 * (x - m.mu1) / m.v1,
            r1 * ((x - m.mu1) * (x - m.mu1) / m.v1 - 1) / (2 * m.v1), r2 * (x - m.mu2) / m.v2,
            r2 * ((x - m.mu2) * (x - m.mu2) / m.v2 - 1) / (2 * m.v2);
        info += score * score.transpose();
    }
    info /= draws;
    return (info.inverse().diagonal() / n).cwiseSqrt();
}

// 4. EM parameter recovery within 3 standard errors.
Outcome em_recovery() {
    int good = 0;
    const int n = 1000;
    for (int t = 0; t < 100; ++t) {
        Rng rng(4000 + static_cast<std::uint64_t>(t));
        Mixture m;
        m.w2 = rng.uniform(0.1, 0.4);
        const double s1 = rng.uniform(0.5, 2.0), s2 = rng.uniform(0.5, 2.0);
        const double pooled = std::sqrt(0.5 * (s1 * s1 + s2 * s2));
        m.mu1 = rng.uniform(2, 10);
        m.mu2 = m.mu1 + rng.uniform(4.0, 6.0) * pooled;
        m.v1 = s1 * s1;
        m.v2 = s2 * s2;
        std::vector<double> x;
        for (int i = 0; i < n; ++i) {
            x.push_back(draw(rng, m));
        }
        const auto fit = fit_em(x);
        const VectorXd se = mixture_standard_errors(rng, m, n);
        VectorXd err(5);
        err << fit.weight_minority - m.w2, fit.mu1 - m.mu1, fit.var1 - m.v1, fit.mu2 - m.mu2, fit.var2 - m.v2;
        const double z = (err.array().abs() / se.array()).maxCoeff();
        good += z <= 3.0;
    }
    return {good >= 95, false,
            fmt("%d/100 trials within 3 SE on all five parameters (need 95); SE from the mixture Fisher information",
                good)};
}

// 5. Finite-difference gradient suite.
Outcome gradient_suite() {
    Rng rng(5);
    gradcheck::Outcome real, fake, pen, gen, input;
    for (int t = 0; t < 50; ++t) {
        gradcheck::check_critic_terms(rng, real, fake, pen, 1e-4, 1e-3);
        gradcheck::check_generator(rng, gen, 1e-4);
        gradcheck::check_input_gradient(rng, input, 1e-4);
    }
    const bool ok = real.failures + fake.failures + pen.failures + gen.failures + input.failures == 0 &&
                    real.instances == 50 && gen.instances == 50 && input.instances == 50;
    return {ok, false,
            fmt("worst rel err: critic real %.1e, critic fake %.1e, penalty %.1e (tol 1e-3), generator %.1e, input "
                "%.1e; failures %d/%d/%d/%d/%d; kink resamples %d",
                real.worst, fake.worst, pen.worst, gen.worst, input.worst, real.failures, fake.failures,
                pen.failures, gen.failures, input.failures,
                real.resamples + gen.resamples + input.resamples)};
}

struct Moments {
    RowVectorXd mean, sd;
};

Moments moments(const MatrixXd& m) {
    const RowVectorXd mean = m.colwise().mean();
    const RowVectorXd sd = ((m.rowwise() - mean).array().square().colwise().sum() / (m.rows() - 1)).sqrt();
    return {mean, sd};
}

double moment_gap(const Moments& a, const Moments& b) {
    return std::max((a.mean - b.mean).cwiseAbs().maxCoeff(), (a.sd - b.sd).cwiseAbs().maxCoeff());
}

// 6. Generator moment smoke test, and the trend of the moment gap over
// training checkpoints.
std::pair<Outcome, Outcome> moment_smoke() {
    int passes = 0, monotone = 0;
    std::string detail, trend_detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(6000 + seed);
        MatrixXd raw(200, 2);
        for (Index i = 0; i < 200; ++i) {
            raw(i, 0) = rng.normal(5.0, 1.0);
            raw(i, 1) = rng.normal(-3.0, 0.5);
        }
        const Moments target = moments(raw);
        const Standardizer s = Standardizer::fit(raw);
        GanConfig cfg;
        cfg.seed = seed;
        cfg.pool_size = 2000;
        std::vector<double> gaps;
        const auto gan = train_gan(s.transform(raw), cfg, [&](Index it, const TrainedGan& state) {
            if (it == 100 || it == 500 || it == 2000) {
                gaps.push_back(moment_gap(moments(s.inverse_transform(sample_pool(state, 2000, 77))), target));
            }
        });
        const Moments got = moments(s.inverse_transform(sample_pool(gan, 2000, derive_seed(seed, 2))));
        const bool mean_ok = (got.mean - target.mean).cwiseAbs().maxCoeff() <= 0.3;
        const bool sd_ok = (got.sd - target.sd).cwiseAbs().maxCoeff() <= 0.3;
        passes += mean_ok && sd_ok;
        detail += fmt("seed %d mean err %.3f sd err %.3f; ", static_cast<int>(seed),
                      (got.mean - target.mean).cwiseAbs().maxCoeff(), (got.sd - target.sd).cwiseAbs().maxCoeff());
        const bool mono = gaps.size() == 3 && gaps[0] >= gaps[1] && gaps[1] >= gaps[2];
        monotone += mono;
        trend_detail += fmt("seed %d gaps %.3f>%.3f>%.3f%s; ", static_cast<int>(seed), gaps[0], gaps[1], gaps[2],
                            mono ? "" : " (not monotone)");
    }
    return {{passes >= 4, false, fmt("%d/5 seeds within 0.3 (need 4): ", passes) + detail},
            {monotone >= 4, false, fmt("%d/5 seeds with a non-increasing gap over iterations 100/500/2000: ",
                                       monotone) + trend_detail}};
}

// 7. Greedy matching versus brute-force replay; self-copies first.
Outcome matching_oracle() {
    Rng rng(7);
    int replay_ok = 0, copies_ok = 0;
    for (int t = 0; t < 50; ++t) {
        const Index p = 2 + static_cast<Index>(rng.below(5));
        const Index m = std::max<Index>(p + 2, 5 + static_cast<Index>(rng.below(16)));
        const Index n = 20 + static_cast<Index>(rng.below(181));
        const MatrixXd mix = oracle::normal_matrix(rng, p, p) + 2.0 * MatrixXd::Identity(p, p);
        const MatrixXd real = oracle::normal_matrix(rng, m, p) * mix.transpose();
        const MatrixXd pool = 1.5 * oracle::normal_matrix(rng, n, p) * mix.transpose();
        const auto stats = fit_gaussian(real);
        const Index k = 1 + static_cast<Index>(rng.below(5));
        const Index n_pick = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(k)));
        const auto res = match(real, pool, stats, MatchConfig{k, n_pick, true, true});
        const auto ref = oracle::brute_force_match(real, pool, stats.mean, stats.precision, k, n_pick);
        bool same = res.assignments.size() == ref.real.size() && res.unmatched_real == ref.unmatched;
        for (std::size_t i = 0; same && i < ref.real.size(); ++i) {
            same = res.assignments[i].real_index == ref.real[i] && res.assignments[i].pool_index == ref.pool[i];
        }
        replay_ok += same;

        MatrixXd with_copies(n + m, p);
        with_copies << pool, real;
        const auto c = match(real, with_copies, stats, MatchConfig{3, 1, true, true});
        bool copies = c.assignments.size() == static_cast<std::size_t>(m);
        for (const auto& a : c.assignments) {
            copies = copies && a.pool_index == n + a.real_index && a.delta == 0.0;
        }
        copies_ok += copies;
    }
    return {replay_ok == 50 && copies_ok == 50, false,
            fmt("brute-force replay %d/50, self-copies picked first %d/50", replay_ok, copies_ok)};
}

// 8. SERA closed form versus trapezoid integration.
Outcome sera_check() {
    Rng rng(8);
    double worst = 0.0;
    bool sse_exact = true;
    for (int t = 0; t < 100; ++t) {
        const Index n = 20 + static_cast<Index>(rng.below(200));
        VectorXd y(n), yhat(n);
        for (Index i = 0; i < n; ++i) {
            y[i] = std::exp(rng.normal(0.0, rng.uniform(0.3, 1.5)));
            yhat[i] = y[i] + rng.uniform(0.1, 2.0) * rng.normal();
        }
        const auto rel = build_relevance(y);
        const double closed = sera(y, yhat, rel);
        worst = std::max(worst, std::abs(closed - sera_trapezoid(y, yhat, rel, 1001)) / closed);

        RelevanceFunction one;
        one.control_points = {{0.0, 1.0, 0.0}, {1.0, 1.0, 0.0}};
        const VectorXd sq = (yhat - y).array().square();
        double sse = 0.0;
        for (Index i = 0; i < n; ++i) {
            sse += sq[i];
        }
        sse_exact = sse_exact && sera(y, yhat, one) == sse;
    }
    return {worst <= 0.005 && sse_exact, false,
            fmt("100 instances, worst relative gap %.2e (tol 5e-3); phi=1 equals SSE %s", worst,
                sse_exact ? "exactly" : "NOT exactly")};
}

// 9. Wilcoxon exact path and normal approximation.
Outcome wilcoxon_check() {
    std::vector<double> a, b;
    for (int i = 0; i < 10; ++i) {
        a.push_back(3.0 + 0.5 * i);
        b.push_back(1.0 + 0.37 * i);
    }
    const auto all_pos = wilcoxon_signed_rank(a, b);
    std::vector<double> ranks;
    for (int i = 1; i <= 10; ++i) {
        ranks.push_back(i);
    }
    const double enumerated = oracle::wilcoxon_enumerated_p(ranks, 55.0);
    const bool exact_ok = all_pos.exact && std::abs(all_pos.p_value - enumerated) <= 1e-15 &&
                          std::abs(all_pos.p_value - 0.001953125) <= 1e-12;

    Rng rng(9);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> u, v;
        for (int i = 0; i < 15; ++i) {
            u.push_back(rng.normal());
            v.push_back(rng.normal() + rng.uniform(0.0, 0.8));
        }
        const double pe = wilcoxon_signed_rank(u, v, Direction::lower_is_better, true).p_value;
        const double pn = wilcoxon_signed_rank(u, v, Direction::lower_is_better, false).p_value;
        worst = std::max(worst, std::abs(pe - pn));
    }
    return {exact_ok && worst <= 0.02, false,
            fmt("n=10 all positive: p=%.6f (enumeration %.6f); n=15 exact vs normal worst gap %.4f over 50 "
                "instances (tol 0.02)",
                all_pos.p_value, enumerated, worst)};
}

// 10. End-to-end comparison on a seeded synthetic dataset.
Outcome end_to_end() {
    const auto data = make_synthetic_imbalanced(1000, 5, 7);
    ExperimentConfig cfg;
    cfg.dataset_label = "synthetic-1000x5";
    cfg.n_splits = 25;
    cfg.train_fraction = 0.8;
    cfg.seed = 2024;
    const auto report = run_experiment(data, cfg);

    // win counts recomputed from the per-split results
    const auto& none = report.results.at("none");
    const auto& gan = report.results.at("mahalanobis_gan");
    int gan_wins = 0;
    for (std::size_t s = 0; s < none.size(); ++s) {
        gan_wins += none[s].ok && gan[s].ok && gan[s].by_threshold[0].sera < none[s].by_threshold[0].sera;
    }
    bool conserved = true;
    const PairwiseResult* sera_pair = nullptr;
    for (const auto& p : report.pairwise) {
        conserved = conserved && p.wins_first + p.wins_second + p.no_contests == cfg.n_splits;
        if (p.first == "none" && p.second == "mahalanobis_gan" && p.metric == "sera") {
            sera_pair = &p;
        }
    }
    const bool table_ok = sera_pair && sera_pair->wins_second == gan_wins;
    return {gan_wins >= 13 && conserved && table_ok && report.failures() == 0, false,
            fmt("mahalanobis_gan beats none on SERA in %d/25 splits (need 13), Wilcoxon p=%.3g; win counts "
                "conserved %s; failed cells %ld",
                gan_wins, sera_pair ? sera_pair->p_value : 1.0, conserved && table_ok ? "yes" : "NO",
                static_cast<long>(report.failures()))};
}

// 11. Threshold on a user-supplied Boston housing CSV.
Outcome boston_anchor() {
    const char* path = std::getenv("RAREAUG_BOSTON_CSV");
    if (!path || !*path) {
        return {true, true, "informational; set RAREAUG_BOSTON_CSV (and RAREAUG_BOSTON_TARGET, default medv)"};
    }
    const char* target = std::getenv("RAREAUG_BOSTON_TARGET");
    const auto data = load_csv(path, std::string(target && *target ? target : "medv"));
    Standardizer s;
    const auto [z, det] = standardized_detection(data, s);
    const double t = det.split.threshold;
    return {t >= 2.013 && t <= 201.3, false,
            fmt("T = %.3f on %ld rows (reference 20.13, accepted range [2.013, 201.3])", t,
                static_cast<long>(data.n()))};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    const auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

    struct Check {
        int id;
        double limit_seconds;
        std::function<Outcome()> run;
    };
    Outcome trend;
    const std::vector<Check> checks{
        {1, 5, chi_square_law},
        {2, 1, affine_invariance},
        {3, 1, threshold_solver},
        {4, 10, em_recovery},
        {5, 30, gradient_suite},
        {6, 180,
         [&] {
             auto [smoke, tr] = moment_smoke();
             trend = tr;
             return smoke;
         }},
        {7, 2, matching_oracle},
        {8, 1, sera_check},
        {9, 5, wilcoxon_check},
        {10, 900, end_to_end},
        {11, 60, boston_anchor},
    };

    int failed = 0;
    for (const auto& c : checks) {
        if (!wanted(c.id)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.limit_seconds;
        const char* verdict = o.skipped ? "SKIP" : (o.pass && in_time ? "PASS" : "FAIL");
        failed += !o.skipped && !(o.pass && in_time);
        std::cout << "criterion " << (c.id < 10 ? " " : "") << c.id << "  " << verdict << "  " << o.detail
                  << fmt("  [%.2f s, limit %.0f s%s]", secs, c.limit_seconds, in_time ? "" : ", OVER") << std::endl;
        if (c.id == 6) {
            failed += !trend.pass;
            std::cout << "moment trend  " << (trend.pass ? "PASS" : "FAIL") << "  " << trend.detail << std::endl;
        }
    }
    std::cout << (failed == 0 ? "all acceptance checks passed" : fmt("%d acceptance check(s) failed", failed))
              << std::endl;
    return failed == 0 ? 0 : 1;
}

#include <catch2/catch.hpp>

#include <cmath>
#include <complex>

#include "cfmimo/estimation.hpp"
#include "cfmimo/scenario.hpp"
#include "test_util.hpp"

using namespace cfmimo;

TEST_CASE("MMSE de-spreading coefficients") {
    SECTION("single user, unit gain") {
        Mat beta = Mat::Constant(1, 1, 1.0);
        // tau*rho_u = 10
        Mat c = compute_c(beta, {0}, 10, 1.0);
        REQUIRE(c(0, 0) == Approx(std::sqrt(10.0) / 11.0).epsilon(1e-12));
        Mat gamma = compute_gamma(c, beta, 10, 1.0);
        REQUIRE(gamma(0, 0) == Approx(10.0 / 11.0).epsilon(1e-12));
    }

    SECTION("vanishing pilot power kills the estimate") {
        Mat beta = Mat::Constant(1, 1, 1.0);
        Mat c = compute_c(beta, {0}, 10, 1e-13);
        REQUIRE(c(0, 0) < 1e-5);
        Mat gamma = compute_gamma(c, beta, 10, 1e-13);
        REQUIRE(gamma(0, 0) < 1e-10);
    }

    SECTION("two co-pilot users share the denominator") {
        Mat beta(1, 2);
        beta << 1.0, 1.0;
        Mat c = compute_c(beta, {0, 0}, 10, 1.0);
        REQUIRE(c(0, 0) == Approx(std::sqrt(10.0) / 21.0).epsilon(1e-12));
        REQUIRE(c(0, 1) == Approx(std::sqrt(10.0) / 21.0).epsilon(1e-12));
    }

    SECTION("perfect estimation limit without contamination") {
        Mat beta(1, 2);
        beta << 0.5, 2.0;
        Mat c = compute_c(beta, {0, 1}, 1, 1e12);
        Mat gamma = compute_gamma(c, beta, 1, 1e12);
        REQUIRE(gamma(0, 0) == Approx(beta(0, 0)).epsilon(1e-9));
        REQUIRE(gamma(0, 1) == Approx(beta(0, 1)).epsilon(1e-9));
    }

    SECTION("co-pilot mean-squares scale with the squared gain ratio") {
        Mat beta(2, 3);
        beta << 1.0, 4.0, 0.3, 2.0, 0.5, 0.9;
        std::vector<int> pilots{0, 0, 0};
        Mat c = compute_c(beta, pilots, 5, 2.0);
        Mat gamma = compute_gamma(c, beta, 5, 2.0);
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 3; ++k) {
                // reconstruct gamma of user k from user 0 as reference
                const double scaled = gamma(m, 0) * (beta(m, k) * beta(m, k)) /
                                      (beta(m, 0) * beta(m, 0));
                REQUIRE(gamma(m, k) == Approx(scaled).epsilon(1e-12));
            }
    }
}

TEST_CASE("channel sampling statistics") {
    Mat beta(2, 2);
    beta << 0.8, 0.25, 0.1, 2.0;
    const int N = 2;
    Rng rng(13);
    const int trials = 20000;

    Mat var_acc = Mat::Zero(2, 2);
    Mat re_acc = Mat::Zero(2, 2);
    double cross_re = 0.0, cross_im = 0.0;
    for (int t = 0; t < trials; ++t) {
        ChannelDraw d = sample_channels(beta, N, rng);
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 2; ++k) {
                const Complex v = d.g(0, d.col(m, k));
                var_acc(m, k) += std::norm(v);
                re_acc(m, k) += v.real() * v.real();
            }
        const Complex prod = d.g(0, d.col(0, 0)) * std::conj(d.g(0, d.col(1, 1)));
        cross_re += prod.real();
        cross_im += prod.imag();
    }

    SECTION("per-component variance matches beta") {
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 2; ++k) {
                const double se = beta(m, k) / std::sqrt(static_cast<double>(trials));
                REQUIRE(var_acc(m, k) / trials == Approx(beta(m, k)).margin(3.0 * se));
            }
    }

    SECTION("real part carries half the variance") {
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 2; ++k) {
                const double se = beta(m, k) / std::sqrt(static_cast<double>(trials));
                REQUIRE(re_acc(m, k) / trials == Approx(beta(m, k) / 2.0).margin(3.0 * se));
            }
    }

    SECTION("channels of distinct pairs are uncorrelated") {
        const double scale = std::sqrt(beta(0, 0) * beta(1, 1));
        const double se = scale / std::sqrt(static_cast<double>(trials));
        REQUIRE(cross_re / trials == Approx(0.0).margin(3.0 * se));
        REQUIRE(cross_im / trials == Approx(0.0).margin(3.0 * se));
    }
}

TEST_CASE("uplink training simulation") {
    SystemConfig cfg = testutil::small_config(2, 2, 3, 2, 1);
    cfg.rho_u = 20.0;
    Snapshot s;
    s.M = 2;
    s.K = 3;
    s.beta = Mat(2, 3);
    s.beta << 1.0, 0.5, 0.8, 0.4, 1.2, 0.6;
    s.ul_pilot = {0, 0, 1};
    s.c = compute_c(s.beta, s.ul_pilot, cfg.tau_up, cfg.rho_u);
    s.gamma = compute_gamma(s.c, s.beta, cfg.tau_up, cfg.rho_u);

    Rng rng(21);
    const int trials = 20000;
    Mat hat_var = Mat::Zero(2, 3);
    Mat cov_re = Mat::Zero(2, 3);
    double copilot_gap = 0.0;
    for (int t = 0; t < trials; ++t) {
        ChannelDraw d = sample_channels(s, cfg.N, rng);
        estimate_channels(d, s, cfg, rng);
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 3; ++k) {
                const Complex h = d.g_hat(0, d.col(m, k));
                const Complex e = d.g_tilde(0, d.col(m, k));
                hat_var(m, k) += std::norm(h);
                cov_re(m, k) += (h * std::conj(e)).real();
            }
        // users 0 and 1 share a pilot: estimates proportional draw by draw
        for (int m = 0; m < 2; ++m) {
            const CVec lhs = d.g_hat.col(d.col(m, 0)) * s.beta(m, 1);
            const CVec rhs = d.g_hat.col(d.col(m, 1)) * s.beta(m, 0);
            copilot_gap = std::max(copilot_gap, (lhs - rhs).cwiseAbs().maxCoeff() /
                                                    std::max(1e-300, lhs.cwiseAbs().maxCoeff()));
        }
    }

    SECTION("estimate variance matches gamma") {
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 3; ++k) {
                const double se = s.gamma(m, k) / std::sqrt(static_cast<double>(trials));
                REQUIRE(hat_var(m, k) / trials == Approx(s.gamma(m, k)).margin(3.0 * se));
            }
    }

    SECTION("estimate is uncorrelated with its error") {
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 3; ++k) {
                const double se = s.beta(m, k) / std::sqrt(static_cast<double>(trials));
                REQUIRE(cov_re(m, k) / trials == Approx(0.0).margin(3.0 * se));
            }
    }

    SECTION("co-pilot estimates are exactly proportional per draw") {
        REQUIRE(copilot_gap < 1e-13);
    }

    SECTION("error variance matches beta minus gamma") {
        Rng rng2(22);
        Mat err_var = Mat::Zero(2, 3);
        for (int t = 0; t < trials; ++t) {
            ChannelDraw d = sample_channels(s, cfg.N, rng2);
            estimate_channels(d, s, cfg, rng2);
            for (int m = 0; m < 2; ++m)
                for (int k = 0; k < 3; ++k) err_var(m, k) += std::norm(d.g_tilde(0, d.col(m, k)));
        }
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < 3; ++k) {
                const double target = s.beta(m, k) - s.gamma(m, k);
                const double se =
                    std::max(target, 1e-6) / std::sqrt(static_cast<double>(trials));
                REQUIRE(err_var(m, k) / trials == Approx(target).margin(3.0 * se));
            }
    }
}

#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "cfmimo/geometry.hpp"
#include "cfmimo/scenario.hpp"
#include "test_util.hpp"

using namespace cfmimo;

namespace {

SystemConfig base_config() {
    SystemConfig cfg;
    cfg.M = 20;
    cfg.N = 4;
    cfg.K = 8;
    cfg.D = 500.0;
    cfg.tau_up = 4;
    cfg.tau_dp = 8;  // equals K: permutation mode, always feasible
    cfg.cluster_min = 5;
    return cfg;
}

}  // namespace

TEST_CASE("torus geometry distances") {
    SystemConfig cfg = base_config();

    SECTION("co-located AP and user separated only by height") {
        cfg.M = 1;
        cfg.K = 1;
        Eigen::MatrixX2d ap(1, 2), user(1, 2);
        ap << 0.0, 0.0;
        user << 0.0, 0.0;
        Geometry g = make_geometry(ap, user, cfg);
        REQUIRE(g.d_ap_user(0, 0) == Approx(8.5).epsilon(1e-12));
    }

    SECTION("wraparound shortcut across the area edge") {
        cfg.M = 1;
        cfg.K = 1;
        cfg.user_height = cfg.ap_height;  // planar distance only
        Eigen::MatrixX2d ap(1, 2), user(1, 2);
        ap << 1.0, 0.0;
        user << 499.0, 0.0;
        Geometry g = make_geometry(ap, user, cfg);
        REQUIRE(g.d_ap_user(0, 0) == Approx(2.0).epsilon(1e-12));
        cfg.user_height = 1.5;
    }

    SECTION("deterministic under a fixed seed") {
        Geometry a = generate_geometry(cfg, 42);
        Geometry b = generate_geometry(cfg, 42);
        REQUIRE(a.ap_pos == b.ap_pos);
        REQUIRE(a.user_pos == b.user_pos);
        REQUIRE(a.d_ap_user == b.d_ap_user);
    }

    SECTION("square distance matrices are symmetric with zero diagonal") {
        Geometry g = generate_geometry(cfg, 43);
        REQUIRE(g.d_ap_ap == g.d_ap_ap.transpose().eval());
        REQUIRE(g.d_user_user == g.d_user_user.transpose().eval());
        REQUIRE(g.d_ap_ap.diagonal().isZero(0.0));
    }

    SECTION("wraparound distance never exceeds the unwrapped one") {
        Geometry g = generate_geometry(cfg, 7);
        for (int m = 0; m < cfg.M; ++m)
            for (int k = 0; k < cfg.K; ++k) {
                const double dx = g.ap_pos(m, 0) - g.user_pos(k, 0);
                const double dy = g.ap_pos(m, 1) - g.user_pos(k, 1);
                const double dh = cfg.ap_height - cfg.user_height;
                const double unwrapped = std::sqrt(dx * dx + dy * dy + dh * dh);
                REQUIRE(g.d_ap_user(m, k) <= unwrapped + 1e-12);
                REQUIRE(g.d_ap_user(m, k) >= std::fabs(dh) - 1e-12);
            }
    }

    SECTION("translating every node modulo D preserves all distances") {
        Geometry g = generate_geometry(cfg, 7);
        auto shift = [&](Eigen::MatrixX2d pos, double sx, double sy) {
            for (Eigen::Index i = 0; i < pos.rows(); ++i) {
                pos(i, 0) = std::fmod(pos(i, 0) + sx, cfg.D);
                pos(i, 1) = std::fmod(pos(i, 1) + sy, cfg.D);
            }
            return pos;
        };
        Geometry shifted = make_geometry(shift(g.ap_pos, 123.4, 77.7),
                                         shift(g.user_pos, 123.4, 77.7), cfg);
        REQUIRE((g.d_ap_user - shifted.d_ap_user).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE((g.d_ap_ap - shifted.d_ap_ap).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE((g.d_user_user - shifted.d_user_user).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("urban-microcell pathloss") {
    Geometry g;
    g.d_ap_user = Mat(1, 3);
    g.d_ap_user << 1.0, 10.0, 100.0;
    Mat pl = compute_pathloss_db(g);
    REQUIRE(pl(0, 0) == Approx(-30.5).epsilon(1e-12));
    REQUIRE(pl(0, 1) == Approx(-67.2).epsilon(1e-12));
    REQUIRE(pl(0, 2) == Approx(-103.9).epsilon(1e-12));

    g.d_ap_user(0, 1) = 0.0;
    REQUIRE_THROWS_AS(compute_pathloss_db(g), std::invalid_argument);
}

TEST_CASE("correlated shadowing sampler") {
    SECTION("perfect correlation for co-located APs") {
        Mat dist = Mat::Zero(2, 2);
        Mat cov = shadowing_covariance(dist, 9.0);
        Rng rng(3);
        for (int t = 0; t < 100; ++t) {
            Vec a = sample_correlated_normal(cov, rng);
            REQUIRE(std::fabs(a(0) - a(1)) < 1e-3);
        }
    }

    SECTION("correlation 1/2 at the decorrelation distance") {
        Mat dist(2, 2);
        dist << 0.0, 9.0, 9.0, 0.0;
        Mat cov = shadowing_covariance(dist, 9.0);
        Rng rng(11);
        const int n = 100000;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (int t = 0; t < n; ++t) {
            Vec a = sample_correlated_normal(cov, rng);
            sxy += a(0) * a(1);
            sxx += a(0) * a(0);
            syy += a(1) * a(1);
        }
        const double corr = sxy / std::sqrt(sxx * syy);
        REQUIRE(corr == Approx(0.5).margin(0.01));
    }

    SECTION("unit marginal variance of the mixed field") {
        SystemConfig cfg = base_config();
        cfg.M = 1;
        cfg.K = 1;
        Geometry g;
        g.d_ap_ap = Mat::Zero(1, 1);
        g.d_user_user = Mat::Zero(1, 1);
        const int n = 100000;
        double s1 = 0.0, s2 = 0.0;
        for (int t = 0; t < n; ++t) {
            Mat q = sample_shadowing(g, cfg, 1000 + t);
            s1 += q(0, 0);
            s2 += q(0, 0) * q(0, 0);
        }
        const double var = s2 / n - (s1 / n) * (s1 / n);
        const double se = std::sqrt(2.0 / n);  // sample-variance spread for a unit normal
        REQUIRE(var == Approx(1.0).margin(3.0 * se));
    }
}

TEST_CASE("large-scale fading composition") {
    SECTION("shadowing disabled leaves pure pathloss") {
        Mat pl(2, 2);
        pl << -30.5, -67.2, -50.0, -80.0;
        Mat q = Mat::Random(2, 2);
        Mat beta = compute_beta(pl, q, 0.0);
        REQUIRE(beta(0, 0) == Approx(db_to_linear(-30.5)).epsilon(1e-12));
        REQUIRE(beta(1, 1) == Approx(db_to_linear(-80.0)).epsilon(1e-12));
    }

    SECTION("single combined value") {
        Mat pl = Mat::Constant(1, 1, -30.5);
        Mat q = Mat::Constant(1, 1, 1.0);
        Mat beta = compute_beta(pl, q, 4.0);
        REQUIRE(beta(0, 0) == Approx(std::pow(10.0, -26.5 / 10.0)).epsilon(1e-12));
    }

    SECTION("lognormal mean matches the analytic value") {
        // E[10^(sigma*q/10)] for q ~ N(0,1) equals exp((sigma*ln10/10)^2 / 2)
        const double sigma = 4.0;
        const double expected = std::exp(std::pow(sigma * std::log(10.0) / 10.0, 2) / 2.0);
        Rng rng(5);
        const int n = 1000000;
        double acc = 0.0, acc2 = 0.0;
        for (int t = 0; t < n; ++t) {
            const double v = std::pow(10.0, sigma * rng.normal() / 10.0);
            acc += v;
            acc2 += v * v;
        }
        const double mean = acc / n;
        const double se = std::sqrt((acc2 / n - mean * mean) / n);
        REQUIRE(expected == Approx(1.5283).margin(1e-3));  // frozen from the formula
        REQUIRE(mean == Approx(expected).margin(3.0 * se));
    }
}

TEST_CASE("AP cluster selection") {
    SECTION("one dominant AP") {
        Mat beta = Mat::Constant(5, 1, 1e-9);
        beta(2, 0) = 1.0;
        auto clusters = select_ap_clusters(beta, 0.95, 1);
        REQUIRE(clusters[0] == std::vector<int>{2});
    }

    SECTION("uniform coefficients need 19 of 20 APs at 95%") {
        Mat beta = Mat::Constant(20, 1, 0.5);
        auto clusters = select_ap_clusters(beta, 0.95, 1);
        // brute-force prefix sums over the descending order
        int expected = 0;
        double acc = 0.0;
        while (acc < 0.95 * 20 * 0.5) {
            acc += 0.5;
            ++expected;
        }
        REQUIRE(expected == 19);
        REQUIRE(static_cast<int>(clusters[0].size()) == expected);
    }

    SECTION("padding to the minimum size") {
        Mat beta = Mat::Constant(8, 3, 1e-9);
        beta(0, 0) = 1.0;
        beta(5, 1) = 1.0;
        beta(7, 2) = 1.0;
        auto clusters = select_ap_clusters(beta, 0.95, 4);
        for (const auto& c : clusters) REQUIRE(c.size() >= 4);
    }

    SECTION("coverage threshold or exact minimum size on random instances") {
        Rng rng(17);
        for (int trial = 0; trial < 50; ++trial) {
            Mat beta(12, 4);
            for (int m = 0; m < 12; ++m)
                for (int k = 0; k < 4; ++k) beta(m, k) = std::exp(3.0 * rng.normal());
            auto clusters = select_ap_clusters(beta, 0.95, 3);
            for (int k = 0; k < 4; ++k) {
                double share = 0.0;
                for (int m : clusters[k]) share += beta(m, k);
                share /= beta.col(k).sum();
                const bool covered = share >= 0.95 - 1e-12;
                const bool padded = clusters[k].size() == 3;
                REQUIRE((covered || padded));
            }
        }
    }
}

TEST_CASE("uplink pilot assignment") {
    SECTION("orthogonal mode assigns distinct pilots") {
        auto pilots = assign_uplink_pilots(6, 6, 2, true);
        std::set<int> uniq(pilots.begin(), pilots.end());
        REQUIRE(uniq.size() == 6);
        for (int p : pilots) REQUIRE((p >= 0 && p < 6));
    }

    SECTION("single pilot forces full contamination") {
        auto pilots = assign_uplink_pilots(5, 1, 2);
        for (int p : pilots) REQUIRE(p == 0);
    }

    SECTION("expected number of co-pilot pairs matches the birthday count") {
        const int K = 40, tau = 20, runs = 2000;
        double pairs = 0.0;
        for (int r = 0; r < runs; ++r) {
            auto pilots = assign_uplink_pilots(K, tau, 100 + r);
            for (int k = 0; k < K; ++k)
                for (int j = k + 1; j < K; ++j)
                    if (pilots[k] == pilots[j]) pairs += 1.0;
        }
        pairs /= runs;
        // C(40,2)/20 = 39 expected pairs; binomial spread over the runs
        const double se = std::sqrt(39.0 * (1.0 - 1.0 / 20) / runs);
        REQUIRE(pairs == Approx(39.0).margin(3.0 * se));
    }
}

TEST_CASE("downlink pilot assignment") {
    SECTION("co-pilot users get distinct downlink pilots") {
        std::vector<int> ul{0, 0};
        auto dl = assign_downlink_pilots(ul, 2, 9);
        std::set<int> uniq(dl.begin(), dl.end());
        REQUIRE(uniq.size() == 2);
    }

    SECTION("tau_dp = K yields a permutation") {
        std::vector<int> ul{0, 0, 1, 1, 2};
        auto dl = assign_downlink_pilots(ul, 5, 9);
        std::set<int> uniq(dl.begin(), dl.end());
        REQUIRE(uniq.size() == 5);
        for (int p : dl) REQUIRE((p >= 0 && p < 5));
    }

    SECTION("oversized co-pilot group is rejected") {
        std::vector<int> ul{3, 3, 3, 3};
        REQUIRE_THROWS_WITH(assign_downlink_pilots(ul, 3, 9),
                            Catch::Contains("uplink pilot 3"));
    }

    SECTION("distinctness inside every group on random assignments") {
        int checked = 0;
        for (int r = 0; r < 30; ++r) {
            auto ul = assign_uplink_pilots(12, 4, 200 + r);
            std::vector<int> dl;
            try {
                dl = assign_downlink_pilots(ul, 6, 300 + r);
            } catch (const std::runtime_error&) {
                continue;  // a group larger than tau_dp is a legitimate rejection
            }
            ++checked;
            for (int k = 0; k < 12; ++k)
                for (int j = k + 1; j < 12; ++j)
                    if (ul[k] == ul[j]) REQUIRE(dl[k] != dl[j]);
        }
        REQUIRE(checked > 10);
    }
}

TEST_CASE("snapshot construction") {
    SystemConfig cfg = base_config();

    SECTION("deterministic for a fixed seed") {
        Snapshot a = build_snapshot(cfg, 77);
        Snapshot b = build_snapshot(cfg, 77);
        REQUIRE(a.beta == b.beta);
        REQUIRE(a.gamma == b.gamma);
        REQUIRE(a.ul_pilot == b.ul_pilot);
        REQUIRE(a.dl_pilot == b.dl_pilot);
        REQUIRE(a.clusters == b.clusters);
    }

    SECTION("estimate quality never reaches the channel gain at finite pilot power") {
        for (int r = 0; r < 100; ++r) {
            Snapshot s = build_snapshot(cfg, 1000 + r);
            REQUIRE((s.gamma.array() > 0.0).all());
            REQUIRE((s.gamma.array() < s.beta.array()).all());
        }
    }

    SECTION("co-pilot users have proportional estimation statistics") {
        cfg.K = 8;
        cfg.tau_up = 2;  // force sharing
        Snapshot s = build_snapshot(cfg, 5);
        for (int k = 0; k < cfg.K; ++k)
            for (int j = 0; j < cfg.K; ++j) {
                if (j == k || !s.copilot(k, j)) continue;
                for (int m = 0; m < cfg.M; ++m) {
                    const double lhs = s.gamma(m, k) * s.beta(m, j) * s.beta(m, j);
                    const double rhs = s.gamma(m, j) * s.beta(m, k) * s.beta(m, k);
                    REQUIRE(lhs == Approx(rhs).epsilon(1e-12));
                }
            }
    }

    SECTION("cluster mask matches cluster lists") {
        Snapshot s = build_snapshot(cfg, 8);
        for (int k = 0; k < cfg.K; ++k) {
            double count = 0;
            for (int m : s.clusters[k]) {
                REQUIRE(s.cluster_mask(m, k) == 1.0);
                count += 1;
            }
            REQUIRE(s.cluster_mask.col(k).sum() == count);
        }
    }
}

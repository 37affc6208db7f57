// SPDX-License-Identifier: Apache-2.0
//
// cfmimo - downlink cell-free massive MIMO simulator
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
//
// Monte Carlo validation of every closed form. Trials run in batches with
// independent seed substreams; each reported quantity is the mean of the
// per-batch statistics and its standard error is the batch spread, so the
// estimators never store samples and batches merge associatively. The random
// streams here never touch the analytic pipeline.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/closedform.hpp"
#include "cfmimo/common.hpp"
#include "cfmimo/estimation.hpp"
#include "cfmimo/rng.hpp"
#include "cfmimo/scenario.hpp"

namespace cfmimo {

/// One-pass mean/variance accumulator.
struct RunningStat {
    long n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    double variance() const { return n > 1 ? m2 / (n - 1) : 0.0; }
    double std_error() const { return n > 1 ? std::sqrt(variance() / n) : 0.0; }

    void merge(const RunningStat& o) {
        if (o.n == 0) return;
        if (n == 0) { *this = o; return; }
        const double d = o.mean - mean;
        const long tot = n + o.n;
        m2 += o.m2 + d * d * static_cast<double>(n) * o.n / tot;
        mean += d * o.n / tot;
        n = tot;
    }
};

/// One-pass accumulator for a complex sample: componentwise means, variances
/// and the real/imaginary cross-covariance.
struct ComplexStat {
    long n = 0;
    double mean_re = 0.0, mean_im = 0.0;
    double m2_re = 0.0, m2_im = 0.0, c_ri = 0.0;

    void add(Complex z) {
        ++n;
        const double dr = z.real() - mean_re;
        mean_re += dr / n;
        const double dr2 = z.real() - mean_re;
        const double di = z.imag() - mean_im;
        mean_im += di / n;
        const double di2 = z.imag() - mean_im;
        m2_re += dr * dr2;
        m2_im += di * di2;
        c_ri += dr * di2;
    }
    Complex mean() const { return {mean_re, mean_im}; }
    /// Complex variance E|z - mu|^2 (sum of the component variances).
    double variance() const { return n > 1 ? (m2_re + m2_im) / (n - 1) : 0.0; }
    double cov_re_im() const { return n > 1 ? c_ri / (n - 1) : 0.0; }
};

/// Point estimate with a batch-means standard error; `trials` counts the
/// independent units the error was computed from.
struct McEstimate {
    std::string tag;
    double estimate = 0.0;
    double se = 0.0;
    long trials = 0;
};

struct McReport {
    std::vector<McEstimate> items;
    long draws = 0;      ///< total channel realizations
    int batches = 0;
    long resamples = 0;  ///< zero-norm draws replaced (probability-zero event)

    const McEstimate& find(const std::string& tag) const {
        for (const auto& it : items)
            if (it.tag == tag) return it;
        throw std::out_of_range("no Monte Carlo item tagged " + tag);
    }
};

struct CompareResult {
    double z = 0.0;
    bool pass = false;
};

/// z-scores a closed-form value against a Monte Carlo estimate.
inline CompareResult compare(double closed, const McEstimate& mc, double z_threshold = 4.0) {
    if (mc.trials < 2) throw std::invalid_argument("compare: estimate needs at least 2 units");
    if (mc.se <= 0.0) {
        const bool equal = closed == mc.estimate;
        return {equal ? 0.0 : std::numeric_limits<double>::infinity(), equal};
    }
    const double z = std::fabs(closed - mc.estimate) / mc.se;
    return {z, z <= z_threshold};
}

/// Precoding vector of AP m for user k from the local channel estimate.
inline CVec precoding_vector(const CVec& g_hat, Scheme scheme) {
    switch (scheme) {
        case Scheme::CB:
        case Scheme::CBDT:
            return g_hat.conjugate();
        case Scheme::NCB: {
            const double norm = g_hat.norm();
            if (norm == 0.0) throw std::runtime_error("zero-norm channel estimate");
            return g_hat.conjugate() / norm;
        }
        case Scheme::ECB: {
            const double sq = g_hat.squaredNorm();
            if (sq == 0.0) throw std::runtime_error("zero-norm channel estimate");
            return g_hat.conjugate() / sq;
        }
    }
    throw std::invalid_argument("unknown scheme");
}

/// Effective downlink channels: a(k,j) = sum_m sqrt(eta(m,j)) g_mk^T w_mj.
/// Row k is what user k sees; column j is whose data rides on it.
inline CMat effective_channels(const ChannelDraw& draw, const Mat& eta, Scheme scheme) {
    const int M = draw.M, K = draw.K;
    CMat a = CMat::Zero(K, K);
    for (int m = 0; m < M; ++m)
        for (int j = 0; j < K; ++j) {
            if (eta(m, j) == 0.0) continue;
            const CVec w = precoding_vector(draw.g_hat.col(draw.col(m, j)), scheme);
            const double amp = std::sqrt(eta(m, j));
            for (int k = 0; k < K; ++k)
                a(k, j) += amp * (draw.g.col(draw.col(m, k)).transpose() * w).value();
        }
    return a;
}

namespace detail {

inline bool has_zero_norm_estimate(const ChannelDraw& draw) {
    for (Eigen::Index c = 0; c < draw.g_hat.cols(); ++c)
        if (draw.g_hat.col(c).squaredNorm() == 0.0) return true;
    return false;
}

/// Draws channels plus estimates, replacing the measure-zero event of an
/// exactly zero-norm estimate.
inline ChannelDraw sample_trial(const Snapshot& s, const SystemConfig& config, Rng& rng,
                                long& resamples) {
    for (;;) {
        ChannelDraw d = sample_channels(s, config.N, rng);
        estimate_channels(d, s, config, rng);
        if (!has_zero_norm_estimate(d)) return d;
        ++resamples;
    }
}

inline int batch_count(long trials) {
    if (trials < 2) throw std::invalid_argument("oracle: need at least 2 trials");
    if (trials < 200) return 2;
    return 100;
}

inline McEstimate from_batches(const std::string& tag, const RunningStat& batches, double scale) {
    return {tag, scale * batches.mean, scale * batches.std_error(), batches.n};
}

}  // namespace detail

/// Monte Carlo estimates of the coherent gain |DS|^2, the self-interference
/// E|BU|^2 and each inter-user term E|UI_kj|^2, all scaled by rho_d to match
/// the closed-form report parts.
inline McReport estimate_ds_bu_ui(const Snapshot& s, const Mat& eta, Scheme scheme,
                                  const SystemConfig& config, long trials, std::uint64_t seed) {
    const int K = s.K;
    const int B = detail::batch_count(trials);
    const long per_batch = trials / B;
    McReport report;
    std::vector<RunningStat> ds(K), bu(K);
    std::vector<RunningStat> ui(static_cast<std::size_t>(K) * K);
    for (int b = 0; b < B; ++b) {
        Rng rng(substream_seed(seed, StreamTag::OracleBatch, b));
        std::vector<ComplexStat> own(K);
        std::vector<RunningStat> cross(static_cast<std::size_t>(K) * K);
        for (long t = 0; t < per_batch; ++t) {
            const ChannelDraw d = detail::sample_trial(s, config, rng, report.resamples);
            const CMat a = effective_channels(d, eta, scheme);
            for (int k = 0; k < K; ++k) {
                own[k].add(a(k, k));
                for (int j = 0; j < K; ++j)
                    if (j != k) cross[k * K + j].add(std::norm(a(k, j)));
            }
        }
        for (int k = 0; k < K; ++k) {
            const double var = own[k].variance();
            // |batch mean|^2 overshoots |E a|^2 by var/n; remove the bias
            ds[k].add(std::norm(own[k].mean()) - var / per_batch);
            bu[k].add(var);
            for (int j = 0; j < K; ++j)
                if (j != k) ui[k * K + j].add(cross[k * K + j].mean);
        }
    }
    report.draws = per_batch * B;
    report.batches = B;
    const double rho = config.rho_d;
    for (int k = 0; k < K; ++k) {
        report.items.push_back(detail::from_batches("DS[" + std::to_string(k) + "]", ds[k], rho));
        report.items.push_back(detail::from_batches("BU[" + std::to_string(k) + "]", bu[k], rho));
    }
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j)
            if (j != k)
                report.items.push_back(detail::from_batches(
                    "UI[" + std::to_string(k) + "," + std::to_string(j) + "]", ui[k * K + j], rho));
    return report;
}

/// Empirical per-AP transmit power E||x_m||^2 with unit-power data symbols.
inline McReport estimate_power(const Snapshot& s, const Mat& eta, Scheme scheme,
                               const SystemConfig& config, long trials, std::uint64_t seed) {
    const int M = s.M, K = s.K, N = config.N;
    const int B = detail::batch_count(trials);
    const long per_batch = trials / B;
    McReport report;
    std::vector<RunningStat> power(M);
    std::vector<Complex> symbols(K);
    CVec x(N);
    for (int b = 0; b < B; ++b) {
        Rng rng(substream_seed(seed, StreamTag::OracleBatch, b));
        std::vector<RunningStat> batch(M);
        for (long t = 0; t < per_batch; ++t) {
            const ChannelDraw d = detail::sample_trial(s, config, rng, report.resamples);
            for (int k = 0; k < K; ++k) symbols[k] = rng.cnormal(1.0);
            for (int m = 0; m < M; ++m) {
                x.setZero();
                for (int k = 0; k < K; ++k) {
                    if (eta(m, k) == 0.0) continue;
                    x += std::sqrt(eta(m, k)) * symbols[k] *
                         precoding_vector(d.g_hat.col(d.col(m, k)), scheme);
                }
                batch[m].add(x.squaredNorm());
            }
        }
        for (int m = 0; m < M; ++m) power[m].add(batch[m].mean);
    }
    report.draws = per_batch * B;
    report.batches = B;
    for (int m = 0; m < M; ++m)
        report.items.push_back(
            detail::from_batches("power[" + std::to_string(m) + "]", power[m], config.rho_d));
    return report;
}

/// Monte Carlo check of the downlink-training moments: the users' MMSE
/// effective-channel estimates are formed with the analytic moments, exactly
/// as the closed forms define them, then var(a_hat), E|a_err|^2, the
/// estimate/error correlation and the cross effective channels are estimated.
inline McReport estimate_cbdt(const Snapshot& s, const Mat& eta, const SystemConfig& config,
                              long trials, std::uint64_t seed) {
    if (config.tau_dp <= 0 || s.dl_pilot.empty())
        throw std::invalid_argument("estimate_cbdt requires downlink pilots");
    const int K = s.K, N = config.N;
    const double trho = static_cast<double>(config.tau_dp) * config.rho_dp;
    const double amp = std::sqrt(trho);
    const Mat couple = noncoherent_coupling(s, eta);
    // analytic estimator moments per user
    Vec mean_a(K), cov_ay(K), var_y(K);
    for (int k = 0; k < K; ++k) {
        double m = 0.0;
        for (int mm = 0; mm < s.M; ++mm) m += std::sqrt(eta(mm, k)) * s.gamma(mm, k);
        mean_a(k) = N * m;
        cov_ay(k) = amp * N * couple(k, k);
        double v = 1.0;
        for (int j = 0; j < K; ++j)
            if (s.same_dl_pilot(k, j)) v += trho * N * couple(k, j);
        var_y(k) = v;
    }

    const int B = detail::batch_count(trials);
    const long per_batch = trials / B;
    McReport report;
    std::vector<RunningStat> var_hat(K), err_sq(K), cov_re(K), cov_im(K);
    std::vector<RunningStat> cross(static_cast<std::size_t>(K) * K);
    for (int b = 0; b < B; ++b) {
        Rng rng(substream_seed(seed, StreamTag::OracleBatch, b));
        std::vector<ComplexStat> hat(K), err(K), prod(K);
        std::vector<RunningStat> err2(K);
        std::vector<RunningStat> akj(static_cast<std::size_t>(K) * K);
        for (long t = 0; t < per_batch; ++t) {
            const ChannelDraw d = detail::sample_trial(s, config, rng, report.resamples);
            const CMat a = effective_channels(d, eta, Scheme::CB);
            for (int k = 0; k < K; ++k) {
                Complex y = rng.cnormal(1.0);
                for (int j = 0; j < K; ++j)
                    if (s.same_dl_pilot(k, j)) y += amp * a(k, j);
                const Complex a_hat =
                    mean_a(k) + cov_ay(k) / var_y(k) * (y - amp * mean_a(k));
                const Complex a_err = a(k, k) - a_hat;
                hat[k].add(a_hat);
                err[k].add(a_err);
                err2[k].add(std::norm(a_err));
                prod[k].add(std::conj(a_hat) * a_err);
                for (int j = 0; j < K; ++j)
                    if (j != k) akj[k * K + j].add(std::norm(a(k, j)));
            }
        }
        for (int k = 0; k < K; ++k) {
            var_hat[k].add(hat[k].variance());
            err_sq[k].add(err2[k].mean);  // raw second moment; the error mean is zero
            const Complex cov = prod[k].mean() - std::conj(hat[k].mean()) * err[k].mean();
            cov_re[k].add(cov.real());
            cov_im[k].add(cov.imag());
            for (int j = 0; j < K; ++j)
                if (j != k) cross[k * K + j].add(akj[k * K + j].mean);
        }
    }
    report.draws = per_batch * B;
    report.batches = B;
    for (int k = 0; k < K; ++k) {
        const std::string i = std::to_string(k);
        report.items.push_back(detail::from_batches("var_ahat[" + i + "]", var_hat[k], 1.0));
        report.items.push_back(detail::from_batches("err_sq[" + i + "]", err_sq[k], 1.0));
        report.items.push_back(detail::from_batches("cov_re[" + i + "]", cov_re[k], 1.0));
        report.items.push_back(detail::from_batches("cov_im[" + i + "]", cov_im[k], 1.0));
    }
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j)
            if (j != k)
                report.items.push_back(detail::from_batches(
                    "akj_sq[" + std::to_string(k) + "," + std::to_string(j) + "]",
                    cross[k * K + j], 1.0));
    return report;
}

/// One Monte Carlo identity check: tag, analytic value, empirical estimate.
struct IdentityCheck {
    std::string tag;
    double closed = 0.0;
    McEstimate mc;
};

struct IdentityReport {
    std::vector<IdentityCheck> entries;
    long draws = 0;

    bool all_pass(double z_threshold = 4.0) const {
        for (const auto& e : entries)
            if (!compare(e.closed, e.mc, z_threshold).pass) return false;
        return true;
    }
    double max_z() const {
        double worst = 0.0;
        for (const auto& e : entries) {
            const auto r = compare(e.closed, e.mc, std::numeric_limits<double>::infinity());
            worst = std::max(worst, r.z);
        }
        return worst;
    }
};

/// Expectations of the normalized estimate products that the ECB closed form
/// rests on, estimated per (AP, user) pair and per cross-user pair.
inline IdentityReport verify_identities(const Snapshot& s, const SystemConfig& config, long trials,
                                        std::uint64_t seed) {
    if (config.N < 2) throw std::invalid_argument("verify_identities requires N >= 2");
    const int M = s.M, K = s.K, N = config.N;
    const int B = detail::batch_count(trials);
    const long per_batch = trials / B;
    IdentityReport report;
    long resamples = 0;

    const int own_n = M * K;
    const int cross_n = M * K * K;
    std::vector<RunningStat> mean_own_re(own_n), mean_own_im(own_n), sq_own(own_n),
        inv_norm(own_n);
    std::vector<RunningStat> sq_cross(cross_n), mean_cross_re(cross_n), mean_cross_im(cross_n);

    for (int b = 0; b < B; ++b) {
        Rng rng(substream_seed(seed, StreamTag::OracleBatch, b));
        std::vector<ComplexStat> own(own_n);
        std::vector<RunningStat> own_sq(own_n), own_inv(own_n);
        std::vector<ComplexStat> crs(cross_n);
        std::vector<RunningStat> crs_sq(cross_n);
        for (long t = 0; t < per_batch; ++t) {
            const ChannelDraw d = detail::sample_trial(s, config, rng, resamples);
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) {
                    const int idx = m * K + k;
                    const auto gh = d.g_hat.col(d.col(m, k));
                    const double sq = gh.squaredNorm();
                    own_inv[idx].add(1.0 / sq);
                    const Complex p = (d.g.col(d.col(m, k)).transpose() * gh.conjugate()).value();
                    own[idx].add(p / sq);
                    own_sq[idx].add(std::norm(p) / (sq * sq));
                    for (int j = 0; j < K; ++j) {
                        if (j == k) continue;
                        const auto ghj = d.g_hat.col(d.col(m, j));
                        const double sqj = ghj.squaredNorm();
                        const Complex pc =
                            (d.g.col(d.col(m, k)).transpose() * ghj.conjugate()).value();
                        const int cidx = (m * K + k) * K + j;
                        crs[cidx].add(pc / sqj);
                        crs_sq[cidx].add(std::norm(pc) / (sqj * sqj));
                    }
                }
        }
        for (int i = 0; i < own_n; ++i) {
            mean_own_re[i].add(own[i].mean().real());
            mean_own_im[i].add(own[i].mean().imag());
            sq_own[i].add(own_sq[i].mean);
            inv_norm[i].add(own_inv[i].mean);
        }
        for (int i = 0; i < cross_n; ++i) {
            if (crs[i].n == 0) continue;
            mean_cross_re[i].add(crs[i].mean().real());
            mean_cross_im[i].add(crs[i].mean().imag());
            sq_cross[i].add(crs_sq[i].mean);
        }
    }
    report.draws = per_batch * B;

    auto push = [&](const std::string& tag, double closed, const RunningStat& st) {
        report.entries.push_back({tag, closed, detail::from_batches(tag, st, 1.0)});
    };
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            const int idx = m * K + k;
            const std::string mk = "[" + std::to_string(m) + "," + std::to_string(k) + "]";
            push("mean_own_re" + mk, 1.0, mean_own_re[idx]);
            push("mean_own_im" + mk, 0.0, mean_own_im[idx]);
            push("sq_own" + mk, 1.0 + (s.beta(m, k) / s.gamma(m, k) - 1.0) / (N - 1.0),
                 sq_own[idx]);
            push("inv_norm" + mk, 1.0 / ((N - 1.0) * s.gamma(m, k)), inv_norm[idx]);
            for (int j = 0; j < K; ++j) {
                if (j == k) continue;
                const int cidx = idx * K + j;
                const std::string mkj = "[" + std::to_string(m) + "," + std::to_string(k) + "," +
                                        std::to_string(j) + "]";
                const bool copilot = s.copilot(k, j);
                const double ratio = s.beta(m, k) / s.beta(m, j);
                double sq_closed = s.beta(m, k) / ((N - 1.0) * s.gamma(m, j));
                if (copilot) sq_closed += ratio * ratio * (N - 2.0) / (N - 1.0);
                push("sq_cross" + mkj, sq_closed, sq_cross[cidx]);
                push("mean_cross_re" + mkj, copilot ? ratio : 0.0, mean_cross_re[cidx]);
                push("mean_cross_im" + mkj, 0.0, mean_cross_im[cidx]);
            }
        }
    return report;
}

}  // namespace cfmimo

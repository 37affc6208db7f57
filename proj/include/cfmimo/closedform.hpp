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
// Exact closed-form per-user SINR and spectral efficiency for the four
// conjugate-beamforming variants, evaluated from large-scale statistics only.
// No random sampling happens here; the Monte Carlo validation of every part
// lives in oracle.hpp.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/common.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/scenario.hpp"

namespace cfmimo {

enum class Scheme { CB, NCB, ECB, CBDT };

inline const char* to_string(Scheme s) {
    switch (s) {
        case Scheme::CB: return "cb";
        case Scheme::NCB: return "ncb";
        case Scheme::ECB: return "ecb";
        case Scheme::CBDT: return "cbdt";
    }
    return "?";
}

inline Scheme scheme_from_string(const std::string& name) {
    if (name == "cb") return Scheme::CB;
    if (name == "ncb") return Scheme::NCB;
    if (name == "ecb") return Scheme::ECB;
    if (name == "cbdt" || name == "cb-dt") return Scheme::CBDT;
    throw std::invalid_argument("unknown scheme: " + name);
}

/// Power control coefficients together with the scheme whose per-AP
/// constraint they must satisfy.
struct PowerAllocation {
    Mat eta;  ///< M x K, nonnegative, zero outside serving clusters
    Scheme scheme = Scheme::CB;
};

/// Per-user decomposition of the hardening bound. The SINR is reconstructed
/// exactly as coherent_gain / (self_interference + inter_user_interference + 1).
struct SinrReport {
    Scheme scheme = Scheme::CB;
    Vec coherent_gain;             ///< |DS|^2, linear
    Vec self_interference;         ///< E|BU|^2, linear
    Vec inter_user_interference;   ///< sum_j E|UI_kj|^2, linear
    Vec sinr;                      ///< linear
    Vec se;                        ///< bits/s/Hz
    Vec kappa;                     ///< downlink-estimate variances (CB-DT only, else zero)
    Mat ui_pairs;                  ///< K x K, E|UI_kj|^2 per pair, zero diagonal
    double prelog = 0.0;           ///< pre-log overhead factor used for se
};

/// Expected norm of an N-dim unit-variance circularly-symmetric Gaussian,
/// Gamma(N + 1/2) / Gamma(N), via log-gamma so large N cannot overflow.
inline double expected_norm_ratio(int N) {
    if (N < 1) throw std::invalid_argument("expected_norm_ratio: N must be at least 1");
    return std::exp(std::lgamma(N + 0.5) - std::lgamma(static_cast<double>(N)));
}

/// Non-coherent interference coupling, K x K:
///   couple(k,j) = sum_m eta(m,j) * beta(m,k) * gamma(m,j).
/// Row k collects what user k receives from every user's beams; the diagonal
/// is the beamforming-gain-uncertainty core.
inline Mat noncoherent_coupling(const Snapshot& s, const Mat& eta) {
    return s.beta.transpose() * eta.cwiseProduct(s.gamma);
}

/// Largest relative violation of the scheme's per-AP power constraint
/// (0 when satisfied with equality, negative when strictly inside).
inline double power_constraint_violation(const Snapshot& s, const Mat& eta, Scheme scheme, int N) {
    Vec lhs;
    switch (scheme) {
        case Scheme::CB:
        case Scheme::CBDT:
            lhs = N * eta.cwiseProduct(s.gamma).rowwise().sum();
            break;
        case Scheme::NCB:
            lhs = eta.rowwise().sum();
            break;
        case Scheme::ECB:
            lhs = eta.cwiseQuotient(s.gamma).rowwise().sum() / (N - 1.0);
            break;
    }
    return lhs.maxCoeff() - 1.0;
}

struct EvalOptions {
    bool enforce_constraints = true;  ///< false downgrades violations to silent acceptance
    double constraint_tol = 1e-6;
};

namespace detail {

inline void check_eta(const Snapshot& s, const Mat& eta, Scheme scheme, int N,
                      const EvalOptions& opts) {
    if (eta.rows() != s.beta.rows() || eta.cols() != s.beta.cols())
        throw std::invalid_argument("eta shape does not match snapshot");
    if ((eta.array() < 0.0).any()) throw std::invalid_argument("eta must be nonnegative");
    if (!opts.enforce_constraints) return;
    const double v = power_constraint_violation(s, eta, scheme, N);
    if (v > opts.constraint_tol)
        throw std::invalid_argument(std::string("per-AP power constraint violated for ") +
                                    to_string(scheme) + " by " + std::to_string(v));
}

inline void finalize_report(SinrReport& r, const SystemConfig& config) {
    const int K = static_cast<int>(r.coherent_gain.size());
    r.sinr.resize(K);
    r.se.resize(K);
    const int pilot_overhead =
        (r.scheme == Scheme::CBDT) ? config.tau_up + config.tau_dp : config.tau_up;
    r.prelog = config.xi * (1.0 - static_cast<double>(pilot_overhead) / config.tau_c);
    for (int k = 0; k < K; ++k) {
        r.sinr(k) = r.coherent_gain(k) /
                    (r.self_interference(k) + r.inter_user_interference(k) + 1.0);
        r.se(k) = r.prelog * std::log2(1.0 + r.sinr(k));
    }
}

}  // namespace detail

/// Contamination coupling for NCB between users k and j, as the explicit
/// double sum over AP pairs. Quadratic in M; used as the test oracle for the
/// factored form below.
inline double ncb_contamination_direct(const Snapshot& s, const Mat& eta, int N, int k, int j) {
    const double a = expected_norm_ratio(N);
    const int M = s.M;
    double diag = 0.0;
    for (int m = 0; m < M; ++m) {
        const double r = s.beta(m, k) / s.beta(m, j);
        diag += eta(m, j) * s.gamma(m, j) * r * r;
    }
    double cross = 0.0;
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < M; ++n) {
            if (n == m) continue;
            cross += std::sqrt(eta(m, j) * eta(n, j) * s.gamma(m, j) * s.gamma(n, j)) *
                     (s.beta(m, k) / s.beta(m, j)) * (s.beta(n, k) / s.beta(n, j));
        }
    return (N - 1.0) * diag + a * a * cross;
}

/// Same quantity factored into one weighted sum plus one squared sum (linear in M).
inline double ncb_contamination_factored(const Snapshot& s, const Mat& eta, int N, int k, int j) {
    const double a = expected_norm_ratio(N);
    double diag = 0.0, coherent = 0.0;
    for (int m = 0; m < s.M; ++m) {
        const double r = s.beta(m, k) / s.beta(m, j);
        diag += eta(m, j) * s.gamma(m, j) * r * r;
        coherent += std::sqrt(eta(m, j) * s.gamma(m, j)) * r;
    }
    return (N - 1.0 - a * a) * diag + a * a * coherent * coherent;
}

/// Contamination coupling for ECB, explicit double sum (test oracle).
inline double ecb_contamination_direct(const Snapshot& s, const Mat& eta, int N, int k, int j) {
    const int M = s.M;
    double diag = 0.0;
    for (int m = 0; m < M; ++m) {
        const double r = s.beta(m, k) / s.beta(m, j);
        diag += eta(m, j) * r * r;
    }
    double cross = 0.0;
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < M; ++n) {
            if (n == m) continue;
            cross += std::sqrt(eta(m, j) * eta(n, j)) * (s.beta(m, k) / s.beta(m, j)) *
                     (s.beta(n, k) / s.beta(n, j));
        }
    return (N - 2.0) / (N - 1.0) * diag + cross;
}

/// Same quantity as a squared sum minus a small correction (linear in M).
inline double ecb_contamination_factored(const Snapshot& s, const Mat& eta, int N, int k, int j) {
    double diag = 0.0, coherent = 0.0;
    for (int m = 0; m < s.M; ++m) {
        const double r = s.beta(m, k) / s.beta(m, j);
        diag += eta(m, j) * r * r;
        coherent += std::sqrt(eta(m, j)) * r;
    }
    return coherent * coherent - diag / (N - 1.0);
}

/// Interference weight of user j's power at AP m onto user k under NCB;
/// positive on every valid input.
inline double ncb_interference_weight(const Snapshot& s, int N, int m, int k, int j) {
    const double a = expected_norm_ratio(N);
    const double copilot = s.copilot(k, j) ? 1.0 : 0.0;
    return s.beta(m, k) + (N - 1.0 - a * a) * s.gamma(m, k) * copilot;
}

/// Interference weight of user j's power at AP m onto user k under ECB;
/// positive on every valid input with N >= 2.
inline double ecb_interference_weight(const Snapshot& s, int N, int m, int k, int j) {
    const double copilot = s.copilot(k, j) ? 1.0 : 0.0;
    const double r = s.beta(m, k) / s.beta(m, j);
    return (s.beta(m, k) / s.gamma(m, j) - r * r * copilot) / (N - 1.0);
}

/// Conjugate beamforming: w = conj(g_hat).
inline SinrReport sinr_cb(const Snapshot& s, const Mat& eta, const SystemConfig& config,
                          const EvalOptions& opts = {}) {
    const int N = config.N;
    detail::check_eta(s, eta, Scheme::CB, N, opts);
    const int K = s.K;
    const double rho = config.rho_d;
    const Mat couple = noncoherent_coupling(s, eta);
    SinrReport r;
    r.scheme = Scheme::CB;
    r.coherent_gain.resize(K);
    r.self_interference.resize(K);
    r.inter_user_interference = Vec::Zero(K);
    r.kappa = Vec::Zero(K);
    r.ui_pairs = Mat::Zero(K, K);
    for (int k = 0; k < K; ++k) {
        double signal = 0.0;
        for (int m = 0; m < s.M; ++m) signal += std::sqrt(eta(m, k)) * s.gamma(m, k);
        r.coherent_gain(k) = rho * N * N * signal * signal;
        r.self_interference(k) = rho * N * couple(k, k);
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            double ui = rho * N * couple(k, j);
            if (s.copilot(k, j)) {
                double coh = 0.0;
                for (int m = 0; m < s.M; ++m)
                    coh += std::sqrt(eta(m, j)) * s.gamma(m, j) * s.beta(m, k) / s.beta(m, j);
                ui += rho * N * N * coh * coh;
            }
            r.ui_pairs(k, j) = ui;
            r.inter_user_interference(k) += ui;
        }
    }
    detail::finalize_report(r, config);
    return r;
}

/// Normalized conjugate beamforming: w = conj(g_hat) / ||g_hat||.
inline SinrReport sinr_ncb(const Snapshot& s, const Mat& eta, const SystemConfig& config,
                           const EvalOptions& opts = {}) {
    const int N = config.N;
    detail::check_eta(s, eta, Scheme::NCB, N, opts);
    const int K = s.K;
    const double rho = config.rho_d;
    const double a = expected_norm_ratio(N);
    const double a2 = a * a;
    SinrReport r;
    r.scheme = Scheme::NCB;
    r.coherent_gain.resize(K);
    r.self_interference.resize(K);
    r.inter_user_interference = Vec::Zero(K);
    r.kappa = Vec::Zero(K);
    r.ui_pairs = Mat::Zero(K, K);
    for (int k = 0; k < K; ++k) {
        double signal = 0.0, bu = 0.0;
        for (int m = 0; m < s.M; ++m) {
            signal += std::sqrt(eta(m, k) * s.gamma(m, k));
            bu += eta(m, k) * (s.beta(m, k) + (N - 1.0 - a2) * s.gamma(m, k));
        }
        r.coherent_gain(k) = rho * a2 * signal * signal;
        r.self_interference(k) = rho * bu;
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            double ui = rho * eta.col(j).dot(s.beta.col(k));
            if (s.copilot(k, j)) ui += rho * ncb_contamination_factored(s, eta, N, k, j);
            r.ui_pairs(k, j) = ui;
            r.inter_user_interference(k) += ui;
        }
    }
    detail::finalize_report(r, config);
    return r;
}

/// Enhanced normalized conjugate beamforming: w = conj(g_hat) / ||g_hat||^2.
/// Undefined at N = 1: the inverse squared norm of a scalar complex Gaussian
/// has no finite mean.
inline SinrReport sinr_ecb(const Snapshot& s, const Mat& eta, const SystemConfig& config,
                           const EvalOptions& opts = {}) {
    const int N = config.N;
    if (N < 2) throw std::invalid_argument("ECB requires N >= 2");
    detail::check_eta(s, eta, Scheme::ECB, N, opts);
    const int K = s.K;
    const double rho = config.rho_d;
    SinrReport r;
    r.scheme = Scheme::ECB;
    r.coherent_gain.resize(K);
    r.self_interference.resize(K);
    r.inter_user_interference = Vec::Zero(K);
    r.kappa = Vec::Zero(K);
    r.ui_pairs = Mat::Zero(K, K);
    for (int k = 0; k < K; ++k) {
        double signal = 0.0, bu = 0.0;
        for (int m = 0; m < s.M; ++m) {
            signal += std::sqrt(eta(m, k));
            bu += eta(m, k) * (s.beta(m, k) / s.gamma(m, k) - 1.0);
        }
        r.coherent_gain(k) = rho * signal * signal;
        r.self_interference(k) = rho * bu / (N - 1.0);
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            double ui = 0.0;
            for (int m = 0; m < s.M; ++m) ui += eta(m, j) * s.beta(m, k) / s.gamma(m, j);
            ui = rho * ui / (N - 1.0);
            if (s.copilot(k, j)) ui += rho * ecb_contamination_factored(s, eta, N, k, j);
            r.ui_pairs(k, j) = ui;
            r.inter_user_interference(k) += ui;
        }
    }
    detail::finalize_report(r, config);
    return r;
}

/// Variance of each user's MMSE estimate of its effective downlink channel,
/// from beamformed downlink pilots:
///   kappa_k = tau_dp*rho_dp*N^2*couple(k,k)^2
///           / (1 + tau_dp*rho_dp*N * sum_{j: same dl pilot} couple(k,j)).
inline Vec dl_estimate_variance(const Snapshot& s, const Mat& eta, const SystemConfig& config) {
    const int K = s.K;
    const double trho = static_cast<double>(config.tau_dp) * config.rho_dp;
    const int N = config.N;
    const Mat couple = noncoherent_coupling(s, eta);
    Vec kappa(K);
    for (int k = 0; k < K; ++k) {
        double den = 1.0;
        for (int j = 0; j < K; ++j)
            if (s.same_dl_pilot(k, j)) den += trho * N * couple(k, j);
        kappa(k) = trho * N * N * couple(k, k) * couple(k, k) / den;
    }
    return kappa;
}

/// Conjugate beamforming with downlink training. The users estimate their
/// effective channel from beamformed pilots; the estimate variance moves from
/// self-interference into the coherent gain. Pilot and data constraints are
/// identical to CB.
inline SinrReport sinr_cbdt(const Snapshot& s, const Mat& eta, const SystemConfig& config,
                            const EvalOptions& opts = {}) {
    if (config.tau_dp <= 0 || s.dl_pilot.empty())
        throw std::invalid_argument("CB-DT requires downlink pilots (tau_dp > 0)");
    SinrReport r = sinr_cb(s, eta, config, opts);
    r.scheme = Scheme::CBDT;
    r.kappa = dl_estimate_variance(s, eta, config);
    const double rho = config.rho_d;
    for (int k = 0; k < s.K; ++k) {
        r.coherent_gain(k) += rho * r.kappa(k);
        r.self_interference(k) -= rho * r.kappa(k);
    }
    detail::finalize_report(r, config);
    return r;
}

inline SinrReport evaluate_sinr(const Snapshot& s, const Mat& eta, Scheme scheme,
                                const SystemConfig& config, const EvalOptions& opts = {}) {
    switch (scheme) {
        case Scheme::CB: return sinr_cb(s, eta, config, opts);
        case Scheme::NCB: return sinr_ncb(s, eta, config, opts);
        case Scheme::ECB: return sinr_ecb(s, eta, config, opts);
        case Scheme::CBDT: return sinr_cbdt(s, eta, config, opts);
    }
    throw std::invalid_argument("unknown scheme");
}

/// Pre-log share of the coherence block times the rate of the hardening bound.
inline double spectral_efficiency(double sinr, const SystemConfig& config, Scheme scheme) {
    if (sinr < 0.0) throw std::invalid_argument("spectral_efficiency: sinr must be nonnegative");
    const int pilot_overhead =
        (scheme == Scheme::CBDT) ? config.tau_up + config.tau_dp : config.tau_up;
    return config.xi * (1.0 - static_cast<double>(pilot_overhead) / config.tau_c) *
           std::log2(1.0 + sinr);
}

/// Heuristic distributed power control: every AP spends its full budget,
/// split across its served users proportionally to channel-estimate quality.
/// Denominators sum over served users only, so each per-AP constraint is
/// tight; `cluster_restricted = false` selects the all-users denominator
/// variant instead (constraints then hold with slack).
inline PowerAllocation maximal_ratio_power(const Snapshot& s, Scheme scheme, int N,
                                           bool cluster_restricted = true) {
    const int M = s.M, K = s.K;
    Mat eta_cb = Mat::Zero(M, K);
    for (int m = 0; m < M; ++m) {
        double denom = 0.0;
        for (int j = 0; j < K; ++j)
            if (!cluster_restricted || s.cluster_mask(m, j) > 0.0) denom += s.gamma(m, j);
        if (denom <= 0.0) continue;  // AP serves nobody
        for (int k = 0; k < K; ++k)
            if (s.cluster_mask(m, k) > 0.0) eta_cb(m, k) = 1.0 / (N * denom);
    }
    PowerAllocation out;
    out.scheme = scheme;
    switch (scheme) {
        case Scheme::CB:
        case Scheme::CBDT:
            out.eta = eta_cb;
            break;
        case Scheme::NCB:
            out.eta = N * s.gamma.cwiseProduct(eta_cb);
            break;
        case Scheme::ECB:
            out.eta = N * (N - 1.0) * s.gamma.cwiseProduct(s.gamma).cwiseProduct(eta_cb);
            break;
    }
    return out;
}

/// Self-interference and inter-user interference as shares of the coherent
/// gain, in dB. Zero interference maps to -inf; zero coherent gain is flagged.
struct HardeningMetrics {
    Vec bu_over_ds_db;
    Vec ui_over_ds_db;
    std::vector<bool> undefined;  ///< true where coherent gain vanished
};

inline HardeningMetrics hardening_metrics(const SinrReport& r) {
    const int K = static_cast<int>(r.coherent_gain.size());
    HardeningMetrics h;
    h.bu_over_ds_db.resize(K);
    h.ui_over_ds_db.resize(K);
    h.undefined.assign(K, false);
    for (int k = 0; k < K; ++k) {
        if (r.coherent_gain(k) <= 0.0) {
            h.undefined[k] = true;
            h.bu_over_ds_db(k) = std::numeric_limits<double>::quiet_NaN();
            h.ui_over_ds_db(k) = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        h.bu_over_ds_db(k) = linear_to_db(r.self_interference(k) / r.coherent_gain(k));
        h.ui_over_ds_db(k) = linear_to_db(r.inter_user_interference(k) / r.coherent_gain(k));
    }
    return h;
}

}  // namespace cfmimo

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

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "cfmimo/common.hpp"
#include "cfmimo/rng.hpp"

namespace cfmimo {

/// MMSE de-spreading coefficients. Users sharing an uplink pilot contaminate
/// each other's observation, which enters through the per-pilot beta sums:
///   c(m,k) = sqrt(tau*rho_u) * beta(m,k) / (tau*rho_u * sum_copilot beta(m,j) + 1)
inline Mat compute_c(const Mat& beta, const std::vector<int>& ul_pilot, int tau_up, double rho_u) {
    const int M = static_cast<int>(beta.rows());
    const int K = static_cast<int>(beta.cols());
    if ((beta.array() <= 0.0).any()) throw std::invalid_argument("compute_c: beta must be positive");
    const double trho = static_cast<double>(tau_up) * rho_u;
    const double amp = std::sqrt(trho);
    Mat c(M, K);
    for (int m = 0; m < M; ++m) {
        std::map<int, double> pilot_sum;
        for (int j = 0; j < K; ++j) pilot_sum[ul_pilot[j]] += beta(m, j);
        for (int k = 0; k < K; ++k)
            c(m, k) = amp * beta(m, k) / (trho * pilot_sum[ul_pilot[k]] + 1.0);
    }
    return c;
}

/// Mean-square of the channel estimate: gamma(m,k) = sqrt(tau*rho_u)*c(m,k)*beta(m,k).
inline Mat compute_gamma(const Mat& c, const Mat& beta, int tau_up, double rho_u) {
    return std::sqrt(static_cast<double>(tau_up) * rho_u) * c.cwiseProduct(beta);
}

/// One Monte Carlo channel realization: true channels, MMSE estimates and the
/// estimation errors, stored column-per-(AP, user) pair.
struct ChannelDraw {
    int M = 0;
    int K = 0;
    int N = 0;
    CMat g;        ///< N x (M*K) true channels
    CMat g_hat;    ///< N x (M*K) estimates
    CMat g_tilde;  ///< N x (M*K) errors

    Eigen::Index col(int m, int k) const { return static_cast<Eigen::Index>(m) * K + k; }
};

/// Independent Rayleigh fading: g(m,k) ~ CN(0, beta(m,k) I_N).
inline ChannelDraw sample_channels(const Mat& beta, int N, Rng& rng) {
    ChannelDraw draw;
    draw.M = static_cast<int>(beta.rows());
    draw.K = static_cast<int>(beta.cols());
    draw.N = N;
    draw.g.resize(N, static_cast<Eigen::Index>(draw.M) * draw.K);
    for (int m = 0; m < draw.M; ++m)
        for (int k = 0; k < draw.K; ++k) {
            const double var = beta(m, k);
            auto col = draw.g.col(draw.col(m, k));
            for (int i = 0; i < N; ++i) col(i) = rng.cnormal(var);
        }
    return draw;
}

/// Simulates uplink training on top of sampled channels: each AP forms one
/// de-spread observation per pilot in use (with fresh noise), then
/// g_hat = c * observation and g_tilde = g - g_hat. Co-pilot users share the
/// observation, so their estimates are exactly proportional draw by draw.
inline void estimate_channels(ChannelDraw& draw, const Mat& c, const std::vector<int>& ul_pilot,
                              int tau_up, double rho_u, Rng& rng) {
    const int N = draw.N;
    const double amp = std::sqrt(static_cast<double>(tau_up) * rho_u);
    draw.g_hat.resize(N, draw.g.cols());
    draw.g_tilde.resize(N, draw.g.cols());
    std::map<int, std::vector<int>> groups;  // pilot index -> users, ordered
    for (int k = 0; k < draw.K; ++k) groups[ul_pilot[k]].push_back(k);
    CVec obs(N);
    for (int m = 0; m < draw.M; ++m) {
        for (const auto& [pilot, members] : groups) {
            obs.setZero();
            for (int j : members) obs += draw.g.col(draw.col(m, j));
            obs *= amp;
            for (int i = 0; i < N; ++i) obs(i) += rng.cnormal(1.0);
            for (int k : members) draw.g_hat.col(draw.col(m, k)) = c(m, k) * obs;
        }
    }
    draw.g_tilde = draw.g - draw.g_hat;
}

}  // namespace cfmimo

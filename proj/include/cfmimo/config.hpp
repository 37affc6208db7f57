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
#include <stdexcept>
#include <string>

#include "cfmimo/common.hpp"

namespace cfmimo {

/// Scalar parameters of the scenario and radio model. All SNRs are linear
/// (normalized by the noise power); dB enters only at the config boundary.
struct SystemConfig {
    int M = 200;                ///< access points
    int N = 8;                  ///< antennas per AP
    int K = 40;                 ///< single-antenna users
    double D = 500.0;           ///< square deployment side [m]
    int tau_c = 200;            ///< coherence block [samples]
    int tau_up = 20;            ///< uplink pilot length [samples]
    int tau_dp = 20;            ///< downlink pilot length [samples], 0 disables CB-DT
    double xi = 0.5;            ///< downlink share of the coherence block
    double rho_d = normalized_snr(200.0, -92.0);   ///< downlink data SNR
    double rho_dp = normalized_snr(200.0, -92.0);  ///< downlink pilot SNR
    double rho_u = normalized_snr(100.0, -92.0);   ///< uplink pilot SNR
    double sigma_sh = 4.0;      ///< shadowing std [dB]
    double epsilon = 0.5;       ///< AP/user shadowing mixing weight
    double ap_height = 10.0;    ///< [m]
    double user_height = 1.5;   ///< [m]
    double decorr_dist = 9.0;   ///< shadowing decorrelation distance [m]
    double cluster_threshold = 0.95;  ///< large-scale-fading share captured per cluster
    int cluster_min = 10;       ///< minimum serving-cluster size
    double noise_dbm = -92.0;   ///< noise power [dBm]
    bool orthogonal_ul_pilots = false;  ///< force distinct uplink pilots (needs tau_up >= K)
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
        if (M < 1 || N < 1 || K < 1) fail("M, N, K must be positive");
        if (static_cast<long>(M) * N < K) fail("M*N must be at least K");
        if (D <= 0.0) fail("D must be positive");
        if (tau_up < 1) fail("tau_up must be at least 1");
        if (tau_dp < 0) fail("tau_dp must be nonnegative");
        if (tau_up > tau_c) fail("tau_up must not exceed tau_c");
        if (tau_up + tau_dp >= tau_c) fail("tau_up + tau_dp must be less than tau_c");
        if (!(xi > 0.0 && xi < 1.0)) fail("xi must lie in (0,1)");
        if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon must lie in (0,1)");
        if (rho_d <= 0.0 || rho_dp <= 0.0 || rho_u <= 0.0) fail("rho_d, rho_dp, rho_u must be positive");
        if (sigma_sh < 0.0) fail("sigma_sh must be nonnegative");
        if (decorr_dist <= 0.0) fail("decorr_dist must be positive");
        if (ap_height == user_height) fail("ap_height must differ from user_height");
        if (ap_height < 0.0 || user_height < 0.0) fail("heights must be nonnegative");
        if (!(cluster_threshold > 0.0 && cluster_threshold <= 1.0)) fail("cluster_threshold must lie in (0,1]");
        if (cluster_min < 1) fail("cluster_min must be at least 1");
        if (cluster_min > M) fail("cluster_min must not exceed M");
        if (orthogonal_ul_pilots && tau_up < K) fail("orthogonal uplink pilots require tau_up >= K");
    }
};

}  // namespace cfmimo

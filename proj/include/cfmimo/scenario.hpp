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

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include "cfmimo/common.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/estimation.hpp"
#include "cfmimo/geometry.hpp"
#include "cfmimo/rng.hpp"

namespace cfmimo {

/// One network realization: large-scale statistics, pilot assignments and
/// serving clusters. Immutable after construction; safe to share across
/// threads.
struct Snapshot {
    int M = 0;
    int K = 0;
    Mat beta;   ///< M x K large-scale fading, linear
    Mat c;      ///< M x K MMSE scaling coefficients
    Mat gamma;  ///< M x K channel-estimate mean-squares, linear
    std::vector<int> ul_pilot;  ///< K indices in [0, tau_up)
    std::vector<int> dl_pilot;  ///< K indices in [0, tau_dp), empty when disabled
    std::vector<std::vector<int>> clusters;  ///< per-user serving AP indices, ascending
    Mat cluster_mask;  ///< M x K, 1.0 where AP m serves user k

    bool copilot(int k, int j) const { return ul_pilot[k] == ul_pilot[j]; }
    bool same_dl_pilot(int k, int j) const {
        return !dl_pilot.empty() && dl_pilot[k] == dl_pilot[j];
    }
};

/// Urban-microcell distance-dependent loss in dB, 3-D distances in meters.
inline Mat compute_pathloss_db(const Geometry& geom) {
    if ((geom.d_ap_user.array() <= 0.0).any())
        throw std::invalid_argument("pathloss: nonpositive AP-user distance");
    return (-30.5 - 36.7 * geom.d_ap_user.array().log10()).matrix();
}

/// Exponential distance correlation with value 1/2 at the decorrelation distance.
inline Mat shadowing_covariance(const Mat& dist, double decorr_dist) {
    return Eigen::pow(2.0, (-dist / decorr_dist).array()).matrix();
}

/// Draws a zero-mean Gaussian vector with the given covariance via Cholesky.
/// A small diagonal jitter absorbs co-located-node singularity; failure after
/// jitter is a hard error.
inline Vec sample_correlated_normal(const Mat& cov, Rng& rng) {
    Mat jittered = cov;
    jittered.diagonal().array() += 1e-10;
    Eigen::LLT<Mat> llt(jittered);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("shadowing covariance is not positive semidefinite");
    Vec z(cov.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return llt.matrixL() * z;
}

/// Unit-variance shadowing field mixing an AP-side and a user-side component.
inline Mat sample_shadowing(const Geometry& geom, const SystemConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    const Vec a = sample_correlated_normal(shadowing_covariance(geom.d_ap_ap, config.decorr_dist), rng);
    const Vec b = sample_correlated_normal(shadowing_covariance(geom.d_user_user, config.decorr_dist), rng);
    const double wa = std::sqrt(config.epsilon);
    const double wb = std::sqrt(1.0 - config.epsilon);
    return wa * a * Eigen::RowVectorXd::Ones(b.size()) + wb * Vec::Ones(a.size()) * b.transpose();
}

/// beta = pathloss * lognormal shadowing, linear.
inline Mat compute_beta(const Mat& pathloss_db, const Mat& q, double sigma_sh) {
    if (pathloss_db.rows() != q.rows() || pathloss_db.cols() != q.cols())
        throw std::invalid_argument("compute_beta: shape mismatch");
    return Eigen::pow(10.0, ((pathloss_db + sigma_sh * q) / 10.0).array()).matrix();
}

/// Largest-large-scale-fading AP selection: smallest prefix of the descending
/// beta order that captures `threshold` of the total, padded to `cluster_min`.
/// Ties break toward the lower AP index.
inline std::vector<std::vector<int>> select_ap_clusters(const Mat& beta, double threshold,
                                                        int cluster_min) {
    const int M = static_cast<int>(beta.rows());
    const int K = static_cast<int>(beta.cols());
    if (M < cluster_min) throw std::invalid_argument("select_ap_clusters: cluster_min exceeds M");
    std::vector<std::vector<int>> clusters(K);
    std::vector<int> order(M);
    for (int k = 0; k < K; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return beta(a, k) > beta(b, k); });
        const double total = beta.col(k).sum();
        double acc = 0.0;
        int size = 0;
        while (size < M) {
            acc += beta(order[size], k);
            ++size;
            if (acc >= threshold * total) break;
        }
        size = std::max(size, std::min(cluster_min, M));
        clusters[k].assign(order.begin(), order.begin() + size);
        std::sort(clusters[k].begin(), clusters[k].end());
    }
    return clusters;
}

/// Each user draws an index uniformly from [0, tau_up); in orthogonal mode all
/// users get distinct indices (requires tau_up >= K).
inline std::vector<int> assign_uplink_pilots(int K, int tau_up, std::uint64_t seed,
                                             bool orthogonal = false) {
    if (tau_up < 1) throw std::invalid_argument("assign_uplink_pilots: tau_up must be positive");
    Rng rng(seed);
    std::vector<int> pilots(K);
    if (orthogonal) {
        if (tau_up < K)
            throw std::invalid_argument("assign_uplink_pilots: orthogonal mode needs tau_up >= K");
        std::vector<int> pool(tau_up);
        std::iota(pool.begin(), pool.end(), 0);
        for (int k = 0; k < K; ++k) {
            const auto pick = k + static_cast<int>(rng.uniform_below(tau_up - k));
            std::swap(pool[k], pool[pick]);
            pilots[k] = pool[k];
        }
    } else {
        for (int k = 0; k < K; ++k) pilots[k] = static_cast<int>(rng.uniform_below(tau_up));
    }
    return pilots;
}

/// Downlink pilots: distinct inside each co-uplink-pilot group, random reuse
/// across groups. tau_dp == K assigns a global permutation (no reuse).
inline std::vector<int> assign_downlink_pilots(const std::vector<int>& ul_pilot, int tau_dp,
                                               std::uint64_t seed) {
    const int K = static_cast<int>(ul_pilot.size());
    Rng rng(seed);
    std::vector<int> pilots(K, -1);
    if (tau_dp == K) {
        std::vector<int> perm(K);
        std::iota(perm.begin(), perm.end(), 0);
        for (int k = 0; k < K; ++k) {
            const auto pick = k + static_cast<int>(rng.uniform_below(K - k));
            std::swap(perm[k], perm[pick]);
        }
        return perm;
    }
    std::map<int, std::vector<int>> groups;  // ordered for determinism
    for (int k = 0; k < K; ++k) groups[ul_pilot[k]].push_back(k);
    std::vector<int> pool(tau_dp);
    for (const auto& [ul, members] : groups) {
        const int n = static_cast<int>(members.size());
        if (n > tau_dp) {
            std::ostringstream msg;
            msg << "assign_downlink_pilots: co-pilot group on uplink pilot " << ul << " has " << n
                << " users but only " << tau_dp << " downlink pilots";
            throw std::runtime_error(msg.str());
        }
        std::iota(pool.begin(), pool.end(), 0);
        for (int i = 0; i < n; ++i) {
            const auto pick = i + static_cast<int>(rng.uniform_below(tau_dp - i));
            std::swap(pool[i], pool[pick]);
            pilots[members[i]] = pool[i];
        }
    }
    return pilots;
}

/// Full network realization for one (config, seed) pair. Deterministic.
inline Snapshot build_snapshot(const SystemConfig& config, std::uint64_t seed) {
    config.validate();
    Snapshot s;
    s.M = config.M;
    s.K = config.K;
    const Geometry geom = generate_geometry(config, substream_seed(seed, StreamTag::Geometry));
    const Mat pl = compute_pathloss_db(geom);
    const Mat q = sample_shadowing(geom, config, substream_seed(seed, StreamTag::Shadowing));
    s.beta = compute_beta(pl, q, config.sigma_sh);
    s.ul_pilot = assign_uplink_pilots(config.K, config.tau_up,
                                      substream_seed(seed, StreamTag::UplinkPilots),
                                      config.orthogonal_ul_pilots);
    if (config.tau_dp > 0)
        s.dl_pilot = assign_downlink_pilots(s.ul_pilot, config.tau_dp,
                                            substream_seed(seed, StreamTag::DownlinkPilots));
    s.c = compute_c(s.beta, s.ul_pilot, config.tau_up, config.rho_u);
    s.gamma = compute_gamma(s.c, s.beta, config.tau_up, config.rho_u);
    s.clusters = select_ap_clusters(s.beta, config.cluster_threshold, config.cluster_min);
    s.cluster_mask = Mat::Zero(config.M, config.K);
    for (int k = 0; k < config.K; ++k)
        for (int m : s.clusters[k]) s.cluster_mask(m, k) = 1.0;
    return s;
}

inline ChannelDraw sample_channels(const Snapshot& snapshot, int N, Rng& rng) {
    return sample_channels(snapshot.beta, N, rng);
}

inline void estimate_channels(ChannelDraw& draw, const Snapshot& snapshot,
                              const SystemConfig& config, Rng& rng) {
    estimate_channels(draw, snapshot.c, snapshot.ul_pilot, config.tau_up, config.rho_u, rng);
}

}  // namespace cfmimo

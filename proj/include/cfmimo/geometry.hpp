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

#include <cmath>
#include <cstdint>

#include "cfmimo/common.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/rng.hpp"

namespace cfmimo {

/// One network layout. Planar distances wrap around the deployment square
/// (torus); the AP/user height difference enters only AP-user distances.
struct Geometry {
    Eigen::MatrixX2d ap_pos;    ///< M x 2 [m]
    Eigen::MatrixX2d user_pos;  ///< K x 2 [m]
    double ap_height = 0.0;
    double user_height = 0.0;
    double area_side = 0.0;
    Mat d_ap_user;    ///< M x K, 3-D [m]
    Mat d_ap_ap;      ///< M x M, planar [m]
    Mat d_user_user;  ///< K x K, planar [m]
};

/// Shortest per-coordinate offset on a circle of circumference D.
inline double torus_delta(double a, double b, double D) {
    const double d = std::fabs(a - b);
    return std::min(d, D - d);
}

inline double torus_planar_distance(double x1, double y1, double x2, double y2, double D) {
    const double dx = torus_delta(x1, x2, D);
    const double dy = torus_delta(y1, y2, D);
    return std::hypot(dx, dy);
}

inline Mat pairwise_torus_distances(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b, double D) {
    Mat out(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            out(i, j) = torus_planar_distance(a(i, 0), a(i, 1), b(j, 0), b(j, 1), D);
    return out;
}

/// Builds all distance matrices from given positions.
inline Geometry make_geometry(const Eigen::MatrixX2d& ap_pos, const Eigen::MatrixX2d& user_pos,
                              const SystemConfig& config) {
    Geometry g;
    g.ap_pos = ap_pos;
    g.user_pos = user_pos;
    g.ap_height = config.ap_height;
    g.user_height = config.user_height;
    g.area_side = config.D;
    g.d_ap_ap = pairwise_torus_distances(ap_pos, ap_pos, config.D);
    g.d_user_user = pairwise_torus_distances(user_pos, user_pos, config.D);
    const double dh = config.ap_height - config.user_height;
    Mat planar = pairwise_torus_distances(ap_pos, user_pos, config.D);
    g.d_ap_user = (planar.array().square() + dh * dh).sqrt();
    return g;
}

/// AP and user positions i.i.d. uniform over the square.
inline Geometry generate_geometry(const SystemConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixX2d ap_pos(config.M, 2);
    for (int m = 0; m < config.M; ++m) {
        ap_pos(m, 0) = rng.uniform() * config.D;
        ap_pos(m, 1) = rng.uniform() * config.D;
    }
    Eigen::MatrixX2d user_pos(config.K, 2);
    for (int k = 0; k < config.K; ++k) {
        user_pos(k, 0) = rng.uniform() * config.D;
        user_pos(k, 1) = rng.uniform() * config.D;
    }
    return make_geometry(ap_pos, user_pos, config);
}

}  // namespace cfmimo

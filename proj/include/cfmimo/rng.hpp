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
#include <complex>
#include <cstdint>
#include <random>

namespace cfmimo {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stage tags keep the random streams of unrelated pipeline steps disjoint.
enum class StreamTag : std::uint64_t {
    Geometry = 1,
    Shadowing = 2,
    UplinkPilots = 3,
    DownlinkPilots = 4,
    Snapshot = 5,
    OracleBatch = 6,
    Experiment = 7,
};

/// Independent seed for substream `index` of stage `tag` under `master`.
inline std::uint64_t substream_seed(std::uint64_t master, StreamTag tag, std::uint64_t index = 0) {
    std::uint64_t s = master ^ (0xd1342543de82ef95ULL * (static_cast<std::uint64_t>(tag) + 1));
    splitmix64_next(s);
    s ^= 0xaf251af3b0f025b5ULL * (index + 1);
    return splitmix64_next(s);
}

/// Deterministic generator with portable uniform and Gaussian output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        std::seed_seq seq{splitmix64_next(s), splitmix64_next(s), splitmix64_next(s),
                          splitmix64_next(s)};
        gen_.seed(seq);
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        // rejection sampling keeps the draw exactly uniform
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller, spare value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
        const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;          // [0,1)
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Circularly-symmetric complex Gaussian with the given total variance.
    std::complex<double> cnormal(double variance) {
        const double s = std::sqrt(variance / 2.0);
        return {s * normal(), s * normal()};
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cfmimo

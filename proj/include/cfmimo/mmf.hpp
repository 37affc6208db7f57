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
// Max-min fairness power control. The per-user SINR targets and the per-AP
// budgets form jointly second-order cones in u = sqrt(rho_d * eta); at a
// fixed target the intersection is decided by a self-contained
// Douglas-Rachford splitting between the product of cones and the affine
// coupling, and bisection drives the target to the optimum.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cfmimo/closedform.hpp"
#include "cfmimo/common.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/scenario.hpp"

namespace cfmimo {

struct MmfOptions {
    double feas_tol = 1e-6;      ///< cone slack accepted on returned witnesses
    double bisect_tol = 1e-3;    ///< relative bracket width at termination
    int iter_cap_factor = 50;    ///< splitting iterations per (M*K)
    int iter_cap_floor = 4000;   ///< lower bound on the iteration cap
    int iter_cap_ceiling = 20000;  ///< keeps near-boundary calls bounded on large networks
};

/// Cone data of the epigraph problem for one snapshot and scheme, in
/// v = sqrt(eta) coordinates. For every user k and target nu:
///   nu * ( sum_{j!=k} (coh[k].col(j) . v_j)^2
///        + sum_j || diag[k].col(j) o v_j ||^2 + 1/rho_d )  <=  (signal.col(k) . v_k)^2
/// and for every AP m:  sum_k ap_weight(m,k)^2 v(m,k)^2 <= ap_budget.
struct SocProblem {
    Scheme scheme = Scheme::CB;
    int M = 0;
    int K = 0;
    double rho_d = 0.0;
    double ap_budget = 1.0;
    Mat signal;             ///< M x K
    std::vector<Mat> coh;   ///< per user k: M x K, column j (zero unless co-pilot, j != k)
    std::vector<Mat> diag;  ///< per user k: M x K, column j
    Mat ap_weight;          ///< M x K
    Mat mask;               ///< cluster mask
    Mat eta_ref;            ///< maximal-ratio coefficients, used for preconditioning
};

inline SocProblem build_soc_problem(const Snapshot& s, Scheme scheme, const SystemConfig& config) {
    if (scheme == Scheme::CBDT)
        throw std::invalid_argument("max-min power control is not provided for CB-DT");
    const int N = config.N;
    if (scheme == Scheme::ECB && N < 2) throw std::invalid_argument("ECB requires N >= 2");
    const int M = s.M, K = s.K;
    SocProblem p;
    p.scheme = scheme;
    p.M = M;
    p.K = K;
    p.rho_d = config.rho_d;
    p.mask = s.cluster_mask;
    p.signal = Mat::Zero(M, K);
    p.ap_weight = Mat::Zero(M, K);
    p.coh.assign(K, Mat::Zero(M, K));
    p.diag.assign(K, Mat::Zero(M, K));
    const double a = expected_norm_ratio(N);

    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            if (s.cluster_mask(m, k) == 0.0) continue;
            switch (scheme) {
                case Scheme::CB:
                    p.signal(m, k) = N * s.gamma(m, k);
                    p.ap_weight(m, k) = std::sqrt(N * s.gamma(m, k));
                    break;
                case Scheme::NCB:
                    p.signal(m, k) = a * std::sqrt(s.gamma(m, k));
                    p.ap_weight(m, k) = 1.0;
                    break;
                case Scheme::ECB:
                    p.signal(m, k) = 1.0;
                    p.ap_weight(m, k) = 1.0 / std::sqrt(s.gamma(m, k));
                    break;
                default: break;
            }
        }
    p.ap_budget = (scheme == Scheme::ECB) ? N - 1.0 : 1.0;

    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j) {
            const bool copilot = s.copilot(k, j);
            for (int m = 0; m < M; ++m) {
                if (s.cluster_mask(m, j) == 0.0) continue;
                double d = 0.0, c = 0.0;
                switch (scheme) {
                    case Scheme::CB:
                        d = std::sqrt(N * s.beta(m, k) * s.gamma(m, j));
                        if (copilot && j != k)
                            c = N * s.gamma(m, j) * s.beta(m, k) / s.beta(m, j);
                        break;
                    case Scheme::NCB:
                        d = std::sqrt(ncb_interference_weight(s, N, m, k, j));
                        if (copilot && j != k) c = a * std::sqrt(s.gamma(m, k));
                        break;
                    case Scheme::ECB:
                        d = std::sqrt(std::max(0.0, ecb_interference_weight(s, N, m, k, j)));
                        if (copilot && j != k) c = s.beta(m, k) / s.beta(m, j);
                        break;
                    default: break;
                }
                p.diag[k](m, j) = d;
                p.coh[k](m, j) = c;
            }
        }

    p.eta_ref = maximal_ratio_power(s, scheme, N).eta;
    for (const Mat* mat : {&p.signal, &p.ap_weight, &p.eta_ref})
        if (!mat->allFinite()) throw std::runtime_error("non-finite cone coefficient");
    for (int k = 0; k < K; ++k)
        if (!p.coh[k].allFinite() || !p.diag[k].allFinite())
            throw std::runtime_error("non-finite cone coefficient");
    return p;
}

/// SINR implied by the cone data at a given allocation; the user-k cone at
/// target nu holds exactly when nu <= cone_sinr(k). Lets tests tie the
/// epigraph data back to the closed-form evaluators.
inline Vec cone_sinr(const SocProblem& p, const Mat& eta) {
    const Mat v = eta.cwiseSqrt();
    Vec out(p.K);
    for (int k = 0; k < p.K; ++k) {
        const double sig = p.signal.col(k).dot(v.col(k));
        double interference = 1.0 / p.rho_d;
        for (int j = 0; j < p.K; ++j) {
            if (j != k) {
                const double c = p.coh[k].col(j).dot(v.col(j));
                interference += c * c;
            }
            interference += p.diag[k].col(j).cwiseProduct(v.col(j)).squaredNorm();
        }
        out(k) = sig * sig / interference;
    }
    return out;
}

enum class FeasStatus { Feasible, Infeasible, Undecided };

struct FeasResult {
    FeasStatus status = FeasStatus::Undecided;
    Mat eta;           ///< witness, only meaningful when feasible
    int iterations = 0;
    double violation = 0.0;  ///< best scaled cone violation seen
};

namespace detail {

/// Splitting state: the allocation block plus one image block per cone.
struct SplitState {
    Mat x;                  // M x K
    std::vector<Vec> yc;    // per user: K coherent scalars (entry k unused)
    std::vector<Mat> yd;    // per user: M x K diagonal parts
    Vec dconst;             // per user: the noise coordinate
    Vec sig;                // per user: signal value
    Mat ball;               // M x K per-AP parts
};

struct ScaledCones {
    int M = 0, K = 0;
    std::vector<Vec> sf;    // per user: M
    std::vector<Mat> sc;    // per user: M x K
    std::vector<Mat> sd;    // per user: M x K
    Vec delta;              // per user noise constant
    Mat sw;                 // M x K (ball radius 1)
    Mat mask;
    std::vector<Eigen::LLT<Mat>> llt;  // per user block of the affine projection

    void resize(SplitState& z) const {
        z.x.resize(M, K);
        z.yc.assign(K, Vec::Zero(K));
        z.yd.assign(K, Mat::Zero(M, K));
        z.dconst.resize(K);
        z.sig.resize(K);
        z.ball.resize(M, K);
    }

    void affine_image(const Mat& x, SplitState& z) const {
        z.x = x;
        z.dconst = delta;
        for (int k = 0; k < K; ++k) {
            z.sig(k) = sf[k].dot(x.col(k));
            for (int j = 0; j < K; ++j) {
                if (j != k) z.yc[k](j) = sc[k].col(j).dot(x.col(j));
                z.yd[k].col(j) = sd[k].col(j).cwiseProduct(x.col(j));
            }
        }
        z.ball = sw.cwiseProduct(x);
    }

    /// Least-squares projection onto the graph of the affine map; block
    /// normal equations factorized once per feasibility call.
    void project_affine(const SplitState& t, SplitState& out, Mat& rhs, Mat& x) const {
        rhs = t.x;
        for (int j = 0; j < K; ++j) {
            for (int k = 0; k < K; ++k) {
                if (j != k) rhs.col(j) += sc[k].col(j) * t.yc[k](j);
                rhs.col(j) += sd[k].col(j).cwiseProduct(t.yd[k].col(j));
            }
            rhs.col(j) += sf[j] * t.sig(j);
            rhs.col(j) += sw.col(j).cwiseProduct(t.ball.col(j));
        }
        for (int j = 0; j < K; ++j) x.col(j) = llt[j].solve(rhs.col(j));
        affine_image(x, out);
    }

    void project_cones(const SplitState& t, SplitState& z) const {
        z = t;
        z.x = t.x.cwiseMax(0.0).cwiseProduct(mask);
        for (int k = 0; k < K; ++k) {
            // second-order cone over (coherent parts, diagonal parts, noise | signal)
            double sq = z.dconst(k) * z.dconst(k);
            for (int j = 0; j < K; ++j) {
                if (j != k) sq += z.yc[k](j) * z.yc[k](j);
                sq += z.yd[k].col(j).squaredNorm();
            }
            const double norm = std::sqrt(sq);
            const double s = z.sig(k);
            if (norm <= s) continue;
            if (norm <= -s) {
                z.yc[k].setZero();
                z.yd[k].setZero();
                z.dconst(k) = 0.0;
                z.sig(k) = 0.0;
                continue;
            }
            const double mid = 0.5 * (norm + s);
            const double scale = mid / norm;
            z.yc[k] *= scale;
            z.yd[k] *= scale;
            z.dconst(k) *= scale;
            z.sig(k) = mid;
        }
        for (int m = 0; m < M; ++m) {
            const double norm = z.ball.row(m).norm();
            if (norm > 1.0) z.ball.row(m) /= norm;
        }
    }

    /// Largest scaled violation over all cones at a candidate allocation.
    double violation(const Mat& x) const {
        double worst = 0.0;
        for (int k = 0; k < K; ++k) {
            double sq = delta(k) * delta(k);
            for (int j = 0; j < K; ++j) {
                if (j != k) {
                    const double c = sc[k].col(j).dot(x.col(j));
                    sq += c * c;
                }
                sq += sd[k].col(j).cwiseProduct(x.col(j)).squaredNorm();
            }
            worst = std::max(worst, std::sqrt(sq) - sf[k].dot(x.col(k)));
        }
        for (int m = 0; m < M; ++m)
            worst = std::max(worst, sw.row(m).cwiseProduct(x.row(m)).norm() - 1.0);
        return worst;
    }
};

/// out = 2a - b, fieldwise (the reflection step).
inline void reflect(const SplitState& a, const SplitState& b, SplitState& out) {
    out.x = 2.0 * a.x - b.x;
    for (std::size_t k = 0; k < a.yc.size(); ++k) {
        out.yc[k] = 2.0 * a.yc[k] - b.yc[k];
        out.yd[k] = 2.0 * a.yd[k] - b.yd[k];
    }
    out.dconst = 2.0 * a.dconst - b.dconst;
    out.sig = 2.0 * a.sig - b.sig;
    out.ball = 2.0 * a.ball - b.ball;
}

/// z += a - b, fieldwise (the splitting update).
inline void accumulate(SplitState& z, const SplitState& a, const SplitState& b) {
    z.x += a.x - b.x;
    for (std::size_t k = 0; k < z.yc.size(); ++k) {
        z.yc[k] += a.yc[k] - b.yc[k];
        z.yd[k] += a.yd[k] - b.yd[k];
    }
    z.dconst += a.dconst - b.dconst;
    z.sig += a.sig - b.sig;
    z.ball += a.ball - b.ball;
}

inline ScaledCones scale_problem(const SocProblem& p, double nu) {
    ScaledCones sc;
    sc.M = p.M;
    sc.K = p.K;
    sc.mask = p.mask;
    const double root_nu = std::sqrt(nu);
    // column scaling from the maximal-ratio point, row scaling so the signal
    // value there is one
    Mat sigma = p.eta_ref.cwiseSqrt();
    for (int m = 0; m < p.M; ++m)
        for (int k = 0; k < p.K; ++k)
            if (sigma(m, k) == 0.0) sigma(m, k) = 1.0;
    Vec r(p.K);
    for (int k = 0; k < p.K; ++k) {
        r(k) = p.signal.col(k).dot(sigma.col(k).cwiseProduct(p.mask.col(k)));
        if (r(k) <= 0.0) throw std::runtime_error("user with empty signal cone");
    }
    sc.sf.resize(p.K);
    sc.sc.resize(p.K);
    sc.sd.resize(p.K);
    sc.delta.resize(p.K);
    for (int k = 0; k < p.K; ++k) {
        sc.sf[k] = p.signal.col(k).cwiseProduct(sigma.col(k)) / r(k);
        sc.sc[k] = root_nu * p.coh[k].cwiseProduct(sigma) / r(k);
        sc.sd[k] = root_nu * p.diag[k].cwiseProduct(sigma) / r(k);
        sc.delta(k) = root_nu / (std::sqrt(p.rho_d) * r(k));
    }
    sc.sw = p.ap_weight.cwiseProduct(sigma) / std::sqrt(p.ap_budget);

    sc.llt.reserve(p.K);
    for (int j = 0; j < p.K; ++j) {
        Mat g = Mat::Identity(p.M, p.M);
        for (int k = 0; k < p.K; ++k) {
            if (j != k) g += sc.sc[k].col(j) * sc.sc[k].col(j).transpose();
            g += sc.sd[k].col(j).cwiseAbs2().asDiagonal().toDenseMatrix();
        }
        g += sc.sf[j] * sc.sf[j].transpose();
        g += sc.sw.col(j).cwiseAbs2().asDiagonal().toDenseMatrix();
        sc.llt.emplace_back(g);
        if (sc.llt.back().info() != Eigen::Success)
            throw std::runtime_error("affine projection factorization failed");
    }
    return sc;
}

/// Maps a scaled solution back to power coefficients and rescales any AP row
/// that ended marginally over budget, so the returned allocation satisfies
/// the per-AP constraint outright.
inline Mat recover_eta(const SocProblem& p, const ScaledCones& cones, const Mat& x) {
    Mat sigma = p.eta_ref.cwiseSqrt();
    for (int m = 0; m < p.M; ++m)
        for (int k = 0; k < p.K; ++k)
            if (sigma(m, k) == 0.0) sigma(m, k) = 1.0;
    Mat v = sigma.cwiseProduct(x.cwiseMax(0.0)).cwiseProduct(p.mask);
    for (int m = 0; m < p.M; ++m) {
        double lhs = 0.0;
        for (int k = 0; k < p.K; ++k) {
            const double w = p.ap_weight(m, k) * v(m, k);
            lhs += w * w;
        }
        lhs /= p.ap_budget;
        if (lhs > 1.0) v.row(m) /= std::sqrt(lhs);
    }
    (void)cones;
    return v.cwiseProduct(v);
}

}  // namespace detail

/// Decides whether some allocation reaches SINR target nu for every user
/// within the per-AP budgets. Sound up to feas_tol on returned witnesses;
/// hitting the iteration cap without a certificate reports Undecided.
inline FeasResult feasibility_check(const SocProblem& p, double nu, const MmfOptions& opts = {}) {
    if (nu < 0.0) throw std::invalid_argument("feasibility_check: nu must be nonnegative");
    FeasResult res;
    if (nu == 0.0) {  // zero target: the maximal-ratio point is a witness
        res.status = FeasStatus::Feasible;
        res.eta = p.eta_ref;
        return res;
    }
    const detail::ScaledCones cones = detail::scale_problem(p, nu);
    const int cap = std::min(opts.iter_cap_ceiling,
                             std::max(opts.iter_cap_floor, opts.iter_cap_factor * p.M * p.K));
    const double accept = 0.25 * opts.feas_tol;

    detail::SplitState z, pc, refl, pl;
    cones.resize(z);
    cones.resize(pc);
    cones.resize(refl);
    cones.resize(pl);
    Mat rhs(p.M, p.K), xbuf(p.M, p.K), cand(p.M, p.K);

    cones.affine_image(p.mask, z);  // start at the reference point
    double best_vio = cones.violation(z.x.cwiseMax(0.0).cwiseProduct(p.mask));
    Mat best_x = z.x.cwiseMax(0.0).cwiseProduct(p.mask);
    double window_best = best_vio;

    for (int it = 0; it < cap; ++it) {
        cones.project_cones(z, pc);
        detail::reflect(pc, z, refl);
        cones.project_affine(refl, pl, rhs, xbuf);
        detail::accumulate(z, pl, pc);
        res.iterations = it + 1;

        cand = pl.x.cwiseMax(0.0).cwiseProduct(p.mask);
        const double vio = cones.violation(cand);
        if (vio < best_vio) {
            best_vio = vio;
            best_x = cand;
        }
        if (best_vio <= accept) break;
        if ((it + 1) % 250 == 0) {  // stalled progress far from the cone means no intersection
            if (it > 800 && best_vio > 10.0 * opts.feas_tol && best_vio > 0.997 * window_best) {
                res.status = FeasStatus::Infeasible;
                res.violation = best_vio;
                return res;
            }
            window_best = best_vio;
        }
    }
    res.violation = best_vio;
    if (best_vio <= opts.feas_tol) {
        res.status = FeasStatus::Feasible;
        res.eta = detail::recover_eta(p, cones, best_x);
    } else {
        res.status = FeasStatus::Undecided;
    }
    return res;
}

/// Full-power single-user SINR: every serving AP spends its whole budget on
/// user k alone. Used to seed the bisection bracket.
inline double single_user_full_power_sinr(const Snapshot& s, Scheme scheme,
                                          const SystemConfig& config, int k) {
    const int N = config.N;
    Mat eta = Mat::Zero(s.M, s.K);
    for (int m : s.clusters[k]) {
        switch (scheme) {
            case Scheme::CB: eta(m, k) = 1.0 / (N * s.gamma(m, k)); break;
            case Scheme::NCB: eta(m, k) = 1.0; break;
            case Scheme::ECB: eta(m, k) = (N - 1.0) * s.gamma(m, k); break;
            default: throw std::invalid_argument("single-user bound: unsupported scheme");
        }
    }
    return evaluate_sinr(s, eta, scheme, config).sinr(k);
}

struct MmfSolution {
    Mat eta;
    double nu = 0.0;           ///< achieved min-SINR target (linear)
    int bisection_iterations = 0;
    int undecided_count = 0;   ///< feasibility calls that hit the cap
    double feas_tol = 0.0;
    double bisect_tol = 0.0;
};

/// Any convex method deciding the cone intersection can back the bisection,
/// as long as it is sound up to feas_tol on witnesses and complete up to a
/// 10x margin. The Douglas-Rachford scheme above is the reference.
using FeasibilityBackend =
    std::function<FeasResult(const SocProblem&, double, const MmfOptions&)>;

/// Pulls every user whose SINR exceeds the target back onto it by scaling its
/// own power column. Shrinking a column only raises the other users' SINRs
/// and loosens the per-AP budgets, so the witness walks along the feasible
/// set onto the equal-SINR face of the optimum. The per-user scale is closed
/// form: with own-power scale t, SINR(t) = tA / (tB + C + 1).
inline void equalize_witness(const Snapshot& s, Scheme scheme, const SystemConfig& config,
                             Mat& eta, double nu, double rel_tol, int max_sweeps = 50) {
    const EvalOptions relaxed{false, 0.0};
    double target = 0.0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        const SinrReport rep = evaluate_sinr(s, eta, scheme, config, relaxed);
        if (sweep == 0) target = std::min(nu, rep.sinr.minCoeff());
        if (target <= 0.0) return;
        bool changed = false;
        for (int k = 0; k < s.K; ++k) {
            if (rep.sinr(k) <= target * (1.0 + rel_tol)) continue;
            const double gain = rep.coherent_gain(k);
            const double self = rep.self_interference(k);
            const double cross = rep.inter_user_interference(k);
            const double denom = gain - target * self;
            if (denom <= 0.0) continue;
            eta.col(k) *= target * (cross + 1.0) / denom;
            changed = true;
        }
        if (!changed) return;
    }
}

/// Bisection over the SINR target. The lower end starts at the maximal-ratio
/// operating point (a known witness), the upper end at the best single-user
/// full-power SINR, doubled while feasibility still succeeds there.
inline MmfSolution solve_mmf(const Snapshot& s, Scheme scheme, const SystemConfig& config,
                             const MmfOptions& opts = {},
                             const FeasibilityBackend& backend = {}) {
    const FeasibilityBackend decide =
        backend ? backend
                : [](const SocProblem& pr, double nu, const MmfOptions& o) {
                      return feasibility_check(pr, nu, o);
                  };
    const SocProblem p = build_soc_problem(s, scheme, config);
    MmfSolution sol;
    sol.feas_tol = opts.feas_tol;
    sol.bisect_tol = opts.bisect_tol;

    sol.eta = p.eta_ref;
    const SinrReport mr = evaluate_sinr(s, p.eta_ref, scheme, config);
    double lo = mr.sinr.minCoeff();
    double hi = 0.0;
    for (int k = 0; k < s.K; ++k)
        hi = std::max(hi, single_user_full_power_sinr(s, scheme, config, k));
    hi = std::max(hi, lo);

    for (int guard = 0; guard < 6; ++guard) {  // the single-user bound is heuristic
        const FeasResult probe = decide(p, hi, opts);
        if (probe.status != FeasStatus::Feasible) break;
        lo = hi;
        sol.eta = probe.eta;
        hi *= 2.0;
    }

    int iters = 0;
    while (hi - lo > opts.bisect_tol * hi && iters < 200) {
        const double mid = 0.5 * (lo + hi);
        const FeasResult r = decide(p, mid, opts);
        if (r.status == FeasStatus::Feasible) {
            lo = mid;
            sol.eta = r.eta;
        } else {
            hi = mid;
            if (r.status == FeasStatus::Undecided) ++sol.undecided_count;
        }
        ++iters;
    }
    sol.nu = lo;
    sol.bisection_iterations = iters;
    equalize_witness(s, scheme, config, sol.eta, sol.nu, 0.5 * opts.bisect_tol);
    return sol;
}

/// Optimality audit: recomputes the SINRs through the closed forms and checks
/// the per-AP constraints, the achieved target, and the equal-SINR property
/// of a max-min optimum.
struct MmfAudit {
    double constraint_violation = 0.0;
    double sinr_min = 0.0;
    double sinr_max = 0.0;
    double spread = 0.0;          ///< sinr_max - sinr_min
    bool constraints_ok = false;
    bool achieves_target = false; ///< min SINR >= nu (1 - bisect_tol)
    bool equal_sinr = false;      ///< spread <= 10 * bisect_tol * nu
};

inline MmfAudit verify_mmf(const Snapshot& s, Scheme scheme, const SystemConfig& config,
                           const MmfSolution& sol) {
    EvalOptions relaxed;
    relaxed.enforce_constraints = false;
    const SinrReport rep = evaluate_sinr(s, sol.eta, scheme, config, relaxed);
    MmfAudit audit;
    audit.constraint_violation = power_constraint_violation(s, sol.eta, scheme, config.N);
    audit.sinr_min = rep.sinr.minCoeff();
    audit.sinr_max = rep.sinr.maxCoeff();
    audit.spread = audit.sinr_max - audit.sinr_min;
    audit.constraints_ok = audit.constraint_violation <= sol.feas_tol;
    audit.achieves_target = audit.sinr_min >= sol.nu * (1.0 - sol.bisect_tol);
    audit.equal_sinr = audit.spread <= 10.0 * sol.bisect_tol * sol.nu;
    return audit;
}

}  // namespace cfmimo

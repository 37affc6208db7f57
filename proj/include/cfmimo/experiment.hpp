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
// Experiment orchestration: config ingestion, figure presets, the
// many-snapshot runner and deterministic CDF/summary emission.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfmimo/closedform.hpp"
#include "cfmimo/common.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/mmf.hpp"
#include "cfmimo/oracle.hpp"
#include "cfmimo/scenario.hpp"

namespace cfmimo {

inline constexpr const char* kVersion = "cfmimo 0.1.0";

enum class PowerPolicy { MaximalRatio, Mmf };

inline const char* to_string(PowerPolicy p) {
    return p == PowerPolicy::MaximalRatio ? "maximal_ratio" : "mmf";
}

inline PowerPolicy policy_from_string(const std::string& name) {
    if (name == "maximal_ratio" || name == "mr") return PowerPolicy::MaximalRatio;
    if (name == "mmf") return PowerPolicy::Mmf;
    throw std::invalid_argument("unknown power policy: " + name);
}

struct SweepSpec {
    std::string name;          ///< "N" or "M"
    std::vector<int> values;
};

struct OracleSpec {
    long trials = 100000;
    double z_threshold = 4.0;
};

struct ExperimentSpec {
    SystemConfig base;
    std::vector<Scheme> schemes{Scheme::CB, Scheme::NCB, Scheme::ECB, Scheme::CBDT};
    PowerPolicy policy = PowerPolicy::MaximalRatio;
    int snapshots = 200;
    std::optional<SweepSpec> sweep;
    std::optional<OracleSpec> oracle;
    std::string out_dir = "results";
    MmfOptions mmf;

    /// Configs of every run point (the base with each sweep value applied).
    std::vector<SystemConfig> run_points() const {
        std::vector<SystemConfig> points;
        if (!sweep) {
            points.push_back(base);
            return points;
        }
        for (int v : sweep->values) {
            SystemConfig cfg = base;
            if (sweep->name == "N")
                cfg.N = v;
            else if (sweep->name == "M")
                cfg.M = v;
            else
                throw std::invalid_argument("sweep parameter must be N or M");
            points.push_back(cfg);
        }
        return points;
    }

    void validate() const {
        if (snapshots < 1) throw std::invalid_argument("spec: snapshots must be positive");
        if (schemes.empty()) throw std::invalid_argument("spec: at least one scheme");
        const bool has_cbdt =
            std::find(schemes.begin(), schemes.end(), Scheme::CBDT) != schemes.end();
        const bool has_ecb =
            std::find(schemes.begin(), schemes.end(), Scheme::ECB) != schemes.end();
        if (has_cbdt && policy == PowerPolicy::Mmf)
            throw std::invalid_argument(
                "spec: max-min power control is not available for cbdt; drop the scheme or the "
                "policy");
        for (const SystemConfig& cfg : run_points()) {
            cfg.validate();
            if (has_ecb && cfg.N < 2)
                throw std::invalid_argument("spec: ecb requires N >= 2 (got N = " +
                                            std::to_string(cfg.N) + ")");
            if (has_cbdt && cfg.tau_dp <= 0)
                throw std::invalid_argument("spec: cbdt requires tau_dp > 0");
        }
    }
};

// ---------------------------------------------------------------------------
// Config files (flat JSON, SNRs accepted linear or as powers over the noise)

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                             const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("unknown config key: " + prefix + it.key());
    }
}

}  // namespace detail

inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
    ExperimentSpec spec;
    SystemConfig& c = spec.base;
    detail::check_known_keys(
        j,
        {"M", "N", "K", "D", "tau_c", "tau_up", "tau_dp", "xi", "sigma_sh_db", "epsilon",
         "decorr_dist_m", "ap_height_m", "user_height_m", "cluster_threshold", "cluster_min",
         "noise_dbm", "orthogonal_ul_pilots", "seed", "rho_d", "rho_dp", "rho_u", "dl_power_mw",
         "dl_power_dbm", "ul_power_mw", "ul_power_dbm", "schemes", "policy", "snapshots", "sweep",
         "oracle", "out_dir", "mmf"},
        "");

    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("M", c.M);
    get("N", c.N);
    get("K", c.K);
    get("D", c.D);
    get("tau_c", c.tau_c);
    get("tau_up", c.tau_up);
    get("tau_dp", c.tau_dp);
    get("xi", c.xi);
    get("sigma_sh_db", c.sigma_sh);
    get("epsilon", c.epsilon);
    get("decorr_dist_m", c.decorr_dist);
    get("ap_height_m", c.ap_height);
    get("user_height_m", c.user_height);
    get("cluster_threshold", c.cluster_threshold);
    get("cluster_min", c.cluster_min);
    get("noise_dbm", c.noise_dbm);
    get("orthogonal_ul_pilots", c.orthogonal_ul_pilots);
    get("seed", c.seed);

    // powers: explicit linear SNRs win over powers normalized by the noise
    if (j.contains("dl_power_mw")) {
        c.rho_d = normalized_snr(j.at("dl_power_mw").get<double>(), c.noise_dbm);
        c.rho_dp = c.rho_d;
    }
    if (j.contains("dl_power_dbm")) {
        c.rho_d = db_to_linear(j.at("dl_power_dbm").get<double>() - c.noise_dbm);
        c.rho_dp = c.rho_d;
    }
    if (j.contains("ul_power_mw"))
        c.rho_u = normalized_snr(j.at("ul_power_mw").get<double>(), c.noise_dbm);
    if (j.contains("ul_power_dbm"))
        c.rho_u = db_to_linear(j.at("ul_power_dbm").get<double>() - c.noise_dbm);
    get("rho_d", c.rho_d);
    get("rho_dp", c.rho_dp);
    get("rho_u", c.rho_u);

    if (j.contains("schemes")) {
        spec.schemes.clear();
        for (const auto& name : j.at("schemes")) spec.schemes.push_back(scheme_from_string(name));
    }
    if (j.contains("policy")) spec.policy = policy_from_string(j.at("policy"));
    get("snapshots", spec.snapshots);
    get("out_dir", spec.out_dir);
    if (j.contains("sweep")) {
        const auto& js = j.at("sweep");
        detail::check_known_keys(js, {"name", "values"}, "sweep.");
        SweepSpec sw;
        sw.name = js.at("name").get<std::string>();
        sw.values = js.at("values").get<std::vector<int>>();
        spec.sweep = sw;
    }
    if (j.contains("oracle")) {
        const auto& jo = j.at("oracle");
        detail::check_known_keys(jo, {"trials", "z_threshold"}, "oracle.");
        OracleSpec os;
        if (jo.contains("trials")) os.trials = jo.at("trials").get<long>();
        if (jo.contains("z_threshold")) os.z_threshold = jo.at("z_threshold").get<double>();
        spec.oracle = os;
    }
    if (j.contains("mmf")) {
        const auto& jm = j.at("mmf");
        detail::check_known_keys(jm, {"feas_tol", "bisect_tol"}, "mmf.");
        if (jm.contains("feas_tol")) spec.mmf.feas_tol = jm.at("feas_tol").get<double>();
        if (jm.contains("bisect_tol")) spec.mmf.bisect_tol = jm.at("bisect_tol").get<double>();
    }
    spec.validate();
    return spec;
}

/// Loads a config file; an empty file yields the full default spec.
inline ExperimentSpec load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) text = "{}";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    return spec_from_json(j);
}

/// Canonical serialization; feeds the config fingerprint in output metadata.
inline nlohmann::json spec_to_json(const ExperimentSpec& spec) {
    const SystemConfig& c = spec.base;
    nlohmann::json j{{"M", c.M},
                     {"N", c.N},
                     {"K", c.K},
                     {"D", c.D},
                     {"tau_c", c.tau_c},
                     {"tau_up", c.tau_up},
                     {"tau_dp", c.tau_dp},
                     {"xi", c.xi},
                     {"sigma_sh_db", c.sigma_sh},
                     {"epsilon", c.epsilon},
                     {"decorr_dist_m", c.decorr_dist},
                     {"ap_height_m", c.ap_height},
                     {"user_height_m", c.user_height},
                     {"cluster_threshold", c.cluster_threshold},
                     {"cluster_min", c.cluster_min},
                     {"noise_dbm", c.noise_dbm},
                     {"orthogonal_ul_pilots", c.orthogonal_ul_pilots},
                     {"seed", c.seed},
                     {"rho_d", c.rho_d},
                     {"rho_dp", c.rho_dp},
                     {"rho_u", c.rho_u},
                     {"policy", to_string(spec.policy)},
                     {"snapshots", spec.snapshots}};
    // out_dir is deliberately absent: it does not define the experiment
    std::vector<std::string> names;
    for (Scheme s : spec.schemes) names.emplace_back(to_string(s));
    j["schemes"] = names;
    if (spec.sweep) j["sweep"] = {{"name", spec.sweep->name}, {"values", spec.sweep->values}};
    if (spec.oracle)
        j["oracle"] = {{"trials", spec.oracle->trials}, {"z_threshold", spec.oracle->z_threshold}};
    j["mmf"] = {{"feas_tol", spec.mmf.feas_tol}, {"bisect_tol", spec.mmf.bisect_tol}};
    return j;
}

inline std::string config_hash(const ExperimentSpec& spec) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(spec_to_json(spec).dump())));
    return buf;
}

/// Reproduction presets for the reference figures.
inline ExperimentSpec preset_spec(const std::string& name) {
    ExperimentSpec spec;  // defaults carry the reference scenario settings
    auto big = [&] {
        spec.base.M = 200;
        spec.base.K = 40;
        spec.base.N = 8;
        spec.base.tau_up = 20;
        spec.base.tau_dp = 20;
        spec.base.D = 500.0;
        spec.base.tau_c = 200;
    };
    auto small = [&] {
        spec.base.M = 100;
        spec.base.K = 20;
        spec.base.N = 8;
        spec.base.tau_up = 10;
        spec.base.tau_dp = 10;
        spec.base.D = 250.0;
        spec.base.tau_c = 200;
        spec.schemes = {Scheme::CB, Scheme::NCB, Scheme::ECB};
        spec.policy = PowerPolicy::Mmf;
    };
    if (name == "fig1" || name == "fig3") {
        big();
        spec.sweep = SweepSpec{"N", {2, 4, 8, 16}};
    } else if (name == "fig2" || name == "fig4") {
        big();
    } else if (name == "fig5a") {
        small();
    } else if (name == "fig5b") {
        small();
        spec.base.tau_c = 100;
    } else if (name == "fig6") {
        big();
        spec.sweep = SweepSpec{"N", {2, 4, 6, 8, 12, 16}};
    } else if (name == "fig7") {
        big();
        spec.sweep = SweepSpec{"M", {50, 100, 150, 200}};
    } else {
        throw std::invalid_argument("unknown preset: " + name +
                                    " (expected fig1..fig7, fig5a/fig5b)");
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Runner

struct CdfRow {
    std::string scheme;
    std::string metric;
    double value = 0.0;
    double cdf = 0.0;
};

struct CdfTable {
    std::vector<CdfRow> rows;
    std::string version;
    std::string config_hash;
    std::uint64_t seed = 0;
};

struct MetricSummary {
    std::string scheme;
    std::string metric;
    long count = 0;
    double mean = 0.0;
    double p5 = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    double mean_linear_db = 0.0;  ///< dB of the mean linear ratio, for *_db metrics
    bool has_linear = false;
};

struct OracleOutcome {
    std::string scheme;
    double worst_z = 0.0;
    bool pass = true;
};

struct ExperimentResult {
    CdfTable table;
    std::vector<MetricSummary> summaries;
    std::vector<OracleOutcome> oracle_outcomes;
    int snapshots_requested = 0;
    int snapshots_failed = 0;

    bool oracle_ok() const {
        for (const auto& o : oracle_outcomes)
            if (!o.pass) return false;
        return true;
    }
};

namespace detail {

inline double percentile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    const auto n = static_cast<long>(sorted.size());
    long rank = static_cast<long>(std::ceil(p / 100.0 * n));
    rank = std::clamp(rank, 1L, n);
    return sorted[rank - 1];
}

inline std::string run_point_suffix(const ExperimentSpec& spec, const SystemConfig& cfg) {
    if (!spec.sweep) return "";
    const int v = (spec.sweep->name == "N") ? cfg.N : cfg.M;
    return "_" + spec.sweep->name + std::to_string(v);
}

}  // namespace detail

/// Runs the whole experiment: per snapshot and scheme, build the network,
/// allocate power, evaluate the closed forms and aggregate CDF rows; one
/// optional Monte Carlo pass cross-checks the first snapshot of each run
/// point. Snapshot failures are skipped and counted.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ExperimentResult result;
    result.snapshots_requested = spec.snapshots;
    result.table.version = kVersion;
    result.table.config_hash = config_hash(spec);
    result.table.seed = spec.base.seed;

    // metric -> (scheme -> samples); insertion order fixed for determinism
    std::vector<std::pair<std::string, std::map<std::string, std::vector<double>>>> buckets;
    auto bucket = [&](const std::string& metric) -> std::map<std::string, std::vector<double>>& {
        for (auto& [name, data] : buckets)
            if (name == metric) return data;
        buckets.emplace_back(metric, std::map<std::string, std::vector<double>>{});
        return buckets.back().second;
    };

    for (const SystemConfig& cfg : spec.run_points()) {
        const std::string suffix = detail::run_point_suffix(spec, cfg);
        for (int snap = 0; snap < spec.snapshots; ++snap) {
            const std::uint64_t snap_seed =
                substream_seed(spec.base.seed, StreamTag::Snapshot, snap);
            Snapshot s;
            try {
                s = build_snapshot(cfg, snap_seed);
            } catch (const std::exception&) {
                ++result.snapshots_failed;
                continue;
            }
            for (Scheme scheme : spec.schemes) {
                Mat eta;
                if (spec.policy == PowerPolicy::MaximalRatio) {
                    eta = maximal_ratio_power(s, scheme, cfg.N).eta;
                } else {
                    const Scheme soc_scheme = scheme;  // cbdt is rejected upstream
                    eta = solve_mmf(s, soc_scheme, cfg, spec.mmf).eta;
                }
                const SinrReport rep = evaluate_sinr(s, eta, scheme, cfg);
                const HardeningMetrics hm = hardening_metrics(rep);
                const std::string id = to_string(scheme);
                double min_se = std::numeric_limits<double>::infinity();
                for (int k = 0; k < cfg.K; ++k) {
                    bucket("se" + suffix)[id].push_back(rep.se(k));
                    bucket("se_gross" + suffix)[id].push_back(cfg.xi *
                                                              std::log2(1.0 + rep.sinr(k)));
                    bucket("bu_ds_db" + suffix)[id].push_back(hm.bu_over_ds_db(k));
                    bucket("ui_ds_db" + suffix)[id].push_back(hm.ui_over_ds_db(k));
                    min_se = std::min(min_se, rep.se(k));
                }
                bucket("se_min" + suffix)[id].push_back(min_se);
            }
        }

        if (spec.oracle) {
            const std::uint64_t snap_seed = substream_seed(spec.base.seed, StreamTag::Snapshot, 0);
            const Snapshot s = build_snapshot(cfg, snap_seed);
            for (Scheme scheme : spec.schemes) {
                const Mat eta = (spec.policy == PowerPolicy::MaximalRatio)
                                    ? maximal_ratio_power(s, scheme, cfg.N).eta
                                    : solve_mmf(s, scheme, cfg, spec.mmf).eta;
                const SinrReport rep = evaluate_sinr(s, eta, scheme, cfg);
                const McReport mc = (scheme == Scheme::CBDT)
                                        ? estimate_ds_bu_ui(s, eta, Scheme::CB, cfg,
                                                            spec.oracle->trials, snap_seed)
                                        : estimate_ds_bu_ui(s, eta, scheme, cfg,
                                                            spec.oracle->trials, snap_seed);
                OracleOutcome outcome;
                outcome.scheme = to_string(scheme) + suffix;
                // the DS/BU split differs for cbdt (downlink training moves kappa);
                // validate the underlying conjugate-beamforming parts
                const SinrReport parts =
                    (scheme == Scheme::CBDT) ? sinr_cb(s, eta, cfg) : rep;
                for (int k = 0; k < cfg.K; ++k) {
                    auto track = [&](double closed, const McEstimate& est) {
                        const auto r =
                            compare(closed, est, std::numeric_limits<double>::infinity());
                        outcome.worst_z = std::max(outcome.worst_z, r.z);
                    };
                    track(parts.coherent_gain(k), mc.find("DS[" + std::to_string(k) + "]"));
                    track(parts.self_interference(k), mc.find("BU[" + std::to_string(k) + "]"));
                    for (int u = 0; u < cfg.K; ++u)
                        if (u != k)
                            track(parts.ui_pairs(k, u),
                                  mc.find("UI[" + std::to_string(k) + "," + std::to_string(u) +
                                          "]"));
                }
                outcome.pass = outcome.worst_z <= spec.oracle->z_threshold;
                result.oracle_outcomes.push_back(outcome);
            }
        }
    }

    // CDF rows: per (scheme, metric) group, ascending values, empirical cdf
    for (auto& [metric, per_scheme] : buckets) {
        for (Scheme scheme : spec.schemes) {
            const std::string id = to_string(scheme);
            auto it = per_scheme.find(id);
            if (it == per_scheme.end() || it->second.empty()) continue;
            std::vector<double>& vals = it->second;
            std::sort(vals.begin(), vals.end());
            const auto n = static_cast<double>(vals.size());
            for (std::size_t i = 0; i < vals.size(); ++i)
                result.table.rows.push_back(
                    {id, metric, vals[i], static_cast<double>(i + 1) / n});

            MetricSummary ms;
            ms.scheme = id;
            ms.metric = metric;
            ms.count = static_cast<long>(vals.size());
            double acc = 0.0, lin = 0.0;
            for (double v : vals) {
                acc += v;
                if (metric.rfind("bu_ds_db", 0) == 0 || metric.rfind("ui_ds_db", 0) == 0)
                    lin += db_to_linear(v);
            }
            ms.mean = acc / n;
            ms.p5 = detail::percentile(vals, 5.0);
            ms.p50 = detail::percentile(vals, 50.0);
            ms.p95 = detail::percentile(vals, 95.0);
            if (lin > 0.0) {
                ms.mean_linear_db = linear_to_db(lin / n);
                ms.has_linear = true;
            }
            result.summaries.push_back(ms);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

inline void emit_csv(const CdfTable& table, std::ostream& out) {
    out << "scheme,metric,value,cdf\n";
    for (const CdfRow& r : table.rows)
        out << r.scheme << ',' << r.metric << ',' << detail::fmt9(r.value) << ','
            << detail::fmt9(r.cdf) << '\n';
}

inline CdfTable parse_cdf_csv(std::istream& in) {
    CdfTable table;
    std::string line;
    if (!std::getline(in, line) || line != "scheme,metric,value,cdf")
        throw std::invalid_argument("bad CDF header: " + line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        CdfRow row;
        std::string value, cdf;
        if (!std::getline(ss, row.scheme, ',') || !std::getline(ss, row.metric, ',') ||
            !std::getline(ss, value, ',') || !std::getline(ss, cdf, ','))
            throw std::invalid_argument("bad CDF row: " + line);
        row.value = std::stod(value);
        row.cdf = std::stod(cdf);
        table.rows.push_back(row);
    }
    return table;
}

inline void emit_summary(const ExperimentResult& result, std::ostream& out) {
    out << "# summary\n";
    out << "version: " << result.table.version << '\n';
    out << "config_hash: " << result.table.config_hash << '\n';
    out << "seed: " << result.table.seed << '\n';
    out << "snapshots_requested: " << result.snapshots_requested << '\n';
    out << "snapshots_failed: " << result.snapshots_failed << '\n';
    for (const MetricSummary& s : result.summaries) {
        out << "scheme=" << s.scheme << " metric=" << s.metric << " n=" << s.count
            << " mean=" << detail::fmt9(s.mean) << " p5=" << detail::fmt9(s.p5)
            << " p50=" << detail::fmt9(s.p50) << " p95=" << detail::fmt9(s.p95);
        if (s.has_linear) out << " mean_linear_db=" << detail::fmt9(s.mean_linear_db);
        out << '\n';
    }
    for (const OracleOutcome& o : result.oracle_outcomes)
        out << "oracle scheme=" << o.scheme << " worst_z=" << detail::fmt9(o.worst_z)
            << " pass=" << (o.pass ? "yes" : "no") << '\n';
}

/// Writes cdf.csv and summary.txt under out_dir; returns the CSV path.
inline std::filesystem::path emit_outputs(const ExperimentResult& result,
                                          const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const fs::path csv_path = fs::path(out_dir) / "cdf.csv";
    const fs::path sum_path = fs::path(out_dir) / "summary.txt";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    emit_csv(result.table, csv);
    std::ofstream sum(sum_path);
    if (!sum) throw std::runtime_error("cannot write " + sum_path.string());
    emit_summary(result, sum);
    return csv_path;
}

}  // namespace cfmimo

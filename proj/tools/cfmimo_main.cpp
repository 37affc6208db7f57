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

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfmimo/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kExitOracle = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Downlink cell-free massive MIMO simulator: closed-form spectral efficiency for "
                 "conjugate-beamforming variants with Monte Carlo validation and max-min power "
                 "control"};
    app.set_version_flag("--version", std::string(cfmimo::kVersion));

    std::string config_path, preset_name, out_dir;
    int snapshots = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> scheme_names;
    std::string policy_name;
    long oracle_trials = -1;

    app.add_option("--config", config_path, "JSON config file (empty file = defaults)");
    app.add_option("--preset", preset_name, "figure preset: fig1..fig7, fig5a, fig5b");
    app.add_option("--snapshots", snapshots, "number of network snapshots");
    app.add_option("--seed", seed, "master RNG seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--scheme", scheme_names, "restrict to schemes (cb ncb ecb cbdt)");
    app.add_option("--policy", policy_name, "power policy: maximal_ratio | mmf");
    app.add_option("--oracle-trials", oracle_trials,
                   "enable a Monte Carlo cross-check with this many trials");
    app.add_option("--out", out_dir, "output directory (default from config)");

    CLI11_PARSE(app, argc, argv);

    try {
        cfmimo::ExperimentSpec spec;
        if (!config_path.empty() && !preset_name.empty())
            throw std::invalid_argument("--config and --preset are mutually exclusive");
        if (!preset_name.empty())
            spec = cfmimo::preset_spec(preset_name);
        else if (!config_path.empty())
            spec = cfmimo::load_config(config_path);

        if (snapshots > 0) spec.snapshots = snapshots;
        if (seed_set) spec.base.seed = seed;
        if (!scheme_names.empty()) {
            spec.schemes.clear();
            for (const auto& n : scheme_names) spec.schemes.push_back(cfmimo::scheme_from_string(n));
        }
        if (!policy_name.empty()) spec.policy = cfmimo::policy_from_string(policy_name);
        if (oracle_trials > 0) spec.oracle = cfmimo::OracleSpec{oracle_trials, 4.0};
        if (!out_dir.empty()) spec.out_dir = out_dir;
        spec.validate();

        const cfmimo::ExperimentResult result = cfmimo::run_experiment(spec);
        const auto csv_path = cfmimo::emit_outputs(result, spec.out_dir);
        std::cout << "wrote " << csv_path.string() << " (" << result.table.rows.size()
                  << " rows), summary.txt alongside\n";
        if (result.snapshots_failed > 0)
            std::cerr << "warning: " << result.snapshots_failed << " snapshot(s) skipped\n";
        for (const auto& o : result.oracle_outcomes)
            std::cout << "oracle " << o.scheme << ": worst z = " << o.worst_z
                      << (o.pass ? " (pass)" : " (FAIL)") << "\n";
        if (!result.oracle_ok()) return kExitOracle;
        return kExitOk;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include <nlohmann/json.hpp>

#include "safeobs/pipeline.hpp"

using namespace safeobs;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitLearning = 4;
constexpr int kExitDivergence = 5;

PipelineConfig load(const std::string& config_path, const std::string& out_override,
                    std::uint64_t seed_override, bool has_seed, int threads) {
    PipelineConfig cfg = load_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (has_seed) {
        cfg.seed = seed_override;
        cfg.learning.seed = seed_override;
    }
    if (threads > 0) cfg.threads = threads;
    return cfg;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NoDesignError& e) {
        std::cerr << "infeasible design: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const SafetyViolationError& e) {
        std::cerr << "learning aborted: " << e.what() << "\n";
        return kExitLearning;
    } catch (const IllConditionedGramError& e) {
        std::cerr << "learning aborted: " << e.what() << "\n";
        return kExitLearning;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"safe learning-based observer pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    std::string which = "initial";

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", config_path, "config JSON path")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--threads", threads, "worker threads for candidate evaluation");
    };

    auto* design = app.add_subcommand("design-initial", "phase 1: initial observer design");
    add_common(design, true);
    auto* learn = app.add_subcommand("learn", "phase 2: Bayesian learning loop");
    add_common(learn, true);
    auto* redesign = app.add_subcommand("redesign", "phase 3: gain redesign");
    add_common(redesign, true);
    auto* simulate = app.add_subcommand("simulate", "simulate a designed observer");
    add_common(simulate, true);
    simulate->add_option("--which", which, "initial | learned | redesigned");
    auto* reproduce = app.add_subcommand("reproduce-vdp", "full benchmark reproduction");
    add_common(reproduce, false);

    CLI11_PARSE(app, argc, argv);

    if (reproduce->parsed()) {
        return run_guarded([&] {
            const std::string dir = out_dir.empty() ? "vdp_run" : out_dir;
            const auto sum = cmd_reproduce_vdp(dir, seed_set ? seed : 20240117ULL);
            std::cout << "initial energy:    " << sum.energy_initial << "\n"
                      << "learned energy:    " << sum.energy_learned << "\n"
                      << "redesigned energy: " << sum.energy_redesigned << "\n"
                      << "summary: " << dir << "/summary.md\n";
            return 0;
        });
    }

    return run_guarded([&] {
        PipelineConfig cfg = load(config_path, out_dir, seed, seed_set, threads);
        std::filesystem::create_directories(cfg.out_dir);
        write_manifest(cfg.out_dir, cfg);

        if (design->parsed()) {
            auto a = cmd_design_initial(cfg);
            write_phase1(cfg.out_dir, a);
            std::cout << "lipschitz: " << a.lipschitz << "\n"
                      << "gain: " << a.solution.L.transpose() << "\n"
                      << "certificate passed: " << (a.report.passed ? "yes" : "no") << "\n";
            return a.report.passed ? 0 : kExitInfeasible;
        }
        if (learn->parsed()) {
            auto p1 = read_phase1(cfg.out_dir, cfg);
            auto st = cmd_learn(cfg, p1);
            write_learning(cfg.out_dir, st);
            std::cout << "iterations: " << st.iterations << " (" << st.termination_reason
                      << ")\nbest reward: " << st.best_reward << "\n";
            return 0;
        }
        if (redesign->parsed()) {
            auto p1 = read_phase1(cfg.out_dir, cfg);
            auto st = read_learning(cfg.out_dir);
            auto p3 = cmd_redesign(cfg, p1, st);
            write_phase3(cfg.out_dir, p3);
            std::cout << "outcome: " << p3.outcome << "\n"
                      << "estimate: " << p3.lipschitz_estimate
                      << " certified: " << p3.lipschitz_certified << "\n";
            return 0;
        }
        if (simulate->parsed()) {
            RunArtifacts art;
            art.phase1 = read_phase1(cfg.out_dir, cfg);
            SimulationVariant v = SimulationVariant::Initial;
            std::string fname = "traj_initial.csv";
            if (which == "learned") {
                v = SimulationVariant::Learned;
                fname = "traj_learned.csv";
                art.learning = read_learning(cfg.out_dir);
            } else if (which == "redesigned") {
                v = SimulationVariant::Redesigned;
                fname = "traj_redesigned.csv";
                art.learning = read_learning(cfg.out_dir);
                // the redesigned gain is re-derived from phase3.json
                std::ifstream f(cfg.out_dir + "/phase3.json");
                if (!f) throw ConfigError("phase3.json missing; run redesign first");
                nlohmann::json j;
                f >> j;
                Phase3Artifacts p3;
                p3.solution = LmiSolution::from_json(j.at("solution"));
                p3.redesigned = j.at("redesigned").get<bool>();
                p3.outcome = j.at("outcome").get<std::string>();
                art.phase3 = p3;
            } else if (which != "initial") {
                throw ConfigError("--which must be initial, learned, or redesigned");
            }
            auto sim = cmd_simulate(cfg, art, v);
            sim.trajectory.write_csv(cfg.out_dir + "/" + fname);
            std::cout << "output-error energy: " << sim.output_error_energy << "\n"
                      << "terminal error norm: " << sim.terminal_error_norm << "\n";
            return 0;
        }
        return 1;
    });
}

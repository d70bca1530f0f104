#include <cinttypes>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "blindcal/experiment.hpp"
#include "blindcal/lp_oracle.hpp"
#include "blindcal/matrix_io.hpp"
#include "blindcal/metrics.hpp"
#include "blindcal/model.hpp"
#include "blindcal/solver.hpp"

namespace {

using namespace blindcal;

constexpr int kExitOk = 0;
constexpr int kExitCompute = 1;
constexpr int kExitUsage = 2;

// Precedence: flags > config file > BLINDCAL_SEED (seed only) > defaults.
// A flag that was not typed falls back to the config file's value.
class ConfigLayer {
public:
    explicit ConfigLayer(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        in >> doc_;
        if (!doc_.is_object()) throw std::runtime_error("config: top level must be an object");
    }

    // Returns true when the value came from the flag or the file.
    template <typename T>
    bool fill(const CLI::Option* opt, const char* key, T& value) const {
        if (opt != nullptr && opt->count() > 0) return true;  // flag wins
        if (!doc_.contains(key)) return false;
        try {
            value = doc_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw std::runtime_error(std::string("config: field '") + key + "' has the wrong type");
        }
        return true;
    }

private:
    nlohmann::json doc_;
};

std::uint64_t env_seed_default() {
    const char* raw = std::getenv("BLINDCAL_SEED");
    if (raw == nullptr || *raw == '\0') return 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(raw, &end, 10);
    if (end == raw || *end != '\0')
        throw std::runtime_error(std::string("BLINDCAL_SEED is not a valid integer: ") + raw);
    return static_cast<std::uint64_t>(v);
}

RunMode parse_mode(const std::string& s) {
    if (s == "calibrated") return RunMode::Calibrated;
    if (s == "uncalibrated") return RunMode::Uncalibrated;
    if (s == "both") return RunMode::Both;
    throw std::runtime_error("mode must be calibrated, uncalibrated, or both");
}

nlohmann::json solver_config_json(const SolverConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"primal_tolerance", c.primal_tolerance},
            {"dual_tolerance", c.dual_tolerance},
            {"penalty_parameter", c.penalty_parameter},
            {"feasibility_tolerance", c.feasibility_tolerance},
            {"adapt_penalty", c.adapt_penalty},
            {"over_relaxation", c.over_relaxation}};
}

nlohmann::json solve_result_json(const SolveResult& r) {
    nlohmann::json j;
    j["status"] = to_string(r.status);
    j["objective"] = r.objective;
    j["primal_residual"] = r.primal_residual;
    j["trace_residual"] = r.trace_residual;
    j["iterations"] = r.iterations;
    j["monotone_violations"] = r.monotone_violations;
    j["unidentifiable_rows"] = r.unidentifiable_rows;
    j["x_hat"] = encode_matrix(r.x_hat.entries);
    if (r.delta_hat) j["delta_hat"] = encode_matrix(*r.delta_hat);
    return j;
}

struct GenArgs {
    int n = 100, m = 50, k = 10, l = 21;
    double sigma = 1.0;
    std::uint64_t seed = 0;
    std::string out;
    std::string config;
};

int cmd_gen(const GenArgs& a) {
    ProblemInstance inst = make_instance(Dimensions(a.n, a.m, a.k, a.l), a.sigma, a.seed);
    save_instance(InstanceFile::from_instance(inst), a.out);
    std::printf("wrote %s: Y is %d x %d, decalibration ±%.1f dB (sigma=%g)\n", a.out.c_str(),
                a.m, a.l, decalibration_db(a.sigma), a.sigma);
    return kExitOk;
}

struct SolveArgs {
    std::string instance;
    std::string out;
    std::string mode = "both";
    std::string config;
    SolverConfig solver;
    double tol = -1.0;  // sets primal and dual together when >= 0
};

int cmd_solve(const SolveArgs& a) {
    InstanceFile file = load_instance(a.instance);
    const RunMode mode = parse_mode(a.mode);
    const MeasurementMatrix m0{Eigen::MatrixXd(file.m0)};

    nlohmann::json out;
    out["config"] = {{"instance", a.instance},
                     {"mode", a.mode},
                     {"solver", solver_config_json(a.solver)}};

    const SuccessCriterion crit;
    bool compute_failed = false;
    auto report = [&](const char* name, const SolveResult& r) {
        out[name] = solve_result_json(r);
        std::string corr = "n/a";
        std::string success = "n/a";
        if (file.signals && file.signals->norm() > 0.0 && r.x_hat.entries.norm() > 0.0) {
            const double c = normalized_cross_correlation(*file.signals, r.x_hat.entries);
            corr = std::to_string(c);
            success = is_success(SignalMatrix(*file.signals), r.x_hat, crit) ? "true" : "false";
            out[name]["correlation"] = c;
            out[name]["success"] = success == "true";
        } else if (file.signals) {
            const bool ok = file.signals->norm() == 0.0 && r.x_hat.entries.norm() == 0.0;
            success = ok ? "true" : "false";
            out[name]["success"] = ok;
        }
        std::printf("%s: status=%s success=%s correlation=%s iterations=%d\n", name,
                    to_string(r.status), success.c_str(), corr.c_str(), r.iterations);
        if (r.status == SolveStatus::Infeasible) compute_failed = true;
    };

    if (mode != RunMode::Uncalibrated)
        report("calibrated", solve_calibrated(file.observations, m0, a.solver));
    if (mode != RunMode::Calibrated)
        report("uncalibrated", solve_uncalibrated(file.observations, m0, a.solver));

    std::ofstream os(a.out, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + a.out);
    os << out.dump(2) << '\n';
    if (!os) throw std::runtime_error("write failed: " + a.out);
    return compute_failed ? kExitCompute : kExitOk;
}

struct PhaseArgs {
    std::string kind = "dt";
    int n = 100;
    int l = 21;
    double sigma = 0.0;
    double delta = 0.5;
    double rho = 0.15;
    std::string grid;  // "AxB"
    int trials = 50;
    std::uint64_t seed = 0;
    int jobs = 0;  // 0 = auto
    std::string out;
    std::string mode = "both";
    std::string overlay;
    std::string config;
    bool resume = false;
    SolverConfig solver;
};

std::pair<int, int> parse_grid_spec(const std::string& s, int def1, int def2) {
    if (s.empty()) return {def1, def2};
    const auto x = s.find('x');
    if (x == std::string::npos)
        throw std::runtime_error("--grid must look like AxB, got '" + s + "'");
    try {
        const int a = std::stoi(s.substr(0, x));
        const int b = std::stoi(s.substr(x + 1));
        if (a < 1 || b < 1) throw std::runtime_error("");
        return {a, b};
    } catch (const std::exception&) {
        throw std::runtime_error("--grid must be two positive counts AxB, got '" + s + "'");
    }
}

int cmd_phase(const PhaseArgs& a) {
    if (a.kind != "dt" && a.kind != "ls")
        throw std::runtime_error("--kind must be dt or ls, got '" + a.kind + "'");
    const bool dt = a.kind == "dt";

    PhaseGrid grid;
    const auto [c1, c2] = parse_grid_spec(a.grid, dt ? 19 : 30, dt ? 19 : 13);
    grid.axis1 = spaced_axis(dt ? "delta" : "L", c1);
    grid.axis2 = spaced_axis(dt ? "rho" : "sigma", c2);
    grid.trials_per_cell = a.trials;
    grid.base_seed = a.seed;
    grid.validate();

    ExperimentConfig cfg;
    cfg.mode = parse_mode(a.mode);
    cfg.solver = a.solver;
    cfg.jobs = a.jobs > 0 ? a.jobs
                          : std::max(1u, std::thread::hardware_concurrency());
    cfg.store_path = a.out + ".jsonl";
    cfg.resume = a.resume;

    const PhaseDiagram diagram = dt ? run_dt_diagram(grid, a.n, a.l, a.sigma, cfg)
                                    : run_ls_diagram(grid, a.n, a.delta, a.rho, cfg);

    std::optional<std::filesystem::path> overlay;
    if (!a.overlay.empty()) overlay = a.overlay;
    const std::string csv_path = a.out + ".csv";
    export_csv(diagram, std::filesystem::path(csv_path), overlay);

    std::printf("wrote %s and %s.jsonl: %zu cells x %d trials (mode %s)\n", csv_path.c_str(),
                a.out.c_str(), diagram.cells.size(), grid.trials_per_cell, a.mode.c_str());
    if (!diagram.warnings.empty()) {
        std::fprintf(stderr, "%zu cell warnings:\n", diagram.warnings.size());
        for (const std::string& w : diagram.warnings) std::fprintf(stderr, "  %s\n", w.c_str());
    }
    return diagram.warnings.empty() ? kExitOk : kExitCompute;
}

void add_solver_flags(CLI::App* cmd, SolverConfig& solver, double& tol,
                      std::map<std::string, CLI::Option*>& opts) {
    opts["tol"] = cmd->add_option("--tol", tol, "primal and dual relative tolerance");
    opts["max_iterations"] =
        cmd->add_option("--max-iter", solver.max_iterations, "iteration cap per solve");
    opts["feasibility_tolerance"] = cmd->add_option("--feas-tol", solver.feasibility_tolerance,
                                                    "relative feasibility tolerance");
    opts["penalty_parameter"] =
        cmd->add_option("--penalty", solver.penalty_parameter, "initial splitting penalty");
    opts["over_relaxation"] =
        cmd->add_option("--relax", solver.over_relaxation, "over-relaxation factor in [1, 2)");
    opts["adapt_penalty"] = cmd->add_flag("--no-adapt{false}", solver.adapt_penalty,
                                          "disable penalty adaptation");
}

void fill_solver_from_config(const ConfigLayer& layer,
                             const std::map<std::string, CLI::Option*>& opts, SolverConfig& solver,
                             double& tol) {
    layer.fill(opts.at("tol"), "tol", tol);
    layer.fill(opts.at("max_iterations"), "max_iterations", solver.max_iterations);
    layer.fill(opts.at("feasibility_tolerance"), "feasibility_tolerance",
               solver.feasibility_tolerance);
    layer.fill(opts.at("penalty_parameter"), "penalty_parameter", solver.penalty_parameter);
    layer.fill(opts.at("over_relaxation"), "over_relaxation", solver.over_relaxation);
    layer.fill(opts.at("adapt_penalty"), "adapt_penalty", solver.adapt_penalty);
    if (tol >= 0.0) {
        solver.primal_tolerance = tol;
        solver.dual_tolerance = tol;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind calibration toolkit: generate, solve, and sweep phase diagrams"};
    app.require_subcommand(1);

    GenArgs gen;
    SolveArgs solve;
    PhaseArgs phase;
    std::map<std::string, CLI::Option*> gen_opts, solve_opts, phase_opts;

    CLI::App* cgen = app.add_subcommand("gen", "generate a decalibrated problem instance");
    gen_opts["N"] = cgen->add_option("--N", gen.n, "signal dimension");
    gen_opts["m"] = cgen->add_option("--m", gen.m, "measurements per signal");
    gen_opts["k"] = cgen->add_option("--k", gen.k, "nonzeros per signal");
    gen_opts["L"] = cgen->add_option("--L", gen.l, "number of training signals");
    gen_opts["sigma"] = cgen->add_option("--sigma", gen.sigma, "decalibration amplitude");
    gen_opts["seed"] = cgen->add_option("--seed", gen.seed, "random seed");
    gen_opts["out"] = cgen->add_option("--out,-o", gen.out, "output instance path")->required();
    cgen->add_option("--config", gen.config, "JSON config file (flags override)");

    CLI::App* csolve = app.add_subcommand("solve", "solve one instance");
    solve_opts["instance"] =
        csolve->add_option("--instance,-i", solve.instance, "instance file")->required();
    solve_opts["out"] = csolve->add_option("--out,-o", solve.out, "result path")->required();
    solve_opts["mode"] =
        csolve->add_option("--mode", solve.mode, "calibrated | uncalibrated | both");
    csolve->add_option("--config", solve.config, "JSON config file (flags override)");
    double solve_tol = -1.0;
    add_solver_flags(csolve, solve.solver, solve_tol, solve_opts);

    CLI::App* cphase = app.add_subcommand("phase", "run a phase-transition sweep");
    phase_opts["kind"] = cphase->add_option("--kind", phase.kind, "dt | ls");
    phase_opts["N"] = cphase->add_option("--N", phase.n, "signal dimension");
    phase_opts["L"] = cphase->add_option("--L", phase.l, "training signals (dt)");
    phase_opts["sigma"] = cphase->add_option("--sigma", phase.sigma, "decalibration (dt)");
    phase_opts["delta"] = cphase->add_option("--delta", phase.delta, "fixed m/N (ls)");
    phase_opts["rho"] = cphase->add_option("--rho", phase.rho, "fixed k/m (ls)");
    phase_opts["grid"] = cphase->add_option("--grid", phase.grid, "resolution AxB");
    phase_opts["trials"] = cphase->add_option("--trials", phase.trials, "trials per cell");
    phase_opts["seed"] = cphase->add_option("--seed", phase.seed, "base seed");
    phase_opts["jobs"] = cphase->add_option("--jobs,-j", phase.jobs, "worker threads (0 = auto)");
    phase_opts["out"] =
        cphase->add_option("--out,-o", phase.out, "output prefix (.csv/.jsonl)")->required();
    phase_opts["mode"] = cphase->add_option("--mode", phase.mode, "calibrated|uncalibrated|both");
    phase_opts["overlay"] =
        cphase->add_option("--overlay", phase.overlay, "reference curve CSV, copied verbatim");
    cphase->add_flag("--resume", phase.resume, "reuse cells already in the .jsonl store");
    cphase->add_option("--config", phase.config, "JSON config file (flags override)");
    double phase_tol = -1.0;
    // Sweep profile: the 0.995-correlation metric needs ~1e-3 accuracy, not
    // 1e-8, and near-degenerate cells converge sublinearly, so sweeps default
    // to a looser, faster solve than single `solve` runs. The cap still
    // leaves headroom over the ~4600 iterations the slowest success-region
    // cells (small m, sigma near 0.01) need at this tolerance.
    phase.solver.primal_tolerance = 1e-4;
    phase.solver.dual_tolerance = 1e-4;
    phase.solver.max_iterations = 8000;
    phase.solver.over_relaxation = 1.75;
    add_solver_flags(cphase, phase.solver, phase_tol, phase_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (cgen->parsed()) {
            const ConfigLayer layer(gen.config);
            layer.fill(gen_opts["N"], "N", gen.n);
            layer.fill(gen_opts["m"], "m", gen.m);
            layer.fill(gen_opts["k"], "k", gen.k);
            layer.fill(gen_opts["L"], "L", gen.l);
            layer.fill(gen_opts["sigma"], "sigma", gen.sigma);
            const bool seed_given = layer.fill(gen_opts["seed"], "seed", gen.seed);
            layer.fill(gen_opts["out"], "out", gen.out);
            if (!seed_given) gen.seed = env_seed_default();
            return cmd_gen(gen);
        }
        if (csolve->parsed()) {
            const ConfigLayer layer(solve.config);
            layer.fill(solve_opts["instance"], "instance", solve.instance);
            layer.fill(solve_opts["out"], "out", solve.out);
            layer.fill(solve_opts["mode"], "mode", solve.mode);
            fill_solver_from_config(layer, solve_opts, solve.solver, solve_tol);
            solve.solver.validate();
            return cmd_solve(solve);
        }
        const ConfigLayer layer(phase.config);
        layer.fill(phase_opts["kind"], "kind", phase.kind);
        layer.fill(phase_opts["N"], "N", phase.n);
        layer.fill(phase_opts["L"], "L", phase.l);
        layer.fill(phase_opts["sigma"], "sigma", phase.sigma);
        layer.fill(phase_opts["delta"], "delta", phase.delta);
        layer.fill(phase_opts["rho"], "rho", phase.rho);
        layer.fill(phase_opts["grid"], "grid", phase.grid);
        layer.fill(phase_opts["trials"], "trials", phase.trials);
        const bool seed_given = layer.fill(phase_opts["seed"], "seed", phase.seed);
        layer.fill(phase_opts["jobs"], "jobs", phase.jobs);
        layer.fill(phase_opts["out"], "out", phase.out);
        layer.fill(phase_opts["mode"], "mode", phase.mode);
        layer.fill(phase_opts["overlay"], "overlay", phase.overlay);
        fill_solver_from_config(layer, phase_opts, phase.solver, phase_tol);
        phase.solver.validate();
        if (!seed_given) phase.seed = env_seed_default();
        return cmd_phase(phase);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const RankDeficientError& e) {
        std::fprintf(stderr, "compute error: %s\n", e.what());
        return kExitCompute;
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
}

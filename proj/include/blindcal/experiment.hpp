#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindcal/model.hpp"
#include "blindcal/solver.hpp"

namespace blindcal {

enum class DiagramKind { DonohoTanner, TrainingDecalibration };
enum class RunMode { Calibrated, Uncalibrated, Both };

const char* to_string(DiagramKind k);
const char* to_string(RunMode m);

struct PhaseAxis {
    std::string name;            // "delta", "rho", "L", "sigma"
    std::vector<double> values;  // strictly increasing
};

struct PhaseGrid {
    PhaseAxis axis1;
    PhaseAxis axis2;
    int trials_per_cell = 50;
    std::uint64_t base_seed = 0;

    void validate() const;
};

// Default grids: the sweeps the figures are reproduced on.
PhaseAxis default_delta_axis();  // 0.05 .. 0.95 step 0.05
PhaseAxis default_rho_axis();    // same range
PhaseAxis default_l_axis();      // 1 .. 30
PhaseAxis default_sigma_axis();  // 13 log-spaced points, 1e-2 .. 10^0.5

// Evenly spaced sub-resolutions of the defaults, for --grid AxB.
PhaseAxis spaced_axis(const std::string& name, int count);

struct TrialParams {
    Dimensions dims;
    double sigma = 0.0;
};

// Cell resolution: m = round(delta*N) clamped to [1, N], k = round(rho*m)
// clamped to [0, N].
TrialParams resolve_cell(int n, double delta, double rho, int l, double sigma);

// Trial seed = hash(base_seed, resolved params, trial_index); cells resolving
// to the same params replay the same trials, and ordering or concurrency
// cannot change any outcome.
std::uint64_t trial_seed(std::uint64_t base_seed, const TrialParams& params, int trial_index);

struct TrialOutcome {
    bool calibrated_success = false;
    bool uncalibrated_success = false;
    bool converged = true;  // false marks a solver that gave up (counted as failure)
    long long iterations = 0;  // summed over the solves performed
};

TrialOutcome run_trial(const TrialParams& params, int trial_index, std::uint64_t base_seed,
                       RunMode mode, const SolverConfig& solver);

struct PhaseCell {
    double axis1_value = 0.0;
    double axis2_value = 0.0;
    TrialParams params;
    int trials_done = 0;
    int successes_calibrated = 0;
    int successes_uncalibrated = 0;
    std::string outcomes_calibrated;    // '0'/'1' per trial, '.' when mode skipped it
    std::string outcomes_uncalibrated;
    int nonconverged = 0;
    long long total_iterations = 0;

    double mean_iterations() const;
};

struct PhaseDiagram {
    DiagramKind kind = DiagramKind::DonohoTanner;
    PhaseGrid grid;
    int n = 0;
    RunMode mode = RunMode::Both;
    // Fixed parameters: dt diagrams pin (L, sigma), ls diagrams pin (delta, rho).
    int fixed_l = 0;
    double fixed_sigma = 0.0;
    double fixed_delta = 0.0;
    double fixed_rho = 0.0;
    SolverConfig solver_echo;      // the per-trial solver settings actually used
    std::vector<PhaseCell> cells;  // row-major over axis1 x axis2
    std::vector<std::string> warnings;

    const PhaseCell& cell(std::size_t i, std::size_t j) const;
    nlohmann::json config_json() const;  // resolved-config echo used everywhere
};

struct ExperimentConfig {
    RunMode mode = RunMode::Both;
    SolverConfig solver;
    int jobs = 1;
    std::filesystem::path store_path;  // empty disables persistence
    bool resume = false;
};

// Donoho-Tanner sweep over (delta, rho) at fixed L and sigma.
PhaseDiagram run_dt_diagram(const PhaseGrid& grid, int n, int l, double sigma,
                            const ExperimentConfig& cfg);

// Corner sweep over (L, sigma) at fixed (delta, rho).
PhaseDiagram run_ls_diagram(const PhaseGrid& grid, int n, double delta, double rho,
                            const ExperimentConfig& cfg);

// JSON-lines cell store: line 1 echoes the resolved config, then one record
// per completed cell. Resuming replays only the missing cells and demands an
// exactly matching config echo.
class CellStore {
public:
    // Opens for append; when `resume` and the file exists, previously stored
    // cells are loaded (config mismatch throws).
    CellStore(std::filesystem::path path, nlohmann::json config, bool resume);

    bool lookup(std::size_t i, std::size_t j, PhaseCell& out) const;
    void append(std::size_t i, std::size_t j, const PhaseCell& cell);

private:
    std::filesystem::path path_;
    nlohmann::json config_;
    std::vector<std::pair<std::uint64_t, PhaseCell>> loaded_;
};

// CSV export: `# config:` echo line, literal header
// axis1,axis2,N,trials,successes_calibrated,successes_uncalibrated, one row
// per cell. An overlay file (externally supplied reference curve) is passed
// through verbatim after an `# overlay` marker.
void export_csv(const PhaseDiagram& d, std::ostream& out,
                const std::optional<std::filesystem::path>& overlay = std::nullopt);
void export_csv(const PhaseDiagram& d, const std::filesystem::path& path,
                const std::optional<std::filesystem::path>& overlay = std::nullopt);

struct TransitionSummary {
    double line_value = 0.0;   // the fixed coordinate of this grid line
    bool has_transition = false;
    double crossing = 0.0;     // 50%-crossing position (linear interpolation)
    double width = 0.0;        // 10%-90% width; NaN when those levels are not spanned
};

// Per-line transition location/width along the named axis ("axis1" lines vary
// axis1 with axis2 fixed, and vice versa), from the chosen mode's rates.
std::vector<TransitionSummary> sharpness_summary(const PhaseDiagram& d,
                                                 const std::string& axis_name, bool calibrated);

}  // namespace blindcal

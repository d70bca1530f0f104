#include "blindcal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "blindcal/metrics.hpp"

namespace blindcal {

namespace {
std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}
}  // namespace

const char* to_string(DiagramKind k) {
    return k == DiagramKind::DonohoTanner ? "dt" : "ls";
}

const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::Calibrated: return "calibrated";
        case RunMode::Uncalibrated: return "uncalibrated";
        case RunMode::Both: return "both";
    }
    return "unknown";
}

void PhaseGrid::validate() const {
    for (const PhaseAxis* axis : {&axis1, &axis2}) {
        if (axis->values.empty())
            throw std::invalid_argument("grid: axis '" + axis->name + "' is empty");
        for (std::size_t i = 1; i < axis->values.size(); ++i)
            if (!(axis->values[i] > axis->values[i - 1]))
                throw std::invalid_argument("grid: axis '" + axis->name +
                                            "' must be strictly increasing");
    }
    if (trials_per_cell < 1) throw std::invalid_argument("grid: trials_per_cell >= 1");
}

PhaseAxis default_delta_axis() { return spaced_axis("delta", 19); }
PhaseAxis default_rho_axis() { return spaced_axis("rho", 19); }
PhaseAxis default_l_axis() { return spaced_axis("L", 30); }
PhaseAxis default_sigma_axis() { return spaced_axis("sigma", 13); }

PhaseAxis spaced_axis(const std::string& name, int count) {
    if (count < 1) throw std::invalid_argument("axis '" + name + "': need at least one value");
    PhaseAxis axis;
    axis.name = name;
    if (name == "delta" || name == "rho") {
        // 0.05 .. 0.95; count 19 lands on the 0.05 comb.
        for (int i = 0; i < count; ++i)
            axis.values.push_back(count == 1 ? 0.5 : 0.05 + 0.90 * i / (count - 1));
    } else if (name == "L") {
        // Whole numbers from 1 to 30.
        double prev = 0.0;
        for (int i = 0; i < count; ++i) {
            double v = count == 1 ? 21.0 : std::round(1.0 + 29.0 * i / (count - 1));
            if (v <= prev) v = prev + 1.0;
            prev = v;
            axis.values.push_back(v);
        }
        if (axis.values.back() > 30.0)
            throw std::invalid_argument("axis 'L': more than 30 distinct whole values requested");
    } else if (name == "sigma") {
        // Log-spaced 10^-2 .. 10^0.5.
        for (int i = 0; i < count; ++i) {
            const double e = count == 1 ? 0.5 : -2.0 + 2.5 * i / (count - 1);
            axis.values.push_back(std::pow(10.0, e));
        }
    } else {
        throw std::invalid_argument("axis '" + name + "': unknown axis name");
    }
    return axis;
}

TrialParams resolve_cell(int n, double delta, double rho, int l, double sigma) {
    if (n < 1) throw std::invalid_argument("resolve_cell: N >= 1");
    int m = static_cast<int>(std::llround(delta * n));
    m = std::clamp(m, 1, n);
    int k = static_cast<int>(std::llround(rho * m));
    k = std::clamp(k, 0, n);
    TrialParams p;
    p.dims = Dimensions(n, m, k, l);
    p.sigma = sigma;
    return p;
}

std::uint64_t trial_seed(std::uint64_t base_seed, const TrialParams& params, int trial_index) {
    std::uint64_t sigma_bits;
    static_assert(sizeof(sigma_bits) == sizeof(params.sigma));
    std::memcpy(&sigma_bits, &params.sigma, sizeof(sigma_bits));
    const std::uint64_t words[] = {
        static_cast<std::uint64_t>(params.dims.N), static_cast<std::uint64_t>(params.dims.m),
        static_cast<std::uint64_t>(params.dims.k), static_cast<std::uint64_t>(params.dims.L),
        sigma_bits, static_cast<std::uint64_t>(trial_index)};
    return derive_seed(base_seed, std::span<const std::uint64_t>(words));
}

TrialOutcome run_trial(const TrialParams& params, int trial_index, std::uint64_t base_seed,
                       RunMode mode, const SolverConfig& solver) {
    const ProblemInstance inst =
        make_instance(params.dims, params.sigma, trial_seed(base_seed, params, trial_index));
    const SuccessCriterion crit;
    TrialOutcome out;
    if (mode != RunMode::Uncalibrated) {
        const SolveResult r = solve_calibrated(inst.observations, inst.m0, solver);
        out.iterations += r.iterations;
        if (r.status == SolveStatus::Converged)
            out.calibrated_success = is_success(inst.signals, r.x_hat, crit);
        else
            out.converged = false;  // recorded as failure, never dropped
    }
    if (mode != RunMode::Calibrated) {
        const SolveResult r = solve_uncalibrated(inst.observations, inst.m0, solver);
        out.iterations += r.iterations;
        if (r.status == SolveStatus::Converged)
            out.uncalibrated_success = is_success(inst.signals, r.x_hat, crit);
        else
            out.converged = false;
    }
    return out;
}

double PhaseCell::mean_iterations() const {
    return trials_done > 0 ? static_cast<double>(total_iterations) / trials_done : 0.0;
}

const PhaseCell& PhaseDiagram::cell(std::size_t i, std::size_t j) const {
    return cells.at(i * grid.axis2.values.size() + j);
}

nlohmann::json PhaseDiagram::config_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["mode"] = to_string(mode);
    j["N"] = n;
    if (kind == DiagramKind::DonohoTanner) {
        j["L"] = fixed_l;
        j["sigma"] = fixed_sigma;
    } else {
        j["delta"] = fixed_delta;
        j["rho"] = fixed_rho;
    }
    j["axis1"] = {{"name", grid.axis1.name}, {"values", grid.axis1.values}};
    j["axis2"] = {{"name", grid.axis2.name}, {"values", grid.axis2.values}};
    j["trials_per_cell"] = grid.trials_per_cell;
    j["base_seed"] = grid.base_seed;
    j["solver"] = {{"max_iterations", solver_echo.max_iterations},
                   {"primal_tolerance", solver_echo.primal_tolerance},
                   {"dual_tolerance", solver_echo.dual_tolerance},
                   {"penalty_parameter", solver_echo.penalty_parameter},
                   {"feasibility_tolerance", solver_echo.feasibility_tolerance},
                   {"adapt_penalty", solver_echo.adapt_penalty},
                   {"over_relaxation", solver_echo.over_relaxation}};
    return j;
}

namespace {

nlohmann::json cell_to_json(std::size_t i, std::size_t j, const PhaseCell& c) {
    return nlohmann::json{{"type", "cell"},
                          {"i", i},
                          {"j", j},
                          {"axis1", c.axis1_value},
                          {"axis2", c.axis2_value},
                          {"N", c.params.dims.N},
                          {"m", c.params.dims.m},
                          {"k", c.params.dims.k},
                          {"L", c.params.dims.L},
                          {"sigma", c.params.sigma},
                          {"trials", c.trials_done},
                          {"successes_calibrated", c.successes_calibrated},
                          {"successes_uncalibrated", c.successes_uncalibrated},
                          {"outcomes_calibrated", c.outcomes_calibrated},
                          {"outcomes_uncalibrated", c.outcomes_uncalibrated},
                          {"nonconverged", c.nonconverged},
                          {"total_iterations", c.total_iterations}};
}

PhaseCell cell_from_json(const nlohmann::json& r) {
    PhaseCell c;
    c.axis1_value = r.at("axis1").get<double>();
    c.axis2_value = r.at("axis2").get<double>();
    c.params.dims = Dimensions(r.at("N").get<int>(), r.at("m").get<int>(), r.at("k").get<int>(),
                               r.at("L").get<int>());
    c.params.sigma = r.at("sigma").get<double>();
    c.trials_done = r.at("trials").get<int>();
    c.successes_calibrated = r.at("successes_calibrated").get<int>();
    c.successes_uncalibrated = r.at("successes_uncalibrated").get<int>();
    c.outcomes_calibrated = r.at("outcomes_calibrated").get<std::string>();
    c.outcomes_uncalibrated = r.at("outcomes_uncalibrated").get<std::string>();
    c.nonconverged = r.at("nonconverged").get<int>();
    c.total_iterations = r.at("total_iterations").get<long long>();
    return c;
}

constexpr std::uint64_t store_key(std::size_t i, std::size_t j) {
    return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
}

}  // namespace

CellStore::CellStore(std::filesystem::path path, nlohmann::json config, bool resume)
    : path_(std::move(path)), config_(std::move(config)) {
    if (resume && std::filesystem::exists(path_)) {
        std::ifstream in(path_);
        if (!in) throw std::runtime_error("cell store: cannot open " + path_.string());
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error("cell store: " + path_.string() + " is empty");
        nlohmann::json meta = nlohmann::json::parse(line);
        if (meta.contains("type")) meta.erase("type");
        if (meta != config_)
            throw std::runtime_error("cell store: config in " + path_.string() +
                                     " does not match this run (refusing to mix results)");
        std::string pending;
        while (std::getline(in, pending)) {
            if (pending.empty()) continue;
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(pending);
            } catch (const nlohmann::json::parse_error&) {
                if (in.peek() == std::char_traits<char>::eof()) break;  // torn final line
                throw;
            }
            loaded_.emplace_back(store_key(rec.at("i").get<std::size_t>(),
                                           rec.at("j").get<std::size_t>()),
                                 cell_from_json(rec));
        }
        return;
    }
    nlohmann::json meta = config_;
    meta["type"] = "meta";
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw std::runtime_error("cell store: cannot create " + path_.string());
    out << meta.dump() << '\n';
    if (!out) throw std::runtime_error("cell store: write failed for " + path_.string());
}

bool CellStore::lookup(std::size_t i, std::size_t j, PhaseCell& out) const {
    const std::uint64_t key = store_key(i, j);
    for (const auto& [k, cell] : loaded_)
        if (k == key) {
            out = cell;
            return true;
        }
    return false;
}

void CellStore::append(std::size_t i, std::size_t j, const PhaseCell& cell) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("cell store: cannot append to " + path_.string());
    out << cell_to_json(i, j, cell).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cell store: append failed for " + path_.string());
}

namespace {

PhaseCell assemble_cell(double a1, double a2, const TrialParams& params, RunMode mode,
                        const std::vector<TrialOutcome>& outcomes) {
    PhaseCell c;
    c.axis1_value = a1;
    c.axis2_value = a2;
    c.params = params;
    c.trials_done = static_cast<int>(outcomes.size());
    for (const TrialOutcome& o : outcomes) {
        if (mode != RunMode::Uncalibrated) {
            c.outcomes_calibrated += o.calibrated_success ? '1' : '0';
            c.successes_calibrated += o.calibrated_success ? 1 : 0;
        } else {
            c.outcomes_calibrated += '.';
        }
        if (mode != RunMode::Calibrated) {
            c.outcomes_uncalibrated += o.uncalibrated_success ? '1' : '0';
            c.successes_uncalibrated += o.uncalibrated_success ? 1 : 0;
        } else {
            c.outcomes_uncalibrated += '.';
        }
        c.nonconverged += o.converged ? 0 : 1;
        c.total_iterations += o.iterations;
    }
    return c;
}

struct PendingCell {
    std::size_t index = 0;  // position in the diagram's cell vector
    std::size_t i = 0, j = 0;
    double a1 = 0.0, a2 = 0.0;
    TrialParams params;
    std::vector<TrialOutcome> outcomes;
    std::atomic<int> remaining{0};
};

PhaseDiagram run_grid(PhaseDiagram diagram, const ExperimentConfig& cfg) {
    diagram.grid.validate();
    cfg.solver.validate();
    diagram.solver_echo = cfg.solver;
    diagram.mode = cfg.mode;

    const std::size_t n1 = diagram.grid.axis1.values.size();
    const std::size_t n2 = diagram.grid.axis2.values.size();
    const int trials = diagram.grid.trials_per_cell;
    diagram.cells.assign(n1 * n2, PhaseCell{});

    std::unique_ptr<CellStore> store;
    if (!cfg.store_path.empty())
        store = std::make_unique<CellStore>(cfg.store_path, diagram.config_json(), cfg.resume);

    // Resolve every cell; satisfy the ones the store already has.
    std::vector<std::unique_ptr<PendingCell>> pending;
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n2; ++j) {
            const double a1 = diagram.grid.axis1.values[i];
            const double a2 = diagram.grid.axis2.values[j];
            TrialParams params;
            if (diagram.kind == DiagramKind::DonohoTanner)
                params = resolve_cell(diagram.n, a1, a2, diagram.fixed_l, diagram.fixed_sigma);
            else
                params = resolve_cell(diagram.n, diagram.fixed_delta, diagram.fixed_rho,
                                      static_cast<int>(std::llround(a1)), a2);
            const std::size_t index = i * n2 + j;
            PhaseCell prior;
            if (store && store->lookup(i, j, prior)) {
                diagram.cells[index] = prior;
                continue;
            }
            auto cell = std::make_unique<PendingCell>();
            cell->index = index;
            cell->i = i;
            cell->j = j;
            cell->a1 = a1;
            cell->a2 = a2;
            cell->params = params;
            cell->outcomes.resize(static_cast<std::size_t>(trials));
            cell->remaining.store(trials);
            pending.push_back(std::move(cell));
        }
    }

    std::mutex mu;
    std::condition_variable cv;
    std::set<std::size_t> completed;  // pending-slot indices
    std::vector<std::string> warnings;

    auto run_one = [&](PendingCell& cell, int t) {
        TrialOutcome out;
        try {
            out = run_trial(cell.params, t, diagram.grid.base_seed, cfg.mode, cfg.solver);
        } catch (const std::exception& e) {
            out.converged = false;
            std::lock_guard<std::mutex> lock(mu);
            warnings.push_back("cell (" + format_double(cell.a1) + ", " + format_double(cell.a2) +
                               ") trial " + std::to_string(t) + ": " + e.what());
        }
        cell.outcomes[static_cast<std::size_t>(t)] = out;
    };

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1 || pending.empty()) {
        for (std::size_t slot = 0; slot < pending.size(); ++slot) {
            PendingCell& cell = *pending[slot];
            for (int t = 0; t < trials; ++t) run_one(cell, t);
            const PhaseCell done =
                assemble_cell(cell.a1, cell.a2, cell.params, cfg.mode, cell.outcomes);
            diagram.cells[cell.index] = done;
            if (store) store->append(cell.i, cell.j, done);
        }
    } else {
        // (cell, trial) work items behind one atomic cursor; the main thread
        // is the single writer and flushes cells in deterministic order.
        const std::size_t total = pending.size() * static_cast<std::size_t>(trials);
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            while (true) {
                const std::size_t item = next.fetch_add(1);
                if (item >= total) return;
                const std::size_t slot = item / static_cast<std::size_t>(trials);
                const int t = static_cast<int>(item % static_cast<std::size_t>(trials));
                PendingCell& cell = *pending[slot];
                run_one(cell, t);
                if (cell.remaining.fetch_sub(1) == 1) {
                    std::lock_guard<std::mutex> lock(mu);
                    completed.insert(slot);
                    cv.notify_all();
                }
            }
        };
        std::vector<std::thread> threads;
        for (int w = 0; w < jobs; ++w) threads.emplace_back(worker);
        for (std::size_t slot = 0; slot < pending.size(); ++slot) {
            {
                std::unique_lock<std::mutex> lock(mu);
                cv.wait(lock, [&] { return completed.count(slot) > 0; });
            }
            PendingCell& cell = *pending[slot];
            const PhaseCell done =
                assemble_cell(cell.a1, cell.a2, cell.params, cfg.mode, cell.outcomes);
            diagram.cells[cell.index] = done;
            if (store) {
                try {
                    store->append(cell.i, cell.j, done);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(mu);
                    warnings.push_back(e.what());
                }
            }
        }
        for (std::thread& th : threads) th.join();
    }

    diagram.warnings = std::move(warnings);
    return diagram;
}

}  // namespace

PhaseDiagram run_dt_diagram(const PhaseGrid& grid, int n, int l, double sigma,
                            const ExperimentConfig& cfg) {
    if (n < 1) throw std::invalid_argument("run_dt_diagram: N >= 1");
    if (l < 1) throw std::invalid_argument("run_dt_diagram: L >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("run_dt_diagram: sigma >= 0");
    PhaseDiagram d;
    d.kind = DiagramKind::DonohoTanner;
    d.grid = grid;
    d.n = n;
    d.fixed_l = l;
    d.fixed_sigma = sigma;
    return run_grid(std::move(d), cfg);
}

PhaseDiagram run_ls_diagram(const PhaseGrid& grid, int n, double delta, double rho,
                            const ExperimentConfig& cfg) {
    if (n < 1) throw std::invalid_argument("run_ls_diagram: N >= 1");
    for (double v : grid.axis1.values)
        if (v < 1.0 || v != std::floor(v))
            throw std::invalid_argument("run_ls_diagram: L axis values must be whole and >= 1");
    PhaseDiagram d;
    d.kind = DiagramKind::TrainingDecalibration;
    d.grid = grid;
    d.n = n;
    d.fixed_delta = delta;
    d.fixed_rho = rho;
    return run_grid(std::move(d), cfg);
}

void export_csv(const PhaseDiagram& d, std::ostream& out,
                const std::optional<std::filesystem::path>& overlay) {
    out << "# config: " << d.config_json().dump() << '\n';
    out << "axis1,axis2,N,trials,successes_calibrated,successes_uncalibrated\n";
    for (const PhaseCell& c : d.cells) {
        out << format_double(c.axis1_value) << ',' << format_double(c.axis2_value) << ','
            << c.params.dims.N << ',' << c.trials_done << ',' << c.successes_calibrated << ','
            << c.successes_uncalibrated << '\n';
    }
    if (overlay) {
        std::ifstream in(*overlay, std::ios::binary);
        if (!in) throw std::runtime_error("overlay: cannot open " + overlay->string());
        out << "\n# overlay\n" << in.rdbuf();
    }
}

void export_csv(const PhaseDiagram& d, const std::filesystem::path& path,
                const std::optional<std::filesystem::path>& overlay) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("csv export: cannot open " + path.string());
    export_csv(d, out, overlay);
    if (!out) throw std::runtime_error("csv export: write failed for " + path.string());
}

namespace {

// First crossing of `level` on the piecewise-linear rate curve, scanning left
// to right; NaN when the level is never straddled.
double first_crossing(const std::vector<double>& pos, const std::vector<double>& rate,
                      double level) {
    for (std::size_t i = 0; i + 1 < pos.size(); ++i) {
        const double lo = rate[i] - level;
        const double hi = rate[i + 1] - level;
        if (lo == 0.0) return pos[i];
        if (lo * hi < 0.0 || hi == 0.0) {
            if (rate[i + 1] == rate[i]) return pos[i];
            return pos[i] + (level - rate[i]) * (pos[i + 1] - pos[i]) / (rate[i + 1] - rate[i]);
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::vector<TransitionSummary> sharpness_summary(const PhaseDiagram& d,
                                                 const std::string& axis_name, bool calibrated) {
    const bool along1 = axis_name == d.grid.axis1.name || axis_name == "axis1";
    const bool along2 = axis_name == d.grid.axis2.name || axis_name == "axis2";
    if (!along1 && !along2)
        throw std::invalid_argument("sharpness_summary: unknown axis '" + axis_name + "'");
    const std::size_t n1 = d.grid.axis1.values.size();
    const std::size_t n2 = d.grid.axis2.values.size();
    const std::size_t lines = along1 ? n2 : n1;
    const std::size_t len = along1 ? n1 : n2;

    std::vector<TransitionSummary> out;
    for (std::size_t line = 0; line < lines; ++line) {
        std::vector<double> pos(len), rate(len);
        for (std::size_t t = 0; t < len; ++t) {
            const PhaseCell& c = along1 ? d.cell(t, line) : d.cell(line, t);
            pos[t] = along1 ? d.grid.axis1.values[t] : d.grid.axis2.values[t];
            const int succ = calibrated ? c.successes_calibrated : c.successes_uncalibrated;
            rate[t] = c.trials_done > 0 ? static_cast<double>(succ) / c.trials_done : 0.0;
        }
        TransitionSummary s;
        s.line_value = along1 ? d.grid.axis2.values[line] : d.grid.axis1.values[line];
        const double c50 = first_crossing(pos, rate, 0.5);
        const auto [lo, hi] = std::minmax_element(rate.begin(), rate.end());
        if (std::isnan(c50) || *lo == *hi) {
            s.has_transition = false;
            s.width = std::numeric_limits<double>::quiet_NaN();
        } else {
            s.has_transition = true;
            s.crossing = c50;
            const double c10 = first_crossing(pos, rate, 0.1);
            const double c90 = first_crossing(pos, rate, 0.9);
            s.width = std::abs(c90 - c10);  // NaN propagates when a level is missing
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace blindcal

#include "blindcal/lp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace blindcal {

namespace {

constexpr int kSizeGuard = 500;        // max N*L + m before splitting
constexpr double kCostTol = 1e-9;      // reduced-cost threshold
constexpr double kDriveOutTol = 1e-7;  // pivot floor when expelling artificials

// Numerical knobs for one solve attempt; the escalation ladder in
// solve_with_escalation() retries with progressively more conservative values.
struct SimplexParams {
    double ratio_pivot_tol;  // smallest direction entry usable as a pivot
    int refactor_interval;   // eta updates between fresh factorizations
    int bland_after;         // degenerate stalls before switching to Bland
};

// Internal signal that a basis drifted beyond repair under the current
// parameters; the caller retries with stricter ones instead of giving up.
struct SimplexNumerics : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimplexOutcome {
    Eigen::VectorXd z;
    int iterations = 0;
    bool feasible = true;
};

// Dense two-phase revised simplex for  min c^T z  s.t.  A z = b, z >= 0.
// Explicit basis inverse with eta updates, periodic refactorization, Dantzig
// pricing falling back to Bland's rule after a degenerate stall. The ratio
// test is two-pass: smallest ratio first, then the largest pivot among ties,
// which keeps the eta factors well conditioned. Apparent rays and certificate
// failures are re-checked against a fresh factorization and surface as
// SimplexNumerics so the escalation wrapper can retry; a returned optimum has
// passed its own feasibility and optimality certificates.
class Simplex {
public:
    Simplex(Eigen::MatrixXd a, Eigen::VectorXd b, Eigen::VectorXd c, SimplexParams params)
        : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), params_(params) {}

    SimplexOutcome solve();

private:
    void refactorize();
    void update_inverse(const Eigen::VectorXd& direction, Eigen::Index pivot_row);
    int pick_entering(const Eigen::VectorXd& costs, Eigen::Index limit, bool bland) const;
    Eigen::Index ratio_test(const Eigen::VectorXd& direction, bool bland, double& theta) const;
    // Runs pivots until no entering column improves `costs` over columns
    // [0, limit). Returns false on a ray that survives refactorization.
    bool iterate(const Eigen::VectorXd& costs, Eigen::Index limit);
    bool drive_out_artificials(std::vector<Eigen::Index>& stuck_rows);

    Eigen::MatrixXd a_;
    Eigen::VectorXd b_, c_;
    SimplexParams params_;
    Eigen::MatrixXd binv_;
    Eigen::VectorXd xb_;
    std::vector<Eigen::Index> basis_;
    int iterations_ = 0;
    int pivots_since_refactor_ = 0;
};

void Simplex::refactorize() {
    const Eigen::Index rows = a_.rows();
    Eigen::MatrixXd basis_cols(rows, rows);
    for (Eigen::Index i = 0; i < rows; ++i) basis_cols.col(i) = a_.col(basis_[i]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis_cols);
    binv_ = lu.inverse();
    xb_ = binv_ * b_;
    const double drift_floor = -1e-7 * (1.0 + b_.cwiseAbs().maxCoeff());
    if (xb_.minCoeff() < drift_floor)
        throw SimplexNumerics("basis lost primal feasibility during pivoting");
    xb_ = xb_.cwiseMax(0.0);
    pivots_since_refactor_ = 0;
}

void Simplex::update_inverse(const Eigen::VectorXd& direction, Eigen::Index p) {
    const double pivot = direction[p];
    if (std::abs(pivot) < 1e-10) throw SimplexNumerics("pivot element vanished");
    const Eigen::RowVectorXd old_row = binv_.row(p);
    binv_ -= (direction / pivot) * old_row;
    binv_.row(p) = old_row / pivot;
    if (++pivots_since_refactor_ >= params_.refactor_interval) refactorize();
}

int Simplex::pick_entering(const Eigen::VectorXd& costs, Eigen::Index limit, bool bland) const {
    Eigen::VectorXd cb(a_.rows());
    for (Eigen::Index i = 0; i < a_.rows(); ++i) cb[i] = costs[basis_[i]];
    const Eigen::VectorXd dual = binv_.transpose() * cb;
    int best = -1;
    double best_reduced = -kCostTol;
    for (Eigen::Index j = 0; j < limit; ++j) {
        if (std::find(basis_.begin(), basis_.end(), j) != basis_.end()) continue;
        const double reduced = costs[j] - dual.dot(a_.col(j));
        if (reduced < best_reduced) {
            best = static_cast<int>(j);
            best_reduced = reduced;
            if (bland) break;  // smallest eligible index wins
        }
    }
    return best;
}

// Two-pass ratio test: find the tightest ratio over usable pivots, then pick
// the numerically best row among near-ties (largest pivot, or smallest basis
// index under Bland's rule). Returns -1 when no usable pivot exists.
Eigen::Index Simplex::ratio_test(const Eigen::VectorXd& direction, bool bland,
                                 double& theta) const {
    const Eigen::Index rows = a_.rows();
    double theta_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (direction[i] <= params_.ratio_pivot_tol) continue;
        theta_min = std::min(theta_min, std::max(xb_[i], 0.0) / direction[i]);
    }
    if (!std::isfinite(theta_min)) return -1;

    const double window = theta_min + 1e-9 * (1.0 + theta_min);
    Eigen::Index leaving = -1;
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (direction[i] <= params_.ratio_pivot_tol) continue;
        if (std::max(xb_[i], 0.0) / direction[i] > window) continue;
        if (leaving < 0 ||
            (bland ? basis_[i] < basis_[leaving] : direction[i] > direction[leaving]))
            leaving = i;
    }
    theta = std::max(xb_[leaving], 0.0) / direction[leaving];
    return leaving;
}

bool Simplex::iterate(const Eigen::VectorXd& costs, Eigen::Index limit) {
    const Eigen::Index rows = a_.rows();
    const int max_iterations = 200 * static_cast<int>(rows + a_.cols()) + 20000;
    int stalled = 0;
    double last_objective = std::numeric_limits<double>::infinity();

    while (true) {
        if (iterations_ > max_iterations)
            throw SimplexNumerics("simplex iteration guard exceeded");
        const bool bland = stalled > params_.bland_after;
        const int entering = pick_entering(costs, limit, bland);
        if (entering < 0) return true;  // optimal for this phase

        Eigen::VectorXd direction = binv_ * a_.col(entering);
        double theta = 0.0;
        Eigen::Index leaving = ratio_test(direction, bland, theta);
        if (leaving < 0) {
            // Apparent ray. Rebuild the inverse and re-examine before
            // believing it: stale eta factors routinely fabricate rays.
            if (pivots_since_refactor_ > 0) refactorize();
            Eigen::VectorXd cb(rows);
            for (Eigen::Index i = 0; i < rows; ++i) cb[i] = costs[basis_[i]];
            const double reduced =
                costs[entering] - (binv_.transpose() * cb).dot(a_.col(entering));
            if (reduced >= -kCostTol) continue;  // spurious entering column
            direction = binv_ * a_.col(entering);
            leaving = ratio_test(direction, bland, theta);
            if (leaving < 0) return false;  // ray confirmed on a fresh basis
        }

        xb_ -= theta * direction;
        xb_[leaving] = theta;
        xb_ = xb_.cwiseMax(0.0);  // clip pivot round-off
        basis_[leaving] = entering;
        update_inverse(direction, leaving);
        ++iterations_;

        double objective = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i) objective += costs[basis_[i]] * xb_[i];
        if (objective < last_objective - 1e-12) {
            stalled = 0;
            last_objective = objective;
        } else {
            ++stalled;
        }
    }
}

bool Simplex::drive_out_artificials(std::vector<Eigen::Index>& stuck_rows) {
    const Eigen::Index rows = a_.rows();
    const Eigen::Index real_cols = a_.cols() - rows;
    stuck_rows.clear();
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (basis_[r] < real_cols) continue;
        bool replaced = false;
        for (Eigen::Index j = 0; j < real_cols && !replaced; ++j) {
            if (std::find(basis_.begin(), basis_.end(), j) != basis_.end()) continue;
            const Eigen::VectorXd direction = binv_ * a_.col(j);
            if (std::abs(direction[r]) > kDriveOutTol) {
                basis_[r] = j;
                update_inverse(direction, r);
                xb_ = binv_ * b_;
                xb_ = xb_.cwiseMax(0.0);
                replaced = true;
            }
        }
        if (!replaced) stuck_rows.push_back(r);
    }
    return stuck_rows.empty();
}

SimplexOutcome Simplex::solve() {
    const Eigen::VectorXd b_keep = b_;
    const Eigen::MatrixXd a_keep = a_;

    for (int attempt = 0; attempt < 3; ++attempt) {
        const Eigen::Index rows = a_.rows();
        const Eigen::Index real_cols = a_.cols();

        // Phase 1: append an identity of artificials and minimize their sum.
        for (Eigen::Index i = 0; i < rows; ++i)
            if (b_[i] < 0.0) {
                a_.row(i) = -a_.row(i);
                b_[i] = -b_[i];
            }
        a_.conservativeResize(rows, real_cols + rows);
        a_.rightCols(rows) = Eigen::MatrixXd::Identity(rows, rows);
        Eigen::VectorXd phase1_costs = Eigen::VectorXd::Zero(real_cols + rows);
        phase1_costs.tail(rows).setOnes();
        basis_.resize(rows);
        for (Eigen::Index i = 0; i < rows; ++i) basis_[i] = real_cols + i;
        binv_ = Eigen::MatrixXd::Identity(rows, rows);
        xb_ = b_;

        if (!iterate(phase1_costs, real_cols + rows))
            throw SimplexNumerics("phase-1 ray survived refactorization");

        // Judge infeasibility from a fresh factorization, not drifted state.
        refactorize();
        double artificial_mass = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i)
            if (basis_[i] >= real_cols) artificial_mass += xb_[i];
        if (artificial_mass > 1e-7 * (1.0 + b_.norm())) {
            SimplexOutcome out;
            out.iterations = iterations_;
            out.feasible = false;
            return out;
        }

        std::vector<Eigen::Index> stuck;
        if (drive_out_artificials(stuck)) break;

        // Rows whose artificial cannot be expelled are linearly dependent on
        // the rest; drop them and redo phase 1 on the reduced system.
        if (attempt == 2) throw SimplexNumerics("failed to eliminate redundant rows");
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < rows; ++i)
            if (std::find(stuck.begin(), stuck.end(), i) == stuck.end()) keep.push_back(i);
        Eigen::MatrixXd reduced_a(static_cast<Eigen::Index>(keep.size()), real_cols);
        Eigen::VectorXd reduced_b(static_cast<Eigen::Index>(keep.size()));
        for (std::size_t i = 0; i < keep.size(); ++i) {
            reduced_a.row(static_cast<Eigen::Index>(i)) = a_.row(keep[i]).head(real_cols);
            reduced_b[static_cast<Eigen::Index>(i)] = b_[keep[i]];
        }
        a_ = std::move(reduced_a);
        b_ = std::move(reduced_b);
    }

    // Phase 2 over the real columns only.
    const Eigen::Index real_cols = a_.cols() - a_.rows();
    Eigen::VectorXd phase2_costs = Eigen::VectorXd::Zero(a_.cols());
    phase2_costs.head(real_cols) = c_;
    if (!iterate(phase2_costs, real_cols))
        throw SimplexNumerics("phase-2 ray in a program bounded by construction");

    refactorize();  // clean inverse for the certificates
    SimplexOutcome out;
    out.z = Eigen::VectorXd::Zero(real_cols);
    for (Eigen::Index i = 0; i < a_.rows(); ++i)
        if (basis_[i] < real_cols) out.z[basis_[i]] = xb_[i];
    out.iterations = iterations_;

    // Certificates: primal feasibility on the ORIGINAL system, nonnegativity,
    // and reduced-cost optimality on the final basis.
    if (out.z.minCoeff() < -1e-9) throw SimplexNumerics("negative variable in final solution");
    const double primal_gap = (a_keep * out.z - b_keep).norm() / (1.0 + b_keep.norm());
    if (primal_gap > 1e-8)
        throw SimplexNumerics("primal certificate gap " + std::to_string(primal_gap));
    if (pick_entering(phase2_costs, real_cols, false) >= 0)
        throw SimplexNumerics("negative reduced cost remains at optimum");
    return out;
}

// Retries the solve with increasingly conservative numerics. The final
// attempt prices with Bland's rule from the start, which cannot cycle.
SimplexOutcome solve_with_escalation(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& c) {
    constexpr SimplexParams ladder[] = {
        {1e-7, 40, 150},
        {1e-6, 20, 60},
        {1e-5, 10, 0},
        {1e-8, 5, 0},  // last resort: admit small pivots, refactorize constantly
    };
    std::string last_error;
    for (const SimplexParams& params : ladder) {
        try {
            return Simplex(a, b, c, params).solve();
        } catch (const SimplexNumerics& e) {
            last_error = e.what();
        }
    }
    throw std::runtime_error("lp oracle: numerical failure after retries: " + last_error);
}

}  // namespace

SolveResult lp_oracle(const Eigen::MatrixXd& y, const MeasurementMatrix& m0, OracleMode mode) {
    const Eigen::Index m = m0.entries.rows();
    const Eigen::Index n = m0.entries.cols();
    const Eigen::Index l = y.cols();
    if (y.rows() != m) throw std::invalid_argument("lp_oracle: y and m0 row counts differ");
    if (l < 1) throw std::invalid_argument("lp_oracle: need at least one observation column");
    if (n * l + m > kSizeGuard)
        throw std::invalid_argument("lp_oracle: instance above size guard (N*L + m <= " +
                                    std::to_string(kSizeGuard) + ")");

    const bool calibrated = (mode == OracleMode::Calibrated);
    const Eigen::Index nl = n * l;
    const Eigen::Index rows = calibrated ? m * l + 1 : m * l;
    const Eigen::Index cols = calibrated ? 2 * nl + 2 * m : 2 * nl;

    // Standard form: z = [P; Q; a; b], X = P - Q, delta = a - b, all >= 0,
    // objective 1^T(P + Q).
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, cols);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
    for (Eigen::Index j = 0; j < l; ++j) {
        a.block(j * m, j * n, m, n) = m0.entries;
        a.block(j * m, nl + j * n, m, n) = -m0.entries;
        if (calibrated) {
            for (Eigen::Index i = 0; i < m; ++i) {
                a(j * m + i, 2 * nl + i) = -y(i, j);
                a(j * m + i, 2 * nl + m + i) = y(i, j);
            }
        } else {
            b.segment(j * m, m) = y.col(j);
        }
    }
    if (calibrated) {
        a.row(rows - 1).segment(2 * nl, m).setOnes();
        a.row(rows - 1).tail(m) = -Eigen::RowVectorXd::Ones(m);
        b[rows - 1] = static_cast<double>(m);
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(cols);
    c.head(2 * nl).setOnes();

    SimplexOutcome sol = solve_with_escalation(a, b, c);

    SolveResult res;
    res.iterations = sol.iterations;
    if (!sol.feasible) {
        res.x_hat = SignalMatrix(Eigen::MatrixXd::Zero(n, l));
        res.status = SolveStatus::Infeasible;
        return res;
    }

    Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(sol.z.data(), n, l) -
                        Eigen::Map<const Eigen::MatrixXd>(sol.z.data() + nl, n, l);
    res.x_hat = SignalMatrix(std::move(x));
    res.objective = res.x_hat.entries.lpNorm<1>();
    res.status = SolveStatus::Converged;
    const double y_scale = 1.0 + y.norm();
    if (calibrated) {
        res.delta_hat = sol.z.segment(2 * nl, m) - sol.z.tail(m);
        res.primal_residual =
            (m0.entries * res.x_hat.entries -
             (y.array().colwise() * res.delta_hat->array()).matrix()).norm() / y_scale;
        res.trace_residual =
            std::abs(res.delta_hat->sum() - static_cast<double>(m)) / static_cast<double>(m);
        for (Eigen::Index i = 0; i < m; ++i)
            if ((y.row(i).array() == 0.0).all())
                res.unidentifiable_rows.push_back(static_cast<int>(i));
    } else {
        res.primal_residual = (y - m0.entries * res.x_hat.entries).norm() / y_scale;
    }
    return res;
}

}  // namespace blindcal

#include "blindcal/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace blindcal {

namespace {
constexpr double kAbsFloor = 1e-14;  // absolute tolerance floor under the relative criteria

// Smallest acceptable Cholesky pivot ratio before the constraint system is
// declared rank-deficient.
constexpr double kPivotRatio = 1e-13;

void check_llt(const Eigen::LLT<Eigen::MatrixXd>& llt, const char* what) {
    if (llt.info() != Eigen::Success)
        throw RankDeficientError(std::string(what) + ": factorization failed (rank-deficient)");
    const auto diag = llt.matrixLLT().diagonal();
    const double dmax = diag.maxCoeff();
    const double dmin = diag.minCoeff();
    if (!(dmin > 0.0) || dmin < kPivotRatio * dmax)
        throw RankDeficientError(std::string(what) + ": pivot ratio " +
                                 std::to_string(dmin / dmax) + " below tolerance");
}
}  // namespace

void SolverConfig::validate() const {
    if (max_iterations < 1) throw std::invalid_argument("solver config: max_iterations >= 1");
    if (!(primal_tolerance > 0.0)) throw std::invalid_argument("solver config: primal_tolerance > 0");
    if (!(dual_tolerance > 0.0)) throw std::invalid_argument("solver config: dual_tolerance > 0");
    if (!(penalty_parameter > 0.0))
        throw std::invalid_argument("solver config: penalty_parameter > 0");
    if (!(feasibility_tolerance > 0.0))
        throw std::invalid_argument("solver config: feasibility_tolerance > 0");
    if (!(over_relaxation >= 1.0 && over_relaxation < 2.0))
        throw std::invalid_argument("solver config: over_relaxation in [1, 2)");
}

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "Converged";
        case SolveStatus::IterationLimit: return "IterationLimit";
        case SolveStatus::Infeasible: return "Infeasible";
    }
    return "Unknown";
}

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("soft_threshold: t must be > 0");
    return (v.array().abs() - t).max(0.0) * v.array().sign();
}

AffineProjector::AffineProjector(const Eigen::MatrixXd& y, const Eigen::MatrixXd& m0,
                                 bool calibrated)
    : m_(m0.rows()), n_(m0.cols()), l_(y.cols()), nl_(m0.cols() * y.cols()),
      calibrated_(calibrated), y_(y), m0_(m0) {
    if (y.rows() != m_) throw std::invalid_argument("projector: y and m0 row counts differ");
    if (l_ < 1) throw std::invalid_argument("projector: need at least one observation column");

    g_llt_.compute(m0_ * m0_.transpose());
    check_llt(g_llt_, "constraint Gram G = M0 M0^T");

    if (calibrated_) {
        Eigen::MatrixXd g_inv = g_llt_.solve(Eigen::MatrixXd::Identity(m_, m_));
        Eigen::MatrixXd s = (g_inv.array() * (y_ * y_.transpose()).array()).matrix();
        s += Eigen::MatrixXd::Identity(m_, m_);
        s_llt_.compute(s);
        check_llt(s_llt_, "capacitance S = I + G^-1 .* Y Y^T");

        q_ = apply_gram_inverse(y_);
        schur_ = static_cast<double>(m_) - (y_.array() * q_.array()).sum();
        if (!(schur_ > kPivotRatio * static_cast<double>(m_)))
            throw RankDeficientError("trace row is dependent on the fit constraints "
                                     "(Schur complement " + std::to_string(schur_) + ")");
    }
}

// One Woodbury pass: (I_L (x) G + D D^T)^{-1} rhs with rhs as m x L columns.
Eigen::MatrixXd AffineProjector::gram_inverse_base(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd a = g_llt_.solve(rhs);
    const Eigen::VectorXd t = (y_.array() * a.array()).rowwise().sum();
    const Eigen::VectorXd u = s_llt_.solve(t);
    const Eigen::MatrixXd du = (y_.array().colwise() * u.array()).matrix();
    return a - g_llt_.solve(du);
}

Eigen::MatrixXd AffineProjector::apply_gram(const Eigen::MatrixXd& x) const {
    const Eigen::VectorXd t = (y_.array() * x.array()).rowwise().sum();
    return m0_ * (m0_.transpose() * x) + (y_.array().colwise() * t.array()).matrix();
}

Eigen::MatrixXd AffineProjector::apply_gram_inverse(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd w = gram_inverse_base(rhs);
    w += gram_inverse_base(rhs - apply_gram(w));  // one refinement pass
    return w;
}

Eigen::VectorXd AffineProjector::project(const Eigen::VectorXd& point) const {
    if (point.size() != num_vars())
        throw std::invalid_argument("projector: point has wrong size");
    const Eigen::Map<const Eigen::MatrixXd> x(point.data(), n_, l_);

    if (!calibrated_) {
        Eigen::MatrixXd residual = m0_ * x - y_;
        Eigen::MatrixXd lambda = g_llt_.solve(residual);
        lambda += g_llt_.solve(residual - (m0_ * (m0_.transpose() * lambda)));
        Eigen::VectorXd out = point;
        Eigen::Map<Eigen::MatrixXd>(out.data(), n_, l_) -= m0_.transpose() * lambda;
        return out;
    }

    const Eigen::VectorXd delta = point.tail(m_);
    Eigen::MatrixXd residual = m0_ * x - (y_.array().colwise() * delta.array()).matrix();
    const double trace_gap = delta.sum() - static_cast<double>(m_);

    const Eigen::MatrixXd w1 = apply_gram_inverse(residual);
    const double mu = (trace_gap + (y_.array() * w1.array()).sum()) / schur_;
    const Eigen::MatrixXd lambda = w1 + mu * q_;

    Eigen::VectorXd out = point;
    Eigen::Map<Eigen::MatrixXd>(out.data(), n_, l_) -= m0_.transpose() * lambda;
    out.tail(m_) += (y_.array() * lambda.array()).rowwise().sum().matrix();
    out.tail(m_).array() -= mu;
    return out;
}

namespace {

struct AdmmOutcome {
    Eigen::VectorXd w;
    int iterations = 0;
    bool tolerances_met = false;
    int monotone_violations = 0;
};

// min ||x_part||_1 + indicator(affine set), two-block splitting with scaled
// dual. v carries the thresholded copy, w the feasible copy.
AdmmOutcome run_admm(const AffineProjector& proj, const SolverConfig& cfg) {
    const Eigen::Index n = proj.num_vars();
    const Eigen::Index xs = proj.signal_vars();
    const double floor = kAbsFloor * std::sqrt(static_cast<double>(n));

    AdmmOutcome out;
    Eigen::VectorXd w = proj.project(Eigen::VectorXd::Zero(n));
    Eigen::VectorXd v = w;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    double rho = cfg.penalty_parameter;

    double running_min = std::numeric_limits<double>::infinity();
    int last_adapt = 0;
    int adaptations = 0;
    // Penalty rebalancing is a scale-discovery device: it runs only during a
    // burn-in window and a bounded number of times, otherwise the periodic
    // rho changes keep perturbing the fixed point and the iteration can
    // oscillate forever instead of converging.
    const int adapt_window = std::min(cfg.max_iterations / 2, 1000);

    const double alpha = cfg.over_relaxation;
    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        v.head(xs) = soft_threshold(w.head(xs) - u.head(xs), 1.0 / rho);
        if (n > xs) v.tail(n - xs) = w.tail(n - xs) - u.tail(n - xs);

        // Over-relaxed splitting step: blend the proximal point with the
        // previous feasible copy before projecting.
        const Eigen::VectorXd v_hat = alpha == 1.0 ? v : (alpha * v + (1.0 - alpha) * w).eval();
        Eigen::VectorXd w_new = proj.project(v_hat + u);
        u += v_hat - w_new;

        const double r_norm = (v - w_new).norm();
        const double s_norm = rho * (w_new - w).norm();
        w.swap(w_new);
        out.iterations = iter;

        const double primal_scale = std::max(v.norm(), w.norm());
        const double dual_scale = rho * u.norm();
        if (r_norm <= floor + cfg.primal_tolerance * primal_scale &&
            s_norm <= floor + cfg.dual_tolerance * dual_scale) {
            out.tolerances_met = true;
            break;
        }

        // Combined-residual monotonicity diagnostic. A rho change restarts the
        // reference; the factor 10 absorbs ordinary transients.
        const double combined = r_norm + s_norm / std::max(rho, 1.0);
        if (iter > last_adapt + 10) {
            if (combined > 10.0 * running_min && running_min > 0.0) ++out.monotone_violations;
            running_min = std::min(running_min, combined);
        }

        if (cfg.adapt_penalty && iter % 10 == 0 && iter <= adapt_window && adaptations < 20) {
            if (r_norm > 10.0 * s_norm && rho < 1e4) {
                rho *= 2.0;
                u *= 0.5;
                last_adapt = iter;
                ++adaptations;
                running_min = std::numeric_limits<double>::infinity();
            } else if (s_norm > 10.0 * r_norm && rho > 1e-4) {
                rho *= 0.5;
                u *= 2.0;
                last_adapt = iter;
                ++adaptations;
                running_min = std::numeric_limits<double>::infinity();
            }
        }
    }

    out.w = std::move(w);
    return out;
}

std::vector<int> zero_rows(const Eigen::MatrixXd& y) {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        if ((y.row(i).array() == 0.0).all()) rows.push_back(static_cast<int>(i));
    return rows;
}

// Fallback when the Gram factorization reports rank deficiency: decide whether
// the linear system is merely degenerate (reported as an error, never
// regularized) or genuinely inconsistent (Infeasible).
SolveResult infeasibility_verdict(const Eigen::MatrixXd& y, const Eigen::MatrixXd& m0,
                                  bool calibrated, const SolverConfig& cfg,
                                  const RankDeficientError& err) {
    const Eigen::Index m = m0.rows();
    const Eigen::Index n = m0.cols();
    const Eigen::Index l = y.cols();
    const double tol = std::max(cfg.feasibility_tolerance, 1e-10);

    // M0 X = Y consistent settles both modes: uncalibrated directly, and
    // calibrated because delta = 1 then satisfies the trace row too.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m0);
    const Eigen::MatrixXd x_ls = qr.solve(y);
    const double gap = (m0 * x_ls - y).norm() / (1.0 + y.norm());
    if (gap <= tol) throw err;  // degenerate but solvable: report, never regularize

    double verdict_gap = gap;
    if (calibrated) {
        // delta is free, so inconsistency of M0 X = Y alone proves nothing.
        // Check the joint system [I_L (x) M0, -diag-columns; 0, 1^T] = [0; m].
        const Eigen::Index rows = m * l + 1;
        const Eigen::Index cols = n * l + m;
        if (rows > 4096 || cols > 4096)
            throw err;  // cannot certify infeasibility at this size
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, cols);
        for (Eigen::Index j = 0; j < l; ++j) {
            a.block(j * m, j * n, m, n) = m0;
            for (Eigen::Index i = 0; i < m; ++i) a(j * m + i, n * l + i) = -y(i, j);
        }
        a.row(rows - 1).tail(m).setOnes();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows);
        rhs[rows - 1] = static_cast<double>(m);
        const Eigen::VectorXd z = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(a).solve(rhs);
        verdict_gap = (a * z - rhs).norm() / (1.0 + rhs.norm());
        if (verdict_gap <= tol) throw err;
    }

    SolveResult res;
    res.x_hat = SignalMatrix(Eigen::MatrixXd::Zero(n, l));
    res.status = SolveStatus::Infeasible;
    res.primal_residual = verdict_gap;
    return res;
}

SolveResult run_solve(const Eigen::MatrixXd& y, const MeasurementMatrix& m0, bool calibrated,
                      const SolverConfig& cfg) {
    cfg.validate();
    if (y.rows() != m0.entries.rows())
        throw std::invalid_argument("solve: y and m0 row counts differ");
    const Eigen::Index m = m0.entries.rows();
    const Eigen::Index n = m0.entries.cols();
    const Eigen::Index l = y.cols();

    std::unique_ptr<AffineProjector> proj;
    try {
        proj = std::make_unique<AffineProjector>(y, m0.entries, calibrated);
    } catch (const RankDeficientError& err) {
        return infeasibility_verdict(y, m0.entries, calibrated, cfg, err);
    }

    AdmmOutcome admm = run_admm(*proj, cfg);

    SolveResult res;
    res.iterations = admm.iterations;
    res.monotone_violations = admm.monotone_violations;
    res.x_hat = SignalMatrix(Eigen::Map<const Eigen::MatrixXd>(admm.w.data(), n, l));
    res.objective = admm.w.head(n * l).lpNorm<1>();

    const double y_scale = 1.0 + y.norm();
    if (calibrated) {
        res.delta_hat = admm.w.tail(m);
        res.primal_residual =
            (m0.entries * res.x_hat.entries -
             (y.array().colwise() * res.delta_hat->array()).matrix()).norm() / y_scale;
        res.trace_residual =
            std::abs(res.delta_hat->sum() - static_cast<double>(m)) / static_cast<double>(m);
        res.unidentifiable_rows = zero_rows(y);
    } else {
        res.primal_residual = (y - m0.entries * res.x_hat.entries).norm() / y_scale;
        res.trace_residual = 0.0;
    }

    // Converged means the splitting tolerances were met AND the returned point
    // verifies the feasibility bounds.
    const bool feasible = res.primal_residual <= cfg.feasibility_tolerance &&
                          res.trace_residual <= cfg.feasibility_tolerance;
    res.status = (admm.tolerances_met && feasible) ? SolveStatus::Converged
                                                   : SolveStatus::IterationLimit;
    return res;
}

}  // namespace

SolveResult solve_calibrated(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                             const SolverConfig& config) {
    return run_solve(y, m0, true, config);
}

SolveResult solve_uncalibrated(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                               const SolverConfig& config) {
    return run_solve(y, m0, false, config);
}

SupervisedCalibration supervised_calibrate(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                                           const SignalMatrix& x_known) {
    if (y.rows() != m0.entries.rows() || m0.entries.cols() != x_known.entries.rows() ||
        y.cols() != x_known.entries.cols())
        throw std::invalid_argument("supervised_calibrate: shape mismatch");

    const Eigen::MatrixXd z = m0.entries * x_known.entries;
    const Eigen::Index m = y.rows();
    Eigen::VectorXd d(m);
    SupervisedCalibration out;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double zz = z.row(i).squaredNorm();
        if (zz == 0.0) {
            out.unidentifiable_rows.push_back(static_cast<int>(i));
            d[i] = 1.0;  // neutral fill, flagged above
            continue;
        }
        d[i] = y.row(i).dot(z.row(i)) / zz;
        if (d[i] == 0.0)
            throw std::invalid_argument("supervised_calibrate: row " + std::to_string(i) +
                                        " fits a zero gain, which no GainVector can carry");
    }
    out.gains = GainVector(std::move(d));
    return out;
}

}  // namespace blindcal

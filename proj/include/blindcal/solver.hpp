#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

#include "blindcal/model.hpp"

namespace blindcal {

struct SolverConfig {
    int max_iterations = 50000;
    double primal_tolerance = 1e-8;     // relative
    double dual_tolerance = 1e-8;       // relative
    double penalty_parameter = 1.0;     // operator-splitting step scale
    double feasibility_tolerance = 1e-9;  // relative, checked on the returned point
    bool adapt_penalty = true;          // residual balancing (x2 / /2 at >10x imbalance)
    double over_relaxation = 1.0;       // in [1, 2); >1 accelerates the splitting

    void validate() const;
};

enum class SolveStatus { Converged, IterationLimit, Infeasible };

const char* to_string(SolveStatus s);

struct SolveResult {
    SignalMatrix x_hat;                          // N x L estimate
    std::optional<Eigen::VectorXd> delta_hat;    // inverse-gain estimate (calibrated mode)
    double objective = 0.0;                      // ||x_hat||_1
    double primal_residual = 0.0;                // ||constraint gap||_F / (1 + ||Y||_F)
    double trace_residual = 0.0;                 // |sum(delta) - m| / m, calibrated mode
    int iterations = 0;
    SolveStatus status = SolveStatus::IterationLimit;
    std::vector<int> unidentifiable_rows;        // rows of Y identically zero
    int monotone_violations = 0;                 // combined-residual diagnostic (step-size bug flag)
};

// Elementwise sign(v)*max(|v|-t, 0); the proximal map of t*||.||_1.
Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t);

// Thrown when the constraint system is rank-deficient beyond tolerance. Never
// silently regularized.
struct RankDeficientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Euclidean projector onto the solver's affine constraint set, with the
// factorizations computed once per (Y, M0) and reused across iterations.
//
// Calibrated:   {(X, delta) : M0 X = diag(delta) Y,  sum(delta) = m}
// Uncalibrated: {X : M0 X = Y}
//
// Stacked-point layout: [vec(X) column-major | delta] (delta only when
// calibrated). The normal-equations Gram matrix I_L (x) G + D D^T (bordered by
// the trace row) is applied through its block structure: a Cholesky of
// G = M0 M0^T, a Cholesky of the m x m capacitance S = I + G^{-1} .* (Y Y^T),
// and a Schur complement for the trace row. One refinement pass keeps the
// projection residual near machine precision.
class AffineProjector {
public:
    AffineProjector(const Eigen::MatrixXd& y, const Eigen::MatrixXd& m0, bool calibrated);

    Eigen::VectorXd project(const Eigen::VectorXd& point) const;

    Eigen::Index num_vars() const { return calibrated_ ? nl_ + m_ : nl_; }
    Eigen::Index signal_vars() const { return nl_; }
    bool calibrated() const { return calibrated_; }

private:
    Eigen::MatrixXd apply_gram_inverse(const Eigen::MatrixXd& rhs) const;
    Eigen::MatrixXd gram_inverse_base(const Eigen::MatrixXd& rhs) const;
    Eigen::MatrixXd apply_gram(const Eigen::MatrixXd& x) const;

    Eigen::Index m_ = 0, n_ = 0, l_ = 0, nl_ = 0;
    bool calibrated_ = false;
    Eigen::MatrixXd y_, m0_;
    Eigen::LLT<Eigen::MatrixXd> g_llt_;   // G = M0 M0^T
    Eigen::LLT<Eigen::MatrixXd> s_llt_;   // S = I + G^{-1} .* (Y Y^T)
    Eigen::MatrixXd q_;                   // K1^{-1} vec(Y), as m x L
    double schur_ = 0.0;                  // m - <Y, q>
};

// Joint l1 recovery of signals and inverse gains:
//   min ||X||_1  s.t.  diag(delta) Y = M0 X,  sum(delta) = m.
// delta carries no sign constraint. Solved by two-block operator splitting
// (soft threshold / affine projection with a scaled dual variable).
SolveResult solve_calibrated(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                             const SolverConfig& config = {});

// Basis-pursuit baseline that ignores decalibration:
//   min ||X||_1  s.t.  Y = M0 X  (L problems solved jointly).
SolveResult solve_uncalibrated(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                               const SolverConfig& config = {});

// Least-squares gain fit against known training signals, specialized to a
// diagonal calibration matrix: per row, d_i = <y_i, z_i> / ||z_i||^2 with
// Z = M0 X. Rows of Z that vanish leave the gain unidentifiable; those are
// reported and filled with 1.
struct SupervisedCalibration {
    GainVector gains;
    std::vector<int> unidentifiable_rows;
};

SupervisedCalibration supervised_calibrate(const Eigen::MatrixXd& y, const MeasurementMatrix& m0,
                                           const SignalMatrix& x_known);

}  // namespace blindcal

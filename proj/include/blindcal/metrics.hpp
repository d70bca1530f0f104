#pragma once

#include <Eigen/Dense>

#include "blindcal/model.hpp"

namespace blindcal {

enum class CorrelationScope {
    Global,     // over the whole vectorized matrix (default)
    PerColumn,  // success requires every column to pass
};

struct SuccessCriterion {
    double threshold = 0.995;
    CorrelationScope scope = CorrelationScope::Global;

    explicit SuccessCriterion(double t = 0.995, CorrelationScope s = CorrelationScope::Global);
};

// |<vec(a), vec(b)>| / (||a||_F ||b||_F), in [0, 1]. The absolute value makes
// the metric blind to the global sign/scale ambiguity of the joint problem.
// Rejects all-zero input.
double normalized_cross_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Correlation >= threshold. Both matrices all-zero counts as success, exactly
// one all-zero as failure (the correlation itself is undefined there).
bool is_success(const SignalMatrix& x_true, const SignalMatrix& x_hat,
                const SuccessCriterion& crit);

// min_c ||c*delta_hat - 1/d_true|| / ||1/d_true||; scale-quotient diagnostic
// for the recovered inverse gains.
double gain_recovery_error(const GainVector& d_true, const Eigen::VectorXd& delta_hat);

}  // namespace blindcal

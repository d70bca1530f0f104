#include "blindcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace blindcal {

SuccessCriterion::SuccessCriterion(double t, CorrelationScope s) : threshold(t), scope(s) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw std::invalid_argument("success criterion: threshold must be in (0, 1]");
}

double normalized_cross_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("correlation: shape mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("correlation: undefined for an all-zero matrix");
    const double inner = (a.array() * b.array()).sum();
    return std::clamp(std::abs(inner) / (na * nb), 0.0, 1.0);
}

namespace {
bool column_success(const Eigen::VectorXd& t, const Eigen::VectorXd& h, double threshold) {
    const bool tz = t.norm() == 0.0;
    const bool hz = h.norm() == 0.0;
    if (tz || hz) return tz && hz;
    return normalized_cross_correlation(t, h) >= threshold;
}
}  // namespace

bool is_success(const SignalMatrix& x_true, const SignalMatrix& x_hat,
                const SuccessCriterion& crit) {
    const Eigen::MatrixXd& t = x_true.entries;
    const Eigen::MatrixXd& h = x_hat.entries;
    if (t.rows() != h.rows() || t.cols() != h.cols())
        throw std::invalid_argument("is_success: shape mismatch");
    if (crit.scope == CorrelationScope::PerColumn) {
        for (Eigen::Index c = 0; c < t.cols(); ++c)
            if (!column_success(t.col(c), h.col(c), crit.threshold)) return false;
        return true;
    }
    const bool tz = t.norm() == 0.0;
    const bool hz = h.norm() == 0.0;
    if (tz || hz) return tz && hz;
    return normalized_cross_correlation(t, h) >= crit.threshold;
}

double gain_recovery_error(const GainVector& d_true, const Eigen::VectorXd& delta_hat) {
    if (d_true.size() != delta_hat.size())
        throw std::invalid_argument("gain_recovery_error: length mismatch");
    if (delta_hat.norm() == 0.0)
        throw std::invalid_argument("gain_recovery_error: delta_hat is all zero");
    const Eigen::VectorXd target = d_true.d.cwiseInverse();
    const double c = delta_hat.dot(target) / delta_hat.squaredNorm();
    return (c * delta_hat - target).norm() / target.norm();
}

}  // namespace blindcal

#pragma once

#include <Eigen/Dense>

#include "blindcal/model.hpp"
#include "blindcal/solver.hpp"

namespace blindcal {

enum class OracleMode { Calibrated, Uncalibrated };

// Independent verification oracle for the two l1 programs. The program is
// rewritten in standard form by splitting X = P - Q (and delta = a - b in
// calibrated mode) with all parts nonnegative and minimizing 1^T(P + Q), then
// solved by a dense two-phase revised simplex that shares no code with the
// operator-splitting path. The returned optimum is certified: primal
// feasibility, variable nonnegativity, and reduced-cost optimality are all
// re-checked on the final basis before the result is released.
//
// Intended for small instances only; throws std::invalid_argument when
// N*L + m exceeds the size guard (500 variables before splitting).
SolveResult lp_oracle(const Eigen::MatrixXd& y, const MeasurementMatrix& m0, OracleMode mode);

}  // namespace blindcal

#include "blindcal/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace blindcal {

Dimensions::Dimensions(int N_, int m_, int k_, int L_) : N(N_), m(m_), k(k_), L(L_) {
    if (N < 1) throw std::invalid_argument("dims: N must be >= 1, got " + std::to_string(N));
    if (m < 1 || m > N)
        throw std::invalid_argument("dims: need 1 <= m <= N, got m=" + std::to_string(m) +
                                    " N=" + std::to_string(N));
    if (k < 0 || k > N)
        throw std::invalid_argument("dims: need 0 <= k <= N, got k=" + std::to_string(k));
    if (L < 1) throw std::invalid_argument("dims: L must be >= 1, got " + std::to_string(L));
}

GainVector::GainVector(Eigen::VectorXd values) : d(std::move(values)) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] == 0.0 || !std::isfinite(d[i]))
            throw std::invalid_argument("gain vector: entry " + std::to_string(i) +
                                        " must be finite and nonzero");
    }
}

GainVector GainVector::inverse() const { return GainVector(d.cwiseInverse()); }

MeasurementMatrix::MeasurementMatrix(Eigen::MatrixXd e) : entries(std::move(e)) {
    if (!entries.allFinite())
        throw std::invalid_argument("measurement matrix: entries must be finite");
}

ProblemInstance::ProblemInstance(Dimensions dims_, double sigma_, MeasurementMatrix m0_,
                                 GainVector gains_, SignalMatrix signals_,
                                 Eigen::MatrixXd observations_, std::uint64_t seed_)
    : dims(dims_),
      sigma(sigma_),
      m0(std::move(m0_)),
      gains(std::move(gains_)),
      signals(std::move(signals_)),
      observations(std::move(observations_)),
      seed(seed_) {
    if (m0.entries.rows() != dims.m || m0.entries.cols() != dims.N)
        throw std::invalid_argument("instance: m0 shape does not match dims");
    if (gains.size() != dims.m)
        throw std::invalid_argument("instance: gain count does not match dims");
    if (signals.entries.rows() != dims.N || signals.entries.cols() != dims.L)
        throw std::invalid_argument("instance: signal shape does not match dims");
    if (observations.rows() != dims.m || observations.cols() != dims.L)
        throw std::invalid_argument("instance: observation shape does not match dims");

    const Eigen::MatrixXd expected = gains.d.asDiagonal() * (m0.entries * signals.entries);
    const double scale = observations.norm();
    const double gap = (observations - expected).norm();
    if (gap > 1e-12 * scale && gap != 0.0)
        throw std::invalid_argument("instance: observations do not equal diag(d)*M0*X0 "
                                    "(relative gap " +
                                    std::to_string(gap / (scale > 0.0 ? scale : 1.0)) + ")");
}

MeasurementMatrix gen_measurement_matrix(const Dimensions& dims, SeedStream& rng) {
    Eigen::MatrixXd e(dims.m, dims.N);
    // Row-major fill so the draw order matches the on-disk matrix layout.
    for (int i = 0; i < dims.m; ++i)
        for (int j = 0; j < dims.N; ++j) e(i, j) = rng.next_normal();
    return MeasurementMatrix(std::move(e));
}

GainVector gen_gains(int m, double sigma, SeedStream& rng) {
    if (m < 1) throw std::invalid_argument("gen_gains: m must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("gen_gains: sigma must be >= 0");
    Eigen::VectorXd d(m);
    for (int i = 0; i < m; ++i) d[i] = std::exp(sigma * rng.next_normal());
    return GainVector(std::move(d));
}

SignalMatrix gen_sparse_signals(const Dimensions& dims, SeedStream& rng) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(dims.N, dims.L);
    std::vector<int> indices(dims.N);
    for (int col = 0; col < dims.L; ++col) {
        std::iota(indices.begin(), indices.end(), 0);
        // Partial Fisher-Yates: the first k slots become a uniform k-subset.
        for (int j = 0; j < dims.k; ++j) {
            const auto pick = j + static_cast<int>(rng.next_below(dims.N - j));
            std::swap(indices[j], indices[pick]);
            x(indices[j], col) = rng.next_normal();
        }
    }
    return SignalMatrix(std::move(x), dims.k);
}

ProblemInstance make_instance(const Dimensions& dims, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("make_instance: sigma must be >= 0");
    SeedStream m0_stream(derive_seed(seed, "m0"));
    SeedStream gain_stream(derive_seed(seed, "gains"));
    SeedStream signal_stream(derive_seed(seed, "signals"));

    MeasurementMatrix m0 = gen_measurement_matrix(dims, m0_stream);
    GainVector gains = gen_gains(dims.m, sigma, gain_stream);
    SignalMatrix signals = gen_sparse_signals(dims, signal_stream);
    Eigen::MatrixXd y = gains.d.asDiagonal() * (m0.entries * signals.entries);
    return ProblemInstance(dims, sigma, std::move(m0), std::move(gains), std::move(signals),
                           std::move(y), seed);
}

double decalibration_db(double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("decalibration_db: sigma must be >= 0");
    return 20.0 * sigma / std::log(10.0);
}

}  // namespace blindcal

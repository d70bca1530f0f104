#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

#include "blindcal/rng.hpp"

namespace blindcal {

// Problem sizes for one trial: N-dimensional signals, m measures per signal,
// k nonzeros per signal, L training signals.
struct Dimensions {
    int N = 0;
    int m = 0;
    int k = 0;
    int L = 0;

    Dimensions() = default;
    Dimensions(int N_, int m_, int k_, int L_);

    double delta() const { return static_cast<double>(m) / N; }
    double rho() const { return static_cast<double>(k) / m; }

    bool operator==(const Dimensions&) const = default;
};

// Per-measure gains d_i, all nonzero. inverse() gives the reparametrized
// delta_i = 1/d_i the convex program estimates.
struct GainVector {
    Eigen::VectorXd d;

    GainVector() = default;
    explicit GainVector(Eigen::VectorXd values);

    GainVector inverse() const;
    Eigen::Index size() const { return d.size(); }
};

struct MeasurementMatrix {
    Eigen::MatrixXd entries;  // m x N

    MeasurementMatrix() = default;
    explicit MeasurementMatrix(Eigen::MatrixXd e);
};

struct SignalMatrix {
    Eigen::MatrixXd entries;            // N x L
    std::optional<int> support_size;    // k, when produced by the generator

    SignalMatrix() = default;
    explicit SignalMatrix(Eigen::MatrixXd e, std::optional<int> k = std::nullopt)
        : entries(std::move(e)), support_size(k) {}
};

// One decalibrated trial: observations = diag(gains) * m0 * signals, checked
// to relative Frobenius tolerance 1e-12 on construction.
struct ProblemInstance {
    Dimensions dims;
    double sigma = 0.0;
    MeasurementMatrix m0;
    GainVector gains;
    SignalMatrix signals;
    Eigen::MatrixXd observations;  // m x L
    std::uint64_t seed = 0;

    ProblemInstance() = default;
    ProblemInstance(Dimensions dims, double sigma, MeasurementMatrix m0, GainVector gains,
                    SignalMatrix signals, Eigen::MatrixXd observations, std::uint64_t seed);
};

// i.i.d. standard normal m x N ensemble.
MeasurementMatrix gen_measurement_matrix(const Dimensions& dims, SeedStream& rng);

// d_i = exp(g_i) with g_i ~ N(0, sigma^2); always positive.
GainVector gen_gains(int m, double sigma, SeedStream& rng);

// Each column: uniform k-subset support, i.i.d. standard normal values there.
SignalMatrix gen_sparse_signals(const Dimensions& dims, SeedStream& rng);

// Draws M0 / D0 / X0 from labeled sub-streams of `seed` and assembles
// observations; sub-streams make the three draws order-insensitive.
ProblemInstance make_instance(const Dimensions& dims, double sigma, std::uint64_t seed);

// dB spread of the gain model: 20*sigma/ln(10).
double decalibration_db(double sigma);

}  // namespace blindcal

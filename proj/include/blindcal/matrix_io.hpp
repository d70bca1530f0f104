#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "blindcal/model.hpp"

namespace blindcal {

// Text matrix codec: one-line "rows cols" header, then row-major
// whitespace-separated values at 17 significant digits (exact double
// round-trip).
std::string encode_matrix(const Eigen::MatrixXd& m);
Eigen::MatrixXd decode_matrix(const std::string& text);

// Instance document: dims/sigma/seed plus matrices in the text form above.
// gains and signals are the planted ground truth; files produced by the
// generator always carry them, hand-built ones may omit them.
struct InstanceFile {
    Dimensions dims;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd m0;
    Eigen::MatrixXd observations;
    std::optional<Eigen::VectorXd> gains;
    std::optional<Eigen::MatrixXd> signals;

    static InstanceFile from_instance(const ProblemInstance& inst);
    // Requires planted gains and signals; validates the construction identity.
    ProblemInstance to_instance() const;
};

nlohmann::json instance_to_json(const InstanceFile& inst);
InstanceFile instance_from_json(const nlohmann::json& j);

void save_instance(const InstanceFile& inst, const std::filesystem::path& path);
InstanceFile load_instance(const std::filesystem::path& path);

}  // namespace blindcal

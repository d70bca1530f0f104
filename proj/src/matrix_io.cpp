#include "blindcal/matrix_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace blindcal {

std::string encode_matrix(const Eigen::MatrixXd& m) {
    std::string out;
    out.reserve(static_cast<std::size_t>(m.size()) * 24 + 32);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%lld %lld\n", static_cast<long long>(m.rows()),
                  static_cast<long long>(m.cols()));
    out += buf;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out += buf;
            out += (j + 1 == m.cols()) ? '\n' : ' ';
        }
    }
    if (m.rows() == 0) out += '\n';
    return out;
}

Eigen::MatrixXd decode_matrix(const std::string& text) {
    std::istringstream in(text);
    long long rows = -1, cols = -1;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
        throw std::invalid_argument("matrix text: bad header, expected 'rows cols'");
    Eigen::MatrixXd m(rows, cols);
    for (long long i = 0; i < rows; ++i)
        for (long long j = 0; j < cols; ++j)
            if (!(in >> m(i, j)))
                throw std::invalid_argument("matrix text: expected " + std::to_string(rows * cols) +
                                            " values, ran out at index " +
                                            std::to_string(i * cols + j));
    double extra;
    if (in >> extra) throw std::invalid_argument("matrix text: trailing values after matrix body");
    return m;
}

InstanceFile InstanceFile::from_instance(const ProblemInstance& inst) {
    InstanceFile f;
    f.dims = inst.dims;
    f.sigma = inst.sigma;
    f.seed = inst.seed;
    f.m0 = inst.m0.entries;
    f.observations = inst.observations;
    f.gains = inst.gains.d;
    f.signals = inst.signals.entries;
    return f;
}

ProblemInstance InstanceFile::to_instance() const {
    if (!gains || !signals)
        throw std::invalid_argument("instance file: planted gains/signals missing");
    return ProblemInstance(dims, sigma, MeasurementMatrix(m0), GainVector(*gains),
                           SignalMatrix(*signals, dims.k), observations, seed);
}

nlohmann::json instance_to_json(const InstanceFile& inst) {
    nlohmann::json j;
    j["dims"] = {{"N", inst.dims.N}, {"m", inst.dims.m}, {"k", inst.dims.k}, {"L", inst.dims.L}};
    j["sigma"] = inst.sigma;
    j["seed"] = inst.seed;
    j["m0"] = encode_matrix(inst.m0);
    j["observations"] = encode_matrix(inst.observations);
    if (inst.gains) j["gains"] = encode_matrix(*inst.gains);
    if (inst.signals) j["signals"] = encode_matrix(*inst.signals);
    return j;
}

InstanceFile instance_from_json(const nlohmann::json& j) {
    InstanceFile f;
    const auto& d = j.at("dims");
    f.dims = Dimensions(d.at("N").get<int>(), d.at("m").get<int>(), d.at("k").get<int>(),
                        d.at("L").get<int>());
    f.sigma = j.at("sigma").get<double>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.m0 = decode_matrix(j.at("m0").get<std::string>());
    f.observations = decode_matrix(j.at("observations").get<std::string>());
    if (j.contains("gains")) {
        Eigen::MatrixXd g = decode_matrix(j.at("gains").get<std::string>());
        if (g.cols() != 1) throw std::invalid_argument("instance file: gains must be a column");
        f.gains = g.col(0);
    }
    if (j.contains("signals")) f.signals = decode_matrix(j.at("signals").get<std::string>());

    if (f.m0.rows() != f.dims.m || f.m0.cols() != f.dims.N)
        throw std::invalid_argument("instance file: m0 shape does not match dims");
    if (f.observations.rows() != f.dims.m || f.observations.cols() != f.dims.L)
        throw std::invalid_argument("instance file: observations shape does not match dims");
    if (f.gains && f.signals) (void)f.to_instance();  // construction identity check
    return f;
}

void save_instance(const InstanceFile& inst, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << instance_to_json(inst).dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

InstanceFile load_instance(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    nlohmann::json j;
    in >> j;
    return instance_from_json(j);
}

}  // namespace blindcal

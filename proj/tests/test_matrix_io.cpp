#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "blindcal/matrix_io.hpp"
#include "blindcal/model.hpp"

using namespace blindcal;

namespace {
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("blindcal_io_" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};
}  // namespace

TEST_CASE("matrix text codec round-trips doubles exactly") {
    Eigen::MatrixXd m(2, 3);
    m << 1.0, -2.5, 3.3333333333333333e-17, 1e300, -7.0 / 3.0, 0.0;
    const Eigen::MatrixXd back = decode_matrix(encode_matrix(m));
    REQUIRE(back.rows() == 2);
    REQUIRE(back.cols() == 3);
    CHECK(back == m);  // bit-exact, not approximate
}

TEST_CASE("matrix decode rejects malformed input") {
    CHECK_THROWS_AS(decode_matrix("2 2\n1 2\n3\n"), std::invalid_argument);       // short
    CHECK_THROWS_AS(decode_matrix("2 2\n1 2\n3 4 5\n"), std::invalid_argument);   // long
    CHECK_THROWS_AS(decode_matrix("x 2\n1 2\n"), std::invalid_argument);          // header
    CHECK_THROWS_AS(decode_matrix("2 2\n1 2\n3 oops\n"), std::invalid_argument);  // token
    CHECK_THROWS_AS(decode_matrix(""), std::invalid_argument);
}

TEST_CASE("instance files round-trip bit-identically") {
    TempDir tmp;
    const ProblemInstance inst = make_instance(Dimensions(12, 8, 2, 4), 0.4, 777);
    const InstanceFile file = InstanceFile::from_instance(inst);
    const auto path = tmp.path / "inst.json";
    save_instance(file, path);

    const InstanceFile loaded = load_instance(path);
    CHECK(loaded.dims == inst.dims);
    CHECK(loaded.sigma == inst.sigma);
    CHECK(loaded.seed == inst.seed);
    CHECK(loaded.m0 == inst.m0.entries);
    CHECK(loaded.observations == inst.observations);
    REQUIRE(loaded.gains.has_value());
    REQUIRE(loaded.signals.has_value());
    CHECK(*loaded.gains == inst.gains.d);
    CHECK(*loaded.signals == inst.signals.entries);

    // Full reconstruction re-validates the construction identity.
    const ProblemInstance back = loaded.to_instance();
    CHECK(back.observations == inst.observations);
}

TEST_CASE("loading rejects tampered observations") {
    TempDir tmp;
    const ProblemInstance inst = make_instance(Dimensions(6, 4, 1, 2), 0.3, 9);
    InstanceFile file = InstanceFile::from_instance(inst);
    file.observations(0, 0) += 0.5;
    const auto path = tmp.path / "bad.json";
    save_instance(file, path);
    CHECK_THROWS(load_instance(path));
}

TEST_CASE("loading a missing file fails cleanly") {
    CHECK_THROWS(load_instance("/nonexistent/nowhere/inst.json"));
}

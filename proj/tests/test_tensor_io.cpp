#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <dermpolar/errors.hpp>
#include <dermpolar/rng.hpp>
#include <dermpolar/tensor_io.hpp>

using namespace dermpolar;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("stream round trip preserves binary32 payloads bit-exactly") {
    Rng rng(11);
    ValueGrid grid = rng.normal_grid({3, 5, 2}, 10.0);
    grid[0] = 0.0;
    grid[1] = -0.0;

    std::stringstream stream;
    write_tensor(stream, "sample", grid);
    const std::string first_pass = stream.str();

    TensorRecord record;
    REQUIRE(read_tensor(stream, record));
    CHECK(record.name == "sample");
    REQUIRE(record.grid.same_shape(grid));

    // Values only round through binary32 once: rewriting the decoded
    // grid must reproduce the original byte stream.
    std::stringstream second;
    write_tensor(second, "sample", record.grid);
    CHECK(second.str() == first_pass);

    TensorRecord none;
    CHECK_FALSE(read_tensor(stream, none));
}

TEST_CASE("multi-record files keep order and names") {
    const auto path = temp_file("dermpolar_tensor_multi.t32");
    std::vector<TensorRecord> records;
    records.push_back({"rho", ValueGrid({4, 4}, 0.25)});
    records.push_back({"theta", ValueGrid({4, 4}, 1.5)});
    records.push_back({"affine", ValueGrid::from_data({6}, {1, 2, 3, 4, 5, 6})});
    write_tensor_file(path.string(), records);

    const auto loaded = read_tensor_file(path.string());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].name == "rho");
    CHECK(loaded[1].name == "theta");
    CHECK(loaded[2].name == "affine");
    CHECK(find_record(loaded, "theta").grid.at(2, 2) == 1.5);
    CHECK_THROWS_AS(find_record(loaded, "missing"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("single-record wrappers") {
    const auto path = temp_file("dermpolar_tensor_single.t32");
    ValueGrid grid = ValueGrid::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    save_tensor(path.string(), "grid", grid);
    ValueGrid loaded = load_tensor(path.string());
    REQUIRE(loaded.same_shape(grid));
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(loaded[i] == grid[i]);
    std::filesystem::remove(path);
}

TEST_CASE("header line is JSON with shape, name and dtype") {
    std::stringstream stream;
    write_tensor(stream, "named", ValueGrid({2, 2}, 0.0));
    std::string header;
    std::getline(stream, header);
    CHECK(header.find("\"shape\":[2,2]") != std::string::npos);
    CHECK(header.find("\"name\":\"named\"") != std::string::npos);
    CHECK(header.find("\"dtype\":\"f32\"") != std::string::npos);
}

TEST_CASE("malformed streams throw IoError") {
    TensorRecord record;

    SUBCASE("broken JSON header") {
        std::stringstream stream("{\"shape\":[2,2\n");
        CHECK_THROWS_AS(read_tensor(stream, record), IoError);
    }
    SUBCASE("wrong dtype") {
        std::stringstream stream("{\"shape\":[1],\"name\":\"x\",\"dtype\":\"f64\"}\n\0\0\0\0");
        CHECK_THROWS_AS(read_tensor(stream, record), IoError);
    }
    SUBCASE("non-positive extent") {
        std::stringstream stream("{\"shape\":[0],\"name\":\"x\",\"dtype\":\"f32\"}\n");
        CHECK_THROWS_AS(read_tensor(stream, record), IoError);
    }
    SUBCASE("truncated payload") {
        std::stringstream full;
        write_tensor(full, "x", ValueGrid({2, 2}, 1.0));
        const std::string bytes = full.str();
        std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_tensor(truncated, record), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_tensor_file("/nonexistent/dir/none.t32"), IoError);
    }
}

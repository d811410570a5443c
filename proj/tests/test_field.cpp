#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "statecast/field.hpp"
#include "statecast/field_io.hpp"
#include "support/test_helpers.hpp"

using namespace statecast;
namespace fs = std::filesystem;

namespace {

FieldGeometry geom(int s, int t, int hp = 1, int c = 1, Boundary b = Boundary::periodic,
                   int hf = 0) {
    return FieldGeometry{s, t, b, c, hp, hf};
}

}  // namespace

TEST_CASE("canonical_index follows time-major order") {
    const FieldGeometry g100 = geom(100, 10);
    CHECK(canonical_index(1, 1, g100) == 1);
    CHECK(canonical_index(1, 2, g100) == 101);
    const FieldGeometry g10 = geom(10, 10);
    CHECK(canonical_index(7, 3, g10) == 27);

    // Bijective over the grid.
    const FieldGeometry g = geom(7, 5);
    std::vector<bool> seen(static_cast<std::size_t>(g.point_count()), false);
    for (int t = 1; t <= g.time_steps; ++t) {
        for (int r = 1; r <= g.spatial_size; ++r) {
            const long idx = canonical_index(r, t, g);
            REQUIRE(idx >= 1);
            REQUIRE(idx <= g.point_count());
            CHECK_FALSE(seen[static_cast<std::size_t>(idx - 1)]);
            seen[static_cast<std::size_t>(idx - 1)] = true;
        }
    }

    CHECK_THROWS_AS(canonical_index(0, 1, g), DataError);
    CHECK_THROWS_AS(canonical_index(1, 6, g), DataError);
    CHECK_THROWS_AS(canonical_index(8, 1, g), DataError);
}

TEST_CASE("plc_dimension sums cone slice widths") {
    CHECK(plc_dimension(geom(100, 10, 2, 1)) == 8);
    CHECK(plc_dimension(geom(100, 10, 1, 1)) == 3);
    CHECK(plc_dimension(geom(100, 10, 3, 2)) == 27);  // 5 + 9 + 13
    CHECK_THROWS_AS(plc_dimension(geom(100, 10, 0, 1)), DataError);
}

TEST_CASE("extract_light_cones on a constant-zero field") {
    Field f;
    f.geometry = geom(10, 10);
    f.values = Eigen::MatrixXd::Zero(10, 10);
    const LightConeSet cones = extract_light_cones(f);
    REQUIRE(cones.rows() == 90);
    CHECK(cones.plc.cols() == 3);
    CHECK(cones.flc.cols() == 1);
    CHECK(cones.plc.isZero(0.0));
    CHECK(cones.flc.isZero(0.0));
    // Margin is exactly the first h_p time slices under periodic boundary.
    long margin = 0;
    for (bool m : cones.margin_mask) margin += m;
    CHECK(margin == 10);
}

TEST_CASE("extract_light_cones hand enumeration on a 3x3 counting field") {
    const Field f = testsupport::counting_field(3, 3, geom(3, 3));
    const LightConeSet cones = extract_light_cones(f);
    REQUIRE(cones.rows() == 6);  // t = 2, 3

    // Row for (r=2, t=2): past slice is sites 1..3 at t=1, future cone is the value itself.
    const auto it = std::find(cones.index_map.begin(), cones.index_map.end(), std::make_pair(2, 2));
    REQUIRE(it != cones.index_map.end());
    const long row = it - cones.index_map.begin();
    CHECK(cones.plc(row, 0) == 1.0);
    CHECK(cones.plc(row, 1) == 2.0);
    CHECK(cones.plc(row, 2) == 3.0);
    CHECK(cones.flc(row, 0) == 5.0);
}

TEST_CASE("extract_light_cones at experiment scale") {
    const Field f = testsupport::random_field(100, 200, 7, geom(100, 200, 2, 1));
    const LightConeSet cones = extract_light_cones(f);
    CHECK(cones.rows() == 100 * 198);
    CHECK(cones.plc.cols() == 8);
}

TEST_CASE("extract_light_cones cell layout is oldest slice first, leftmost first") {
    // h_p = 2, c = 1: cells must be X(r-2..r+2, t-2) then X(r-1..r+1, t-1).
    const Field f = testsupport::counting_field(9, 5, geom(9, 5, 2, 1));
    const LightConeSet cones = extract_light_cones(f);
    const auto it = std::find(cones.index_map.begin(), cones.index_map.end(), std::make_pair(5, 3));
    REQUIRE(it != cones.index_map.end());
    const long row = it - cones.index_map.begin();
    const double v = [&](int r, int t) { return f.values(r - 1, t - 1); };
    const std::vector<double> expected{v(3, 1), v(4, 1), v(5, 1), v(6, 1), v(7, 1),
                                       v(4, 2), v(5, 2), v(6, 2)};
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(cones.plc(row, static_cast<long>(i)) == expected[i]);
    CHECK(cones.flc(row, 0) == v(5, 3));
}

TEST_CASE("extract_light_cones truncate margin has closed form") {
    // Margin = h_p full leading slices plus 2*c*h_p spatial sites per later slice.
    for (auto [s, t, hp, c] : {std::tuple{12, 9, 2, 1}, std::tuple{20, 6, 1, 2}}) {
        Field f = testsupport::random_field(s, t, 11, geom(s, t, hp, c, Boundary::truncate));
        const LightConeSet cones = extract_light_cones(f);
        long margin = 0;
        for (bool m : cones.margin_mask) margin += m;
        const long expected = static_cast<long>(hp) * s + static_cast<long>(t - hp) * 2 * c * hp;
        CHECK(margin == expected);
        CHECK(cones.rows() == static_cast<long>(s) * t - expected);
    }
}

TEST_CASE("extract_light_cones is deterministic and validates geometry") {
    const Field f = testsupport::random_field(15, 12, 3, geom(15, 12, 2, 1));
    const LightConeSet a = extract_light_cones(f);
    const LightConeSet b = extract_light_cones(f);
    CHECK(a.plc == b.plc);
    CHECK(a.flc == b.flc);

    FieldGeometry other = f.geometry;
    other.spatial_size = 14;
    CHECK_THROWS_AS(extract_light_cones(f, other), DataError);
}

TEST_CASE("canonical-order replay never reads an unwritten cell") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> hp_pick(1, 3), c_pick(1, 2), coin(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const int hp = hp_pick(rng);
        const int c = c_pick(rng);
        const Boundary b = coin(rng) ? Boundary::periodic : Boundary::truncate;
        std::uniform_int_distribution<int> s_pick(2 * c * hp + 1 + 1, 30);
        std::uniform_int_distribution<int> t_pick(hp + 1, 24);
        const int s = s_pick(rng);
        const int t = t_pick(rng);
        const Field f = testsupport::random_field(s, t, 1000 + trial, geom(s, t, hp, c, b));
        const LightConeSet cones = extract_light_cones(f);
        REQUIRE(testsupport::replay_never_reads_future(f, cones));
    }
}

TEST_CASE("split_train_test partitions along the time axis") {
    SECTION("experiment split") {
        const Field f = testsupport::random_field(20, 200, 5, geom(20, 200, 2, 1));
        const LightConeSet cones = extract_light_cones(f);
        auto [train, test] = split_train_test(cones, 0.5);
        for (const auto& [r, t] : train.index_map) {
            CHECK(t > 2);
            CHECK(t <= 100);
        }
        for (const auto& [r, t] : test.index_map) {
            CHECK(t > 100);
            CHECK(t <= 200);
        }
        CHECK(train.rows() + test.rows() == cones.rows());
        CHECK(train.rows() == 20 * 98);
        CHECK(test.rows() == 20 * 100);
    }
    SECTION("tiny field hand enumeration") {
        const Field f = testsupport::random_field(5, 4, 6, geom(5, 4, 1, 1));
        const LightConeSet cones = extract_light_cones(f);
        auto [train, test] = split_train_test(cones, 0.5);
        for (const auto& [r, t] : train.index_map) CHECK(t == 2);
        for (const auto& [r, t] : test.index_map) CHECK((t == 3 || t == 4));
    }
    SECTION("degenerate split errors") {
        const Field f = testsupport::random_field(5, 10, 8, geom(5, 10, 1, 1));
        const LightConeSet cones = extract_light_cones(f);
        CHECK_THROWS_AS(split_train_test(cones, 0.999), DataError);  // empty test side
        CHECK_THROWS_AS(split_train_test(cones, 0.01), DataError);   // empty train side
        CHECK_THROWS_AS(split_train_test(cones, 0.0), DataError);
        CHECK_THROWS_AS(split_train_test(cones, 1.0), DataError);
    }
}

TEST_CASE("field io round trip is byte identical") {
    const fs::path dir = fs::temp_directory_path() / "statecast_field_io_test";
    fs::create_directories(dir);
    const Field f = testsupport::random_field(8, 11, 99, geom(8, 11, 2, 1));
    const std::string path = (dir / "field.csv").string();
    write_field(f, path);

    const Field g = read_field(path);
    CHECK(g.values == f.values);
    CHECK(g.geometry.spatial_size == f.geometry.spatial_size);
    CHECK(g.geometry.past_horizon == f.geometry.past_horizon);

    write_field(g, (dir / "again.csv").string());
    std::ifstream a(path, std::ios::binary), b((dir / "again.csv").string(), std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    fs::remove_all(dir);
}

TEST_CASE("field io rejects malformed input") {
    const fs::path dir = fs::temp_directory_path() / "statecast_field_io_bad";
    fs::create_directories(dir);
    const std::string csv = (dir / "bad.csv").string();

    {
        std::ofstream out(csv);
        out << "1.0,2.0\n3.0,oops\n";
        std::ofstream meta(meta_path_for(csv));
        meta << geometry_to_json(geom(2, 2)).dump();
    }
    try {
        read_field(csv);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("column 2") != std::string::npos);
    }

    {
        std::ofstream out(csv);
        out << "1.0,2.0\n3.0,4.0\n";
        std::ofstream meta(meta_path_for(csv));
        meta << geometry_to_json(geom(3, 2)).dump();  // wrong shape
    }
    CHECK_THROWS_AS(read_field(csv), DataError);

    CHECK_THROWS_AS(read_field((dir / "missing.csv").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("geometry invariants") {
    CHECK_THROWS_AS(geom(4, 10, 2, 1).validate(), DataError);  // periodic wrap too tight
    CHECK_NOTHROW(geom(4, 10, 2, 1, Boundary::truncate).validate());
    CHECK_THROWS_AS(geom(0, 10).validate(), DataError);
    Field f;
    f.geometry = geom(3, 3);
    f.values = Eigen::MatrixXd::Zero(3, 3);
    f.values(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(f.validate(), DataError);
}

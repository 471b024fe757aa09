#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "wlfm/csv.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/rng.hpp"
#include "wlfm/tensor.hpp"

using namespace wlfm;

TEST_CASE("error codes carry stable names") {
    CHECK(std::string(errc_name(errc::missing_depth_column)) == "MissingDepthColumn");
    CHECK(std::string(errc_name(errc::non_monotonic_depth)) == "NonMonotonicDepth");
    CHECK(std::string(errc_name(errc::zero_vector)) == "ZeroVector");
    try {
        raise(errc::bad_ratios, "0.5/0.6/0.2");
        FAIL("raise did not throw");
    } catch (const error& e) {
        CHECK(e.code() == errc::bad_ratios);
        CHECK(std::string(e.what()).find("BadRatios") != std::string::npos);
    }
}

TEST_CASE("rng streams are deterministic and independent") {
    rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64();
        CHECK(x == b.next_u64());
    }
    // different seed diverges immediately with overwhelming probability
    CHECK(a.next_u64() != c.next_u64());

    // derived substreams differ from each other and the base
    rng d1(rng::derive(42, 1, 0)), d2(rng::derive(42, 1, 1)), d3(rng::derive(42, 2, 0));
    std::set<std::uint64_t> firsts{d1.next_u64(), d2.next_u64(), d3.next_u64()};
    CHECK(firsts.size() == 3);
}

TEST_CASE("rng uniform01 stays in [0,1) and below() is bounded") {
    rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) CHECK(r.below(13) < 13);
    // below(1) must always return 0
    for (int i = 0; i < 10; ++i) CHECK(r.below(1) == 0);
}

TEST_CASE("rng normal matches moments roughly") {
    rng r(123);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var_ = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var_ - 1.0) < 0.03);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    auto v2 = v;
    rng r1(99), r2(99);
    r1.shuffle(v);
    r2.shuffle(v2);
    CHECK(v == v2);
    std::sort(v.begin(), v.end());
    CHECK(v == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
}

TEST_CASE("double formatting round-trips bit-exactly") {
    rng r(5);
    for (int i = 0; i < 1000; ++i) {
        double x = (r.uniform01() - 0.5) * std::pow(10.0, r.uniform(-6.0, 6.0));
        std::string s = format_double(x);
        double y = parse_double(s);
        CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
    }
    CHECK(format_double(0.125) == "0.125");
    CHECK(parse_double("1e3") == 1000.0);
    CHECK_THROWS_AS(parse_double("abc"), error);
    CHECK_THROWS_AS(parse_double("1.5x"), error);
    CHECK_THROWS_AS(parse_double(""), error);
}

TEST_CASE("csv reader handles tables, writer round-trips") {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "wlfm_test_common.csv";
    {
        csv_writer w(p.string());
        w.row({"DEPTH", "GR", "RT"});
        w.row({"100.5", format_double(55.25), format_double(1.75)});
        w.row({"100.625", format_double(60.0), format_double(2.5)});
    }
    csv_table t = read_csv(p.string());
    REQUIRE(t.header == std::vector<std::string>{"DEPTH", "GR", "RT"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.column("GR") == 1);
    CHECK(parse_double(t.rows[1][2]) == 2.5);
    CHECK_THROWS_AS(t.column("SP"), error);
    fs::remove(p);
}

TEST_CASE("csv reader rejects ragged rows") {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "wlfm_test_ragged.csv";
    {
        std::ofstream out(p);
        out << "a,b\n1,2\n3\n";
    }
    try {
        read_csv(p.string());
        FAIL("ragged row accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::ragged_columns);
    }
    fs::remove(p);
}

TEST_CASE("matmul matches a hand-worked product") {
    tensor a(2, 3);
    a.v = {1, 2, 3, 4, 5, 6};
    tensor b(3, 2);
    b.v = {7, 8, 9, 10, 11, 12};
    tensor c = matmul(a, b);
    REQUIRE(c.rows == 2);
    REQUIRE(c.cols == 2);
    CHECK(c.at(0, 0) == 58);
    CHECK(c.at(0, 1) == 64);
    CHECK(c.at(1, 0) == 139);
    CHECK(c.at(1, 1) == 154);
    CHECK_THROWS_AS(matmul(a, a), error);
}

TEST_CASE("transpose-product helpers agree with explicit transposes") {
    rng r(11);
    tensor a(4, 3), b(4, 5);
    for (auto& x : a.v) x = r.normal();
    for (auto& x : b.v) x = r.normal();

    tensor ref = matmul(transpose(a), b);
    tensor got(3, 5);
    add_at_b(got, a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got.v[i] == Catch::Approx(ref.v[i]));

    tensor c(5, 3);
    for (auto& x : c.v) x = r.normal();
    tensor ref2 = matmul(a, transpose(c));
    tensor got2(4, 5);
    add_a_bt(got2, a, c);
    for (std::size_t i = 0; i < ref2.size(); ++i) CHECK(got2.v[i] == Catch::Approx(ref2.v[i]));
}

TEST_CASE("cosine similarity: known values and zero-vector guard") {
    std::vector<double> x{1, 0, 0}, y{0, 1, 0}, z{2, 0, 0}, w{-1, 0, 0};
    CHECK(cosine_similarity(x, y) == Catch::Approx(0.0));
    CHECK(cosine_similarity(x, z) == Catch::Approx(1.0));
    CHECK(cosine_similarity(x, w) == Catch::Approx(-1.0));
    std::vector<double> zero{0, 0, 0};
    try {
        cosine_similarity(x, zero);
        FAIL("zero vector accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::zero_vector);
    }
}

#include <doctest.h>

#include "covert/io.hpp"
#include "covert/stats.hpp"

using namespace covert;

TEST_CASE("fmt_double round-trips and is stable") {
    for (double v : {0.0, 1.0, -1.5, 0.1, 1.0 / 3.0, 1e-17, 123456.789}) {
        const auto s = fmt_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
        CHECK(fmt_double(v) == s);
    }
}

TEST_CASE("csv writer emits stamped, deterministic output") {
    CsvWriter a({"x", "y"});
    a.stamp(42, "deadbeef");
    a.add_row({"1", fmt_double(0.5)});
    CsvWriter b({"x", "y"});
    b.stamp(42, "deadbeef");
    b.add_row({"1", fmt_double(0.5)});
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("# seed=42 config_hash=deadbeef\n", 0) == 0);
    CHECK_THROWS_AS(a.add_row({"only-one-cell"}), std::invalid_argument);
}

TEST_CASE("config hash depends on content") {
    nlohmann::json a = {{"k", 1}};
    nlohmann::json b = {{"k", 2}};
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a) == config_hash(a));
}

TEST_CASE("spearman trend detects direction") {
    std::vector<double> up, down, flat;
    for (int i = 0; i < 200; ++i) {
        up.push_back(i + ((i * 7) % 5) * 0.1);
        down.push_back(-i + ((i * 3) % 5) * 0.1);
        flat.push_back(((i * 13) % 7) * 1.0);
    }
    CHECK(spearman_trend(up, +1).p_value < 0.001);
    CHECK(spearman_trend(up, -1).p_value > 0.99);
    CHECK(spearman_trend(down, -1).p_value < 0.001);
    CHECK(spearman_trend(flat, +1).p_value > 0.05);
}

TEST_CASE("ranks average ties") {
    const auto r = ranks({3.0, 1.0, 3.0, 2.0});
    CHECK(r[1] == doctest::Approx(1.0));
    CHECK(r[3] == doctest::Approx(2.0));
    CHECK(r[0] == doctest::Approx(3.5));
    CHECK(r[2] == doctest::Approx(3.5));
}

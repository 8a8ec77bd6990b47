#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "causalnet/data_model.hpp"
#include "support.hpp"

using namespace causalnet;

TEST_CASE("to_log_time maps 0 to 0 and 47h to ln 48") {
    CHECK(to_log_time(0.0) == 0.0);
    CHECK(to_log_time(47.0) == doctest::Approx(3.8712010109078911).epsilon(1e-12));
    CHECK_THROWS_AS(to_log_time(-1.0), UsageError);
}

TEST_CASE("to_log_time is strictly increasing on random samples") {
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        const double a = rng.uniform() * 100.0;
        const double b = a + 1e-6 + rng.uniform() * 10.0;
        CHECK(to_log_time(a) < to_log_time(b));
    }
}

TEST_CASE("grid has 101 uniform points in [0, ln 49] for 48h") {
    const TimeGrid g = TimeGrid::uniform(48.0);
    REQUIRE(g.points.size() == 101);
    CHECK(g.points.front() == 0.0);
    CHECK(g.points.back() == doctest::Approx(std::log(49.0)).epsilon(1e-12));
    for (std::size_t i = 1; i < g.points.size(); ++i) {
        CHECK(g.points[i] > g.points[i - 1]);
        CHECK(g.points[i] - g.points[i - 1] ==
              doctest::Approx(std::log(49.0) / 100.0).epsilon(1e-9));
    }
}

TEST_CASE("load_observations parses rows and flags malformed input") {
    testsupport::TempDir dir("data_model");
    SUBCASE("header-only file gives an empty list") {
        const auto path = dir.file("empty.csv");
        std::ofstream(path) << "compound_id,condition,replicate_id,time_hours,value_log2\n";
        CHECK(load_observations(path).empty());
    }
    SUBCASE("a well-formed row maps fields directly") {
        const auto path = dir.file("one.csv");
        std::ofstream(path) << "compound_id,condition,replicate_id,time_hours,value_log2\n"
                               "G1,control,r1,2.0,8.53\n";
        const auto obs = load_observations(path);
        REQUIRE(obs.size() == 1);
        CHECK(obs[0].compound_id == "G1");
        CHECK(obs[0].condition == Condition::control);
        CHECK(obs[0].replicate_id == "r1");
        CHECK(obs[0].time_hours == 2.0);
        CHECK(obs[0].value_log2 == 8.53);
    }
    SUBCASE("duplicate rows are retained as replicates") {
        const auto path = dir.file("dup.csv");
        std::ofstream(path) << "compound_id,condition,replicate_id,time_hours,value_log2\n"
                               "G1,control,r1,2.0,8.53\n"
                               "G1,control,r1,2.0,8.53\n"
                               "G1,control,r1,2.0,9.10\n";
        const auto obs = load_observations(path);
        // Brute-force row count: every data row becomes a record.
        std::ifstream in(path);
        std::string line;
        std::size_t rows = 0;
        std::getline(in, line);
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(obs.size() == rows);
        CHECK(obs.size() == 3);
    }
    SUBCASE("malformed numeric field names the line") {
        const auto path = dir.file("bad.csv");
        std::ofstream(path) << "compound_id,condition,replicate_id,time_hours,value_log2\n"
                               "G1,control,r1,abc,8.53\n";
        CHECK_THROWS_WITH_AS(load_observations(path),
                             doctest::Contains("line 2"), ParseError);
    }
    SUBCASE("unknown condition string is a schema error") {
        const auto path = dir.file("cond.csv");
        std::ofstream(path) << "compound_id,condition,replicate_id,time_hours,value_log2\n"
                               "G1,Control,r1,2.0,8.53\n";
        CHECK_THROWS_AS(load_observations(path), SchemaError);
    }
    SUBCASE("missing file names the path") {
        CHECK_THROWS_WITH_AS(load_observations(dir.file("nope.csv")),
                             doctest::Contains("nope.csv"), ParseError);
    }
}

TEST_CASE("parse/serialize round-trip reproduces the records") {
    testsupport::TempDir dir("data_model_rt");
    const auto obs = testsupport::make_universe(3, 7);
    const auto p1 = dir.file("a.csv");
    const auto p2 = dir.file("b.csv");
    save_observations(p1, obs);
    const auto back = load_observations(p1);
    REQUIRE(back.size() == obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        CHECK(back[i].compound_id == obs[i].compound_id);
        CHECK(back[i].condition == obs[i].condition);
        CHECK(back[i].replicate_id == obs[i].replicate_id);
        CHECK(back[i].time_hours == obs[i].time_hours);
        CHECK(back[i].value_log2 == obs[i].value_log2);
    }
    save_observations(p2, back);
    CHECK(testsupport::slurp(p1) == testsupport::slurp(p2));
}

TEST_CASE("group_by_compound partitions and converts times") {
    SUBCASE("2 compounds x 2 conditions gives 4 groups") {
        std::vector<RawObservation> obs;
        for (const char* g : {"A", "B"})
            for (auto c : {Condition::control, Condition::treated})
                for (double h : {0.0, 2.0, 6.0}) obs.push_back({g, c, "r1", h, 1.0});
        const auto groups = group_by_compound(obs);
        CHECK(groups.size() == 4);
        std::size_t total = 0;
        for (const auto& [k, s] : groups) total += s.observations.size();
        CHECK(total == obs.size());
    }
    SUBCASE("hours {0,2,6,24,48} map to log-times {0, ln3, ln7, ln25, ln49}") {
        std::vector<RawObservation> obs;
        for (double h : {0.0, 2.0, 6.0, 24.0, 48.0})
            obs.push_back({"A", Condition::control, "r1", h, 1.0});
        const auto groups = group_by_compound(obs);
        const auto& series = groups.at({"A", Condition::control});
        REQUIRE(series.observations.size() == 5);
        const std::vector<double> expected = {0.0, std::log(3.0), std::log(7.0), std::log(25.0),
                                              std::log(49.0)};
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(series.observations[i].first == doctest::Approx(expected[i]).epsilon(1e-12));
    }
    SUBCASE("empty input gives an empty map") {
        CHECK(group_by_compound({}).empty());
    }
}

TEST_CASE("partition property on a random universe") {
    const auto obs = testsupport::make_universe(5, 11);
    const auto groups = group_by_compound(obs);
    std::size_t total = 0;
    for (const auto& [k, s] : groups) total += s.observations.size();
    CHECK(total == obs.size());
}

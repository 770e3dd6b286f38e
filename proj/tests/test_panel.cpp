#include <catch2/catch.hpp>

#include "panelsynth/panel.hpp"
#include "support/test_helpers.hpp"

using namespace panelsynth;
using test_support::temp_dir;

namespace {

DailyCountSeries constant_series(const std::string& city, Date start, int days, long long value) {
    DailyCountSeries s;
    s.city_id = city;
    s.category = Level2::Theft;
    s.start = start;
    s.counts.assign(static_cast<std::size_t>(days), value);
    return s;
}

StudyDesign simple_design(Date start, Date intervention, Date end, int block_len) {
    StudyDesign d;
    d.window_start = start;
    d.intervention_date = intervention;
    d.window_end = end;
    d.block_len_days = block_len;
    d.treated_unit = "A";
    d.populations = {{"A", 1.0}, {"B", 1.0}, {"C", 1.0}};
    return d;
}

} // namespace

TEST_CASE("aggregate_blocks: 14 all-ones days, weekly blocks, intervention at day 8") {
    Date start = make_date(2019, 1, 1);
    StudyDesign d = simple_design(start, start.plus_days(7), start.plus_days(13), 7);
    BlockSeries b = aggregate_blocks(constant_series("A", start, 14, 1), d, 1, 1);
    REQUIRE(b.values == std::vector<double>{7, 7});
    CHECK(b.t0 == 1);
    CHECK(b.block_starts[0] == start);
    CHECK(b.block_starts[1] == d.intervention_date);
}

TEST_CASE("aggregate_blocks: 75 post days with weekly blocks give 10 post blocks") {
    Date start = make_date(2019, 1, 1);
    Date intervention = start.plus_days(70); // 10 pre blocks
    Date end = intervention.plus_days(74);   // 75 post days: 10 blocks + 5 dropped
    StudyDesign d = simple_design(start, intervention, end, 7);
    BlockSeries b = aggregate_blocks(constant_series("A", start, 70 + 75, 1), d);
    CHECK(b.t0 == 10);
    CHECK(b.total_blocks() - b.t0 == 10);
}

TEST_CASE("aggregate_blocks: 104-week pre-period at 35-day blocks keeps 20, drops 4 weeks") {
    Date intervention = make_date(2020, 1, 1);
    Date start = intervention.plus_days(-728); // 104 weeks
    Date end = intervention.plus_days(35 * 2 - 1);
    StudyDesign d = simple_design(start, intervention, end, 35);
    BlockSeries b = aggregate_blocks(constant_series("A", start, 728 + 70, 1), d);
    CHECK(b.t0 == 20);
    // first block starts 20*35 days before the intervention, 28 days dropped
    CHECK(b.block_starts.front() == intervention.plus_days(-700));
    CHECK(start.days_until(b.block_starts.front()) == 28);
    for (double v : b.values) CHECK(v == 35.0);
}

TEST_CASE("aggregate_blocks enforces minimum block counts") {
    Date start = make_date(2019, 1, 1);
    StudyDesign d = simple_design(start, start.plus_days(21), start.plus_days(27), 7);
    DailyCountSeries s = constant_series("A", start, 28, 1);
    CHECK_THROWS_AS(aggregate_blocks(s, d), Error); // default needs 8 pre blocks
    CHECK_NOTHROW(aggregate_blocks(s, d, 3, 1));
    CHECK_THROWS_AS(aggregate_blocks(s, d, 3, 2), Error); // only 1 post block
}

TEST_CASE("per_capita divides by population") {
    std::vector<double> counts = {100.0, 0.0};
    auto rates = per_capita(counts, 1'000'000.0);
    CHECK(rates[0] == Approx(1e-4));
    CHECK(rates[1] == 0.0);
    CHECK_THROWS_AS(per_capita(counts, 0.0), Error);
    CHECK_THROWS_AS(per_capita(counts, -5.0), Error);
}

TEST_CASE("demean_pre subtracts the pre-period mean") {
    std::vector<double> v = {1.0, 3.0, 5.0};
    auto out = demean_pre(v, 2);
    CHECK(out == std::vector<double>{-1.0, 1.0, 3.0});

    std::vector<double> c = {4.0, 4.0, 4.0, 4.0};
    auto zeros = demean_pre(c, 3);
    for (double x : zeros) CHECK(x == 0.0);

    auto once = demean_pre(v, 2);
    auto twice = demean_pre(once, 2);
    CHECK(once == twice); // idempotent
}

TEST_CASE("assemble_panel meets Panel invariants") {
    Date start = make_date(2019, 1, 1);
    Date intervention = start.plus_days(70);
    StudyDesign d = simple_design(start, intervention, intervention.plus_days(13), 7);
    std::map<std::string, BlockSeries> blocks;
    for (const auto& [city, mult] :
         std::map<std::string, long long>{{"A", 2}, {"B", 3}, {"C", 5}})
        blocks[city] = aggregate_blocks(constant_series(city, start, 84, mult), d);
    Panel p = assemble_panel(blocks, d);
    CHECK(p.treated_unit() == "A");
    CHECK(p.t0 == 10);
    CHECK(p.total_blocks() == 12);
    for (int j = 0; j < p.n_units(); ++j)
        CHECK(std::abs(p.Y.row(j).head(p.t0).mean()) < 1e-12);
    // constant series demean to zero everywhere
    CHECK(p.Y.cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.raw_counts(0, 0) == Approx(14.0));
}

TEST_CASE("assemble_panel errors name the missing unit") {
    Date start = make_date(2019, 1, 1);
    Date intervention = start.plus_days(70);
    StudyDesign d = simple_design(start, intervention, intervention.plus_days(13), 7);
    std::map<std::string, BlockSeries> blocks;
    blocks["B"] = aggregate_blocks(constant_series("B", start, 84, 1), d);
    try {
        assemble_panel(blocks, d);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("A") != std::string::npos);
    }
}

TEST_CASE("dropping a donor leaves other units bit-identical") {
    Panel p = test_support::random_panel(42, 6, 30, 20);
    std::vector<std::string> donors(p.units.begin() + 1, p.units.end());
    donors.pop_back();
    Panel reduced = reindex_panel(p, p.units[0], donors);
    for (int j = 0; j < reduced.n_units(); ++j)
        for (int t = 0; t < reduced.total_blocks(); ++t)
            CHECK(reduced.Y(j, t) == p.Y(j, t));
}

TEST_CASE("aggregate/per-capita/demean commute with block-preserving time shifts") {
    Date start = make_date(2019, 1, 1);
    Date intervention = start.plus_days(63);
    StudyDesign d = simple_design(start, intervention, intervention.plus_days(20), 7);

    DailyCountSeries s;
    s.city_id = "A";
    s.category = Level2::Theft;
    s.start = start;
    SplitMix64 rng(17);
    for (int i = 0; i < 84; ++i)
        s.counts.push_back(static_cast<long long>(rng.next_u64() % 20));

    BlockSeries base = aggregate_blocks(s, d, 1, 1);

    const int shift = 14; // two whole blocks
    StudyDesign d2 = d;
    d2.window_start = d.window_start.plus_days(shift);
    d2.intervention_date = d.intervention_date.plus_days(shift);
    d2.window_end = d.window_end.plus_days(shift);
    DailyCountSeries s2 = s;
    s2.start = s.start.plus_days(shift);
    BlockSeries shifted = aggregate_blocks(s2, d2, 1, 1);

    REQUIRE(base.values.size() == shifted.values.size());
    CHECK(base.values == shifted.values);
    CHECK(demean_pre(per_capita(base.values, 3.0), base.t0) ==
          demean_pre(per_capita(shifted.values, 3.0), shifted.t0));
}

TEST_CASE("panel write/read round trip") {
    Panel p = test_support::random_panel(7, 5, 24, 16);
    std::string dir = temp_dir("panel_io");
    write_panel(p, dir + "/panel_test");
    Panel q = read_panel(dir + "/panel_test");
    CHECK(q.units == p.units);
    CHECK(q.t0 == p.t0);
    CHECK(q.block_len_days == p.block_len_days);
    REQUIRE(q.total_blocks() == p.total_blocks());
    for (int j = 0; j < p.n_units(); ++j)
        for (int t = 0; t < p.total_blocks(); ++t) {
            CHECK(q.Y(j, t) == p.Y(j, t)); // shortest round-trip formatting is exact
            CHECK(q.raw_counts(j, t) == p.raw_counts(j, t));
        }
}

TEST_CASE("panel validation rejects broken shapes") {
    Panel p = test_support::random_panel(3, 10, 20, 12);
    Panel bad = p;
    bad.t0 = 25;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = p;
    bad.Y(1, 2) = bad.Y(1, 2) + 0.5; // breaks the pre-demeaned invariant
    CHECK_THROWS_AS(bad.validate(), Error);
}

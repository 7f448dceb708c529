#include "icumort/defaults.hpp"
#include "icumort/harmonize.hpp"
#include "icumort/rng.hpp"

#include <doctest.h>

#include <algorithm>

using namespace icumort;

namespace {

HarmonizeContext test_context() { return make_default_harmonize_context(); }

RawEvent num_event(const char* var, double t, double v, const char* unit = "") {
    RawEvent e;
    e.stay_id = "s";
    e.variable = var;
    e.time_offset_h = t;
    e.value_numeric = v;
    e.unit = unit;
    return e;
}

RawEvent text_event(const char* var, double t, const char* text) {
    RawEvent e;
    e.stay_id = "s";
    e.variable = var;
    e.time_offset_h = t;
    e.value_text = text;
    return e;
}

} // namespace

TEST_CASE("unit conversion rewrites values into canonical units") {
    const auto ctx = test_context();
    SUBCASE("fahrenheit to celsius") {
        auto out = ctx.schema.convert_units(num_event("Temperature", 1.0, 98.6, "degF"));
        CHECK_FALSE(out.quarantined);
        CHECK(out.event.value_numeric.value() == doctest::Approx(37.0).epsilon(1e-9));
        CHECK(out.event.unit == "degC");
    }
    SUBCASE("canonical unit passes through unchanged") {
        auto out = ctx.schema.convert_units(num_event("Temperature", 1.0, 37.0, "degC"));
        CHECK_FALSE(out.quarantined);
        CHECK(out.event.value_numeric.value() == 37.0);
    }
    SUBCASE("round trip within 1e-9") {
        const UnitConversion* c = ctx.schema.find_conversion("Temperature", "degF");
        REQUIRE(c);
        for (double x : {30.0, 37.0, 41.5}) {
            CHECK(std::abs(c->apply(c->invert(x)) - x) < 1e-9);
        }
    }
    SUBCASE("unknown unit quarantined with reason") {
        auto out = ctx.schema.convert_units(num_event("Temperature", 1.0, 310.0, "kelvin"));
        CHECK(out.quarantined);
        CHECK(out.reason.find("kelvin") != std::string::npos);
    }
}

TEST_CASE("outlier filtering removes only out-of-range values") {
    const auto ctx = test_context();
    std::size_t removed = 0;
    const auto kept = filter_outliers("Heart Rate", {400.0, 85.0, 10.0, 120.0}, ctx.ranges, &removed);
    CHECK(kept == std::vector<double>{85.0, 120.0});
    CHECK(removed == 2);

    SUBCASE("idempotent") {
        std::size_t removed2 = 0;
        CHECK(filter_outliers("Heart Rate", kept, ctx.ranges, &removed2) == kept);
        CHECK(removed2 == 0);
    }
    SUBCASE("unknown variable passes through") {
        CHECK(filter_outliers("NotAVariable", {1e9}, ctx.ranges).size() == 1);
    }
}

TEST_CASE("hourly binning: mean, mode, missing marks, window semantics") {
    const auto ctx = test_context();
    HourlyGrid grid;
    grid.init("s", ctx.grid_schema.size());

    std::vector<RawEvent> events = {
        num_event("Heart Rate", 3.2, 80.0),
        num_event("Heart Rate", 3.9, 90.0),
        text_event("VentMode", 5.1, "AC"),
        text_event("VentMode", 5.5, "AC"),
        text_event("VentMode", 5.9, "PS"),
        num_event("Heart Rate", 24.0, 999.0), // exactly at the window edge: excluded
    };
    bin_hourly(events, ctx.grid_schema, ctx.schema, grid);

    const int c_hr = ctx.grid_schema.index_of("Heart Rate");
    const int c_vm = ctx.grid_schema.index_of("VentMode");
    CHECK(grid.value(3, c_hr) == doctest::Approx(85.0));
    CHECK(grid.prov(3, c_hr) == Provenance::Observed);
    CHECK(grid.value(5, c_vm) == 0.0); // "AC" encodes to 0 and wins the mode
    CHECK_FALSE(grid.present(7, c_hr));
    CHECK_FALSE(grid.present(23, c_hr));

    SUBCASE("grid always has exactly 24 rows") {
        CHECK(grid.values.size() == 24 * ctx.grid_schema.size());
    }
    SUBCASE("binning mean lies within the window's inputs") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<RawEvent> evs;
            double lo = 1e9, hi = -1e9;
            const int n = 1 + static_cast<int>(rng.index(6));
            for (int k = 0; k < n; ++k) {
                const double v = rng.uniform(40, 180);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                evs.push_back(num_event("Heart Rate", 2.0 + rng.uniform() * 0.99, v));
            }
            HourlyGrid g;
            g.init("s", ctx.grid_schema.size());
            bin_hourly(evs, ctx.grid_schema, ctx.schema, g);
            const double mean = g.value(2, c_hr);
            CHECK(mean >= lo - 1e-12);
            CHECK(mean <= hi + 1e-12);
        }
    }
    SUBCASE("mode tie-break picks the smallest encoded value") {
        std::vector<RawEvent> evs = {text_event("VentMode", 1.1, "PS"),
                                     text_event("VentMode", 1.2, "SIMV")};
        HourlyGrid g;
        g.init("s", ctx.grid_schema.size());
        bin_hourly(evs, ctx.grid_schema, ctx.schema, g);
        CHECK(g.value(1, c_vm) == 1.0); // SIMV=1 < PS=2
    }
}

TEST_CASE("medication flags follow the lexicon") {
    const auto ctx = test_context();
    SUBCASE("norepinephrine marks the vasopressor hour") {
        const auto flags =
            extract_med_flags({text_event("Medication", 2.4, "Norepinephrine 8 mcg/min")},
                              ctx.lexicon);
        CHECK(flags.vasopressor[2] == 1);
        CHECK(flags.vasopressor[3] == 0);
        CHECK(flags.antibiotic[2] == 0);
    }
    SUBCASE("both-eyes route antibiotics are excluded") {
        const auto flags = extract_med_flags(
            {text_event("Medication", 1.0, "ofloxacin, route OU")}, ctx.lexicon);
        CHECK(std::count(flags.antibiotic.begin(), flags.antibiotic.end(), 1) == 0);
    }
    SUBCASE("intravenous antibiotics are flagged") {
        const auto flags = extract_med_flags(
            {text_event("Medication", 1.0, "Vancomycin 1g, route IV")}, ctx.lexicon);
        CHECK(flags.antibiotic[1] == 1);
    }
    SUBCASE("no medication rows means all-zero flags") {
        const auto flags = extract_med_flags({}, ctx.lexicon);
        CHECK(std::count(flags.vasopressor.begin(), flags.vasopressor.end(), 1) == 0);
        CHECK(std::count(flags.antibiotic.begin(), flags.antibiotic.end(), 1) == 0);
    }
    SUBCASE("dose keys prefer the longest drug-name match") {
        const auto flags = extract_med_flags(
            {num_event("Norepinephrine", 3.0, 0.12, "ug/kg/min")}, ctx.lexicon);
        REQUIRE(flags.max_dose.count("norepinephrine") == 1);
        CHECK(flags.max_dose.count("epinephrine") == 0);
        CHECK(flags.max_dose.at("norepinephrine") == doctest::Approx(0.12));
    }
}

TEST_CASE("urine aliases are summed per hour") {
    const auto ctx = test_context();
    HarmonizeReport report;
    SUBCASE("two aliases in the same hour add up") {
        const auto totals = unify_urine_output(
            {num_event("Urine Output-Foley", 4.2, 50.0), num_event("URINE CATHETER", 4.8, 30.0)},
            ctx.urine_aliases, report);
        REQUIRE(totals.count(4) == 1);
        CHECK(totals.at(4) == doctest::Approx(80.0));
    }
    SUBCASE("single alias passes through") {
        const auto totals = unify_urine_output({num_event("Urine", 6.1, 40.0)},
                                               ctx.urine_aliases, report);
        CHECK(totals.at(6) == doctest::Approx(40.0));
    }
    SUBCASE("no urine rows leaves the column empty") {
        CHECK(unify_urine_output({}, ctx.urine_aliases, report).empty());
    }
    SUBCASE("negative volumes are quarantined") {
        const auto totals = unify_urine_output({num_event("Urine", 2.0, -5.0)},
                                               ctx.urine_aliases, report);
        CHECK(totals.empty());
        CHECK(report.quarantined == 1);
    }
}

TEST_CASE("comorbidity encoding is a 30-bit vector over code prefixes") {
    const auto map = ComorbidityMap::from_json(
        parse_json_text(std::string(defaults::comorbidities_json()), "test"), "test");
    REQUIRE(map.size() == 30);

    SUBCASE("heart failure code sets exactly the CHF bit") {
        const auto bits = encode_comorbidities({"I50.9"}, map);
        REQUIRE(bits.size() == 30);
        std::size_t set = 0;
        for (std::size_t c = 0; c < bits.size(); ++c) {
            if (bits[c]) {
                ++set;
                CHECK(map.condition_names()[c] == "congestive_heart_failure");
            }
        }
        CHECK(set == 1);
    }
    SUBCASE("empty code set gives the zero vector") {
        const auto bits = encode_comorbidities({}, map);
        CHECK(std::count(bits.begin(), bits.end(), 1) == 0);
    }
    SUBCASE("codes matching two conditions set exactly two bits") {
        const auto bits = encode_comorbidities({"I50.9", "E66.9"}, map);
        CHECK(std::count(bits.begin(), bits.end(), 1) == 2);
    }
    SUBCASE("entries are 0/1 only") {
        const auto bits = encode_comorbidities({"I50.9", "I10", "E11.9", "rubbish"}, map);
        for (auto b : bits) CHECK((b == 0 || b == 1));
    }
}

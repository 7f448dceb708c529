#include "icumort/errors.hpp"
#include "icumort/harmonize.hpp"
#include "icumort/impute.hpp"
#include "icumort/rng.hpp"

#include <doctest.h>

using namespace icumort;

namespace {

struct GridFixture {
    GridSchema schema = default_grid_schema();
    ImputeConfig cfg = ImputeConfig::defaults();

    HourlyGrid blank() {
        HourlyGrid g;
        g.init("s", schema.size());
        return g;
    }
    int col(const char* name) const { return schema.index_of(name); }
};

} // namespace

TEST_CASE("relationship imputation fills from clinical identities") {
    GridFixture f;
    SUBCASE("GCS total from components") {
        auto g = f.blank();
        g.set(0, f.col("GCS Eye"), 4, Provenance::Observed);
        g.set(0, f.col("GCS Verbal"), 5, Provenance::Observed);
        g.set(0, f.col("GCS Motor"), 6, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        CHECK(g.value(0, f.col("GCS Total")) == 15.0);
        CHECK(g.prov(0, f.col("GCS Total")) == Provenance::Imputed);
    }
    SUBCASE("RASS 0 maps to a full GCS of 15") {
        auto g = f.blank();
        g.set(2, f.col("RASS"), 0, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        CHECK(g.value(2, f.col("GCS Total")) == 15.0);
        CHECK(g.prov(2, f.col("GCS Total")) == Provenance::Imputed);
    }
    SUBCASE("MAP from systolic and diastolic") {
        auto g = f.blank();
        g.set(1, f.col("SBP"), 120, Provenance::Observed);
        g.set(1, f.col("DBP"), 60, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        CHECK(g.value(1, f.col("MAP")) == doctest::Approx(80.0));
    }
    SUBCASE("hematocrit and hemoglobin round-trip exactly") {
        auto g1 = f.blank();
        g1.set(0, f.col("Hemoglobin"), 10.4, Provenance::Observed);
        impute_relationships(g1, f.schema, f.cfg);
        const double hct = g1.value(0, f.col("Hematocrit"));
        CHECK(hct == doctest::Approx(31.2));

        auto g2 = f.blank();
        g2.set(0, f.col("Hematocrit"), hct, Provenance::Observed);
        impute_relationships(g2, f.schema, f.cfg);
        CHECK(g2.value(0, f.col("Hemoglobin")) == 10.4); // exact under the configured factor
    }
    SUBCASE("bilirubin halves fill from the configured ratio") {
        auto g = f.blank();
        g.set(3, f.col("Bilirubin Total"), 2.0, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        CHECK(g.value(3, f.col("Bilirubin Direct")) == doctest::Approx(0.6));
    }
    SUBCASE("observed cells are never overwritten") {
        Rng rng(11);
        for (int trial = 0; trial < 30; ++trial) {
            auto g = f.blank();
            std::vector<std::pair<std::size_t, double>> observed;
            for (int h = 0; h < kGridHours; ++h) {
                for (std::size_t c = 0; c < f.schema.size(); ++c) {
                    if (rng.uniform() < 0.2) {
                        const double v = rng.uniform(1, 100);
                        g.set(h, static_cast<int>(c), v, Provenance::Observed);
                        observed.emplace_back(g.at(h, static_cast<int>(c)), v);
                    }
                }
            }
            impute_relationships(g, f.schema, f.cfg);
            attach_indicators(g);
            sample_and_hold(g, f.schema, f.cfg);
            for (const auto& [cell, v] : observed) {
                CHECK(g.values[cell] == v);
                CHECK(g.provenance[cell] == Provenance::Observed);
            }
        }
    }
}

TEST_CASE("indicators mark actually-observed cells only") {
    GridFixture f;
    auto g = f.blank();
    g.set(0, f.col("Heart Rate"), 80, Provenance::Observed);
    g.set(0, f.col("SBP"), 120, Provenance::Observed);
    g.set(0, f.col("DBP"), 60, Provenance::Observed);
    impute_relationships(g, f.schema, f.cfg); // imputes MAP
    attach_indicators(g);

    CHECK(g.indicators[g.at(0, f.col("Heart Rate"))] == 1);
    CHECK(g.indicators[g.at(0, f.col("MAP"))] == 0); // imputed, not observed
    for (int h = 0; h < kGridHours; ++h) {
        CHECK(g.indicators[g.at(h, f.col("Lactate"))] == 0); // fully missing column
    }
}

TEST_CASE("sample-and-hold horizons: 12 h for variables, 24 h for medications") {
    GridFixture f;
    SUBCASE("a lab value holds for 12 hours then stays missing") {
        auto g = f.blank();
        g.set(0, f.col("Lactate"), 5.0, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        attach_indicators(g);
        sample_and_hold(g, f.schema, f.cfg);
        for (int h = 1; h <= 12; ++h) {
            CHECK(g.value(h, f.col("Lactate")) == 5.0);
            CHECK(g.prov(h, f.col("Lactate")) == Provenance::Imputed);
        }
        CHECK_FALSE(g.present(13, f.col("Lactate")));
    }
    SUBCASE("a medication flag holds through hour 23") {
        auto g = f.blank();
        g.set(0, f.col("Vasopressor"), 1.0, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        attach_indicators(g);
        sample_and_hold(g, f.schema, f.cfg);
        for (int h = 1; h <= 23; ++h) CHECK(g.value(h, f.col("Vasopressor")) == 1.0);
    }
    SUBCASE("no prior observation leaves the cell missing") {
        auto g = f.blank();
        g.set(10, f.col("BUN"), 22.0, Provenance::Observed);
        impute_relationships(g, f.schema, f.cfg);
        attach_indicators(g);
        sample_and_hold(g, f.schema, f.cfg);
        for (int h = 0; h < 10; ++h) CHECK_FALSE(g.present(h, f.col("BUN")));
    }
    SUBCASE("property: a hold never crosses a gap longer than its horizon") {
        GridFixture fx;
        Rng rng(23);
        // columns with no relationship donors, so every imputed cell is a hold
        const char* candidates[] = {"Lactate", "BUN", "WBC", "Sodium", "Glucose", "Vasopressor",
                                    "Antibiotic"};
        for (int trial = 0; trial < 200; ++trial) {
            auto g = fx.blank();
            const int c = fx.col(candidates[rng.index(std::size(candidates))]);
            const int horizon = fx.schema.columns[c].is_medication ? fx.cfg.hold_hours_medication
                                                                   : fx.cfg.hold_hours_other;
            std::vector<int> observed_hours;
            for (int h = 0; h < kGridHours; ++h) {
                if (rng.uniform() < 0.15) {
                    g.set(h, c, rng.uniform(1, 50), Provenance::Observed);
                    observed_hours.push_back(h);
                }
            }
            impute_relationships(g, fx.schema, fx.cfg);
            attach_indicators(g);
            sample_and_hold(g, fx.schema, fx.cfg);
            for (int h = 0; h < kGridHours; ++h) {
                if (g.prov(h, c) != Provenance::Imputed) continue;
                int last = -1;
                for (int o : observed_hours) {
                    if (o < h) last = o;
                }
                REQUIRE(last >= 0); // a hold needs a source
                CHECK(h - last <= horizon);
            }
        }
    }
}

TEST_CASE("train-set fills and normalization") {
    GridFixture f;
    const int c_hr = f.col("Heart Rate");

    std::vector<HourlyGrid> train;
    for (int k = 0; k < 2; ++k) {
        auto g = f.blank();
        g.set(0, c_hr, k == 0 ? 80.0 : 88.0, Provenance::Observed);
        g.set(1, f.col("VentMode"), k == 0 ? 0.0 : 2.0, Provenance::Observed);
        resume_stage(g, GridStage::Held);
        train.push_back(g);
    }

    FillStats stats = fit_fill(train, f.schema);
    SUBCASE("continuous cells fill with the training mean") {
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        CHECK(g.value(5, c_hr) == doctest::Approx(84.0));
        CHECK(g.prov(5, c_hr) == Provenance::Imputed);
    }
    SUBCASE("binary flags fill with zero") {
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        CHECK(g.value(3, f.col("Vasopressor")) == 0.0);
    }
    SUBCASE("categorical cells fill with the training mode (smallest on ties)") {
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        CHECK(g.value(7, f.col("VentMode")) == 0.0);
    }
    SUBCASE("no missing cells remain after apply_fill") {
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        for (auto p : g.provenance) CHECK(p != Provenance::Missing);
    }
    SUBCASE("validation rows cannot influence the statistics") {
        auto val_grid = f.blank();
        val_grid.set(0, c_hr, 999.0, Provenance::Observed);
        FillStats again = fit_fill(train, f.schema);
        CHECK(again.fill_value[static_cast<std::size_t>(c_hr)] ==
              stats.fill_value[static_cast<std::size_t>(c_hr)]);
    }
    SUBCASE("unfitted stats are a usage error") {
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        FillStats empty;
        CHECK_THROWS_AS(apply_fill(g, f.schema, empty), usage_error);
    }

    SUBCASE("normalizer z-scores continuous columns with training statistics") {
        std::vector<HourlyGrid> filled = train;
        for (auto& g : filled) apply_fill(g, f.schema, stats);
        Normalizer norm = fit_normalizer(filled, f.schema, f.cfg);

        auto g = f.blank();
        g.set(0, c_hr, 92.0, Provenance::Observed);
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        apply_normalizer(g, f.schema, norm);
        // train column values are 80 and 88 in hour 0, 84 everywhere else
        const double mean = norm.mean[static_cast<std::size_t>(c_hr)];
        const double sd = norm.stddev[static_cast<std::size_t>(c_hr)];
        CHECK(g.value(0, c_hr) == doctest::Approx((92.0 - mean) / sd));

        // transformed training columns have mean ~0, population std ~1
        double sum = 0, sumsq = 0;
        std::size_t n = 0;
        for (auto gt : filled) {
            apply_normalizer(gt, f.schema, norm);
            for (int h = 0; h < kGridHours; ++h) {
                sum += gt.value(h, c_hr);
                sumsq += gt.value(h, c_hr) * gt.value(h, c_hr);
                ++n;
            }
        }
        const double m = sum / static_cast<double>(n);
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(std::sqrt(sumsq / static_cast<double>(n) - m * m) - 1.0) < 1e-9);
    }
    SUBCASE("constant training columns pass through flagged") {
        std::vector<HourlyGrid> filled = train;
        for (auto& g : filled) apply_fill(g, f.schema, stats);
        Normalizer norm = fit_normalizer(filled, f.schema, f.cfg);
        const int c_lact = f.col("Lactate"); // never observed: constant fill
        CHECK(norm.passthrough[static_cast<std::size_t>(c_lact)] == 1);
        auto g = f.blank();
        resume_stage(g, GridStage::Held);
        apply_fill(g, f.schema, stats);
        const double before = g.value(0, c_lact);
        apply_normalizer(g, f.schema, norm);
        CHECK(g.value(0, c_lact) == before);
    }
}

TEST_CASE("the imputation stages enforce their order") {
    GridFixture f;
    auto g = f.blank();
    SUBCASE("sample-and-hold before indicators is rejected") {
        CHECK_THROWS_AS(sample_and_hold(g, f.schema, f.cfg), usage_error);
    }
    SUBCASE("the canonical order yields the expected checksum") {
        impute_relationships(g, f.schema, f.cfg);
        attach_indicators(g);
        sample_and_hold(g, f.schema, f.cfg);
        CHECK(g.stage_checksum == expected_stage_checksum(GridStage::Held));
        FillStats stats = fit_fill({g}, f.schema);
        apply_fill(g, f.schema, stats);
        Normalizer norm = fit_normalizer({g}, f.schema, f.cfg);
        apply_normalizer(g, f.schema, norm);
        CHECK(g.stage_checksum == expected_stage_checksum(GridStage::Normalized));
    }
}

TEST_CASE("truncate_pad shapes sequences to exactly 24 steps") {
    auto make_seq = [](std::size_t steps) {
        SequenceGrid s;
        s.stay_id = "x";
        s.n_columns = 2;
        s.n_steps = steps;
        s.values.assign(steps * 2, 1.0);
        s.provenance.assign(steps * 2, Provenance::Observed);
        return s;
    };
    SUBCASE("30 steps truncate to 24") {
        const auto g = truncate_pad(make_seq(30));
        CHECK(g.values.size() == 24 * 2);
        for (int h = 0; h < 24; ++h) CHECK(g.present(h, 0));
    }
    SUBCASE("24 steps are unchanged") {
        const auto g = truncate_pad(make_seq(24));
        for (int h = 0; h < 24; ++h) CHECK(g.value(h, 1) == 1.0);
    }
    SUBCASE("10 steps pad with 14 missing rows") {
        const auto g = truncate_pad(make_seq(10));
        for (int h = 0; h < 10; ++h) CHECK(g.present(h, 0));
        for (int h = 10; h < 24; ++h) CHECK_FALSE(g.present(h, 0));
    }
}

#include "icumort/risk_scores.hpp"

#include <doctest.h>

using namespace icumort;
using scores::ClinicalSnapshot;

namespace {

ClinicalSnapshot normal_snapshot() {
    ClinicalSnapshot s;
    s.put("temperature", 36.6); // inside every table's zero band
    s.put("map", 85.0);
    s.put("heart_rate", 80.0);
    s.put("resp_rate", 16.0);
    s.put("sbp", 120.0);
    s.put("sodium", 140.0);
    s.put("potassium", 4.2);
    s.put("creatinine", 1.0);
    s.put("hematocrit", 40.0);
    s.put("wbc", 8.0);
    s.put("gcs", 15.0);
    s.put("ph", 7.40);
    s.put("bicarbonate", 24.0);
    s.put("bun", 15.0);
    s.put("bilirubin", 0.8);
    s.put("platelets", 250.0);
    s.put("pao2", 95.0);
    s.put("paco2", 40.0);
    s.put("fio2", 0.21);
    s.put("pf_ratio", 95.0 / 0.21);
    s.put("urine_24h_ml", 2600.0);
    s.put("urine_24h_l", 2.6);
    s.put("age", 35.0);
    s.put("preicu_hours", 20.0);
    s.admission_type = "scheduled_surgical";
    return s;
}

} // namespace

TEST_CASE("SOFA") {
    SUBCASE("all-normal snapshot scores zero") {
        CHECK(scores::compute_sofa(normal_snapshot()) == 0);
    }
    SUBCASE("two points in each of six organ systems scores 12") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["pf_ratio"] = {250.0, 250.0};   // respiration 2
        s.inputs["platelets"] = {80.0, 80.0};    // coagulation 2
        s.inputs["bilirubin"] = {2.5, 2.5};      // liver 2
        s.vaso_dose["dopamine"] = 4.0;           // cardiovascular 2
        s.inputs["gcs"] = {12.0, 12.0};          // cns 2
        s.inputs["creatinine"] = {2.5, 2.5};     // renal 2
        CHECK(scores::compute_sofa(s) == 12);
    }
    SUBCASE("a GCS of 3 alone scores 4") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["gcs"] = {3.0, 3.0};
        CHECK(scores::compute_sofa(s) == 4);
    }
    SUBCASE("an empty snapshot scores the published minimum") {
        CHECK(scores::compute_sofa(ClinicalSnapshot{}) == 0);
    }
    SUBCASE("low P/F without respiratory support caps at 2") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["pf_ratio"] = {80.0, 80.0};
        s.ventilated = false;
        CHECK(scores::compute_sofa(s) == 2);
        s.ventilated = true;
        CHECK(scores::compute_sofa(s) == 4);
    }
}

TEST_CASE("SAPS-II") {
    SUBCASE("young, normal physiology, scheduled surgery scores zero") {
        CHECK(scores::compute_saps2(normal_snapshot()) == 0);
    }
    SUBCASE("age 76 adds exactly 16 points over the under-40 case") {
        ClinicalSnapshot s = normal_snapshot();
        const int base = scores::compute_saps2(s);
        s.inputs["age"] = {76.0, 76.0};
        CHECK(scores::compute_saps2(s) - base == 16);
    }
    SUBCASE("worst GCS below 6 contributes the table maximum of 26") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["gcs"] = {5.0, 14.0};
        CHECK(scores::compute_saps2(s) == 26);
    }
    SUBCASE("P/F only counts on ventilatory support") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["pf_ratio"] = {150.0, 150.0};
        CHECK(scores::compute_saps2(s) == 0);
        s.ventilated = true;
        CHECK(scores::compute_saps2(s) == 9);
    }
    SUBCASE("the worst chronic disease wins") {
        ClinicalSnapshot s = normal_snapshot();
        s.metastatic_cancer = true; // 9
        s.aids = true;              // 17
        CHECK(scores::compute_saps2(s) == 17);
    }
    SUBCASE("empty snapshot scores the minimum") {
        CHECK(scores::compute_saps2(ClinicalSnapshot{}) == 0);
    }
}

TEST_CASE("OASIS") {
    SUBCASE("minimal-risk snapshot scores zero") {
        // age < 24, everything else in the zero bands
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["age"] = {20.0, 20.0};
        CHECK(scores::compute_oasis(s) == 0);
    }
    SUBCASE("mechanical ventilation adds exactly 9") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["age"] = {20.0, 20.0};
        s.ventilated = true;
        CHECK(scores::compute_oasis(s) == 9);
    }
    SUBCASE("age bands move the score by the published points") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["age"] = {20.0, 20.0};
        const int base = scores::compute_oasis(s);
        s.inputs["age"] = {60.0, 60.0};
        CHECK(scores::compute_oasis(s) - base == 6);
        s.inputs["age"] = {80.0, 80.0};
        CHECK(scores::compute_oasis(s) - base == 9);
    }
    SUBCASE("empty snapshot scores the minimum") {
        CHECK(scores::compute_oasis(ClinicalSnapshot{}) == 0);
    }
}

TEST_CASE("APACHE-II") {
    SUBCASE("normal physiology under 45 scores zero") {
        CHECK(scores::compute_apache2(normal_snapshot()) == 0);
    }
    SUBCASE("GCS deficit contributes 15 minus GCS") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["gcs"] = {6.0, 6.0};
        CHECK(scores::compute_apache2(s) == 9);
    }
    SUBCASE("creatinine points double with acute renal failure") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["creatinine"] = {2.2, 2.2}; // 3 points
        CHECK(scores::compute_apache2(s) == 3);
        s.acute_renal_failure = true;
        CHECK(scores::compute_apache2(s) == 6);
    }
    SUBCASE("oxygenation switches to the alveolar-arterial gradient at high FiO2") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["pao2"] = {60.0, 60.0}; // 3 points on the low-FiO2 branch
        s.inputs["fio2"] = {0.21, 0.21};
        CHECK(scores::compute_apache2(s) == 3);
        s.inputs["fio2"] = {0.6, 0.6};
        s.inputs["aado2"] = {380.0, 380.0}; // 3 points on the A-a branch
        CHECK(scores::compute_apache2(s) == 3);
        s.inputs["aado2"] = {150.0, 150.0}; // 0 points
        CHECK(scores::compute_apache2(s) == 0);
    }
    SUBCASE("chronic health points depend on admission category") {
        ClinicalSnapshot s = normal_snapshot();
        s.severe_organ_insufficiency = true;
        s.admission_type = "scheduled_surgical";
        CHECK(scores::compute_apache2(s) == 2);
        s.admission_type = "medical";
        CHECK(scores::compute_apache2(s) == 5);
    }
}

TEST_CASE("derived indices") {
    SUBCASE("SIRS counts each criterion once") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["temperature"] = {36.6, 39.0};
        s.inputs["heart_rate"] = {80.0, 100.0};
        s.inputs["resp_rate"] = {16.0, 24.0};
        s.inputs["wbc"] = {8.0, 15.0};
        CHECK(scores::compute_derived(s).sirs == 4);
    }
    SUBCASE("SIRS alternative limbs: low PaCO2 or low WBC") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["paco2"] = {30.0, 40.0};
        s.inputs["wbc"] = {3.0, 8.0};
        CHECK(scores::compute_derived(s).sirs == 2);
    }
    SUBCASE("shock index and P/F from the snapshot extremes") {
        ClinicalSnapshot s = normal_snapshot();
        s.inputs["shock_index"] = {0.55, 80.0 / 120.0};
        s.inputs["pf_ratio"] = {200.0, 410.0};
        const auto d = scores::compute_derived(s);
        REQUIRE(d.shock_index.has_value());
        CHECK(*d.shock_index == doctest::Approx(0.6667).epsilon(1e-3));
        REQUIRE(d.pf_ratio.has_value());
        CHECK(*d.pf_ratio == doctest::Approx(200.0));
    }
    SUBCASE("absent components stay absent") {
        const auto d = scores::compute_derived(ClinicalSnapshot{});
        CHECK(d.sirs == 0);
        CHECK_FALSE(d.shock_index.has_value());
        CHECK_FALSE(d.pf_ratio.has_value());
    }
}

TEST_CASE("scores are pure functions of the snapshot") {
    // worst-in-window reductions make event order irrelevant: feeding the
    // same values in different orders yields identical extremes
    ClinicalSnapshot a, b;
    for (double v : {80.0, 120.0, 95.0}) a.put("heart_rate", v);
    for (double v : {95.0, 80.0, 120.0}) b.put("heart_rate", v);
    CHECK(a.get("heart_rate")->min == b.get("heart_rate")->min);
    CHECK(a.get("heart_rate")->max == b.get("heart_rate")->max);
    CHECK(scores::compute_apache2(a) == scores::compute_apache2(b));
}

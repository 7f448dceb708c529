#include "icumort/errors.hpp"
#include "icumort/ingest.hpp"
#include "icumort/metrics.hpp"
#include "icumort/schema.hpp"
#include "icumort/synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace icumort;

namespace {

SchemaMap map_from(const char* text) { return SchemaMap::from_json(json::parse(text), "test"); }

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
}

} // namespace

TEST_CASE("schema map resolves canonical names") {
    SchemaMap m = map_from(R"({"variables": {"heartrate": "Heart Rate"}})");
    CHECK(m.canonical_variable("heartrate") == "Heart Rate");
    CHECK(m.canonical_variable("unmapped_thing") == "unmapped_thing");
}

TEST_CASE("two source columns mapping to one canonical name is a configuration error") {
    try {
        map_from(R"({"variables": {"hr": "Heart Rate", "heartrate": "Heart Rate"}})");
        FAIL("expected config_error");
    } catch (const config_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("hr") != std::string::npos);
        CHECK(msg.find("heartrate") != std::string::npos);
        CHECK(msg.find("Heart Rate") != std::string::npos);
    }
}

TEST_CASE("unit crosswalk entries are algebraic inverses") {
    SchemaMap m = map_from(R"({
        "canonical_units": {"Temperature": "degC"},
        "units": [{"variable": "*", "from": "degF", "to": "degC",
                   "scale": 0.5555555555555556, "offset": -17.77777777777778}]
    })");
    const UnitConversion* c = m.find_conversion("Temperature", "degF");
    REQUIRE(c != nullptr);
    for (double x : {-40.0, 0.0, 36.6, 98.6, 212.0}) {
        CHECK(std::abs(c->invert(c->apply(x)) - x) < 1e-9);
    }
    CHECK(c->apply(98.6) == doctest::Approx(37.0).epsilon(1e-9));
}

TEST_CASE("assembly applies the 24 hour rule and labels deaths after it") {
    SchemaMap m = map_from(R"({"variables": {}})");
    std::vector<StaticsRow> statics;
    auto stay = [&](const char* id, double los, std::optional<double> death) {
        StaticsRow r;
        r.stay_id = id;
        r.age = 60;
        r.sex = "F";
        r.race = "White";
        r.ethnicity = "Non Hispanic";
        r.los_hours = los;
        r.death_offset_h = death;
        return r;
    };
    statics.push_back(stay("s1", 20.0, std::nullopt));  // excluded: short stay
    statics.push_back(stay("s2", 30.0, 30.0));          // death at hour 30
    statics.push_back(stay("s3", 100.0, std::nullopt)); // survivor
    statics.push_back(stay("s4", 30.0, 20.0));          // contradictory label info

    std::vector<RawEvent> events;
    RawEvent e;
    e.stay_id = "s2";
    e.variable = "hr";
    e.time_offset_h = 2.0;
    e.value_numeric = 80.0;
    events.push_back(e);
    e.time_offset_h = 25.0; // after the input window
    events.push_back(e);
    e.stay_id = "ghost";
    e.time_offset_h = 1.0;
    events.push_back(e);

    IngestReport report;
    const auto stays = assemble_stays(events, statics, m, report);

    REQUIRE(stays.size() == 2);
    CHECK(stays[0].stay_id == "s2"); // sorted by id
    CHECK(stays[0].died_inpatient);
    CHECK(stays[0].time_to_death_hours == doctest::Approx(30.0));
    CHECK(stays[0].events.size() == 1);
    CHECK_FALSE(stays[1].died_inpatient);

    // count conservation: input = returned + short + malformed
    CHECK(report.input_stays == 4);
    CHECK(report.excluded_short_stay == 1);
    CHECK(report.malformed == 1);
    CHECK(report.returned == 2);
    CHECK(report.input_stays == report.returned + report.excluded_short_stay + report.malformed);
    CHECK(report.events_unknown_stay == 1);
    CHECK(report.events_dropped_late == 1);
}

TEST_CASE("assembly is pure: same inputs give identical output") {
    SchemaMap m = map_from(R"({"variables": {}})");
    std::vector<StaticsRow> statics;
    for (const char* id : {"b", "a", "c"}) {
        StaticsRow r;
        r.stay_id = id;
        r.los_hours = 48;
        statics.push_back(r);
    }
    IngestReport r1, r2;
    const auto s1 = assemble_stays({}, statics, m, r1);
    const auto s2 = assemble_stays({}, statics, m, r2);
    REQUIRE(s1.size() == s2.size());
    CHECK(s1[0].stay_id == "a");
    CHECK(s1[1].stay_id == "b");
    CHECK(s1[2].stay_id == "c");
}

TEST_CASE("synthetic cohort is deterministic and hits the death count exactly") {
    const std::string dir = temp_dir("icumort_synth_test");
    GenConfig cfg = GenConfig::defaults();
    cfg.n_stays = 300;
    cfg.mortality_rate = 0.06;
    cfg.seed = 7;

    SynthPaths a{dir + "/e1.csv", dir + "/s1.csv", dir + "/n1.csv"};
    SynthPaths b{dir + "/e2.csv", dir + "/s2.csv", dir + "/n2.csv"};
    generate_synthetic_cohort(cfg, a);
    generate_synthetic_cohort(cfg, b);
    CHECK(slurp(a.events_csv) == slurp(b.events_csv));
    CHECK(slurp(a.statics_csv) == slurp(b.statics_csv));
    CHECK(slurp(a.notes_csv) == slurp(b.notes_csv));

    const auto statics = read_statics_csv(a.statics_csv);
    std::size_t deaths = 0, eligible = 0;
    for (const auto& s : statics) {
        if (s.los_hours >= 24) {
            ++eligible;
            if (s.death_offset_h) ++deaths;
        }
    }
    CHECK(eligible == 300);
    CHECK(deaths == 18); // ceil(300 * 0.06)
    std::filesystem::remove_all(dir);
}

TEST_CASE("a dominant lactate coefficient makes lactate alone discriminative") {
    const std::string dir = temp_dir("icumort_synth_signal");
    GenConfig cfg;
    cfg.n_stays = 600;
    cfg.mortality_rate = 0.10;
    cfg.seed = 3;
    cfg.signal_spec = {{"lactate", 4.0}};
    SynthPaths out{dir + "/e.csv", dir + "/s.csv", dir + "/n.csv"};
    generate_synthetic_cohort(cfg, out);

    const auto statics = read_statics_csv(out.statics_csv);
    std::map<std::string, int> label;
    for (const auto& s : statics) {
        if (s.los_hours >= 24) label[s.stay_id] = s.death_offset_h ? 1 : 0;
    }
    std::map<std::string, double> worst;
    for (const auto& e : read_events_csv(out.events_csv)) {
        if (e.variable != "lactate" || !e.value_numeric) continue;
        auto it = worst.find(e.stay_id);
        if (it == worst.end()) worst[e.stay_id] = *e.value_numeric;
        else it->second = std::max(it->second, *e.value_numeric);
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& [id, y] : label) {
        scores.push_back(worst.count(id) ? worst[id] : 0.0);
        labels.push_back(y);
    }
    const auto auc = metrics::auroc(scores, labels);
    REQUIRE(auc.has_value());
    CHECK(*auc > 0.8);
    std::filesystem::remove_all(dir);
}

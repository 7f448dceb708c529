#pragma once

#include "icumort/harmonize.hpp"
#include "icumort/jsonio.hpp"
#include "icumort/types.hpp"

#include <map>
#include <optional>
#include <string>

namespace icumort::scores {

struct Extremes {
    double min = 0;
    double max = 0;
};

// Worst-in-24h inputs for the published severity scores. Extremes hold the
// lowest and highest value seen in the window; the tables pick whichever side
// is relevant. Absent inputs contribute zero points.
struct ClinicalSnapshot {
    std::map<std::string, Extremes> inputs; // temperature, map, heart_rate, ...
    std::map<std::string, double> vaso_dose; // drug key -> max ug/kg/min
    bool ventilated = false;
    bool acute_renal_failure = false;
    bool metastatic_cancer = false;
    bool hematologic_malignancy = false;
    bool aids = false;
    bool severe_organ_insufficiency = false;
    std::string admission_type; // "", medical, scheduled_surgical, unscheduled_surgical

    std::optional<Extremes> get(const std::string& name) const {
        auto it = inputs.find(name);
        if (it == inputs.end()) return std::nullopt;
        return it->second;
    }
    void put(const std::string& name, double v) {
        auto [it, inserted] = inputs.emplace(name, Extremes{v, v});
        if (!inserted) {
            it->second.min = std::min(it->second.min, v);
            it->second.max = std::max(it->second.max, v);
        }
    }
};

// Point tables loaded from the versioned data file; the scoring engine in
// this module holds no clinical constants of its own.
class ScoreTables {
public:
    static ScoreTables from_json(const json& doc, const std::string& origin);
    static const ScoreTables& builtin();

    int sofa(const ClinicalSnapshot& s) const;
    int saps2(const ClinicalSnapshot& s) const;
    int oasis(const ClinicalSnapshot& s) const;
    int apache2(const ClinicalSnapshot& s) const;
    int sirs(const ClinicalSnapshot& s) const;

private:
    json doc_;
    int score_components(const json& components, const ClinicalSnapshot& s) const;
};

struct RiskScorePanel {
    int sofa = 0;
    int saps2 = 0;
    int oasis = 0;
    int apache2 = 0;
    int sirs = 0;
    std::optional<double> shock_index;
    std::optional<double> pf_ratio;
};

int compute_sofa(const ClinicalSnapshot& s);
int compute_saps2(const ClinicalSnapshot& s);
int compute_oasis(const ClinicalSnapshot& s);
int compute_apache2(const ClinicalSnapshot& s);

struct DerivedIndices {
    int sirs = 0;
    std::optional<double> shock_index; // worst hourly HR / SBP
    std::optional<double> pf_ratio;    // worst hourly PaO2 / FiO2, FiO2 as fraction
};

DerivedIndices compute_derived(const ClinicalSnapshot& s);

RiskScorePanel compute_panel(const ClinicalSnapshot& s);

// Builds the snapshot from a harmonized grid (values present after
// sample-and-hold; mean-filled values would distort the extremes, so this
// runs before the fill stage). Derived per-hour series (P/F, shock index,
// A-a gradient) use values co-observed in the same hour.
ClinicalSnapshot build_snapshot(const HourlyGrid& grid, const GridSchema& schema,
                                const StayRecord& stay, const MedFlags& meds,
                                const ComorbidityMap& comorbidities);

} // namespace icumort::scores

#include "icumort/report.hpp"

#include <fmt/core.h>

namespace icumort::report {

std::string cell(const metrics::MetricValue& v) {
    if (!v.present) return "-";
    if (v.ci) return fmt::format("{:.3f} ({:.3f}-{:.3f})", v.point, v.ci->lo, v.ci->hi);
    return fmt::format("{:.3f}", v.point);
}

std::string render_table(const std::string& title, const std::vector<Row>& rows) {
    static const char* kHeaders[] = {"Model",       "ACC",   "PRC", "F-1",  "SPE",
                                     "AUROC",       "AUPRC", "MCC", "Brier"};
    std::vector<std::vector<std::string>> cells;
    cells.emplace_back(std::begin(kHeaders), std::end(kHeaders));
    for (const auto& row : rows) {
        const auto& r = row.report;
        cells.push_back({row.label, cell(r.accuracy), cell(r.precision), cell(r.f1),
                         cell(r.specificity), cell(r.auroc), cell(r.auprc), cell(r.mcc),
                         cell(r.brier)});
    }

    std::vector<std::size_t> widths(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            widths[c] = std::max(widths[c], row[c].size());
        }
    }
    std::string out = title + "\n";
    for (std::size_t ri = 0; ri < cells.size(); ++ri) {
        std::string line;
        for (std::size_t c = 0; c < cells[ri].size(); ++c) {
            line += fmt::format("{:<{}}", cells[ri][c], widths[c] + 2);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
        if (ri == 0) {
            std::string rule;
            for (std::size_t c = 0; c < widths.size(); ++c) {
                rule += std::string(widths[c], '-') + "  ";
            }
            while (!rule.empty() && rule.back() == ' ') rule.pop_back();
            out += rule + "\n";
        }
    }
    return out;
}

} // namespace icumort::report

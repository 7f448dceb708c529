#pragma once

#include "icumort/metrics.hpp"

#include <string>
#include <vector>

namespace icumort::report {

// "0.916 (0.904-0.925)" with fixed 3-decimal formatting; "-" when absent.
std::string cell(const metrics::MetricValue& v);

struct Row {
    std::string label;
    metrics::MetricReport report;
};

// Plain-text metrics table, one row per model variant, in the given order.
std::string render_table(const std::string& title, const std::vector<Row>& rows);

} // namespace icumort::report

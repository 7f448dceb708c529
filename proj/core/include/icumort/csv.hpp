#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace icumort::csv {

// RFC-4180 style CSV: comma separated, double-quote quoting, quotes escaped by
// doubling, quoted fields may contain commas and newlines. All pipeline
// intermediates are CSV so they stay diffable.

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const; // -1 when absent
    int require_column(std::string_view name, std::string_view file_hint) const;
};

Table read_file(const std::string& path);

// Streaming row reader for large files; returns false when the callback asks
// to stop. Header is passed first, then each record.
void for_each_row(const std::string& path,
                  const std::function<void(const std::vector<std::string>& header)>& on_header,
                  const std::function<bool(const std::vector<std::string>& row)>& on_row);

class Writer {
public:
    explicit Writer(const std::string& path);
    ~Writer();
    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    void write_row(const std::vector<std::string>& fields);
    void close();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    void* stream_ = nullptr; // FILE*, buffered
};

std::string quote_field(std::string_view field);

// Numeric formatting helpers shared by every writer so artifacts are stable.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);

} // namespace icumort::csv

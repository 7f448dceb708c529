#include "icumort/csv.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace icumort::csv {

namespace {

// Splits the whole file in one pass. Quoted fields may span lines, so this is
// a small state machine rather than a getline loop. Field strings in the
// output vector are reused across records to avoid per-row allocations.
class Parser {
public:
    Parser(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

    bool next_record(std::vector<std::string>& out) {
        if (pos_ >= buf_.size()) return false;
        std::size_t field = 0;
        auto cur = [&]() -> std::string& {
            if (field >= out.size()) out.emplace_back();
            return out[field];
        };
        cur().clear();
        bool in_quotes = false;
        bool saw_any = false;
        while (pos_ < buf_.size()) {
            char c = buf_[pos_];
            if (in_quotes) {
                if (c == '"') {
                    if (pos_ + 1 < buf_.size() && buf_[pos_ + 1] == '"') {
                        cur().push_back('"');
                        pos_ += 2;
                    } else {
                        in_quotes = false;
                        ++pos_;
                    }
                } else {
                    cur().push_back(c);
                    ++pos_;
                }
                continue;
            }
            switch (c) {
            case '"':
                in_quotes = true;
                saw_any = true;
                ++pos_;
                break;
            case ',':
                ++field;
                cur().clear();
                saw_any = true;
                ++pos_;
                break;
            case '\r':
                ++pos_;
                break;
            case '\n':
                ++pos_;
                out.resize(field + 1);
                return true;
            default:
                cur().push_back(c);
                saw_any = true;
                ++pos_;
                break;
            }
        }
        if (in_quotes) {
            throw data_error(fmt::format("{}: unterminated quoted field at end of file", path_));
        }
        if (!saw_any && field == 0 && cur().empty()) return false;
        out.resize(field + 1);
        return true;
    }

private:
    std::string buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error(fmt::format("cannot open file: {}", path));
    std::string buf;
    in.seekg(0, std::ios::end);
    buf.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    return buf;
}

} // namespace

int Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int Table::require_column(std::string_view name, std::string_view file_hint) const {
    int c = column(name);
    if (c < 0) {
        throw data_error(fmt::format("{}: required column '{}' not found", file_hint, name));
    }
    return c;
}

Table read_file(const std::string& path) {
    Parser p(slurp(path), path);
    Table t;
    std::vector<std::string> rec;
    if (!p.next_record(rec)) throw data_error(fmt::format("{}: empty file", path));
    t.header = rec;
    while (p.next_record(rec)) {
        if (rec.size() != t.header.size()) {
            throw data_error(fmt::format("{}: row with {} fields, header has {}", path, rec.size(),
                                         t.header.size()));
        }
        t.rows.push_back(rec);
    }
    return t;
}

void for_each_row(const std::string& path,
                  const std::function<void(const std::vector<std::string>&)>& on_header,
                  const std::function<bool(const std::vector<std::string>&)>& on_row) {
    Parser p(slurp(path), path);
    std::vector<std::string> rec;
    if (!p.next_record(rec)) throw data_error(fmt::format("{}: empty file", path));
    const std::size_t width = rec.size();
    on_header(rec);
    while (p.next_record(rec)) {
        if (rec.size() != width) {
            throw data_error(
                fmt::format("{}: row with {} fields, header has {}", path, rec.size(), width));
        }
        if (!on_row(rec)) break;
    }
}

Writer::Writer(const std::string& path) : path_(path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw data_error(fmt::format("cannot open file for write: {}", path));
    stream_ = f;
}

Writer::~Writer() { close(); }

void Writer::close() {
    if (stream_) {
        std::fclose(static_cast<FILE*>(stream_));
        stream_ = nullptr;
    }
}

void Writer::write_row(const std::vector<std::string>& fields) {
    FILE* f = static_cast<FILE*>(stream_);
    if (!f) throw internal_error("write_row on closed CSV writer");
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line.push_back(',');
        line += quote_field(fields[i]);
    }
    line.push_back('\n');
    std::fwrite(line.data(), 1, line.size(), f);
}

std::string quote_field(std::string_view field) {
    bool needs_quote = field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quote) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_double(double v) {
    // Integers get the fast path; everything else takes the shortest of
    // %.15g / %.16g / %.17g that parses back to the same double.
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        const long long i = static_cast<long long>(v);
        char buf[24];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), i);
        (void)ec;
        return std::string(buf, ptr);
    }
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        int n = std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        auto [ptr, ec] = std::from_chars(buf, buf + n, back);
        (void)ptr;
        if (ec == std::errc{} && back == v) return std::string(buf, static_cast<std::size_t>(n));
    }
    return std::string(buf);
}

std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

} // namespace icumort::csv

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "wlfm/errors.hpp"

namespace wlfm {

/// Shortest round-trip decimal rendering; locale-independent and bit-stable.
inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double out = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        raise(errc::io_error, "bad numeric field '" + std::string(s) + "'");
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

/// Whole-file CSV: header row plus string cells. No quoting; none of the
/// formats written here need it.
struct csv_table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const {
        const int idx = find_column(name);
        if (idx < 0) raise(errc::unknown_curve_name, "no column '" + std::string(name) + "'");
        return idx;
    }

    int find_column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline csv_table read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open " + path.string());
    csv_table t;
    std::string line;
    if (!std::getline(in, line)) raise(errc::io_error, "empty file " + path.string());
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            raise(errc::ragged_columns, path.string() + " row " +
                                            std::to_string(t.rows.size() + 2) + ": expected " +
                                            std::to_string(t.header.size()) + " fields, got " +
                                            std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

class csv_writer {
public:
    explicit csv_writer(const std::filesystem::path& path, bool append = false)
        : out_(path, append ? std::ios::app : std::ios::trunc) {
        if (!out_) raise(errc::io_error, "cannot write " + path.string());
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::ofstream& stream() { return out_; }

private:
    std::ofstream out_;
};

}  // namespace wlfm

#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace popgrid {

/// Project-wide error type; messages carry file/row context where known.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Notices = std::vector<std::string>;

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos)
        return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(trim(cur));
    return out;
}

/// Comma-separated table with a mandatory header row. Fields are plain
/// (no quoting); identifiers in this project never contain commas.
struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return static_cast<int>(i);
        return -1;
    }

    int require_column(const std::string& name) const {
        const int c = column(name);
        if (c < 0)
            throw Error(path + ": missing required column '" + name + "'");
        return c;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open file: " + path);
    CsvTable t;
    t.path = path;
    std::string line;
    if (!std::getline(in, line))
        throw Error(path + ": empty file (header expected)");
    t.header = split_csv_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            throw Error(path + ": row " + std::to_string(lineno) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

inline double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || p != end)
        throw Error(context + ": cannot parse number from '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s, const std::string& context) {
    long long v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || p != end)
        throw Error(context + ": cannot parse integer from '" + s + "'");
    return v;
}

/// Round-trip-safe numeric formatting used by every writer, so reruns with
/// identical inputs produce byte-identical files.
inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string join_csv(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i)
            out.push_back(',');
        out += fields[i];
    }
    return out;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write file: " + path);
    return out;
}

} // namespace popgrid

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cqt/common.hpp"

namespace cqt {

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const {
        for (size_t c = 0; c < columns.size(); ++c)
            if (columns[c] == name) return static_cast<int>(c);
        return -1;
    }
    int require_col(const std::string& name) const {
        const int c = col(name);
        if (c < 0) throw IoError("missing required column: " + name);
        return c;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Plain comma-separated values, header row required; leading '#' lines are
// treated as comments.
inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_csv_line(line);
        if (!have_header) {
            t.columns = std::move(fields);
            have_header = true;
        } else {
            if (fields.size() != t.columns.size())
                throw IoError(path + ": ragged row with " +
                              std::to_string(fields.size()) + " fields");
            t.rows.push_back(std::move(fields));
        }
    }
    if (!have_header) throw IoError(path + ": no header row");
    return t;
}

inline double parse_double(const std::string& s) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw IoError("trailing characters in number: " + s);
        return v;
    } catch (const std::exception&) {
        throw IoError("cannot parse number: " + s);
    }
}

// Shortest-roundtrip-ish fixed formatting keeps artifact bytes deterministic
// across runs on the same build.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header_comment)
        : out_(path) {
        if (!out_) throw IoError("cannot write " + path);
        if (!header_comment.empty()) out_ << "# " << header_comment << "\n";
    }

    void header(const std::vector<std::string>& cols) { row_strings(cols); }

    void row_strings(const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

    std::ostream& stream() { return out_; }

private:
    std::ofstream out_;
};

// 64-bit FNV-1a, used to stamp artifacts with a config fingerprint.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace cqt

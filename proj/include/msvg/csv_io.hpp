#pragma once

#include <Eigen/Dense>

#include <msvg/errors.hpp>

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

namespace msvg {

// Locale-independent parse of one CSV field ('.' decimal point). Leading and
// trailing blanks are tolerated; an optional leading '+' is accepted even
// though from_chars itself rejects it.
inline double parse_csv_field(const std::string& field, int line_no) {
    std::size_t b = field.find_first_not_of(" \t");
    std::size_t e = field.find_last_not_of(" \t\r");
    if (b == std::string::npos)
        throw InputError("line " + std::to_string(line_no) + ": empty field");
    if (field[b] == '+') ++b;
    double value = 0.0;
    const char* first = field.data() + b;
    const char* last = field.data() + e + 1;
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc{} || res.ptr != last)
        throw InputError("line " + std::to_string(line_no) + ": cannot parse number '" +
                         field.substr(b, e - b + 1) + "'");
    return value;
}

// Reads a rectangular numeric CSV: one observation per row, comma-separated,
// no header unless skip_header is set. Ragged or non-numeric rows fail with
// the offending line number. An empty file yields a 0 x 0 matrix.
inline Eigen::MatrixXd read_csv(const std::string& path, bool skip_header = false) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "' for reading");
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    Eigen::Index d = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (skip_header && line_no == 1) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            const std::string cell = line.substr(start, comma - start);
            fields.push_back(parse_csv_field(cell, line_no));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (d < 0) d = static_cast<Eigen::Index>(fields.size());
        if (static_cast<Eigen::Index>(fields.size()) != d)
            throw InputError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(d) + " fields, got " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), d < 0 ? 0 : d);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return out;
}

// Shortest round-trip decimal form of a double, locale-independent.
inline std::string format_double(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

inline void write_csv(const std::string& path, const Eigen::MatrixXd& data) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            if (j) out << ',';
            out << format_double(data(i, j));
        }
        out << '\n';
    }
    if (!out) throw InputError("failed writing '" + path + "'");
}

} // namespace msvg

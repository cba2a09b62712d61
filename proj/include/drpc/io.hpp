#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace drpc {

// Shortest decimal representation that round-trips the exact double.
// All file formats (checkpoints, CSV) go through this so that reload is
// bit-exact and repeated runs produce byte-identical output.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) {
        throw std::runtime_error("not a number: '" + s + "'");
    }
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return f;
}

inline void write_values(std::ostream& os, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (i) os << ' ';
        os << fmt_double(p[i]);
    }
    os << '\n';
}

inline void read_values(std::istream& is, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!(is >> p[i])) throw std::runtime_error("checkpoint truncated");
    }
}

} // namespace drpc

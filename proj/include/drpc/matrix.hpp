#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace drpc {

using Vec = std::vector<double>;

// Dense row-major matrix, sized for desk-scale nets and cluster state.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// y = m x
inline Vec matvec(const Matrix& m, const Vec& x) {
    if (x.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        const double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

// y = m^T x
inline Vec matvec_t(const Matrix& m, const Vec& x) {
    if (x.size() != m.rows) throw std::invalid_argument("matvec_t: dimension mismatch");
    Vec y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * x[i];
    }
    return y;
}

// acc += a b^T
inline void add_outer(Matrix& acc, const Vec& a, const Vec& b) {
    if (acc.rows != a.size() || acc.cols != b.size())
        throw std::invalid_argument("add_outer: dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
        double* row = acc.data.data() + i * acc.cols;
        for (std::size_t j = 0; j < b.size(); ++j) row[j] += a[i] * b[j];
    }
}

inline void add_to(Vec& acc, const Vec& x) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

} // namespace drpc

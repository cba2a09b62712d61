#pragma once

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "drpc/matrix.hpp"

namespace drpc {

// Target utilizations per (resource, machine). Row 0 = cpu, row 1 = mem.
struct RewardConfig {
    double rt_max = 200.0;  // ms
    Matrix u_pred;

    static Matrix default_u_pred(std::size_t machines, double cpu = 0.60, double mem = 0.75) {
        Matrix m(2, machines);
        for (std::size_t k = 0; k < machines; ++k) {
            m(0, k) = cpu;
            m(1, k) = mem;
        }
        return m;
    }
};

// QoS reward: 1 while the response time stays within rt_max, then a
// Gaussian falloff in the relative excess. Continuous at rt = rt_max.
inline double qos_reward(double rt, double rt_max) {
    if (rt <= rt_max) return 1.0;
    double x = (rt - rt_max) / rt_max;
    return std::exp(-x * x);
}

// Utilization reward: cubic deviation from the target, applied entry-wise,
// summed over resources and machines, divided by the machine count, plus 1.
// Always >= 1; equals 1 exactly when u == u_pred.
inline double util_reward(const Matrix& u, const Matrix& u_pred) {
    if (!u.same_shape(u_pred)) throw std::invalid_argument("util_reward: shape mismatch");
    if (u.cols == 0) throw std::invalid_argument("util_reward: no machines");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.data.size(); ++i) {
        double dev = std::abs(u.data[i] - u_pred.data[i]);
        acc += dev * dev * dev;
    }
    return acc / static_cast<double>(u.cols) + 1.0;
}

inline double combined_reward(double r_qos, double r_util) {
    return r_qos / r_util;
}

// Diagnostic view of the optimization objective: distance of the
// utilization reward from the scalarized target (mean of u_pred), and the
// worst QoS reward observed over a response-time series.
struct ObjectiveGap {
    double util_gap = 0.0;
    double min_qos = 1.0;
};

inline ObjectiveGap objective_gap(const Matrix& u, const Matrix& u_pred,
                                  const Vec& rt_series, double rt_max) {
    ObjectiveGap out;
    double mean_pred = 0.0;
    for (double x : u_pred.data) mean_pred += x;
    if (!u_pred.data.empty()) mean_pred /= static_cast<double>(u_pred.data.size());
    out.util_gap = std::abs(mean_pred - util_reward(u, u_pred));
    out.min_qos = 1.0;
    for (double rt : rt_series) out.min_qos = std::min(out.min_qos, qos_reward(rt, rt_max));
    return out;
}

} // namespace drpc

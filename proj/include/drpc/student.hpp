#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "drpc/core.hpp"
#include "drpc/io.hpp"
#include "drpc/neural.hpp"
#include "drpc/rng.hpp"

namespace drpc {

struct ScalingSteps {
    double cpu_step = 0.25;     // cores
    double memory_step = 0.25;  // GB
    static constexpr double q_threshold = 0.5;
    static constexpr double vertical_floor = 0.1;
};

struct ScaleResult {
    double cpu_per_replica = 0.0;
    double mem_per_replica = 0.0;
    int replicas = 0;
};

inline double clip(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

// General scaling procedure: a Q-value triple turns into vertical and
// horizontal resource changes. A component only acts when its magnitude
// exceeds the 0.5 threshold. Horizontal rounding preserves sign (so -0.8
// becomes -1) and the replica count is clamped to [min, max] instead of
// aborting; brownout-capable deployments may reach 0 replicas.
inline ScaleResult scale_deployment(const DeploymentAction& q, const Deployment& d,
                                    const ScalingSteps& steps, int max_replicas) {
    ScaleResult r{d.cpu_per_replica, d.mem_per_replica, d.replicas};
    if (std::abs(q.cpu_scaling) > ScalingSteps::q_threshold) {
        r.cpu_per_replica = std::max(ScalingSteps::vertical_floor,
                                     d.cpu_per_replica + clip(q.cpu_scaling, -1.0, 1.0) * steps.cpu_step);
    }
    if (std::abs(q.memory_scaling) > ScalingSteps::q_threshold) {
        r.mem_per_replica = std::max(ScalingSteps::vertical_floor,
                                     d.mem_per_replica + clip(q.memory_scaling, -1.0, 1.0) * steps.memory_step);
    }
    if (std::abs(q.horizontal_scaling) > ScalingSteps::q_threshold) {
        double qh = clip(q.horizontal_scaling, -1.0, 1.0);
        int delta = static_cast<int>((qh > 0.0 ? 1.0 : -1.0) * std::ceil(std::abs(qh)));
        int lo = d.min_replicas();
        r.replicas = std::max(lo, std::min(max_replicas, d.replicas + delta));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Per-deployment student: a small net distilled from the teacher's Q-values.
// ---------------------------------------------------------------------------

inline constexpr std::size_t student_state_dim = 9;

struct GuidancePair {
    std::array<double, student_state_dim> state{};
    std::array<double, 3> q{};
};

// Ring buffer of (local state, teacher Q) pairs recorded while the teacher
// is in control.
class DeploymentBuffer {
public:
    explicit DeploymentBuffer(std::size_t capacity = 10000) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("DeploymentBuffer: capacity must be > 0");
    }

    void record(const GuidancePair& p) {
        if (data_.size() < capacity_) {
            data_.push_back(p);
        } else {
            data_[cursor_] = p;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const GuidancePair& at(std::size_t i) const { return data_.at(i); }

    void dump_csv(const std::string& path) const {
        auto f = open_out(path);
        f << "s0,s1,s2,s3,s4,s5,s6,s7,s8,q_cpu,q_mem,q_horizontal\n";
        for (const auto& p : data_) {
            for (std::size_t i = 0; i < student_state_dim; ++i) {
                if (i) f << ',';
                f << fmt_double(p.state[i]);
            }
            for (double q : p.q) f << ',' << fmt_double(q);
            f << '\n';
        }
    }

    static DeploymentBuffer load_csv(const std::string& path, std::size_t capacity = 10000) {
        auto f = open_in(path);
        DeploymentBuffer buf(capacity);
        std::string line;
        if (!std::getline(f, line)) throw std::runtime_error(path + ": empty buffer file");
        std::size_t lineno = 1;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cells = split_csv_line(line);
            if (cells.size() != student_state_dim + 3)
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 12 columns");
            GuidancePair p;
            for (std::size_t i = 0; i < student_state_dim; ++i) p.state[i] = parse_double(cells[i]);
            for (std::size_t i = 0; i < 3; ++i) p.q[i] = parse_double(cells[student_state_dim + i]);
            buf.record(p);
        }
        return buf;
    }

private:
    std::size_t capacity_;
    std::vector<GuidancePair> data_;
    std::size_t cursor_ = 0;
};

// 9 -> 48 -> 3 with tanh output; 627 trainable parameters.
struct StudentNet {
    DenseNet net;
    AdamState opt;

    std::size_t param_count() const { return net.param_count(); }
};

inline StudentNet make_student(std::uint64_t seed) {
    Rng rng(seed);
    StudentNet s;
    s.net = make_dense({student_state_dim, 48, 3},
                       {Activation::tanh_fn, Activation::tanh_fn}, rng);
    return s;
}

inline DeploymentAction student_act(const StudentNet& s, const Vec& local_state) {
    if (local_state.size() != student_state_dim)
        throw std::invalid_argument("student_act: expected " + std::to_string(student_state_dim) +
                                    " features");
    Vec q = dense_forward(s.net, local_state);
    return {q[0], q[1], q[2]};
}

// One imitation step: sample a batch, regress the student's Q-values onto
// the recorded teacher Q-values (loss = mean over batch and outputs of the
// squared difference), apply an Adam update. Returns the pre-step loss.
inline double imitation_step(StudentNet& s, const DeploymentBuffer& buffer,
                             std::size_t batch_size, double lr, Rng& rng) {
    if (buffer.size() == 0) throw std::invalid_argument("imitation_step: empty buffer");
    std::size_t n = std::min(batch_size, buffer.size());
    DenseGrads total = zero_grads(s.net);
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        const GuidancePair& p = buffer.at(rng.index(buffer.size()));
        Vec x(p.state.begin(), p.state.end());
        DenseCache cache;
        Vec y = dense_forward(s.net, x, &cache);
        Vec dy(3);
        for (std::size_t i = 0; i < 3; ++i) {
            double diff = y[i] - p.q[i];
            loss += diff * diff;
            dy[i] = 2.0 * diff / (3.0 * static_cast<double>(n));
        }
        accumulate(total, dense_backward(s.net, cache, dy));
    }
    loss /= 3.0 * static_cast<double>(n);
    adam_step(s.net.param_views(), total.grad_views(), s.opt, lr);
    return loss;
}

} // namespace drpc

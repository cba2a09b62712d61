#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drpc/io.hpp"
#include "drpc/neural.hpp"
#include "drpc/rng.hpp"

namespace drpc {

struct TraceRecord {
    double timestamp = 0.0;  // seconds
    std::string machine_id;
    double cpu_util = 0.0;   // fraction [0,1]
    double mem_util = 0.0;   // fraction [0,1]
};

struct WorkloadTrace {
    std::vector<TraceRecord> records;  // sorted by timestamp
};

// CSV schema: timestamp_s,machine_id,cpu_util,mem_util (header required).
// Rows with NaN or out-of-range utilization abort the parse, naming the
// offending line.
inline WorkloadTrace parse_trace_stream(std::istream& in, const std::string& name) {
    WorkloadTrace trace;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(name + ": empty trace");
    auto header = split_csv_line(line);
    if (header.size() != 4 || header[0] != "timestamp_s" || header[1] != "machine_id" ||
        header[2] != "cpu_util" || header[3] != "mem_util")
        throw std::runtime_error(name + ":1: expected header timestamp_s,machine_id,cpu_util,mem_util");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        auto fail = [&](const std::string& why) {
            throw std::runtime_error(name + ":" + std::to_string(lineno) + ": " + why);
        };
        if (cells.size() != 4) fail("expected 4 columns");
        TraceRecord r;
        try {
            r.timestamp = parse_double(cells[0]);
            r.machine_id = cells[1];
            r.cpu_util = parse_double(cells[2]);
            r.mem_util = parse_double(cells[3]);
        } catch (const std::exception& e) {
            fail(e.what());
        }
        if (!std::isfinite(r.timestamp) || !std::isfinite(r.cpu_util) || !std::isfinite(r.mem_util))
            fail("non-finite value");
        if (r.cpu_util < 0.0 || r.cpu_util > 1.0) fail("cpu_util out of [0,1]");
        if (r.mem_util < 0.0 || r.mem_util > 1.0) fail("mem_util out of [0,1]");
        trace.records.push_back(std::move(r));
    }
    if (trace.records.empty()) throw std::runtime_error(name + ": trace has no data rows");
    std::stable_sort(trace.records.begin(), trace.records.end(),
                     [](const TraceRecord& a, const TraceRecord& b) {
                         return a.timestamp < b.timestamp;
                     });
    return trace;
}

inline WorkloadTrace parse_trace(const std::string& path) {
    auto f = open_in(path);
    return parse_trace_stream(f, path);
}

struct SeriesPoint {
    double t = 0.0;
    double cpu = 0.0;
    double mem = 0.0;
};

// Collapse a multi-machine trace into one cluster-level series: mean
// utilization across machines per timestamp.
inline std::vector<SeriesPoint> aggregate_by_timestamp(const WorkloadTrace& trace) {
    std::vector<SeriesPoint> out;
    std::size_t i = 0;
    while (i < trace.records.size()) {
        double t = trace.records[i].timestamp;
        double cpu = 0.0, mem = 0.0;
        std::size_t n = 0;
        while (i < trace.records.size() && trace.records[i].timestamp == t) {
            cpu += trace.records[i].cpu_util;
            mem += trace.records[i].mem_util;
            ++n;
            ++i;
        }
        out.push_back({t, cpu / n, mem / n});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Profiler: utilization pair -> request rate, a small dense net trained by
// plain full-batch gradient descent on targets normalized by their max.
// ---------------------------------------------------------------------------

struct ProfilerSample {
    double cpu_util = 0.0;
    double mem_util = 0.0;
    double rate = 0.0;  // requests/s
};

struct ProfilerModel {
    DenseNet net;            // 2 -> 16 -> 16 -> 1, tanh hidden
    double rate_scale = 1.0; // targets trained as rate / rate_scale
    double final_loss = 0.0; // MSE in (requests/s)^2
    bool zero_variance = false;
};

inline ProfilerModel fit_profiler(const std::vector<ProfilerSample>& samples, int epochs,
                                  double lr, std::uint64_t seed) {
    if (samples.size() < 10)
        throw std::invalid_argument("fit_profiler: need at least 10 samples");
    Rng rng(seed);
    ProfilerModel m;
    m.net = make_dense({2, 16, 16, 1},
                       {Activation::tanh_fn, Activation::tanh_fn, Activation::identity}, rng);
    double max_rate = 0.0, min_rate = samples.front().rate;
    for (const auto& s : samples) {
        max_rate = std::max(max_rate, std::abs(s.rate));
        min_rate = std::min(min_rate, s.rate);
    }
    m.rate_scale = std::max(max_rate, 1e-9);
    bool all_same = true;
    for (const auto& s : samples)
        if (s.rate != samples.front().rate) all_same = false;
    m.zero_variance = all_same;

    double n = static_cast<double>(samples.size());
    double loss = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        DenseGrads total = zero_grads(m.net);
        loss = 0.0;
        for (const auto& s : samples) {
            Vec x{s.cpu_util, s.mem_util};
            DenseCache cache;
            double y = dense_forward(m.net, x, &cache)[0];
            double diff = y - s.rate / m.rate_scale;
            loss += diff * diff / n;
            accumulate(total, dense_backward(m.net, cache, {2.0 * diff / n}));
        }
        sgd_step(m.net.param_views(), total.grad_views(), lr);
    }
    m.final_loss = loss * m.rate_scale * m.rate_scale;
    return m;
}

inline double util_to_requests(const ProfilerModel& m, double cpu_util, double mem_util) {
    double y = dense_forward(m.net, {cpu_util, mem_util})[0] * m.rate_scale;
    return std::max(0.0, y);
}

inline void save_profiler(std::ostream& os, const ProfilerModel& m) {
    os << "profiler " << fmt_double(m.rate_scale) << '\n';
    save_dense(os, m.net);
}

inline ProfilerModel load_profiler(std::istream& is) {
    std::string tag;
    if (!(is >> tag) || tag != "profiler")
        throw std::runtime_error("checkpoint: expected profiler header");
    ProfilerModel m;
    if (!(is >> m.rate_scale)) throw std::runtime_error("checkpoint: bad profiler scale");
    m.net = load_dense(is);
    return m;
}

// ---------------------------------------------------------------------------
// Predictor: GRU over (cpu, mem) windows, dense readout to the pair at
// +horizon steps. Trained with Adam on an 80/20 chronological split;
// min-max normalization from the training split is stored with the model.
// ---------------------------------------------------------------------------

struct PredictorModel {
    GruCell cell;      // input 2, hidden H
    DenseNet readout;  // H -> 2, identity
    int window = 12;
    int horizon = 1;
    double cpu_min = 0.0, cpu_max = 1.0;
    double mem_min = 0.0, mem_max = 1.0;
    double train_mse = 0.0;  // normalized units
    double val_mse = 0.0;    // raw utilization units
};

namespace detail {

inline double norm(double v, double lo, double hi) {
    double span = hi - lo;
    if (span < 1e-12) return 0.0;
    return (v - lo) / span;
}

inline double denorm(double v, double lo, double hi) {
    double span = hi - lo;
    if (span < 1e-12) return lo;
    return lo + v * span;
}

inline std::vector<Vec> window_inputs(const PredictorModel& m,
                                      const std::vector<SeriesPoint>& series, std::size_t start) {
    std::vector<Vec> seq;
    seq.reserve(m.window);
    for (int j = 0; j < m.window; ++j) {
        const auto& p = series[start + j];
        seq.push_back({norm(p.cpu, m.cpu_min, m.cpu_max), norm(p.mem, m.mem_min, m.mem_max)});
    }
    return seq;
}

} // namespace detail

// Forecast from the last `window` raw (cpu, mem) pairs; output clamped to
// [0, 1].
inline std::pair<double, double> predict(const PredictorModel& m,
                                         const std::vector<std::pair<double, double>>& window) {
    if (static_cast<int>(window.size()) != m.window)
        throw std::invalid_argument("predict: window must have exactly " +
                                    std::to_string(m.window) + " entries");
    std::vector<Vec> seq;
    seq.reserve(window.size());
    for (const auto& [cpu, mem] : window)
        seq.push_back({detail::norm(cpu, m.cpu_min, m.cpu_max),
                       detail::norm(mem, m.mem_min, m.mem_max)});
    Vec h = gru_forward(m.cell, seq);
    Vec y = dense_forward(m.readout, h);
    double cpu = std::clamp(detail::denorm(y[0], m.cpu_min, m.cpu_max), 0.0, 1.0);
    double mem = std::clamp(detail::denorm(y[1], m.mem_min, m.mem_max), 0.0, 1.0);
    return {cpu, mem};
}

inline PredictorModel train_predictor(const std::vector<SeriesPoint>& series, int window,
                                      int horizon, int epochs, double lr, std::uint64_t seed,
                                      std::size_t hidden = 32) {
    long n = static_cast<long>(series.size());
    long min_len = window + horizon + 1;
    if (n < min_len)
        throw std::invalid_argument("train_predictor: trace too short, need at least " +
                                    std::to_string(min_len) + " points, got " + std::to_string(n));
    Rng rng(seed);
    PredictorModel m;
    m.window = window;
    m.horizon = horizon;
    m.cell = make_gru(2, hidden, rng);
    m.readout = make_dense({hidden, 2}, {Activation::identity}, rng);

    // chronological split on the target index: training windows never reach
    // into the validation region
    long split = (n * 8) / 10;
    m.cpu_min = series[0].cpu;
    m.cpu_max = series[0].cpu;
    m.mem_min = series[0].mem;
    m.mem_max = series[0].mem;
    for (long i = 0; i < split; ++i) {
        m.cpu_min = std::min(m.cpu_min, series[i].cpu);
        m.cpu_max = std::max(m.cpu_max, series[i].cpu);
        m.mem_min = std::min(m.mem_min, series[i].mem);
        m.mem_max = std::max(m.mem_max, series[i].mem);
    }

    std::vector<long> train_starts, val_starts;
    for (long start = 0; start + window - 1 + horizon < n; ++start) {
        long target = start + window - 1 + horizon;
        (target < split ? train_starts : val_starts).push_back(start);
    }
    if (train_starts.empty())
        throw std::invalid_argument("train_predictor: no training samples; need at least " +
                                    std::to_string(min_len) + " points before the 80% split");

    const std::size_t batch = 32;
    AdamState opt_cell, opt_readout;
    double train_loss = 0.0;
    std::vector<long> order = train_starts;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        // deterministic shuffle
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.index(i)]);
        train_loss = 0.0;
        for (std::size_t pos = 0; pos < order.size(); pos += batch) {
            std::size_t bend = std::min(pos + batch, order.size());
            double bn = static_cast<double>(bend - pos);
            GruGrads gcell = zero_grads(m.cell);
            DenseGrads gread = zero_grads(m.readout);
            for (std::size_t bi = pos; bi < bend; ++bi) {
                long start = order[bi];
                auto seq = detail::window_inputs(m, series, start);
                GruCache gcache;
                Vec h = gru_forward(m.cell, seq, &gcache);
                DenseCache rcache;
                Vec y = dense_forward(m.readout, h, &rcache);
                const auto& tp = series[start + window - 1 + horizon];
                Vec target{detail::norm(tp.cpu, m.cpu_min, m.cpu_max),
                           detail::norm(tp.mem, m.mem_min, m.mem_max)};
                Vec dy(2);
                for (int k = 0; k < 2; ++k) {
                    double diff = y[k] - target[k];
                    train_loss += diff * diff;
                    dy[k] = 2.0 * diff / (2.0 * bn);
                }
                DenseGrads rg = dense_backward(m.readout, rcache, dy);
                accumulate(gread, rg);
                GruGrads cg = gru_backward(m.cell, gcache, rg.dx);
                add_to(gcell.dwz.data, cg.dwz.data);
                add_to(gcell.duz.data, cg.duz.data);
                add_to(gcell.dbz, cg.dbz);
                add_to(gcell.dwr.data, cg.dwr.data);
                add_to(gcell.dur.data, cg.dur.data);
                add_to(gcell.dbr, cg.dbr);
                add_to(gcell.dwn.data, cg.dwn.data);
                add_to(gcell.dun.data, cg.dun.data);
                add_to(gcell.dbn, cg.dbn);
            }
            adam_step(m.cell.param_views(), gcell.grad_views(), opt_cell, lr);
            adam_step(m.readout.param_views(), gread.grad_views(), opt_readout, lr);
        }
        train_loss /= 2.0 * static_cast<double>(train_starts.size());
    }
    m.train_mse = train_loss;

    if (!val_starts.empty()) {
        double acc = 0.0;
        for (long start : val_starts) {
            std::vector<std::pair<double, double>> win;
            for (int j = 0; j < window; ++j)
                win.emplace_back(series[start + j].cpu, series[start + j].mem);
            auto [cpu, mem] = predict(m, win);
            const auto& tp = series[start + window - 1 + horizon];
            acc += ((cpu - tp.cpu) * (cpu - tp.cpu) + (mem - tp.mem) * (mem - tp.mem)) / 2.0;
        }
        m.val_mse = acc / static_cast<double>(val_starts.size());
    } else {
        m.val_mse = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

// MSE of forecasts against actuals over a held-out series, in raw
// utilization units, per resource.
struct MseReport {
    double cpu_mse = 0.0;
    double mem_mse = 0.0;
    long samples = 0;

    double mean() const { return (cpu_mse + mem_mse) / 2.0; }
};

inline MseReport evaluate_mse(const PredictorModel& m, const std::vector<SeriesPoint>& series,
                              int horizon) {
    MseReport rep;
    long n = static_cast<long>(series.size());
    for (long start = 0; start + m.window - 1 + horizon < n; ++start) {
        std::vector<std::pair<double, double>> win;
        for (int j = 0; j < m.window; ++j)
            win.emplace_back(series[start + j].cpu, series[start + j].mem);
        auto [cpu, mem] = predict(m, win);
        const auto& tp = series[start + m.window - 1 + horizon];
        rep.cpu_mse += (cpu - tp.cpu) * (cpu - tp.cpu);
        rep.mem_mse += (mem - tp.mem) * (mem - tp.mem);
        ++rep.samples;
    }
    if (rep.samples > 0) {
        rep.cpu_mse /= rep.samples;
        rep.mem_mse /= rep.samples;
    }
    return rep;
}

inline void save_predictor(std::ostream& os, const PredictorModel& m) {
    os << "predictor " << m.window << ' ' << m.horizon << ' ' << fmt_double(m.cpu_min) << ' '
       << fmt_double(m.cpu_max) << ' ' << fmt_double(m.mem_min) << ' ' << fmt_double(m.mem_max)
       << '\n';
    save_gru(os, m.cell);
    save_dense(os, m.readout);
}

inline PredictorModel load_predictor(std::istream& is) {
    std::string tag;
    PredictorModel m;
    if (!(is >> tag >> m.window >> m.horizon >> m.cpu_min >> m.cpu_max >> m.mem_min >>
          m.mem_max) ||
        tag != "predictor")
        throw std::runtime_error("checkpoint: expected predictor header");
    m.cell = load_gru(is);
    m.readout = load_dense(is);
    return m;
}

} // namespace drpc

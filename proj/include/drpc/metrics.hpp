#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "drpc/io.hpp"
#include "drpc/sim.hpp"

namespace drpc {

// Table-style percentile columns reported everywhere.
inline const std::vector<double>& report_percentiles() {
    static const std::vector<double> p{50, 66, 75, 80, 90, 95, 99, 99.99};
    return p;
}

struct MetricsSummary {
    std::string mode;
    std::uint64_t seed = 0;
    long ticks = 0;
    double duration_s = 0.0;
    long arrivals = 0;
    long successes = 0;
    long failures = 0;
    double failure_rate = 0.0;
    double success_per_s = 0.0;
    double tps = 0.0;          // attempted transactions per second
    double mean_rt_ms = 0.0;   // over successful requests
    double mean_reward = 0.0;
    std::map<double, double> percentiles;  // nearest-rank over all success samples
    std::map<std::string, std::string> config_echo;
};

inline MetricsSummary compute_metrics(const SimLog& log, double tick_s,
                                      const std::string& mode = "", std::uint64_t seed = 0) {
    if (log.empty()) throw std::invalid_argument("compute_metrics: empty log");
    MetricsSummary s;
    s.mode = mode;
    s.seed = seed;
    s.ticks = static_cast<long>(log.size());
    s.duration_s = s.ticks * tick_s;
    std::vector<TickSample> all;
    double rt_weighted = 0.0;
    double reward_sum = 0.0;
    for (const auto& rec : log) {
        s.arrivals += rec.arrivals;
        s.successes += rec.successes;
        s.failures += rec.failures;
        reward_sum += rec.reward;
        for (const auto& smp : rec.rt_samples) {
            all.push_back(smp);
            rt_weighted += smp.rt_ms * smp.count;
        }
    }
    s.failure_rate = s.arrivals ? static_cast<double>(s.failures) / s.arrivals : 0.0;
    s.success_per_s = s.duration_s > 0 ? s.successes / s.duration_s : 0.0;
    s.tps = s.duration_s > 0 ? s.arrivals / s.duration_s : 0.0;
    s.mean_rt_ms = s.successes ? rt_weighted / s.successes : 0.0;
    s.mean_reward = reward_sum / s.ticks;
    for (double p : report_percentiles()) s.percentiles[p] = weighted_nearest_rank(all, p);
    return s;
}

inline std::string percentile_label(double p) {
    std::string s = fmt_double(p);
    return "p" + s;
}

inline void write_simlog_csv(const std::string& path, const SimLog& log,
                             const std::vector<std::string>& deployment_ids) {
    auto f = open_out(path);
    f << "tick,arrivals,successes,failures,mean_rt_ms,p99_rt_ms,reward,r_qos,r_util";
    for (const auto& id : deployment_ids) f << ",util_" << id;
    f << '\n';
    for (const auto& r : log) {
        f << r.tick << ',' << r.arrivals << ',' << r.successes << ',' << r.failures << ','
          << fmt_double(r.mean_rt_ms) << ',' << fmt_double(r.p99_rt_ms) << ','
          << fmt_double(r.reward) << ',' << fmt_double(r.r_qos) << ',' << fmt_double(r.r_util);
        for (double u : r.dep_utilization) f << ',' << fmt_double(u);
        f << '\n';
    }
}

inline nlohmann::json summary_to_json(const MetricsSummary& s) {
    nlohmann::json j;
    j["mode"] = s.mode;
    j["seed"] = s.seed;
    j["ticks"] = s.ticks;
    j["duration_s"] = s.duration_s;
    j["arrivals"] = s.arrivals;
    j["successes"] = s.successes;
    j["failures"] = s.failures;
    j["failure_rate"] = s.failure_rate;
    j["success_per_s"] = s.success_per_s;
    j["tps"] = s.tps;
    j["mean_rt_ms"] = s.mean_rt_ms;
    j["mean_reward"] = s.mean_reward;
    nlohmann::json perc;
    for (const auto& [p, v] : s.percentiles) perc[percentile_label(p)] = v;
    j["percentiles"] = perc;
    nlohmann::json echo;
    for (const auto& [k, v] : s.config_echo) echo[k] = v;
    j["config"] = echo;
    return j;
}

inline MetricsSummary summary_from_json(const nlohmann::json& j) {
    MetricsSummary s;
    s.mode = j.at("mode").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ticks = j.at("ticks").get<long>();
    s.duration_s = j.at("duration_s").get<double>();
    s.arrivals = j.at("arrivals").get<long>();
    s.successes = j.at("successes").get<long>();
    s.failures = j.at("failures").get<long>();
    s.failure_rate = j.at("failure_rate").get<double>();
    s.success_per_s = j.at("success_per_s").get<double>();
    s.tps = j.at("tps").get<double>();
    s.mean_rt_ms = j.at("mean_rt_ms").get<double>();
    s.mean_reward = j.at("mean_reward").get<double>();
    for (double p : report_percentiles()) {
        auto key = percentile_label(p);
        if (j.at("percentiles").contains(key))
            s.percentiles[p] = j.at("percentiles").at(key).get<double>();
    }
    if (j.contains("config"))
        for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it)
            s.config_echo[it.key()] = it.value().get<std::string>();
    return s;
}

// Write summary.json, metrics.csv and percentile_table.csv (one row per
// summary, percentile columns).
inline void report(const std::vector<MetricsSummary>& summaries, const std::string& out_dir) {
    if (summaries.empty()) throw std::invalid_argument("report: need at least one summary");
    std::filesystem::create_directories(out_dir);

    nlohmann::json root = nlohmann::json::array();
    for (const auto& s : summaries) root.push_back(summary_to_json(s));
    {
        auto f = open_out(out_dir + "/summary.json");
        f << root.dump(2) << '\n';
    }
    {
        auto f = open_out(out_dir + "/metrics.csv");
        f << "mode,seed,ticks,arrivals,successes,failures,failure_rate,success_per_s,tps,"
             "mean_rt_ms,mean_reward\n";
        for (const auto& s : summaries) {
            f << s.mode << ',' << s.seed << ',' << s.ticks << ',' << s.arrivals << ','
              << s.successes << ',' << s.failures << ',' << fmt_double(s.failure_rate) << ','
              << fmt_double(s.success_per_s) << ',' << fmt_double(s.tps) << ','
              << fmt_double(s.mean_rt_ms) << ',' << fmt_double(s.mean_reward) << '\n';
        }
    }
    {
        auto f = open_out(out_dir + "/percentile_table.csv");
        f << "mode";
        for (double p : report_percentiles()) f << ',' << percentile_label(p);
        f << '\n';
        for (const auto& s : summaries) {
            f << s.mode;
            for (double p : report_percentiles()) {
                auto it = s.percentiles.find(p);
                f << ',' << fmt_double(it == s.percentiles.end() ? 0.0 : it->second);
            }
            f << '\n';
        }
    }
}

} // namespace drpc

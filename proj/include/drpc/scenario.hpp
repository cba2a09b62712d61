#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "drpc/core.hpp"
#include "drpc/io.hpp"
#include "drpc/reward.hpp"
#include "drpc/sim.hpp"

namespace drpc {

// Cluster scenario file (JSON):
//   {
//     "machines":    [{"id", "cpu_cores", "mem_gb"}, ...],
//     "deployments": [{"id", "replicas", "cpu_per_replica", "mem_per_replica",
//                      "brownout_allowed", "base_latency_ms", "rate_per_core",
//                      "optional_in_chain"}, ...],
//     "chains":      [{"id", "stations": ["dep", ...], "weight"}, ...],
//     "sim":         {"tick_s", "rt_max_ms", "l_max_ms", "mem_penalty",
//                     "max_replicas", "horizon_ticks", "cpu_step", "memory_step"},
//     "reward":      {"u_pred_cpu", "u_pred_mem"}
//   }
// "sim" and "reward" are optional and default as in SimConfig/RewardConfig.
struct Scenario {
    ClusterState cluster;
    SimConfig sim;
    RewardConfig reward;
};

inline Scenario load_scenario(const std::string& path) {
    auto f = open_in(path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": invalid JSON: " + e.what());
    }
    Scenario sc;
    try {
        std::vector<Machine> machines;
        for (const auto& m : j.at("machines"))
            machines.push_back({m.at("id").get<std::string>(), m.at("cpu_cores").get<double>(),
                                m.at("mem_gb").get<double>()});
        std::vector<Deployment> deployments;
        for (const auto& d : j.at("deployments")) {
            Deployment dep;
            dep.id = d.at("id").get<std::string>();
            dep.replicas = d.at("replicas").get<int>();
            dep.cpu_per_replica = d.at("cpu_per_replica").get<double>();
            dep.mem_per_replica = d.at("mem_per_replica").get<double>();
            dep.brownout_allowed = d.at("brownout_allowed").get<bool>();
            dep.base_latency_ms = d.at("base_latency_ms").get<double>();
            dep.rate_per_core = d.at("rate_per_core").get<double>();
            dep.optional_in_chain = d.at("optional_in_chain").get<bool>();
            deployments.push_back(std::move(dep));
        }
        std::vector<ServiceChain> chains;
        for (const auto& c : j.at("chains")) {
            ServiceChain chain;
            chain.id = c.at("id").get<std::string>();
            for (const auto& s : c.at("stations")) chain.stations.push_back(s.get<std::string>());
            chain.weight = c.at("weight").get<double>();
            chains.push_back(std::move(chain));
        }
        sc.cluster = make_cluster(std::move(machines), std::move(deployments), std::move(chains));

        if (j.contains("sim")) {
            const auto& s = j["sim"];
            if (s.contains("tick_s")) sc.sim.tick = s["tick_s"].get<double>();
            if (s.contains("rt_max_ms")) sc.sim.rt_max = s["rt_max_ms"].get<double>();
            if (s.contains("l_max_ms")) sc.sim.l_max = s["l_max_ms"].get<double>();
            if (s.contains("mem_penalty")) sc.sim.mem_penalty = s["mem_penalty"].get<double>();
            if (s.contains("max_replicas")) sc.sim.max_replicas = s["max_replicas"].get<int>();
            if (s.contains("horizon_ticks")) sc.sim.horizon = s["horizon_ticks"].get<long>();
            if (s.contains("cpu_step")) sc.sim.steps.cpu_step = s["cpu_step"].get<double>();
            if (s.contains("memory_step")) sc.sim.steps.memory_step = s["memory_step"].get<double>();
        }
        double up_cpu = 0.60, up_mem = 0.75;
        if (j.contains("reward")) {
            const auto& r = j["reward"];
            if (r.contains("u_pred_cpu")) up_cpu = r["u_pred_cpu"].get<double>();
            if (r.contains("u_pred_mem")) up_mem = r["u_pred_mem"].get<double>();
            if (r.contains("rt_max_ms")) sc.sim.rt_max = r["rt_max_ms"].get<double>();
        }
        sc.reward.rt_max = sc.sim.rt_max;
        sc.reward.u_pred =
            RewardConfig::default_u_pred(sc.cluster.machines.size(), up_cpu, up_mem);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad scenario: " + e.what());
    }

    if (sc.sim.tick <= 0.0 || sc.sim.rt_max <= 0.0 || sc.sim.l_max <= sc.sim.rt_max)
        throw std::runtime_error(path + ": sim config requires tick > 0, rt_max > 0, l_max > rt_max");

    // place initial replicas first-fit
    for (std::size_t d = 0; d < sc.cluster.deployments.size(); ++d) {
        int want = sc.cluster.deployments[d].replicas;
        if (want > sc.sim.max_replicas)
            throw std::runtime_error(path + ": " + sc.cluster.deployments[d].id +
                                     " starts above max_replicas");
        sc.cluster.deployments[d].replicas = 0;
        auto res = apply_placement(std::move(sc.cluster), d, want, sc.sim.allow_overcommit);
        if (res.shortfall > 0)
            throw std::runtime_error(path + ": initial replicas of " +
                                     res.state.deployments[d].id + " do not fit (" +
                                     std::to_string(res.shortfall) + " short)");
        sc.cluster = std::move(res.state);
    }

    auto violations = validate_cluster(sc.cluster);
    if (!violations.empty()) {
        std::string msg = path + ": invalid scenario:";
        for (const auto& v : violations) msg += "\n  " + v.subject + ": " + v.reason;
        throw std::runtime_error(msg);
    }
    return sc;
}

} // namespace drpc

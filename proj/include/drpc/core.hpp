#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drpc/matrix.hpp"

namespace drpc {

struct Machine {
    std::string id;
    double cpu_capacity = 0.0;  // cores
    double mem_capacity = 0.0;  // GB
};

struct Deployment {
    std::string id;
    int replicas = 0;
    double cpu_per_replica = 0.0;   // cores
    double mem_per_replica = 0.0;   // GB
    bool brownout_allowed = false;
    double base_latency_ms = 0.0;
    double rate_per_core = 0.0;     // requests/s served per allocated core
    bool optional_in_chain = false;

    int min_replicas() const { return brownout_allowed ? 0 : 1; }
};

struct ServiceChain {
    std::string id;
    std::vector<std::string> stations;  // deployment ids, in call order
    double weight = 0.0;                // fraction of total traffic
};

// One placement step: `count` replicas of a deployment on a machine.
// Entries keep fill order so scale-in can undo the most recent placement
// first.
struct PlacementEntry {
    std::size_t machine = 0;  // index into ClusterState::machines
    int count = 0;

    bool operator==(const PlacementEntry&) const = default;
};

struct ClusterState {
    std::vector<Machine> machines;        // sorted by id
    std::vector<Deployment> deployments;  // sorted by id
    std::vector<ServiceChain> chains;
    std::vector<std::vector<PlacementEntry>> placement;  // per deployment
    Matrix utilization;  // 2 x K, row 0 cpu, row 1 mem; cache of machine_utilization()

    std::size_t machine_index(std::string_view id) const {
        for (std::size_t i = 0; i < machines.size(); ++i)
            if (machines[i].id == id) return i;
        throw std::out_of_range("unknown machine id: " + std::string(id));
    }

    std::size_t deployment_index(std::string_view id) const {
        for (std::size_t i = 0; i < deployments.size(); ++i)
            if (deployments[i].id == id) return i;
        throw std::out_of_range("unknown deployment id: " + std::string(id));
    }

    int placed_replicas(std::size_t dep) const {
        int n = 0;
        for (const auto& e : placement[dep]) n += e.count;
        return n;
    }
};

// Triple of continuous Q-values in [-1, 1] steering the three scaling
// dimensions of one deployment.
struct DeploymentAction {
    double cpu_scaling = 0.0;
    double memory_scaling = 0.0;
    double horizontal_scaling = 0.0;
};

// Per-deployment feature block; the teacher consumes the concatenation of
// all blocks, a student consumes only its own block (plus machine context).
struct ObservationVector {
    static constexpr std::size_t features_per_deployment = 5;
    std::vector<Vec> blocks;

    Vec teacher_state() const {
        Vec s;
        s.reserve(blocks.size() * features_per_deployment);
        for (const auto& b : blocks) s.insert(s.end(), b.begin(), b.end());
        return s;
    }
};

// Recompute per-machine utilization from placement. Row 0 = cpu fraction,
// row 1 = mem fraction of capacity.
inline Matrix machine_utilization(const ClusterState& state) {
    Matrix u(2, state.machines.size());
    for (std::size_t d = 0; d < state.deployments.size(); ++d) {
        const auto& dep = state.deployments[d];
        for (const auto& e : state.placement[d]) {
            u(0, e.machine) += e.count * dep.cpu_per_replica;
            u(1, e.machine) += e.count * dep.mem_per_replica;
        }
    }
    for (std::size_t k = 0; k < state.machines.size(); ++k) {
        u(0, k) /= state.machines[k].cpu_capacity;
        u(1, k) /= state.machines[k].mem_capacity;
    }
    return u;
}

struct Violation {
    std::string subject;
    std::string reason;
};

inline std::vector<Violation> validate_cluster(const ClusterState& state) {
    std::vector<Violation> out;
    std::map<std::string, int> seen;
    for (const auto& m : state.machines) {
        if (m.cpu_capacity <= 0.0 || m.mem_capacity <= 0.0)
            out.push_back({m.id, "machine capacities must be strictly positive"});
        if (++seen[m.id] == 2) out.push_back({m.id, "duplicate machine id"});
    }
    double max_cpu = 0.0, max_mem = 0.0;
    for (const auto& m : state.machines) {
        max_cpu = std::max(max_cpu, m.cpu_capacity);
        max_mem = std::max(max_mem, m.mem_capacity);
    }
    seen.clear();
    for (const auto& d : state.deployments) {
        if (++seen[d.id] == 2) out.push_back({d.id, "duplicate deployment id"});
        if (d.replicas < d.min_replicas())
            out.push_back({d.id, "replicas below minimum (" +
                                     std::to_string(d.min_replicas()) + ")"});
        if (d.cpu_per_replica <= 0.0 || d.cpu_per_replica > max_cpu)
            out.push_back({d.id, "cpu_per_replica outside (0, largest machine capacity]"});
        if (d.mem_per_replica <= 0.0 || d.mem_per_replica > max_mem)
            out.push_back({d.id, "mem_per_replica outside (0, largest machine capacity]"});
        if (d.base_latency_ms <= 0.0) out.push_back({d.id, "base_latency_ms must be positive"});
        if (d.rate_per_core <= 0.0) out.push_back({d.id, "rate_per_core must be positive"});
    }
    double weight_sum = 0.0;
    for (const auto& c : state.chains) {
        if (c.stations.empty()) out.push_back({c.id, "chain has no stations"});
        for (const auto& s : c.stations) {
            bool found = false;
            for (const auto& d : state.deployments)
                if (d.id == s) found = true;
            if (!found) out.push_back({c.id, "station '" + s + "' is not a deployment"});
        }
        if (c.weight < 0.0 || c.weight > 1.0)
            out.push_back({c.id, "chain weight outside [0, 1]"});
        weight_sum += c.weight;
    }
    if (!state.chains.empty() && std::abs(weight_sum - 1.0) > 1e-9)
        out.push_back({"chains", "chain weights sum to " + std::to_string(weight_sum) +
                                     ", expected 1"});
    if (state.placement.size() != state.deployments.size()) {
        out.push_back({"placement", "placement entries do not cover every deployment"});
    } else {
        for (std::size_t d = 0; d < state.deployments.size(); ++d) {
            int placed = 0;
            for (const auto& e : state.placement[d]) {
                if (e.machine >= state.machines.size()) {
                    out.push_back({state.deployments[d].id, "placement references unknown machine"});
                    continue;
                }
                if (e.count < 0)
                    out.push_back({state.deployments[d].id, "negative placement count"});
                placed += e.count;
            }
            if (placed != state.deployments[d].replicas)
                out.push_back({state.deployments[d].id,
                               "placement sums to " + std::to_string(placed) + " but replicas is " +
                                   std::to_string(state.deployments[d].replicas)});
        }
        Matrix fresh = machine_utilization(state);
        if (state.utilization.same_shape(fresh)) {
            for (std::size_t i = 0; i < fresh.data.size(); ++i) {
                if (std::abs(fresh.data[i] - state.utilization.data[i]) > 1e-9) {
                    out.push_back({"utilization", "cached utilization is stale"});
                    break;
                }
            }
        } else if (state.utilization.data.empty() && !state.machines.empty()) {
            // unset cache is tolerated; operations always refresh it
        } else if (!state.utilization.same_shape(fresh)) {
            out.push_back({"utilization", "utilization matrix has wrong shape"});
        }
    }
    return out;
}

// Construct a cluster: sorts machines and deployments by id (first-fit
// order is id order), starts with empty placement.
inline ClusterState make_cluster(std::vector<Machine> machines,
                                 std::vector<Deployment> deployments,
                                 std::vector<ServiceChain> chains = {}) {
    ClusterState s;
    s.machines = std::move(machines);
    s.deployments = std::move(deployments);
    s.chains = std::move(chains);
    std::sort(s.machines.begin(), s.machines.end(),
              [](const Machine& a, const Machine& b) { return a.id < b.id; });
    std::sort(s.deployments.begin(), s.deployments.end(),
              [](const Deployment& a, const Deployment& b) { return a.id < b.id; });
    s.placement.assign(s.deployments.size(), {});
    s.utilization = machine_utilization(s);
    return s;
}

struct PlacementResult {
    ClusterState state;
    int placed_delta = 0;  // signed change actually realized
    int shortfall = 0;     // requested replicas that did not fit
};

// Grow/shrink a deployment's replica set. Growth is first-fit over machines
// in id order; shrink removes from the most recently filled machine first.
// Without over-commit a replica only lands where it keeps both resources
// within capacity; replicas that do not fit are reported as shortfall and
// the deployment's replica count reflects what was actually placed.
inline PlacementResult apply_placement(ClusterState state, std::size_t dep, int new_replicas,
                                       bool allow_overcommit = false) {
    if (dep >= state.deployments.size())
        throw std::out_of_range("apply_placement: bad deployment index");
    Deployment& d = state.deployments[dep];
    if (new_replicas < d.min_replicas())
        throw std::invalid_argument("apply_placement: " + d.id + " requires at least " +
                                    std::to_string(d.min_replicas()) + " replicas");
    PlacementResult res;
    int delta = new_replicas - d.replicas;
    if (delta > 0) {
        constexpr double eps = 1e-9;
        Vec cpu_used(state.machines.size(), 0.0), mem_used(state.machines.size(), 0.0);
        for (std::size_t di = 0; di < state.deployments.size(); ++di) {
            for (const auto& e : state.placement[di]) {
                cpu_used[e.machine] += e.count * state.deployments[di].cpu_per_replica;
                mem_used[e.machine] += e.count * state.deployments[di].mem_per_replica;
            }
        }
        int remaining = delta;
        while (remaining > 0) {
            std::size_t target = state.machines.size();
            for (std::size_t k = 0; k < state.machines.size(); ++k) {
                bool fits = allow_overcommit ||
                            (cpu_used[k] + d.cpu_per_replica <= state.machines[k].cpu_capacity + eps &&
                             mem_used[k] + d.mem_per_replica <= state.machines[k].mem_capacity + eps);
                if (fits) {
                    target = k;
                    break;
                }
            }
            if (target == state.machines.size()) break;  // nothing fits
            cpu_used[target] += d.cpu_per_replica;
            mem_used[target] += d.mem_per_replica;
            auto& list = state.placement[dep];
            if (!list.empty() && list.back().machine == target)
                ++list.back().count;
            else
                list.push_back({target, 1});
            --remaining;
        }
        res.shortfall = remaining;
        res.placed_delta = delta - remaining;
        d.replicas += res.placed_delta;
    } else if (delta < 0) {
        int to_remove = -delta;
        auto& list = state.placement[dep];
        while (to_remove > 0 && !list.empty()) {
            PlacementEntry& last = list.back();
            int take = std::min(last.count, to_remove);
            last.count -= take;
            to_remove -= take;
            if (last.count == 0) list.pop_back();
        }
        res.placed_delta = delta;
        d.replicas = new_replicas;
    }
    state.utilization = machine_utilization(state);
    res.state = std::move(state);
    return res;
}

struct ResizeResult {
    ClusterState state;
    bool cpu_applied = false;
    bool mem_applied = false;
};

// Vertical scaling: change per-replica resources. Each resource is applied
// independently and refused outright if the new size would push any hosting
// machine over capacity (unless over-commit is allowed). New sizes are also
// capped by the largest machine so an unplaced (browned-out) deployment can
// always be placed again later.
inline ResizeResult apply_vertical(ClusterState state, std::size_t dep, double new_cpu,
                                   double new_mem, bool allow_overcommit = false) {
    if (dep >= state.deployments.size())
        throw std::out_of_range("apply_vertical: bad deployment index");
    constexpr double eps = 1e-9;
    Deployment& d = state.deployments[dep];
    double max_cpu = 0.0, max_mem = 0.0;
    for (const auto& m : state.machines) {
        max_cpu = std::max(max_cpu, m.cpu_capacity);
        max_mem = std::max(max_mem, m.mem_capacity);
    }
    new_cpu = std::min(new_cpu, max_cpu);
    new_mem = std::min(new_mem, max_mem);

    Vec cpu_used(state.machines.size(), 0.0), mem_used(state.machines.size(), 0.0);
    std::vector<int> mine(state.machines.size(), 0);
    for (std::size_t di = 0; di < state.deployments.size(); ++di) {
        for (const auto& e : state.placement[di]) {
            cpu_used[e.machine] += e.count * state.deployments[di].cpu_per_replica;
            mem_used[e.machine] += e.count * state.deployments[di].mem_per_replica;
        }
    }
    for (const auto& e : state.placement[dep]) mine[e.machine] += e.count;

    ResizeResult res;
    bool cpu_ok = new_cpu > 0.0;
    bool mem_ok = new_mem > 0.0;
    if (!allow_overcommit) {
        for (std::size_t k = 0; k < state.machines.size(); ++k) {
            if (mine[k] == 0) continue;
            double cpu_after = cpu_used[k] + mine[k] * (new_cpu - d.cpu_per_replica);
            double mem_after = mem_used[k] + mine[k] * (new_mem - d.mem_per_replica);
            if (cpu_after > state.machines[k].cpu_capacity + eps) cpu_ok = false;
            if (mem_after > state.machines[k].mem_capacity + eps) mem_ok = false;
        }
    }
    if (cpu_ok && new_cpu != d.cpu_per_replica) {
        d.cpu_per_replica = new_cpu;
        res.cpu_applied = true;
    }
    if (mem_ok && new_mem != d.mem_per_replica) {
        d.mem_per_replica = new_mem;
        res.mem_applied = true;
    }
    state.utilization = machine_utilization(state);
    res.state = std::move(state);
    return res;
}

} // namespace drpc

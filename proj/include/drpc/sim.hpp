#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drpc/core.hpp"
#include "drpc/reward.hpp"
#include "drpc/rng.hpp"
#include "drpc/student.hpp"

namespace drpc {

struct SimConfig {
    double tick = 1.0;        // seconds per tick
    double rt_max = 200.0;    // ms, QoS bound
    double l_max = 5000.0;    // ms, latency cap for saturated stations
    std::uint64_t seed = 0;
    double mem_penalty = 2.0; // latency multiplier under memory over-pressure
    int max_replicas = 16;
    long horizon = 288;       // episode length in ticks
    bool allow_overcommit = false;
    ScalingSteps steps;
};

// (response time, how many requests saw it); stored instead of one entry
// per request
struct TickSample {
    double rt_ms = 0.0;
    long count = 0;
};

struct SimLogRecord {
    long tick = 0;
    std::vector<long> chain_arrivals;
    long arrivals = 0;
    long successes = 0;   // includes degraded successes
    long failures = 0;
    long degraded = 0;
    std::vector<TickSample> rt_samples;   // successes only
    std::vector<double> dep_utilization;  // per-deployment load fraction rho
    double mean_rt_ms = 0.0;              // over successes
    double p99_rt_ms = 0.0;
    double r_qos = 1.0;
    double r_util = 1.0;
    double reward = 1.0;
};

using SimLog = std::vector<SimLogRecord>;

// Nearest-rank percentile over weighted samples: the value at rank
// ceil(p/100 * n) of the expanded sorted sample.
inline double weighted_nearest_rank(std::vector<TickSample> samples, double p) {
    long n = 0;
    for (const auto& s : samples) n += s.count;
    if (n == 0) return 0.0;
    std::sort(samples.begin(), samples.end(),
              [](const TickSample& a, const TickSample& b) { return a.rt_ms < b.rt_ms; });
    long rank = static_cast<long>(std::ceil(p * static_cast<double>(n) / 100.0));
    rank = std::max<long>(1, std::min(rank, n));
    long cum = 0;
    for (const auto& s : samples) {
        cum += s.count;
        if (cum >= rank) return s.rt_ms;
    }
    return samples.back().rt_ms;
}

inline long generate_arrivals(double rate, double tick, Rng& rng) {
    if (rate < 0.0) throw std::invalid_argument("generate_arrivals: negative rate");
    return rng.poisson(rate * tick);
}

// M/M/1-flavoured latency: base * (1 + rho/(1-rho)), capped at l_max;
// saturated stations pin at the cap.
inline double station_latency(double rho, double base_ms, double l_max) {
    if (rho >= 1.0) return l_max;
    double lat = base_ms * (1.0 + rho / (1.0 - rho));
    return std::min(lat, l_max);
}

enum class RouteKind { success, degraded, failure };

struct RouteResult {
    RouteKind kind = RouteKind::success;
    double rt_ms = 0.0;
};

// Walk a chain: sum latencies over stations that have replicas, skip
// optional stations without replicas (degraded success), fail on a missing
// mandatory station. Memory over-pressure on a station's machines (only
// possible with over-commit) multiplies its latency.
inline RouteResult route_chain(const ServiceChain& chain, const ClusterState& state,
                               const Vec& rho_by_dep, const SimConfig& cfg) {
    RouteResult res;
    for (const auto& sid : chain.stations) {
        std::size_t d = state.deployment_index(sid);
        const Deployment& dep = state.deployments[d];
        if (dep.replicas == 0) {
            if (dep.optional_in_chain) {
                res.kind = RouteKind::degraded;
                continue;
            }
            return {RouteKind::failure, 0.0};
        }
        double lat = station_latency(rho_by_dep[d], dep.base_latency_ms, cfg.l_max);
        double worst_mem = 0.0;
        for (const auto& e : state.placement[d])
            worst_mem = std::max(worst_mem, state.utilization(1, e.machine));
        if (worst_mem > 1.0) lat *= cfg.mem_penalty;
        res.rt_ms += std::min(lat, cfg.l_max);
    }
    return res;
}

using ActionMap = std::map<std::string, DeploymentAction>;

// Extra inputs for observation building.
struct ObsContext {
    Vec rate_norm;        // per-deployment demand normalizer (req/s)
    double forecast_cpu = 0.0;  // predicted next-interval workload cpu util
};

inline ObservationVector build_observation(const ClusterState& state, const SimConfig& cfg,
                                           const Vec& rho_by_dep, const Vec& demand_rate,
                                           const ObsContext& ctx) {
    ObservationVector obs;
    std::size_t K = state.machines.size();
    double all_mem = 0.0;
    for (std::size_t k = 0; k < K; ++k) all_mem += state.utilization(1, k);
    if (K) all_mem /= static_cast<double>(K);
    for (std::size_t d = 0; d < state.deployments.size(); ++d) {
        Vec block(ObservationVector::features_per_deployment, 0.0);
        block[0] = std::min(rho_by_dep[d], 2.0);
        double host_mem = 0.0;
        int host_count = 0;
        for (const auto& e : state.placement[d]) {
            if (e.count > 0) {
                host_mem += state.utilization(1, e.machine);
                ++host_count;
            }
        }
        block[1] = host_count ? host_mem / host_count : all_mem;
        block[2] = static_cast<double>(state.deployments[d].replicas) / cfg.max_replicas;
        double norm = ctx.rate_norm.empty() ? 1.0 : ctx.rate_norm[d];
        block[3] = std::min(demand_rate[d] / std::max(norm, 1e-9), 2.0);
        block[4] = ctx.forecast_cpu;
        obs.blocks.push_back(std::move(block));
    }
    return obs;
}

struct StepResult {
    ClusterState state;
    SimLogRecord record;
    ObservationVector obs;
    double reward = 0.0;
    bool done = false;
};

// One simulation tick:
//   1. apply each deployment's action (vertical resize, then replica change)
//   2. draw Poisson arrivals per chain
//   3. compute station load; excess over capacity fails
//   4. route chains, collect response times and failures
//   5. reward from the tick's mean response time (failures count as l_max)
//      and the current utilization matrix
inline StepResult step(ClusterState state, const ActionMap& actions, double arrival_rate,
                       const SimConfig& cfg, const RewardConfig& rcfg, Rng& rng,
                       long tick_index, long horizon, const ObsContext& ctx) {
    if (arrival_rate < 0.0) throw std::invalid_argument("step: negative arrival rate");

    // 1. scaling actions, in deployment-id order (std::map iteration)
    for (const auto& [id, q] : actions) {
        std::size_t d = state.deployment_index(id);  // throws on unknown id
        const Deployment& dep = state.deployments[d];
        ScaleResult target = scale_deployment(q, dep, cfg.steps, cfg.max_replicas);
        auto resized = apply_vertical(std::move(state), d, target.cpu_per_replica,
                                      target.mem_per_replica, cfg.allow_overcommit);
        state = std::move(resized.state);
        auto placed = apply_placement(std::move(state), d, target.replicas, cfg.allow_overcommit);
        state = std::move(placed.state);
    }

    SimLogRecord rec;
    rec.tick = tick_index;

    // 2. arrivals
    std::vector<long> arrivals(state.chains.size(), 0);
    for (std::size_t c = 0; c < state.chains.size(); ++c) {
        arrivals[c] = generate_arrivals(arrival_rate * state.chains[c].weight, cfg.tick, rng);
        rec.arrivals += arrivals[c];
    }
    rec.chain_arrivals = arrivals;

    // 3. station demand from chains whose mandatory stations are all alive
    std::size_t D = state.deployments.size();
    Vec demand_rate(D, 0.0);
    std::vector<bool> chain_dead(state.chains.size(), false);
    for (std::size_t c = 0; c < state.chains.size(); ++c) {
        const auto& chain = state.chains[c];
        for (const auto& sid : chain.stations) {
            const Deployment& dep = state.deployments[state.deployment_index(sid)];
            if (dep.replicas == 0 && !dep.optional_in_chain) chain_dead[c] = true;
        }
        if (chain_dead[c]) continue;
        for (const auto& sid : chain.stations) {
            std::size_t d = state.deployment_index(sid);
            if (state.deployments[d].replicas > 0)
                demand_rate[d] += static_cast<double>(arrivals[c]) / cfg.tick;
        }
    }
    Vec rho(D, 0.0), serve_frac(D, 1.0);
    for (std::size_t d = 0; d < D; ++d) {
        const Deployment& dep = state.deployments[d];
        double cap = dep.replicas * dep.cpu_per_replica * dep.rate_per_core;
        if (cap > 0.0) {
            rho[d] = demand_rate[d] / cap;
            serve_frac[d] = demand_rate[d] > cap ? cap / demand_rate[d] : 1.0;
        }
    }
    rec.dep_utilization = rho;

    // 4. routing
    double rt_weighted = 0.0;
    for (std::size_t c = 0; c < state.chains.size(); ++c) {
        if (arrivals[c] == 0) continue;
        if (chain_dead[c]) {
            rec.failures += arrivals[c];
            continue;
        }
        RouteResult route = route_chain(state.chains[c], state, rho, cfg);
        double frac = 1.0;
        for (const auto& sid : state.chains[c].stations) {
            std::size_t d = state.deployment_index(sid);
            if (state.deployments[d].replicas > 0) frac *= serve_frac[d];
        }
        long succ = std::min<long>(arrivals[c],
                                   static_cast<long>(std::floor(arrivals[c] * frac)));
        long fail = arrivals[c] - succ;
        rec.successes += succ;
        rec.failures += fail;
        if (route.kind == RouteKind::degraded) rec.degraded += succ;
        if (succ > 0) {
            rec.rt_samples.push_back({route.rt_ms, succ});
            rt_weighted += route.rt_ms * succ;
        }
    }
    rec.mean_rt_ms = rec.successes > 0 ? rt_weighted / rec.successes : 0.0;
    rec.p99_rt_ms = weighted_nearest_rank(rec.rt_samples, 99.0);

    // 5. reward; failed requests enter the QoS mean at l_max
    double rt_for_reward = 0.0;
    if (rec.arrivals > 0)
        rt_for_reward = (rt_weighted + cfg.l_max * rec.failures) / rec.arrivals;
    rec.r_qos = qos_reward(rt_for_reward, cfg.rt_max);
    rec.r_util = util_reward(state.utilization, rcfg.u_pred);
    rec.reward = combined_reward(rec.r_qos, rec.r_util);

    StepResult out;
    out.record = rec;
    out.reward = rec.reward;
    out.done = tick_index + 1 >= horizon;
    out.obs = build_observation(state, cfg, rho, demand_rate, ctx);
    out.state = std::move(state);
    return out;
}

// ---------------------------------------------------------------------------
// Stateful environment: replays a per-tick arrival-rate series derived from
// a workload trace, with episode offsets for training variety.
// ---------------------------------------------------------------------------

struct EnvSeries {
    Vec rate;  // req/s per tick
    std::vector<std::pair<double, double>> signal;  // workload (cpu, mem) per tick
    Vec forecast_cpu;  // forecast_cpu[i] = prediction of interval i; empty = persistence
    double fallback_rate = 100.0;  // used when rate is empty
};

class SimEnv {
public:
    SimEnv(ClusterState initial, SimConfig cfg, RewardConfig rcfg, EnvSeries series,
           long episode_ticks)
        : initial_(std::move(initial)), cfg_(cfg), rcfg_(std::move(rcfg)),
          series_(std::move(series)), episode_ticks_(episode_ticks), rng_(cfg.seed) {
        state_ = initial_;
        for (const auto& d : initial_.deployments)
            rate_norm_.push_back(cfg_.max_replicas * d.cpu_per_replica * d.rate_per_core);
    }

    std::size_t deployment_count() const { return initial_.deployments.size(); }
    std::size_t teacher_state_dim() const {
        return deployment_count() * ObservationVector::features_per_deployment;
    }
    const ClusterState& state() const { return state_; }
    const SimConfig& config() const { return cfg_; }
    const RewardConfig& reward_config() const { return rcfg_; }
    long tick_index() const { return tick_; }
    long episode_ticks() const { return episode_ticks_; }

    ObservationVector reset(long episode) {
        state_ = initial_;
        tick_ = 0;
        episode_ = episode;
        rng_ = Rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(episode + 1)));
        offset_ = 0;
        if (!series_.rate.empty() && static_cast<long>(series_.rate.size()) > episode_ticks_) {
            long span = static_cast<long>(series_.rate.size()) - episode_ticks_;
            offset_ = (episode * 97) % span;
        }
        // expected (not sampled) demand for the initial observation
        double rate0 = rate_at(0);
        Vec demand(deployment_count(), 0.0), rho(deployment_count(), 0.0);
        for (const auto& chain : state_.chains) {
            for (const auto& sid : chain.stations) {
                std::size_t d = state_.deployment_index(sid);
                if (state_.deployments[d].replicas > 0) demand[d] += rate0 * chain.weight;
            }
        }
        for (std::size_t d = 0; d < deployment_count(); ++d) {
            const auto& dep = state_.deployments[d];
            double cap = dep.replicas * dep.cpu_per_replica * dep.rate_per_core;
            if (cap > 0.0) rho[d] = demand[d] / cap;
        }
        obs_ = build_observation(state_, cfg_, rho, demand, obs_context(0));
        return obs_;
    }

    struct TickOut {
        SimLogRecord record;
        double reward = 0.0;
        bool done = false;
    };

    TickOut tick(const ActionMap& actions) {
        StepResult r = step(std::move(state_), actions, rate_at(tick_), cfg_, rcfg_, rng_,
                            tick_, episode_ticks_, obs_context(tick_ + 1));
        state_ = std::move(r.state);
        obs_ = std::move(r.obs);
        ++tick_;
        return {std::move(r.record), r.reward, r.done};
    }

    const ObservationVector& last_obs() const { return obs_; }

    // Student view: own feature block plus cluster-level context.
    Vec local_state(std::size_t dep) const {
        Vec s = obs_.blocks.at(dep);
        std::size_t K = state_.machines.size();
        double cpu = 0.0, mem = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            cpu += state_.utilization(0, k);
            mem += state_.utilization(1, k);
        }
        if (K) {
            cpu /= static_cast<double>(K);
            mem /= static_cast<double>(K);
        }
        double pred_cpu = 0.0, pred_mem = 0.0;
        if (rcfg_.u_pred.cols > 0) {
            for (std::size_t k = 0; k < rcfg_.u_pred.cols; ++k) {
                pred_cpu += rcfg_.u_pred(0, k);
                pred_mem += rcfg_.u_pred(1, k);
            }
            pred_cpu /= static_cast<double>(rcfg_.u_pred.cols);
            pred_mem /= static_cast<double>(rcfg_.u_pred.cols);
        }
        s.push_back(cpu);
        s.push_back(mem);
        s.push_back(pred_cpu);
        s.push_back(pred_mem);
        return s;
    }

    double rate_at(long t) const {
        if (series_.rate.empty()) return series_.fallback_rate;
        long i = std::min<long>(offset_ + t, static_cast<long>(series_.rate.size()) - 1);
        return series_.rate[i];
    }

private:
    ObsContext obs_context(long next_tick) const {
        ObsContext ctx;
        ctx.rate_norm = rate_norm_;
        long i = offset_ + next_tick;
        if (!series_.forecast_cpu.empty()) {
            i = std::min<long>(i, static_cast<long>(series_.forecast_cpu.size()) - 1);
            ctx.forecast_cpu = series_.forecast_cpu[std::max<long>(i, 0)];
        } else if (!series_.signal.empty()) {
            long j = std::min<long>(std::max<long>(i - 1, 0),
                                    static_cast<long>(series_.signal.size()) - 1);
            ctx.forecast_cpu = series_.signal[j].first;  // persistence
        } else {
            ctx.forecast_cpu = 0.5;
        }
        return ctx;
    }

    ClusterState initial_, state_;
    SimConfig cfg_;
    RewardConfig rcfg_;
    EnvSeries series_;
    long episode_ticks_;
    long tick_ = 0;
    long episode_ = 0;
    long offset_ = 0;
    Rng rng_;
    Vec rate_norm_;
    ObservationVector obs_;
};

// Adapter exposing the scenario simulation as an episodic RL environment
// for the teacher: one RL step spans control_interval ticks, the action is
// applied on the first tick and the reward is the interval mean.
class TeacherScenarioEnv {
public:
    TeacherScenarioEnv(SimEnv& env, int control_interval, long steps_per_episode)
        : env_(env), interval_(control_interval), steps_(steps_per_episode) {
        if (interval_ < 1) throw std::invalid_argument("control_interval must be >= 1");
        dep_ids_.clear();
        for (std::size_t d = 0; d < env_.deployment_count(); ++d)
            dep_ids_.push_back(env_.state().deployments[d].id);
    }

    std::size_t state_dim() const { return env_.teacher_state_dim(); }
    std::size_t action_dim() const { return 3 * env_.deployment_count(); }

    Vec reset(long episode) {
        stats_ = {};
        Vec s = env_.reset(episode).teacher_state();
        refresh_locals();
        return s;
    }

    struct Out {
        Vec state;
        double reward = 0.0;
        bool done = false;
    };

    Out step(const Vec& action) {
        if (action.size() != action_dim())
            throw std::invalid_argument("TeacherScenarioEnv: action dimension mismatch");
        refresh_locals();  // the states this action was computed from
        ActionMap map;
        for (std::size_t d = 0; d < dep_ids_.size(); ++d)
            map[dep_ids_[d]] = {action[3 * d], action[3 * d + 1], action[3 * d + 2]};
        double reward_sum = 0.0;
        bool done = false;
        for (int i = 0; i < interval_ && !done; ++i) {
            auto out = env_.tick(i == 0 ? map : ActionMap{});
            reward_sum += out.reward;
            done = out.done;
            stats_.reward_sum += out.reward;
            stats_.arrivals += out.record.arrivals;
            stats_.failures += out.record.failures;
            stats_.rt_weighted += out.record.mean_rt_ms * out.record.successes;
            stats_.successes += out.record.successes;
            stats_.ticks += 1;
        }
        Out o;
        o.reward = reward_sum / interval_;
        o.done = done;
        o.state = env_.last_obs().teacher_state();
        return o;
    }

    struct EpStats {
        double reward_sum = 0.0;
        long ticks = 0;
        long arrivals = 0, failures = 0, successes = 0;
        double rt_weighted = 0.0;

        double mean_reward() const { return ticks ? reward_sum / ticks : 0.0; }
        double mean_rt_ms() const { return successes ? rt_weighted / successes : 0.0; }
        double failure_rate() const {
            return arrivals ? static_cast<double>(failures) / arrivals : 0.0;
        }
    };

    EpStats last_episode_stats() const { return stats_; }
    SimEnv& sim() { return env_; }
    const std::vector<std::string>& deployment_ids() const { return dep_ids_; }
    const std::vector<Vec>& locals_for_last_action() const { return locals_; }

private:
    void refresh_locals() {
        locals_.clear();
        for (std::size_t d = 0; d < env_.deployment_count(); ++d)
            locals_.push_back(env_.local_state(d));
    }

    SimEnv& env_;
    int interval_;
    long steps_;
    std::vector<std::string> dep_ids_;
    std::vector<Vec> locals_;
    EpStats stats_;
};

} // namespace drpc

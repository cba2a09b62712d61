#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drpc/io.hpp"
#include "drpc/neural.hpp"
#include "drpc/rng.hpp"

namespace drpc {

struct TD3Config {
    double gamma = 0.99;
    double polyak = 0.995;        // rho in the soft update
    int policy_update = 2;
    double expl_noise = 0.1;      // sigma
    double target_noise = 0.2;    // sigma'
    double noise_clip = 0.5;      // c
    double a_low = -1.0;
    double a_high = 1.0;
    std::size_t batch_size = 64;
    std::size_t buffer_capacity = 100000;
    long warmup_steps = 1000;
    long episodes = 0;            // M
    long steps_per_episode = 0;   // T
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    double grad_clip = 10.0;  // global-norm cap per update; <= 0 disables
    std::vector<std::size_t> actor_hidden{64, 64};
    std::vector<std::size_t> critic_hidden{64, 64};
    Activation hidden_activation = Activation::relu;
    std::uint64_t seed = 0;
};

struct Experience {
    Vec s;
    Vec a;
    double r = 0.0;
    Vec s2;
    double d = 0.0;
};

// Ring buffer over transitions; batches are drawn uniformly without
// replacement (Floyd's algorithm).
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be > 0");
    }

    void push(Experience e) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(e));
        } else {
            data_[cursor_] = std::move(e);
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Experience& at(std::size_t i) const { return data_.at(i); }

    std::vector<const Experience*> sample(std::size_t batch, Rng& rng) const {
        if (data_.empty()) throw std::invalid_argument("ReplayBuffer: empty");
        std::size_t n = data_.size();
        std::size_t k = std::min(batch, n);
        std::vector<std::size_t> chosen;
        chosen.reserve(k);
        for (std::size_t j = n - k; j < n; ++j) {
            std::size_t t = rng.index(j + 1);
            bool dup = false;
            for (std::size_t c : chosen)
                if (c == t) dup = true;
            chosen.push_back(dup ? j : t);
        }
        std::vector<const Experience*> out;
        out.reserve(k);
        for (std::size_t i : chosen) out.push_back(&data_[i]);
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Experience> data_;
    std::size_t cursor_ = 0;
};

struct TD3Agent {
    TD3Config cfg;
    DenseNet actor, critic1, critic2;
    DenseNet actor_target, critic1_target, critic2_target;
    AdamState actor_opt, critic1_opt, critic2_opt;
    std::size_t state_dim = 0, action_dim = 0;
};

inline TD3Agent make_td3_agent(std::size_t state_dim, std::size_t action_dim,
                               const TD3Config& cfg) {
    TD3Agent a;
    a.cfg = cfg;
    a.state_dim = state_dim;
    a.action_dim = action_dim;
    Rng actor_rng(cfg.seed);
    Rng c1_rng(cfg.seed + 1);
    Rng c2_rng(cfg.seed + 2);

    std::vector<std::size_t> adims{state_dim};
    std::vector<Activation> aacts;
    for (std::size_t h : cfg.actor_hidden) {
        adims.push_back(h);
        aacts.push_back(cfg.hidden_activation);
    }
    adims.push_back(action_dim);
    aacts.push_back(Activation::tanh_fn);
    a.actor = make_dense(adims, aacts, actor_rng);
    // small final layer keeps the tanh head in its linear region at the
    // start, so early critic noise cannot pin the policy to the bounds
    for (auto& w : a.actor.layers.back().w.data) w *= 0.1;
    for (auto& b : a.actor.layers.back().b) b *= 0.1;

    std::vector<std::size_t> cdims{state_dim + action_dim};
    std::vector<Activation> cacts;
    for (std::size_t h : cfg.critic_hidden) {
        cdims.push_back(h);
        cacts.push_back(cfg.hidden_activation);
    }
    cdims.push_back(1);
    cacts.push_back(Activation::identity);
    a.critic1 = make_dense(cdims, cacts, c1_rng);
    a.critic2 = make_dense(cdims, cacts, c2_rng);

    a.actor_target = a.actor;
    a.critic1_target = a.critic1;
    a.critic2_target = a.critic2;
    return a;
}

inline Vec concat_sa(const Vec& s, const Vec& a) {
    Vec x;
    x.reserve(s.size() + a.size());
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), a.begin(), a.end());
    return x;
}

// a = clip(pi(s) + eps, a_low, a_high); sigma = 0 is the deterministic
// policy and consumes no randomness.
inline Vec select_action(const TD3Agent& agent, const Vec& s, double sigma, Rng& rng) {
    Vec a = dense_forward(agent.actor, s);
    for (auto& x : a) {
        if (sigma > 0.0) x += rng.normal(0.0, sigma);
        x = std::min(agent.cfg.a_high, std::max(agent.cfg.a_low, x));
    }
    return a;
}

// target policy smoothing: a' = clip(pi'(s') + clip(eps, -c, c), low, high)
inline Vec smoothed_target_action(const TD3Agent& agent, const Vec& s2, Rng& rng) {
    Vec a = dense_forward(agent.actor_target, s2);
    const auto& c = agent.cfg;
    for (auto& x : a) {
        double eps = 0.0;
        if (c.target_noise > 0.0) {
            eps = rng.normal(0.0, c.target_noise);
            eps = std::min(c.noise_clip, std::max(-c.noise_clip, eps));
        }
        x = std::min(c.a_high, std::max(c.a_low, x + eps));
    }
    return a;
}

// y = r + gamma (1 - d) min(Q1'(s', a'), Q2'(s', a'))
inline double td_target(const TD3Agent& agent, double r, const Vec& s2, const Vec& a2, double d) {
    if (d >= 1.0) return r;
    Vec x = concat_sa(s2, a2);
    double q1 = dense_forward(agent.critic1_target, x)[0];
    double q2 = dense_forward(agent.critic2_target, x)[0];
    return r + agent.cfg.gamma * (1.0 - d) * std::min(q1, q2);
}

// One gradient step on each critic against the clipped double-Q target.
// Returns the pre-step losses.
inline std::pair<double, double> critic_update(TD3Agent& agent,
                                               const std::vector<const Experience*>& batch,
                                               Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("critic_update: empty batch");
    std::size_t n = batch.size();
    Vec targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec a2 = smoothed_target_action(agent, batch[i]->s2, rng);
        targets[i] = td_target(agent, batch[i]->r, batch[i]->s2, a2, batch[i]->d);
    }
    double loss1 = 0.0, loss2 = 0.0;
    DenseGrads g1 = zero_grads(agent.critic1);
    DenseGrads g2 = zero_grads(agent.critic2);
    for (std::size_t i = 0; i < n; ++i) {
        Vec x = concat_sa(batch[i]->s, batch[i]->a);
        DenseCache c1, c2;
        double q1 = dense_forward(agent.critic1, x, &c1)[0];
        double q2 = dense_forward(agent.critic2, x, &c2)[0];
        double d1 = q1 - targets[i];
        double d2 = q2 - targets[i];
        loss1 += d1 * d1;
        loss2 += d2 * d2;
        accumulate(g1, dense_backward(agent.critic1, c1, {2.0 * d1 / n}));
        accumulate(g2, dense_backward(agent.critic2, c2, {2.0 * d2 / n}));
    }
    loss1 /= n;
    loss2 /= n;
    if (agent.cfg.grad_clip > 0.0) {
        clip_grad_norm(g1, agent.cfg.grad_clip);
        clip_grad_norm(g2, agent.cfg.grad_clip);
    }
    adam_step(agent.critic1.param_views(), g1.grad_views(), agent.critic1_opt, agent.cfg.critic_lr);
    adam_step(agent.critic2.param_views(), g2.grad_views(), agent.critic2_opt, agent.cfg.critic_lr);
    return {loss1, loss2};
}

// One gradient step ascending Q1(s, pi(s)); critic parameters stay frozen.
// Returns the pre-step loss (-mean Q).
inline double actor_update(TD3Agent& agent, const std::vector<const Experience*>& batch) {
    if (batch.empty()) throw std::invalid_argument("actor_update: empty batch");
    std::size_t n = batch.size();
    DenseGrads total = zero_grads(agent.actor);
    double loss = 0.0;
    for (const Experience* e : batch) {
        DenseCache actor_cache;
        Vec a = dense_forward(agent.actor, e->s, &actor_cache);
        Vec x = concat_sa(e->s, a);
        DenseCache critic_cache;
        double q = dense_forward(agent.critic1, x, &critic_cache)[0];
        loss -= q / n;
        DenseGrads cg = dense_backward(agent.critic1, critic_cache, {1.0});
        Vec da(agent.action_dim);
        for (std::size_t j = 0; j < agent.action_dim; ++j)
            da[j] = -cg.dx[agent.state_dim + j] / n;
        accumulate(total, dense_backward(agent.actor, actor_cache, da));
    }
    if (agent.cfg.grad_clip > 0.0) clip_grad_norm(total, agent.cfg.grad_clip);
    adam_step(agent.actor.param_views(), total.grad_views(), agent.actor_opt, agent.cfg.actor_lr);
    return loss;
}

inline void soft_update_targets(TD3Agent& agent) {
    double rho = agent.cfg.polyak;
    soft_update(agent.actor_target.param_views(), std::as_const(agent.actor).param_views(), rho);
    soft_update(agent.critic1_target.param_views(), std::as_const(agent.critic1).param_views(), rho);
    soft_update(agent.critic2_target.param_views(), std::as_const(agent.critic2).param_views(), rho);
}

struct EpisodeRow {
    long episode = 0;
    double mean_reward = 0.0;
    double mean_rt_ms = 0.0;
    double failure_rate = 0.0;
};

struct TrainStepInfo {
    long env_step = 0;
    long episode = 0;
    bool episode_ended = false;
    long update_count = 0;
    bool warmup = false;
    bool updated = false;
    bool policy_updated = false;
    const Vec* state = nullptr;
    const Vec* action = nullptr;
    double reward = 0.0;
    bool done = false;
};

// Full training loop: act with exploration noise (uniform during warmup),
// store transitions, update critics each step once warm, delay the actor
// and target updates by policy_update. Deterministic for a fixed seed.
template <class Env, class Hook>
std::vector<EpisodeRow> train_td3(TD3Agent& agent, Env& env, Hook&& hook) {
    const TD3Config& cfg = agent.cfg;
    ReplayBuffer buffer(cfg.buffer_capacity);
    Rng rng(cfg.seed + 0x5851f42d4c957f2dULL);
    std::vector<EpisodeRow> curve;
    long global_step = 0;
    long update_count = 0;
    for (long ep = 0; ep < cfg.episodes; ++ep) {
        Vec s = env.reset(ep);
        double reward_sum = 0.0;
        long steps = 0;
        for (long t = 0; t < cfg.steps_per_episode; ++t) {
            bool warmup = global_step < cfg.warmup_steps;
            Vec a(agent.action_dim);
            if (warmup) {
                for (auto& x : a) x = rng.uniform(cfg.a_low, cfg.a_high);
            } else {
                a = select_action(agent, s, cfg.expl_noise, rng);
            }
            auto out = env.step(a);
            buffer.push({s, a, out.reward, out.state, out.done ? 1.0 : 0.0});
            reward_sum += out.reward;
            ++steps;

            TrainStepInfo info;
            info.env_step = global_step;
            info.episode = ep;
            info.episode_ended = out.done || t + 1 == cfg.steps_per_episode;
            info.warmup = warmup;
            info.state = &s;
            info.action = &a;
            info.reward = out.reward;
            info.done = out.done;

            if (!warmup && buffer.size() >= cfg.batch_size) {
                auto batch = buffer.sample(cfg.batch_size, rng);
                critic_update(agent, batch, rng);
                ++update_count;
                info.updated = true;
                if (update_count % cfg.policy_update == 0) {
                    actor_update(agent, batch);
                    soft_update_targets(agent);
                    info.policy_updated = true;
                }
            }
            info.update_count = update_count;
            hook(agent, info);

            s = std::move(out.state);
            ++global_step;
            if (out.done) break;
        }
        EpisodeRow row;
        row.episode = ep;
        row.mean_reward = steps ? reward_sum / steps : 0.0;
        if constexpr (requires { env.last_episode_stats(); }) {
            auto st = env.last_episode_stats();
            row.mean_rt_ms = st.mean_rt_ms();
            row.failure_rate = st.failure_rate();
        }
        curve.push_back(row);
    }
    return curve;
}

template <class Env>
std::vector<EpisodeRow> train_td3(TD3Agent& agent, Env& env) {
    return train_td3(agent, env, [](const TD3Agent&, const TrainStepInfo&) {});
}

inline void save_td3(const TD3Agent& agent, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto save = [&](const DenseNet& n, const char* name) {
        auto f = open_out(dir + "/" + name);
        save_dense(f, n);
    };
    save(agent.actor, "actor.txt");
    save(agent.critic1, "critic1.txt");
    save(agent.critic2, "critic2.txt");
    save(agent.actor_target, "actor_target.txt");
    save(agent.critic1_target, "critic1_target.txt");
    save(agent.critic2_target, "critic2_target.txt");
}

inline TD3Agent load_td3(const std::string& dir, const TD3Config& cfg) {
    TD3Agent a;
    a.cfg = cfg;
    auto load = [&](const char* name) {
        auto f = open_in(dir + "/" + name);
        return load_dense(f);
    };
    a.actor = load("actor.txt");
    a.critic1 = load("critic1.txt");
    a.critic2 = load("critic2.txt");
    a.actor_target = load("actor_target.txt");
    a.critic1_target = load("critic1_target.txt");
    a.critic2_target = load("critic2_target.txt");
    a.state_dim = a.actor.input_dim();
    a.action_dim = a.actor.output_dim();
    return a;
}

} // namespace drpc

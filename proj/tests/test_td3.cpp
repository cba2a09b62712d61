#include <catch2/catch.hpp>

#include <cmath>

#include "drpc/td3.hpp"
#include "support/oracles.hpp"

using namespace drpc;
using namespace drpc::testing;

namespace {

TD3Config small_cfg() {
    TD3Config cfg;
    cfg.actor_hidden = {16, 16};
    cfg.critic_hidden = {16, 16};
    cfg.seed = 5;
    return cfg;
}

std::vector<Experience> toy_batch(std::size_t n, std::uint64_t seed, std::size_t sdim,
                                  std::size_t adim) {
    Rng rng(seed);
    std::vector<Experience> out;
    for (std::size_t i = 0; i < n; ++i) {
        Experience e;
        e.s.resize(sdim);
        e.a.resize(adim);
        e.s2.resize(sdim);
        for (auto& v : e.s) v = rng.uniform(-1.0, 1.0);
        for (auto& v : e.a) v = rng.uniform(-1.0, 1.0);
        for (auto& v : e.s2) v = rng.uniform(-1.0, 1.0);
        e.r = rng.uniform(0.0, 1.0);
        e.d = rng.uniform() < 0.1 ? 1.0 : 0.0;
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace

TEST_CASE("replay buffer ring semantics and sampling") {
    ReplayBuffer buf(3);
    for (int i = 0; i < 5; ++i) buf.push({{static_cast<double>(i)}, {0.0}, 0.0, {0.0}, 0.0});
    REQUIRE(buf.size() == 3);
    // holds exactly the most recent `capacity` transitions
    std::vector<double> held;
    for (std::size_t i = 0; i < buf.size(); ++i) held.push_back(buf.at(i).s[0]);
    std::sort(held.begin(), held.end());
    REQUIRE(held == std::vector<double>{2.0, 3.0, 4.0});

    // batch sampling: without replacement
    Rng rng(1);
    for (int it = 0; it < 50; ++it) {
        auto batch = buf.sample(3, rng);
        std::vector<const Experience*> uniq(batch.begin(), batch.end());
        std::sort(uniq.begin(), uniq.end());
        REQUIRE(std::adjacent_find(uniq.begin(), uniq.end()) == uniq.end());
    }
}

TEST_CASE("select_action clips and respects sigma = 0") {
    TD3Agent agent = make_td3_agent(2, 2, small_cfg());
    Rng rng(3);
    Vec s{0.2, -0.4};
    Vec a1 = select_action(agent, s, 0.0, rng);
    Vec a2 = select_action(agent, s, 0.0, rng);
    REQUIRE(a1 == a2);  // deterministic policy
    for (int it = 0; it < 200; ++it) {
        Vec a = select_action(agent, s, 0.5, rng);
        for (double v : a) {
            REQUIRE(v >= -1.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("smoothed target action stays within the noise clip") {
    TD3Agent agent = make_td3_agent(3, 2, small_cfg());
    Rng rng(11);
    for (int it = 0; it < 300; ++it) {
        Vec s2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        Vec base = dense_forward(agent.actor_target, s2);
        for (auto& v : base) v = std::clamp(v, -1.0, 1.0);
        Vec a2 = smoothed_target_action(agent, s2, rng);
        for (std::size_t i = 0; i < a2.size(); ++i) {
            REQUIRE(std::abs(a2[i] - base[i]) <= agent.cfg.noise_clip + 1e-12);
            REQUIRE(a2[i] >= -1.0);
            REQUIRE(a2[i] <= 1.0);
        }
    }
}

TEST_CASE("td target arithmetic") {
    TD3Agent agent = make_td3_agent(2, 1, small_cfg());

    // terminal: y = r regardless of the critics
    REQUIRE(td_target(agent, 0.37, {0.0, 0.0}, {0.0}, 1.0) == 0.37);

    // hand-built critics: Q1' = 1.0, Q2' = 0.8 everywhere
    for (auto& l : agent.critic1_target.layers)
        for (auto& x : l.w.data) x = 0.0;
    for (auto& l : agent.critic2_target.layers)
        for (auto& x : l.w.data) x = 0.0;
    for (auto& l : agent.critic1_target.layers)
        for (auto& x : l.b) x = 0.0;
    for (auto& l : agent.critic2_target.layers)
        for (auto& x : l.b) x = 0.0;
    agent.critic1_target.layers.back().b[0] = 1.0;
    agent.critic2_target.layers.back().b[0] = 0.8;
    agent.cfg.gamma = 0.9;
    double y = td_target(agent, 0.5, {0.1, 0.2}, {0.3}, 0.0);
    REQUIRE(y == Approx(0.5 + 0.9 * 0.8));

    // swapping the critics leaves the target unchanged (min symmetry)
    std::swap(agent.critic1_target, agent.critic2_target);
    REQUIRE(td_target(agent, 0.5, {0.1, 0.2}, {0.3}, 0.0) == Approx(y));

    // clipped double-Q: the target never exceeds either individual bootstrap
    TD3Agent fresh = make_td3_agent(3, 2, small_cfg());
    Rng rng(23);
    for (int it = 0; it < 200; ++it) {
        Vec s2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        Vec a2 = smoothed_target_action(fresh, s2, rng);
        double r = rng.uniform(0.0, 1.0);
        double yy = td_target(fresh, r, s2, a2, 0.0);
        Vec x = concat_sa(s2, a2);
        double q1 = dense_forward(fresh.critic1_target, x)[0];
        double q2 = dense_forward(fresh.critic2_target, x)[0];
        REQUIRE(yy <= r + fresh.cfg.gamma * q1 + 1e-12);
        REQUIRE(yy <= r + fresh.cfg.gamma * q2 + 1e-12);
    }
}

TEST_CASE("critic update: zero loss leaves parameters unchanged") {
    TD3Config cfg = small_cfg();
    cfg.gamma = 0.0;  // y = r exactly
    TD3Agent agent = make_td3_agent(1, 1, cfg);
    // critics that output exactly 0 -> feed transitions with r = 0, d = 1
    for (auto net : {&agent.critic1, &agent.critic2}) {
        for (auto& l : net->layers) {
            for (auto& x : l.w.data) x = 0.0;
            for (auto& x : l.b) x = 0.0;
        }
    }
    std::vector<Experience> store{{{0.3}, {0.1}, 0.0, {0.2}, 1.0}};
    std::vector<const Experience*> batch{&store[0]};
    Rng rng(2);
    auto before = agent.critic1.layers[0].w.data;
    auto [l1, l2] = critic_update(agent, batch, rng);
    REQUIRE(l1 == 0.0);
    REQUIRE(l2 == 0.0);
    REQUIRE(agent.critic1.layers[0].w.data == before);
}

TEST_CASE("critic loss arithmetic: single transition, Q=0, y=1") {
    TD3Config cfg = small_cfg();
    TD3Agent agent = make_td3_agent(1, 1, cfg);
    for (auto net : {&agent.critic1, &agent.critic2}) {
        for (auto& l : net->layers) {
            for (auto& x : l.w.data) x = 0.0;
            for (auto& x : l.b) x = 0.0;
        }
    }
    // d = 1 so y = r = 1 regardless of targets
    std::vector<Experience> store{{{0.5}, {0.2}, 1.0, {0.1}, 1.0}};
    std::vector<const Experience*> batch{&store[0]};
    Rng rng(4);
    auto [l1, l2] = critic_update(agent, batch, rng);
    REQUIRE(l1 == Approx(1.0));
    REQUIRE(l2 == Approx(1.0));

    REQUIRE_THROWS(critic_update(agent, {}, rng));
    REQUIRE_THROWS(actor_update(agent, {}));
}

TEST_CASE("critic gradient matches finite differences on a 2-transition batch") {
    TD3Config cfg = small_cfg();
    cfg.critic_lr = 0.0;  // keep parameters fixed while we probe the loss
    TD3Agent agent = make_td3_agent(2, 1, cfg);
    auto batch_store = toy_batch(2, 31, 2, 1);
    std::vector<const Experience*> batch{&batch_store[0], &batch_store[1]};

    // freeze targets: sigma'=0 so y is deterministic
    agent.cfg.target_noise = 0.0;
    Vec targets(2);
    for (std::size_t i = 0; i < 2; ++i) {
        Rng r(0);
        Vec a2 = smoothed_target_action(agent, batch[i]->s2, r);
        targets[i] = td_target(agent, batch[i]->r, batch[i]->s2, a2, batch[i]->d);
    }
    auto loss_fn = [&] {
        double acc = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            Vec x = concat_sa(batch[i]->s, batch[i]->a);
            double q = dense_forward(agent.critic1, x)[0];
            acc += (q - targets[i]) * (q - targets[i]) / 2.0;
        }
        return acc;
    };
    DenseGrads analytic = zero_grads(agent.critic1);
    for (std::size_t i = 0; i < 2; ++i) {
        Vec x = concat_sa(batch[i]->s, batch[i]->a);
        DenseCache cache;
        double q = dense_forward(agent.critic1, x, &cache)[0];
        accumulate(analytic, dense_backward(agent.critic1, cache, {2.0 * (q - targets[i]) / 2.0}));
    }
    Vec fd = finite_diff(agent.critic1.param_views(), loss_fn);
    REQUIRE(max_rel_error(flatten(analytic.grad_views()), fd) < 1e-4);
}

TEST_CASE("actor update: constant critic gives zero gradient") {
    TD3Config cfg = small_cfg();
    TD3Agent agent = make_td3_agent(2, 1, cfg);
    for (auto& l : agent.critic1.layers) {
        for (auto& x : l.w.data) x = 0.0;
        for (auto& x : l.b) x = 0.0;
    }
    agent.critic1.layers.back().b[0] = 3.0;  // Q == 3 everywhere
    auto before = agent.actor.layers[0].w.data;
    auto batch_store = toy_batch(4, 9, 2, 1);
    std::vector<const Experience*> batch;
    for (auto& e : batch_store) batch.push_back(&e);
    double loss = actor_update(agent, batch);
    REQUIRE(loss == Approx(-3.0));
    REQUIRE(agent.actor.layers[0].w.data == before);
}

TEST_CASE("actor gradient drives the policy toward the critic's optimum") {
    // The quadratic -(a - 0.3)^2 peaks at a = 0.3; a critic scoring
    // -|a - 0.3| shares that unique optimum and two relu units encode it
    // exactly, so repeated actor updates must push pi(s) onto 0.3.
    TD3Config cfg = small_cfg();
    cfg.actor_lr = 5e-3;
    TD3Agent agent = make_td3_agent(1, 1, cfg);

    DenseNet exact;
    DenseLayer h;
    h.w = Matrix(2, 2);
    h.w(0, 0) = 0.0;
    h.w(0, 1) = 1.0;   // relu(a - 0.3)
    h.w(1, 0) = 0.0;
    h.w(1, 1) = -1.0;  // relu(0.3 - a)
    h.b = {-0.3, 0.3};
    h.act = Activation::relu;
    DenseLayer out;
    out.w = Matrix(1, 2);
    out.w(0, 0) = -1.0;
    out.w(0, 1) = -1.0;
    out.b = {0.0};
    out.act = Activation::identity;
    exact.layers = {h, out};
    agent.critic1 = exact;

    auto batch_store = toy_batch(16, 21, 1, 1);
    std::vector<const Experience*> batch;
    for (auto& e : batch_store) batch.push_back(&e);
    for (int it = 0; it < 2000; ++it) actor_update(agent, batch);
    for (const auto* e : batch) {
        double a = dense_forward(agent.actor, e->s)[0];
        REQUIRE(a == Approx(0.3).margin(0.05));
    }
}

TEST_CASE("train_td3: zero episodes leave the agent untouched") {
    TD3Config cfg = small_cfg();
    cfg.episodes = 0;
    cfg.steps_per_episode = 10;
    TD3Agent agent = make_td3_agent(1, 1, cfg);
    auto before = agent.actor.layers[0].w.data;
    ToyTrackingEnv env(3);
    auto curve = train_td3(agent, env);
    REQUIRE(curve.empty());
    REQUIRE(agent.actor.layers[0].w.data == before);
}

TEST_CASE("delayed policy updates: actor and targets move only on schedule") {
    TD3Config cfg = small_cfg();
    cfg.episodes = 2;
    cfg.steps_per_episode = 40;
    cfg.warmup_steps = 20;
    cfg.batch_size = 8;
    cfg.policy_update = 3;
    TD3Agent agent = make_td3_agent(1, 1, cfg);
    ToyTrackingEnv env(7);

    Vec last_actor, last_target;
    bool first = true;
    auto snapshot = [](const DenseNet& n) { return n.layers[0].w.data; };
    train_td3(agent, env, [&](const TD3Agent& a, const TrainStepInfo& info) {
        if (!first) {
            bool actor_moved = snapshot(a.actor) != last_actor;
            bool target_moved = snapshot(a.actor_target) != last_target;
            REQUIRE(actor_moved == info.policy_updated);
            REQUIRE(target_moved == info.policy_updated);
            if (info.policy_updated) REQUIRE(info.update_count % cfg.policy_update == 0);
        }
        last_actor = snapshot(a.actor);
        last_target = snapshot(a.actor_target);
        first = false;
    });
}

TEST_CASE("train_td3 is deterministic per seed") {
    auto run = [](std::uint64_t seed) {
        TD3Config cfg = small_cfg();
        cfg.seed = seed;
        cfg.episodes = 8;
        cfg.steps_per_episode = 30;
        cfg.warmup_steps = 50;
        cfg.batch_size = 16;
        TD3Agent agent = make_td3_agent(1, 1, cfg);
        ToyTrackingEnv env(seed);
        return train_td3(agent, env);
    };
    auto a = run(99);
    auto b = run(99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(a[i].mean_reward == b[i].mean_reward);
}

TEST_CASE("td3 checkpoints round-trip") {
    TD3Agent agent = make_td3_agent(2, 1, small_cfg());
    save_td3(agent, "/tmp/drpc_test_td3");
    TD3Agent back = load_td3("/tmp/drpc_test_td3", agent.cfg);
    REQUIRE(back.state_dim == 2);
    REQUIRE(back.action_dim == 1);
    Vec s{0.4, -0.2};
    REQUIRE(dense_forward(back.actor, s) == dense_forward(agent.actor, s));
    Vec x{0.4, -0.2, 0.5};
    REQUIRE(dense_forward(back.critic2_target, x) == dense_forward(agent.critic2_target, x));
}

// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Everything is seeded; reruns produce identical results.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "drpc/orchestrator.hpp"
#include "support/oracles.hpp"

using namespace drpc;
using namespace drpc::testing;
namespace fs = std::filesystem;

namespace {

const std::string kData = DRPC_DATA_DIR;
const std::string kCli = DRPC_CLI_PATH;
const std::string kScenario = kData + "/scenario_desk.json";
const std::string kTrace = kData + "/sample_trace.csv";
const std::string kWork = "/tmp/drpc_acceptance";

int failures = 0;

void report_result(int idx, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// --- 1: reward formulas ----------------------------------------------------

void criterion_reward() {
    bool ok = true;
    std::string detail;
    double e1 = qos_reward(2.0 * 200.0, 200.0);
    if (std::abs(e1 - std::exp(-1.0)) > 1e-9) ok = false;
    // continuity at rt_max: both branches meet at 1
    if (qos_reward(200.0, 200.0) != 1.0) ok = false;
    if (std::abs(qos_reward(200.0 + 1e-9, 200.0) - 1.0) > 1e-12) ok = false;
    Matrix u_pred = RewardConfig::default_u_pred(4);
    if (util_reward(u_pred, u_pred) != 1.0) ok = false;
    Rng rng(17);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        double rt = rng.uniform(0.0, 3000.0);
        Matrix u(2, 4);
        for (auto& x : u.data) x = rng.uniform(0.0, 1.5);
        double r = combined_reward(qos_reward(rt, 200.0), util_reward(u, u_pred));
        worst = std::max(worst, r);
        if (r > 1.0 || r <= 0.0) ok = false;
    }
    detail = "qos(2RTmax)=" + fmt_double(e1) + ", max combined over grid=" + fmt_double(worst);
    report_result(1, "reward formulas exact", ok, detail);
}

// --- 2: gradient suite ------------------------------------------------------

void criterion_gradients() {
    bool ok = true;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 22; ++seed) {
        Rng rng(seed * 311 + 5);
        std::size_t in = 2 + rng.index(4), hid = 3 + rng.index(6), out = 1 + rng.index(3);
        DenseNet net = make_dense({in, hid, out}, {Activation::tanh_fn, Activation::identity}, rng);
        Vec x(in), target(out);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : target) v = rng.uniform(-1.0, 1.0);
        auto loss = [&] {
            Vec y = dense_forward(net, x);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i)
                acc += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
            return acc;
        };
        DenseCache cache;
        Vec y = dense_forward(net, x, &cache);
        Vec dy(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) dy[i] = y[i] - target[i];
        DenseGrads g = dense_backward(net, cache, dy);
        double err = max_rel_error(flatten(g.grad_views()), finite_diff(net.param_views(), loss));
        worst = std::max(worst, err);

        GruCell cell = make_gru(2, 3 + rng.index(4), rng);
        std::vector<Vec> seq;
        std::size_t T = 2 + rng.index(3);
        for (std::size_t t = 0; t < T; ++t)
            seq.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
        Vec gtarget(cell.hidden);
        for (auto& v : gtarget) v = rng.uniform(-1.0, 1.0);
        auto gloss = [&] {
            Vec h = gru_forward(cell, seq);
            double acc = 0.0;
            for (std::size_t i = 0; i < h.size(); ++i)
                acc += 0.5 * (h[i] - gtarget[i]) * (h[i] - gtarget[i]);
            return acc;
        };
        GruCache gcache;
        Vec h = gru_forward(cell, seq, &gcache);
        Vec dh(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) dh[i] = h[i] - gtarget[i];
        GruGrads gg = gru_backward(cell, gcache, dh);
        err = max_rel_error(flatten(gg.grad_views()), finite_diff(cell.param_views(), gloss));
        worst = std::max(worst, err);
    }
    if (worst >= 1e-4) ok = false;
    report_result(2, "gradient suite vs finite differences", ok,
                  "worst rel error " + fmt_double(worst) + " over 22 seeds");
}

// --- 3: TD3 mechanics --------------------------------------------------------

void criterion_td3_mechanics() {
    bool ok = true;
    std::string why;
    TD3Config cfg;
    cfg.actor_hidden = {16, 16};
    cfg.critic_hidden = {16, 16};
    cfg.seed = 3;
    TD3Agent agent = make_td3_agent(3, 2, cfg);
    Rng rng(41);

    // (a) terminal target is exactly r
    for (int i = 0; i < 100; ++i) {
        double r = rng.uniform(-2.0, 2.0);
        Vec s2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        Vec a2 = smoothed_target_action(agent, s2, rng);
        if (td_target(agent, r, s2, a2, 1.0) != r) {
            ok = false;
            why = "terminal target != r";
        }
        // (b) clipped double-Q
        double y = td_target(agent, r, s2, a2, 0.0);
        Vec x = concat_sa(s2, a2);
        double q1 = dense_forward(agent.critic1_target, x)[0];
        double q2 = dense_forward(agent.critic2_target, x)[0];
        if (y > r + cfg.gamma * q1 + 1e-12 || y > r + cfg.gamma * q2 + 1e-12) {
            ok = false;
            why = "target exceeds an individual bootstrap";
        }
        // (d) smoothing never strays more than c from the clipped policy
        Vec base = dense_forward(agent.actor_target, s2);
        for (std::size_t j = 0; j < a2.size(); ++j) {
            double b = std::clamp(base[j], cfg.a_low, cfg.a_high);
            if (std::abs(a2[j] - b) > cfg.noise_clip + 1e-12) {
                ok = false;
                why = "smoothed action outside the noise clip";
            }
        }
    }

    // (c) delayed policy updates on a live training run
    TD3Config tcfg = cfg;
    tcfg.episodes = 2;
    tcfg.steps_per_episode = 40;
    tcfg.warmup_steps = 16;
    tcfg.batch_size = 8;
    tcfg.policy_update = 3;
    TD3Agent trainee = make_td3_agent(1, 1, tcfg);
    ToyTrackingEnv env(5);
    Vec last_actor, last_target;
    bool first = true;
    train_td3(trainee, env, [&](const TD3Agent& a, const TrainStepInfo& info) {
        auto snap = a.actor.layers[0].w.data;
        auto tsnap = a.actor_target.layers[0].w.data;
        if (!first) {
            bool actor_moved = snap != last_actor;
            bool target_moved = tsnap != last_target;
            if (actor_moved != info.policy_updated || target_moved != info.policy_updated) {
                ok = false;
                why = "actor/target moved off the policy_update schedule";
            }
            if (info.policy_updated && info.update_count % tcfg.policy_update != 0) {
                ok = false;
                why = "policy update at a non-multiple step";
            }
        }
        last_actor = snap;
        last_target = tsnap;
        first = false;
    });
    report_result(3, "TD3 mechanics (target, double-Q, delay, smoothing)", ok, why);
}

// --- 4: TD3 convergence on the toy environment -------------------------------

void criterion_td3_convergence() {
    TD3Config cfg;
    cfg.seed = 1;
    cfg.episodes = 200;
    cfg.steps_per_episode = 50;
    cfg.warmup_steps = 1000;
    ToyTrackingEnv env(101);
    TD3Agent agent = make_td3_agent(1, 1, cfg);
    auto curve = train_td3(agent, env);
    double tail = 0.0;
    for (std::size_t i = curve.size() - 10; i < curve.size(); ++i) tail += curve[i].mean_reward;
    tail /= 10.0;
    bool ok = curve.size() == 200 && tail >= 0.9;
    report_result(4, "TD3 converges on the 1-D tracking toy", ok,
                  "mean reward over final 10 episodes " + fmt_double(tail));
}

// --- 5: imitation learning ----------------------------------------------------

void criterion_imitation() {
    Rng rng(77);
    DenseNet teacher = make_dense({student_state_dim, 24, 3},
                                  {Activation::tanh_fn, Activation::tanh_fn}, rng);
    DeploymentBuffer buf(500);
    for (int i = 0; i < 500; ++i) {
        GuidancePair p;
        for (auto& v : p.state) v = rng.uniform(-1.0, 1.0);
        Vec q = dense_forward(teacher, Vec(p.state.begin(), p.state.end()));
        p.q = {q[0], q[1], q[2]};
        buf.record(p);
    }
    StudentNet s = make_student(123);
    Rng train_rng(5);
    double initial = imitation_step(s, buf, 64, 1e-3, train_rng);
    double last = initial;
    for (int i = 1; i < 2000; ++i) last = imitation_step(s, buf, 64, 1e-3, train_rng);
    bool ok = last <= 0.1 * initial;
    report_result(5, "imitation loss drops 90% on a frozen buffer", ok,
                  fmt_double(initial) + " -> " + fmt_double(last));
}

// --- 6: retraining notifier -----------------------------------------------------

void criterion_notifier() {
    bool ok = true;
    std::string why;
    Vec r1;
    if (retraining_notifier(r1, 0.4, 0, 0.5, 3)) ok = false;
    if (retraining_notifier(r1, 0.4, 1, 0.5, 3)) ok = false;
    if (!retraining_notifier(r1, 0.4, 2, 0.5, 3)) {
        ok = false;
        why = "mean 0.4 < 0.5 did not trigger";
    }
    Vec r2;
    retraining_notifier(r2, 0.6, 0, 0.5, 3);
    retraining_notifier(r2, 0.5, 1, 0.5, 3);
    if (retraining_notifier(r2, 0.4, 2, 0.5, 3)) {
        ok = false;
        why = "mean exactly 0.5 triggered (inequality must be strict)";
    }
    Rng rng(2024);
    for (int it = 0; it < 1000 && ok; ++it) {
        long npr = 1 + static_cast<long>(rng.index(10));
        double th = rng.uniform(0.0, 1.0);
        long steps = 1 + static_cast<long>(rng.index(30));
        Vec ring;
        std::vector<double> hist;
        for (long iter = 0; iter < steps; ++iter) {
            double reward = rng.uniform(0.0, 1.0);
            hist.push_back(reward);
            bool got = retraining_notifier(ring, reward, iter, th, npr);
            bool expect = false;
            if (iter + 1 >= npr) {
                double mean = 0.0;
                for (long k = iter + 1 - npr; k <= iter; ++k) mean += hist[k];
                expect = mean / npr < th;
            }
            if (got != expect) {
                ok = false;
                why = "randomized case disagrees with the trigger rule";
            }
        }
    }
    report_result(6, "retraining notifier truth table + property", ok, why);
}

// --- 7: scaling procedure ---------------------------------------------------------

void criterion_scaling() {
    bool ok = true;
    std::string why;
    ScalingSteps steps;
    Deployment d;
    d.id = "svc";
    d.replicas = 1;
    d.cpu_per_replica = 1.0;
    d.mem_per_replica = 1.0;
    d.brownout_allowed = false;

    auto noop = scale_deployment({0.4, -0.3, 0.2}, d, steps, 16);
    if (noop.cpu_per_replica != 1.0 || noop.mem_per_replica != 1.0 || noop.replicas != 1) {
        ok = false;
        why = "sub-threshold Q-values changed the deployment";
    }
    auto vert = scale_deployment({0.8, 0.0, 0.0}, d, steps, 16);
    if (std::abs(vert.cpu_per_replica - 1.2) > 1e-12) {
        ok = false;
        why = "cpu step arithmetic";
    }
    auto pinned = scale_deployment({0.0, 0.0, -0.8}, d, steps, 16);
    if (pinned.replicas != 1) {
        ok = false;
        why = "scale-in below 1 without brownout";
    }
    Deployment b = d;
    b.brownout_allowed = true;
    auto browned = scale_deployment({0.0, 0.0, -0.8}, b, steps, 16);
    if (browned.replicas != 0) {
        ok = false;
        why = "brownout-capable deployment did not reach 0";
    }

    Rng rng(99);
    Deployment rd = b;
    rd.replicas = 5;
    for (int it = 0; it < 5000 && ok; ++it) {
        DeploymentAction q{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
        auto r = scale_deployment(q, rd, steps, 16);
        bool in_noop = std::abs(q.cpu_scaling) <= 0.5 && std::abs(q.memory_scaling) <= 0.5 &&
                       std::abs(q.horizontal_scaling) <= 0.5;
        if (in_noop && (r.cpu_per_replica != rd.cpu_per_replica ||
                        r.mem_per_replica != rd.mem_per_replica || r.replicas != rd.replicas)) {
            ok = false;
            why = "no-op region violated";
        }
        if (r.replicas < 0 || r.replicas > 16) {
            ok = false;
            why = "replicas left [min, max]";
        }
        rd.replicas = r.replicas;
        rd.cpu_per_replica = r.cpu_per_replica;
        rd.mem_per_replica = r.mem_per_replica;
    }
    report_result(7, "general scaling procedure", ok, why);
}

// --- 8: predictor quality -------------------------------------------------------

void criterion_predictor() {
    auto series = aggregate_by_timestamp(parse_trace(kTrace));
    long split = (static_cast<long>(series.size()) * 8) / 10;
    std::vector<SeriesPoint> heldout(series.begin() + split, series.end());
    bool ok = true;
    std::string detail = "MSE per horizon:";
    double prev = -1.0;
    double h1 = 0.0;
    for (int h = 1; h <= 5; ++h) {
        PredictorModel m = train_predictor(series, 12, h, 30, 1e-2, 42);
        double mse = evaluate_mse(m, heldout, h).mean();
        if (h == 1) h1 = mse;
        detail += " " + fmt_double(mse);
        if (mse < prev) ok = false;
        prev = mse;
    }
    if (h1 > 0.01) ok = false;
    report_result(8, "predictor: horizon-1 MSE <= 0.01, non-decreasing over horizons", ok, detail);
}

// --- 9: end-to-end comparison ------------------------------------------------------

void criterion_end_to_end() {
    Scenario sc = load_scenario(kScenario);
    auto pts = aggregate_by_timestamp(parse_trace(kTrace));
    auto pipeline = build_pipeline(sc, pts);
    SimConfig cfg = sc.sim;
    const std::uint64_t train_seed = 7;
    cfg.seed = train_seed;
    const int ci = 5;
    const long steps = 288 / ci;
    SimEnv env(sc.cluster, cfg, sc.reward, pipeline.series, steps * ci);
    TD3Config tcfg;
    tcfg.seed = train_seed;
    tcfg.episodes = 300;
    tcfg.steps_per_episode = steps;
    TeacherArtifacts art = train_teacher(env, tcfg, ci);

    std::string ckpt = kWork + "/e2e_checkpoints";
    fs::remove_all(ckpt);
    save_td3(art.agent, ckpt);
    auto students = train_students(art.buffers, 2000, 64, 1e-3, train_seed);
    for (std::size_t d = 0; d < students.size(); ++d) {
        auto f = open_out(ckpt + "/student_" + art.deployment_ids[d] + ".txt");
        save_dense(f, students[d].net);
    }

    bool strict = true;
    double base_rt = 0.0, drpc_rt = 0.0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        long bf = 0, df = 0;
        for (std::string mode : {"threshold-baseline", "drpc"}) {
            RunConfig rc;
            rc.mode = mode;
            rc.scenario_path = kScenario;
            rc.trace_path = kTrace;
            rc.ticks = 2000;
            rc.seed = seed;
            rc.write_outputs = false;
            if (mode == "drpc") rc.checkpoint_dir = ckpt;
            RunResult r = run_system(rc);
            if (mode == "drpc") {
                df = r.summary.failures;
                drpc_rt += r.summary.mean_rt_ms;
            } else {
                bf = r.summary.failures;
                base_rt += r.summary.mean_rt_ms;
            }
        }
        detail += "s" + std::to_string(seed) + ":" + std::to_string(df) + "<" +
                  std::to_string(bf) + " ";
        if (df >= bf) strict = false;
    }
    base_rt /= 5.0;
    drpc_rt /= 5.0;
    bool rt_ok = drpc_rt <= 0.9 * base_rt;
    detail += "| rt " + fmt_double(drpc_rt) + " vs " + fmt_double(base_rt);
    report_result(9, "end-to-end: failures strictly lower per seed, rt >= 10% lower",
                  strict && rt_ok, detail);
}

// --- 10: percentile reporting ---------------------------------------------------------

void criterion_percentiles() {
    Rng rng(31415);
    SimLog log;
    std::vector<double> raw;
    long tick = 0;
    while (raw.size() < 10000) {
        SimLogRecord rec;
        rec.tick = tick++;
        std::size_t n = 1 + rng.index(7);
        for (std::size_t i = 0; i < n && raw.size() < 10000; ++i) {
            double rt = rng.uniform(0.5, 4000.0);
            raw.push_back(rt);
            rec.rt_samples.push_back({rt, 1});
            rec.successes += 1;
            rec.arrivals += 1;
        }
        log.push_back(rec);
    }
    MetricsSummary s = compute_metrics(log, 1.0, "x", 0);
    std::sort(raw.begin(), raw.end());
    bool ok = true;
    const std::vector<double> expected_cols{50, 66, 75, 80, 90, 95, 99, 99.99};
    if (report_percentiles() != expected_cols) ok = false;
    for (double p : expected_cols) {
        long rank = static_cast<long>(std::ceil(p * static_cast<double>(raw.size()) / 100.0));
        rank = std::max<long>(1, std::min<long>(rank, raw.size()));
        if (s.percentiles.at(p) != raw[rank - 1]) ok = false;
    }
    report_result(10, "percentiles match the full-sort oracle; Table-style columns", ok, "");
}

// --- 11: CLI determinism -----------------------------------------------------------------

int run_cli(const std::string& args) {
    std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

void criterion_determinism() {
    bool ok = true;
    std::string why;
    std::string a = kWork + "/det_a", b = kWork + "/det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    std::string common = "simulate --config " + kScenario + " --trace " + kTrace +
                         " --mode threshold-baseline --seed 11 --ticks 300 --out ";
    if (run_cli(common + a) != 0 || run_cli(common + b) != 0) {
        ok = false;
        why = "simulate exited nonzero";
    }
    for (const char* f : {"simlog.csv", "summary.json", "metrics.csv", "percentile_table.csv"}) {
        if (slurp(a + "/" + f) != slurp(b + "/" + f) || slurp(a + "/" + f).empty()) {
            ok = false;
            why = std::string("simulate outputs differ: ") + f;
        }
    }
    std::string pa = kWork + "/pred_a", pb = kWork + "/pred_b";
    fs::remove_all(pa);
    fs::remove_all(pb);
    std::string pred =
        "predict --trace " + kTrace + " --seed 9 --window 6 --horizons 1 --epochs 2 --out ";
    if (run_cli(pred + pa) != 0 || run_cli(pred + pb) != 0) {
        ok = false;
        why = "predict exited nonzero";
    }
    for (const char* f : {"predictor_mse.csv", "predictor_h1.txt"}) {
        if (slurp(pa + "/" + f) != slurp(pb + "/" + f) || slurp(pa + "/" + f).empty()) {
            ok = false;
            why = std::string("predict outputs differ: ") + f;
        }
    }
    report_result(11, "CLI outputs byte-identical across same-seed reruns", ok, why);
}

} // namespace

int main() {
    fs::create_directories(kWork);
    criterion_reward();
    criterion_gradients();
    criterion_td3_mechanics();
    criterion_td3_convergence();
    criterion_imitation();
    criterion_notifier();
    criterion_scaling();
    criterion_predictor();
    criterion_end_to_end();
    criterion_percentiles();
    criterion_determinism();
    if (failures == 0) {
        std::printf("acceptance: 11/11 criteria passed\n");
    } else {
        std::printf("acceptance: %d criteria FAILED\n", failures);
    }
    return failures;
}

// drpc: microservice-cluster autoscaling sandbox.
//
// Subcommands: simulate, train-teacher, train-student, evaluate, predict,
// report. All runs are deterministic for a fixed --seed.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "drpc/log.hpp"
#include "drpc/metrics.hpp"
#include "drpc/orchestrator.hpp"
#include "drpc/scenario.hpp"
#include "drpc/workload.hpp"

namespace fs = std::filesystem;
using namespace drpc;

namespace {

struct CommonArgs {
    std::string config;
    std::string trace;
    std::string out;
    std::string mode = "threshold-baseline";
    std::string checkpoints;
    std::string predictor;
    std::uint64_t seed = 1;
    long ticks = 2000;
    long episodes = 300;
    int control_interval = 5;
};

int cmd_simulate(const CommonArgs& a) {
    RunConfig rc;
    rc.mode = a.mode;
    rc.scenario_path = a.config;
    rc.trace_path = a.trace;
    rc.out_dir = a.out;
    rc.checkpoint_dir = a.checkpoints;
    rc.predictor_path = a.predictor;
    rc.ticks = a.ticks;
    rc.seed = a.seed;
    rc.control_interval = a.control_interval;
    RunResult res = run_system(rc);
    log_info("simulate: mode=" + rc.mode + " ticks=" + std::to_string(res.summary.ticks) +
             " failure_rate=" + fmt_double(res.summary.failure_rate) +
             " mean_rt_ms=" + fmt_double(res.summary.mean_rt_ms));
    return 0;
}

int cmd_train_teacher(const CommonArgs& a) {
    Scenario sc = load_scenario(a.config);
    auto series_pts = aggregate_by_timestamp(parse_trace(a.trace));
    WorkloadPipeline pipeline = build_pipeline(sc, series_pts);

    SimConfig cfg = sc.sim;
    cfg.seed = a.seed;
    long steps = std::max<long>(1, a.ticks / a.control_interval);
    SimEnv env(sc.cluster, cfg, sc.reward, pipeline.series, steps * a.control_interval);

    TD3Config tcfg;
    tcfg.seed = a.seed;
    tcfg.episodes = a.episodes;
    tcfg.steps_per_episode = steps;
    TeacherArtifacts art = train_teacher(env, tcfg, a.control_interval);

    fs::create_directories(a.out);
    std::string ckpt = a.out + "/checkpoints";
    save_td3(art.agent, ckpt);
    {
        auto f = open_out(a.out + "/curve.csv");
        f << "episode,mean_reward,mean_rt_ms,failure_rate\n";
        for (const auto& row : art.curve)
            f << row.episode << ',' << fmt_double(row.mean_reward) << ','
              << fmt_double(row.mean_rt_ms) << ',' << fmt_double(row.failure_rate) << '\n';
    }
    std::string bufdir = a.out + "/buffers";
    fs::create_directories(bufdir);
    for (std::size_t d = 0; d < art.buffers.size(); ++d)
        art.buffers[d].dump_csv(bufdir + "/buffer_" + art.deployment_ids[d] + ".csv");

    auto students = train_students(art.buffers, 2000, 64, 1e-3, a.seed);
    for (std::size_t d = 0; d < students.size(); ++d) {
        auto f = open_out(ckpt + "/student_" + art.deployment_ids[d] + ".txt");
        save_dense(f, students[d].net);
    }
    double last = art.curve.empty() ? 0.0 : art.curve.back().mean_reward;
    log_info("train-teacher: " + std::to_string(art.curve.size()) +
             " episodes, final mean reward " + fmt_double(last));
    return 0;
}

int cmd_train_student(const std::string& buffers_dir, const std::string& out,
                      std::uint64_t seed, long steps, std::size_t batch, double lr) {
    fs::create_directories(out);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(buffers_dir)) {
        auto name = e.path().filename().string();
        if (name.rfind("buffer_", 0) == 0 && e.path().extension() == ".csv")
            files.push_back(e.path());
    }
    if (files.empty())
        throw std::runtime_error(buffers_dir + ": no buffer_<deployment>.csv files found");
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::string dep = p.stem().string().substr(std::string("buffer_").size());
        DeploymentBuffer buf = DeploymentBuffer::load_csv(p.string());
        StudentNet s = make_student(seed);
        Rng rng(seed + 1000);
        double first = 0.0, last = 0.0;
        for (long i = 0; i < steps; ++i) {
            double loss = imitation_step(s, buf, batch, lr, rng);
            if (i == 0) first = loss;
            last = loss;
        }
        auto f = open_out(out + "/student_" + dep + ".txt");
        save_dense(f, s.net);
        log_info("train-student " + dep + ": loss " + fmt_double(first) + " -> " +
                 fmt_double(last) + " over " + std::to_string(steps) + " steps");
    }
    return 0;
}

int cmd_evaluate(const CommonArgs& a, int runs) {
    std::vector<std::string> modes{"threshold-baseline", "drpc"};
    if (!a.checkpoints.empty() && fs::exists(a.checkpoints + "/actor.txt"))
        modes.push_back("teacher-only");
    std::vector<MetricsSummary> aggregate;
    std::vector<MetricsSummary> per_seed;
    for (const auto& mode : modes) {
        SimLog merged;
        for (int r = 0; r < runs; ++r) {
            RunConfig rc;
            rc.mode = mode;
            rc.scenario_path = a.config;
            rc.trace_path = a.trace;
            rc.checkpoint_dir = a.checkpoints;
            rc.predictor_path = a.predictor;
            rc.ticks = a.ticks;
            rc.seed = a.seed + static_cast<std::uint64_t>(r);
            rc.control_interval = a.control_interval;
            rc.write_outputs = false;
            RunResult res = run_system(rc);
            res.summary.config_echo = {{"mode", mode}, {"scenario", a.config}, {"trace", a.trace}};
            per_seed.push_back(res.summary);
            merged.insert(merged.end(), res.log.begin(), res.log.end());
            log_info("evaluate: mode=" + mode + " seed=" + std::to_string(rc.seed) +
                     " failure_rate=" + fmt_double(res.summary.failure_rate) +
                     " mean_rt_ms=" + fmt_double(res.summary.mean_rt_ms));
        }
        Scenario sc = load_scenario(a.config);
        MetricsSummary agg = compute_metrics(merged, sc.sim.tick, mode, a.seed);
        agg.config_echo = {{"mode", mode}, {"scenario", a.config}, {"trace", a.trace},
                           {"runs", std::to_string(runs)}};
        aggregate.push_back(agg);
    }
    fs::create_directories(a.out);
    report(aggregate, a.out);
    {
        auto f = open_out(a.out + "/evaluate_seeds.csv");
        f << "mode,seed,failure_rate,mean_rt_ms,successes,failures,arrivals,mean_reward\n";
        for (const auto& s : per_seed)
            f << s.mode << ',' << s.seed << ',' << fmt_double(s.failure_rate) << ','
              << fmt_double(s.mean_rt_ms) << ',' << s.successes << ',' << s.failures << ','
              << s.arrivals << ',' << fmt_double(s.mean_reward) << '\n';
    }
    return 0;
}

int cmd_predict(const std::string& trace, const std::string& out, std::uint64_t seed, int window,
                int horizons, int epochs, double lr) {
    auto series = aggregate_by_timestamp(parse_trace(trace));
    long split = (static_cast<long>(series.size()) * 8) / 10;
    std::vector<SeriesPoint> heldout(series.begin() + split, series.end());
    fs::create_directories(out);
    auto f = open_out(out + "/predictor_mse.csv");
    f << "horizon,train_mse,val_cpu_mse,val_mem_mse,val_mean_mse\n";
    for (int h = 1; h <= horizons; ++h) {
        PredictorModel m = train_predictor(series, window, h, epochs, lr, seed);
        MseReport rep = evaluate_mse(m, heldout, h);
        f << h << ',' << fmt_double(m.train_mse) << ',' << fmt_double(rep.cpu_mse) << ','
          << fmt_double(rep.mem_mse) << ',' << fmt_double(rep.mean()) << '\n';
        auto cf = open_out(out + "/predictor_h" + std::to_string(h) + ".txt");
        save_predictor(cf, m);
        log_info("predict: horizon " + std::to_string(h) + " val MSE " + fmt_double(rep.mean()));
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<MetricsSummary> summaries;
    for (const auto& in : inputs) {
        std::string path = fs::is_directory(in) ? in + "/summary.json" : in;
        auto f = open_in(path);
        nlohmann::json j;
        f >> j;
        if (!j.is_array()) throw std::runtime_error(path + ": expected a summary array");
        for (const auto& item : j) summaries.push_back(summary_from_json(item));
    }
    report(summaries, out);
    log_info("report: wrote " + std::to_string(summaries.size()) + " summaries to " + out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic microservice-cluster autoscaling sandbox"};
    app.require_subcommand(1);

    CommonArgs args;
    int runs = 5;
    long steps = 2000;
    std::size_t batch = 64;
    double lr = 1e-3;
    std::string buffers_dir;
    int window = 12, horizons = 5, epochs = 60;
    double predict_lr = 1e-2;
    std::vector<std::string> report_inputs;

    auto* sim = app.add_subcommand("simulate", "run one mode over a scenario and trace");
    sim->add_option("--config", args.config, "scenario file")->required();
    sim->add_option("--trace", args.trace, "workload trace CSV")->required();
    sim->add_option("--mode", args.mode, "drpc|teacher-only|threshold-baseline");
    sim->add_option("--seed", args.seed, "rng seed");
    sim->add_option("--ticks", args.ticks, "simulation length");
    sim->add_option("--out", args.out, "output directory")->required();
    sim->add_option("--checkpoints", args.checkpoints, "teacher/student checkpoint dir");
    sim->add_option("--predictor", args.predictor, "predictor checkpoint");
    sim->add_option("--control-interval", args.control_interval, "teacher action period (ticks)");

    auto* tt = app.add_subcommand("train-teacher", "train the TD3 teacher on a scenario");
    tt->add_option("--config", args.config)->required();
    tt->add_option("--trace", args.trace)->required();
    tt->add_option("--seed", args.seed);
    tt->add_option("--episodes", args.episodes, "training episodes");
    tt->add_option("--ticks", args.ticks, "ticks per episode")->default_val(288);
    tt->add_option("--out", args.out)->required();
    tt->add_option("--control-interval", args.control_interval);

    auto* ts = app.add_subcommand("train-student", "offline imitation from buffer dumps");
    ts->add_option("--buffers", buffers_dir, "directory with buffer_<dep>.csv")->required();
    ts->add_option("--out", args.out)->required();
    ts->add_option("--seed", args.seed);
    ts->add_option("--steps", steps, "imitation steps");
    ts->add_option("--batch", batch);
    ts->add_option("--lr", lr);

    auto* ev = app.add_subcommand("evaluate", "multi-mode, multi-seed comparison");
    ev->add_option("--config", args.config)->required();
    ev->add_option("--trace", args.trace)->required();
    ev->add_option("--seed", args.seed, "first seed");
    ev->add_option("--runs", runs, "seeds per mode");
    ev->add_option("--ticks", args.ticks);
    ev->add_option("--out", args.out)->required();
    ev->add_option("--checkpoints", args.checkpoints);
    ev->add_option("--predictor", args.predictor);
    ev->add_option("--control-interval", args.control_interval);

    auto* pr = app.add_subcommand("predict", "train the workload forecaster, report MSE");
    pr->add_option("--trace", args.trace)->required();
    pr->add_option("--out", args.out)->required();
    pr->add_option("--seed", args.seed);
    pr->add_option("--window", window);
    pr->add_option("--horizons", horizons, "evaluate horizons 1..N");
    pr->add_option("--epochs", epochs);
    pr->add_option("--lr", predict_lr);

    auto* rp = app.add_subcommand("report", "merge summary.json files into report tables");
    rp->add_option("--in", report_inputs, "summary.json files or run directories")->required();
    rp->add_option("--out", args.out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(args);
        if (tt->parsed()) return cmd_train_teacher(args);
        if (ts->parsed()) return cmd_train_student(buffers_dir, args.out, args.seed, steps, batch, lr);
        if (ev->parsed()) return cmd_evaluate(args, runs);
        if (pr->parsed())
            return cmd_predict(args.trace, args.out, args.seed, window, horizons, epochs, predict_lr);
        if (rp->parsed()) return cmd_report(report_inputs, args.out);
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
    return 0;
}

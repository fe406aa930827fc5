// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//
// `opg` command-line tool. Every subcommand loads a RunConfig (from --config,
// else $OPG_CONFIG, else built-in defaults), applies flag overrides on top,
// revalidates, writes machine-readable output to --out and prints a short
// human summary on stdout. Failures print one JSON object on stderr.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opg/opg.hpp"

namespace {

using opg::io::json;
using opg::io::RunConfig;

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kConfig = 3,
    kParse = 4,
    kDomain = 5,
    kTraining = 6,
    kGeneration = 7,
    kIo = 8,
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flags shared by all subcommands. Unset optionals leave the config alone.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha, beta, omega;
    std::optional<std::size_t> n_min;
    std::optional<double> t_f, t_b1, t_b2, r_p;
    std::optional<std::size_t> steps, branches;
    std::optional<double> lr;
    std::optional<std::string> opg;
    std::optional<std::size_t> n_train, n_test, num_classes, n_proposals;
    std::optional<std::string> ap_mode;
    std::optional<double> iou;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run config (default: $OPG_CONFIG if set)");
    cmd->add_option("--seed", o.seed, "global seed");
}

void add_schedule_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--alpha", o.alpha, "sigmoid steepness");
    cmd->add_option("--beta", o.beta, "sigmoid midpoint (scaled by omega)");
    cmd->add_option("--omega", o.omega, "progress scale");
    cmd->add_option("--nmin", o.n_min, "active-set floor");
}

void add_partition_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--t-f", o.t_f, "positive IoU threshold");
    cmd->add_option("--t-b1", o.t_b1, "negative upper IoU threshold");
    cmd->add_option("--t-b2", o.t_b2, "negative lower IoU threshold");
    cmd->add_option("--r-p", o.r_p, "positive share of the active set");
}

void add_trainer_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--steps", o.steps, "SGD steps");
    cmd->add_option("--branches", o.branches, "refinement branches");
    cmd->add_option("--lr", o.lr, "base learning rate");
    cmd->add_option("--opg", o.opg, "proposal sampling on|off")->check(CLI::IsMember({"on", "off"}));
}

void add_sim_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--n-train", o.n_train, "training scenes");
    cmd->add_option("--n-test", o.n_test, "test scenes");
    cmd->add_option("--num-classes", o.num_classes, "object classes");
    cmd->add_option("--proposals", o.n_proposals, "proposals per scene");
}

void add_eval_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--ap-mode", o.ap_mode, "all-points|voc07")->check(CLI::IsMember({"all-points", "voc07"}));
    cmd->add_option("--iou", o.iou, "match threshold");
}

RunConfig resolve(const Overrides& o) {
    RunConfig cfg;
    std::string path = o.config;
    if (path.empty())
        if (const char* env = std::getenv(opg::io::kConfigEnv); env && *env) path = env;
    if (!path.empty()) cfg = opg::io::load_config(path);

    if (o.seed) cfg.seed = *o.seed;
    if (o.alpha) cfg.schedule.alpha = *o.alpha;
    if (o.beta) cfg.schedule.beta = *o.beta;
    if (o.omega) cfg.schedule.omega = *o.omega;
    if (o.n_min) cfg.schedule.n_min = *o.n_min;
    if (o.t_f) cfg.partition.t_f = *o.t_f;
    if (o.t_b1) cfg.partition.t_b1 = *o.t_b1;
    if (o.t_b2) cfg.partition.t_b2 = *o.t_b2;
    if (o.r_p) cfg.partition.r_p = *o.r_p;
    if (o.steps) cfg.trainer.steps = *o.steps;
    if (o.branches) cfg.trainer.branches = *o.branches;
    if (o.lr) cfg.trainer.learning_rate = *o.lr;
    if (o.opg) cfg.trainer.opg = *o.opg == "on";
    if (o.n_train) cfg.simulator.n_train = *o.n_train;
    if (o.n_test) cfg.simulator.n_test = *o.n_test;
    if (o.num_classes) cfg.simulator.scene.num_classes = *o.num_classes;
    if (o.n_proposals) cfg.simulator.proposals.n_total = *o.n_proposals;
    if (o.ap_mode) cfg.eval.mode = opg::io::detail::parse_ap_mode(*o.ap_mode);
    if (o.iou) cfg.eval.iou_thresh = *o.iou;
    cfg.validate();
    return cfg;
}

/// Writes `text` to `path` in one go; nothing is written when path is empty.
void write_file(const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out.flush()) throw IoError("write failed: " + path);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
    return buf;
}

std::string fixed(double v, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------

struct ScheduleArgs {
    std::optional<std::size_t> total;
    std::optional<double> warm_frac, stable_frac;
    std::string out;
};

int run_schedule(const Overrides& o, const ScheduleArgs& a) {
    RunConfig cfg = resolve(o);
    if (a.warm_frac) cfg.warm_frac = *a.warm_frac;
    if (a.stable_frac) cfg.stable_frac = *a.stable_frac;
    cfg.validate();
    const std::size_t total = a.total.value_or(cfg.simulator.proposals.n_total);
    const std::size_t steps = cfg.trainer.steps;
    if (total < 1) throw opg::ConfigError("schedule: --total must be >= 1");
    if (steps < 3) throw opg::ConfigError("schedule: --steps must be >= 3");

    std::ostringstream csv;
    csv << "theta,gamma,n_v,stage\n";
    std::size_t lo = total, hi = 0;
    for (std::size_t i = 0; i < steps; ++i) {
        const auto s = opg::ScheduleState::at(i, steps - 1);
        const std::size_t nv = opg::n_v(cfg.schedule, s, total);
        lo = std::min(lo, nv);
        hi = std::max(hi, nv);
        csv << opg::io::format_number(s.theta) << ',' << opg::io::format_number(opg::gamma(cfg.schedule, s)) << ','
            << nv << ',' << opg::to_string(opg::stage_of(cfg.schedule, s, cfg.warm_frac, cfg.stable_frac)) << '\n';
    }
    write_file(a.out, csv.str());

    const auto occ = opg::occupancy(cfg.schedule, steps, cfg.warm_frac, cfg.stable_frac);
    std::cout << "schedule: " << steps << " rows, |P| = " << total << ", n_v in [" << lo << ", " << hi << "]\n"
              << "  warmup " << pct(occ.warm_share) << ", transition " << pct(occ.transition_share) << ", stable "
              << pct(occ.stable_share) << '\n';
    return kOk;
}

struct PartitionArgs {
    std::string in;
    std::string out;
};

int run_partition(const Overrides& o, const PartitionArgs& a) {
    const RunConfig cfg = resolve(o);
    json records = json::array();
    std::size_t n = 0, active = 0;
    std::ifstream in(a.in);
    if (!in) throw opg::ParseError("cannot open " + a.in, 0);
    opg::io::for_each_snapshot(in, [&](opg::io::SnapshotRecord&& rec) {
        auto rng = opg::make_rng(cfg.seed, rec.image_id);
        const auto result = opg::generate(rec.proposal_set(), rec.scores, rec.labels(), cfg.schedule,
                                          opg::ScheduleState{rec.theta}, cfg.partition, rng);
        records.push_back(opg::io::partition_report(rec, result, cfg));
        ++n;
        active += result.active.size();
        std::cout << "  " << rec.image_id << ": |P| = " << rec.proposals.size() << ", n_v = " << result.n_v
                  << ", |P_f| = " << result.split.positives.size() << ", |P_b| = " << result.split.negatives.size()
                  << ", |P_r| = " << result.split.risks.size() << ", |P_a| = " << result.active.size() << '\n';
    });
    const json report = {{"schema", opg::io::kSchema},
                         {"seed", cfg.seed},
                         {"schedule", opg::io::to_json(cfg)["schedule"]},
                         {"partition", opg::io::to_json(cfg)["partition"]},
                         {"records", std::move(records)}};
    write_file(a.out, report.dump(2) + "\n");
    std::cout << "partition: " << n << " record(s), " << active << " active proposals in total\n";
    return kOk;
}

struct SimulateArgs {
    std::string out;
};

int run_simulate(const Overrides& o, const SimulateArgs& a) {
    const RunConfig cfg = resolve(o);
    const auto ds = opg::synth::build_dataset(cfg.seed, cfg.simulator);
    std::ostringstream lines;
    std::size_t objects = 0;
    for (const auto* split : {&ds.train, &ds.test}) {
        const char* name = split == &ds.train ? "train" : "test";
        for (const auto& im : *split) {
            lines << opg::io::scene_json(im, name, ds.num_classes).dump() << '\n';
            objects += im.scene.objects.size();
        }
    }
    write_file(a.out, lines.str());
    const std::size_t n = ds.train.size() + ds.test.size();
    std::cout << "simulate: " << ds.train.size() << " train + " << ds.test.size() << " test scenes, "
              << ds.num_classes << " classes, " << fixed(static_cast<double>(objects) / static_cast<double>(n), 2)
              << " objects/scene, " << cfg.simulator.proposals.n_total << " proposals/scene\n";
    return kOk;
}

struct TrainArgs {
    std::string out;
    std::string detections;
    std::string report;
};

int run_train(const Overrides& o, const TrainArgs& a) {
    const RunConfig cfg = resolve(o);
    const auto ds = opg::synth::build_dataset(cfg.seed, cfg.simulator);
    const auto views = opg::synth::SyntheticDataset::views(ds.train);
    const auto result = opg::train(views, ds.num_classes, cfg.schedule, cfg.partition, cfg.trainer, cfg.seed);

    std::ostringstream log;
    opg::io::write_log(log, result.log);
    write_file(a.out, log.str());

    const auto test_views = opg::synth::SyntheticDataset::views(ds.test);
    const auto dets = opg::detect_all(result.model, test_views, cfg.detect);
    if (!a.detections.empty()) {
        std::ostringstream d;
        for (const auto& det : dets) d << opg::io::to_json(det).dump() << '\n';
        write_file(a.detections, d.str());
    }
    const auto rep = opg::evaluate_model(result.model, ds, cfg.detect, cfg.eval);
    if (!a.report.empty()) write_file(a.report, opg::io::to_json(rep, cfg.eval).dump(2) + "\n");

    const auto& last = result.log.back();
    double first_active = 0.0, last_active = 0.0;
    for (const auto& im : result.log.front().images)
        for (const auto& b : im.branches) first_active += static_cast<double>(b.active);
    for (const auto& im : last.images)
        for (const auto& b : im.branches) last_active += static_cast<double>(b.active);
    const double denom = static_cast<double>(std::max<std::size_t>(1, last.images.size() * cfg.trainer.branches));
    std::cout << "train: " << cfg.trainer.steps << " steps, opg " << (cfg.trainer.opg ? "on" : "off") << ", seed "
              << cfg.seed << '\n'
              << "  final loss " << fixed(last.loss.total) << " (base " << fixed(last.loss.l_base) << ", refine "
              << fixed(last.loss.total - last.loss.l_base) << ")\n"
              << "  mean |P_a| per branch: first step " << fixed(first_active / denom, 1) << ", last step "
              << fixed(last_active / denom, 1) << '\n'
              << "  test mAP " << fixed(rep.map) << ", train CorLoc " << fixed(rep.corloc) << '\n';
    return kOk;
}

struct RatioArgs {
    std::optional<std::vector<double>> r_o;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::size_t> fixed_total;
    std::string out;
};

int run_ratio(const Overrides& o, const RatioArgs& a) {
    RunConfig cfg = resolve(o);
    if (a.r_o) cfg.ratio.r_o_values = *a.r_o;
    if (a.seeds) cfg.ratio.seeds = *a.seeds;
    if (a.fixed_total) cfg.ratio.fixed_total = *a.fixed_total;
    cfg.validate();

    const auto ds = opg::synth::build_dataset(cfg.seed, cfg.simulator);
    const auto pool = opg::ratio_training_pool(cfg.seed, cfg.simulator, cfg.ratio);
    const auto rows = opg::ratio_experiment(pool, ds, cfg.ratio, cfg.schedule, cfg.partition, cfg.trainer,
                                            cfg.detect, cfg.eval);

    std::ostringstream csv;
    csv << "r_o,seed,map\n";
    for (const auto& row : rows)
        for (std::size_t s = 0; s < row.maps.size(); ++s)
            csv << opg::io::format_number(row.r_o) << ',' << cfg.ratio.seeds[s] << ','
                << opg::io::format_number(row.maps[s]) << '\n';
    for (const auto& row : rows)
        csv << opg::io::format_number(row.r_o) << ",mean," << opg::io::format_number(row.mean_map) << '\n';
    write_file(a.out, csv.str());

    std::cout << "ratio-exp: " << rows.size() << " R_o value(s) x " << cfg.ratio.seeds.size() << " seed(s), "
              << cfg.ratio.fixed_total << " proposals/image\n";
    for (const auto& row : rows) {
        const auto [n_f, n_b] = cfg.ratio.split(row.r_o);
        std::cout << "  R_o " << fixed(row.r_o, 2) << " (" << n_f << ':' << n_b << ")  mean mAP "
                  << fixed(row.mean_map) << '\n';
    }
    return kOk;
}

struct EvalArgs {
    std::string detections;
    std::string scenes;
    std::string split = "test";
    std::string out;
};

int run_eval(const Overrides& o, const EvalArgs& a) {
    const RunConfig cfg = resolve(o);
    const auto dets = opg::io::read_detections(a.detections);
    const auto scenes = opg::io::read_scenes(a.scenes);
    std::vector<opg::GroundTruthImage> gt;
    std::size_t num_classes = 0;
    for (const auto& s : scenes) {
        if (!a.split.empty() && a.split != "all" && s.split != a.split) continue;
        gt.push_back(s.ground_truth());
        num_classes = std::max(num_classes, s.num_classes);
    }
    if (gt.empty()) throw opg::ConfigError("eval: no scenes in split '" + a.split + "'");
    for (const auto& d : dets)
        if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= num_classes)
            throw opg::DomainError("eval: detection class " + std::to_string(d.class_id) + " out of range");

    const auto rep = opg::evaluate(dets, gt, num_classes, cfg.eval);
    for (int c : rep.undefined_classes)
        std::cerr << "warning: class " << c << " has no ground truth; excluded from mAP\n";
    write_file(a.out, opg::io::to_json(rep, cfg.eval).dump(2) + "\n");

    std::cout << "eval: " << dets.size() << " detections over " << gt.size() << " images\n";
    for (const auto& [c, ap] : rep.per_class_ap) std::cout << "  class " << c << " AP " << fixed(ap) << '\n';
    std::cout << "  mAP " << fixed(rep.map) << ", CorLoc " << fixed(rep.corloc) << '\n';
    return kOk;
}

int report_error(const char* kind, const std::string& message, int code, std::optional<std::size_t> line = {}) {
    json err = {{"kind", kind}, {"message", message}};
    if (line) err["line"] = *line;
    std::cerr << json{{"schema", opg::io::kSchema}, {"error", std::move(err)}}.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online active proposal set generation: schedule, partition, simulate, train, evaluate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "opg 1.0.0");

    Overrides o;

    ScheduleArgs sa;
    auto* schedule = app.add_subcommand("schedule", "tabulate the active-set budget over training (CSV)");
    add_config_flags(schedule, o);
    add_schedule_flags(schedule, o);
    schedule->add_option("--total", sa.total, "proposals per image |P| (default: simulator.proposals.n_total)");
    schedule->add_option("--steps", o.steps, "rows; theta runs from 0 to 1 inclusive");
    schedule->add_option("--warm-frac", sa.warm_frac, "gamma tail marking the warm-up stage");
    schedule->add_option("--stable-frac", sa.stable_frac, "gamma tail marking the stable stage");
    schedule->add_option("--out", sa.out, "CSV output path");

    PartitionArgs pa;
    auto* partition = app.add_subcommand("partition", "partition proposals of snapshot records (JSON report)");
    add_config_flags(partition, o);
    add_schedule_flags(partition, o);
    add_partition_flags(partition, o);
    partition->add_option("--in", pa.in, "snapshot JSONL")->required();
    partition->add_option("--out", pa.out, "JSON report path");

    SimulateArgs ma;
    auto* simulate = app.add_subcommand("simulate", "generate synthetic scenes (JSONL)");
    add_config_flags(simulate, o);
    add_sim_flags(simulate, o);
    simulate->add_option("--out", ma.out, "scene JSONL path");

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "train the toy detector on synthetic scenes (JSONL log)");
    add_config_flags(trainc, o);
    add_schedule_flags(trainc, o);
    add_partition_flags(trainc, o);
    add_trainer_flags(trainc, o);
    add_sim_flags(trainc, o);
    add_eval_flags(trainc, o);
    trainc->add_option("--out", ta.out, "training log JSONL path");
    trainc->add_option("--detections", ta.detections, "test-split detections JSONL path");
    trainc->add_option("--report", ta.report, "evaluation report JSON path");

    RatioArgs ra;
    auto* ratio = app.add_subcommand("ratio-exp", "mAP under fixed positive:negative proposal ratios (CSV)");
    add_config_flags(ratio, o);
    add_trainer_flags(ratio, o);
    add_sim_flags(ratio, o);
    add_eval_flags(ratio, o);
    ratio->add_option("--r-o", ra.r_o, "ratios to sweep")->delimiter(',');
    ratio->add_option("--seeds", ra.seeds, "training seeds")->delimiter(',');
    ratio->add_option("--fixed-total", ra.fixed_total, "proposals kept per image");
    ratio->add_option("--out", ra.out, "CSV output path");

    EvalArgs ea;
    auto* evalc = app.add_subcommand("eval", "score detections against scene ground truth (JSON report)");
    add_config_flags(evalc, o);
    add_eval_flags(evalc, o);
    evalc->add_option("--detections", ea.detections, "detections JSONL")->required();
    evalc->add_option("--scenes", ea.scenes, "scene JSONL")->required();
    evalc->add_option("--split", ea.split, "scene split to score: train|test|all")->capture_default_str();
    evalc->add_option("--out", ea.out, "JSON report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return report_error("UsageError", e.what(), kUsage);
    }

    try {
        if (*schedule) return run_schedule(o, sa);
        if (*partition) return run_partition(o, pa);
        if (*simulate) return run_simulate(o, ma);
        if (*trainc) return run_train(o, ta);
        if (*ratio) return run_ratio(o, ra);
        if (*evalc) return run_eval(o, ea);
    } catch (const opg::ParseError& e) {
        return report_error("ParseError", e.what(), kParse,
                            e.line() ? std::optional<std::size_t>(e.line()) : std::nullopt);
    } catch (const opg::ConfigError& e) {
        return report_error("ConfigError", e.what(), kConfig);
    } catch (const opg::TrainingError& e) {
        return report_error("TrainingError", e.what(), kTraining);
    } catch (const opg::GenerationError& e) {
        return report_error("GenerationError", e.what(), kGeneration);
    } catch (const opg::DomainError& e) {
        return report_error("DomainError", e.what(), kDomain);
    } catch (const IoError& e) {
        return report_error("IoError", e.what(), kIo);
    } catch (const std::exception& e) {
        return report_error("Error", e.what(), kFailure);
    }
    return kFailure;
}

// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "opg/errors.hpp"
#include "opg/eval.hpp"
#include "opg/geometry.hpp"
#include "opg/labels.hpp"
#include "opg/partition.hpp"
#include "opg/schedule.hpp"
#include "opg/synth.hpp"
#include "opg/trainer.hpp"

namespace opg::io {

using json = nlohmann::json;

inline constexpr int kSchema = 1;

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "OPG_CONFIG";

/// Shortest round-trip text for CSV cells.
inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    for (int prec = 6; prec < 17; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        std::sscanf(probe, "%lf", &back);
        if (back == v) return probe;
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Boxes

inline json to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw DomainError("box must be an array [x1, y1, x2, y2]");
    for (const auto& v : j)
        if (!v.is_number()) throw DomainError("box coordinates must be numbers");
    return Box::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    std::uint64_t seed = 42;
    ScheduleConfig schedule;
    double warm_frac = kDefaultWarmFrac;
    double stable_frac = kDefaultStableFrac;
    PartitionConfig partition;
    TrainerConfig trainer;
    synth::SimConfig simulator;
    RatioExperimentConfig ratio;
    EvalOptions eval;
    DetectOptions detect;

    void validate() const {
        try {
            schedule.validate();
            partition.validate();
            trainer.validate();
            simulator.scene.validate();
            simulator.proposals.validate();
            ratio.pool.validate();
            ratio.validate();
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
        if (!(warm_frac > 0.0 && stable_frac > 0.0 && warm_frac + stable_frac < 1.0))
            throw ConfigError("schedule: need 0 < warm_frac, 0 < stable_frac, warm_frac + stable_frac < 1");
        if (simulator.features.dim < simulator.scene.num_classes)
            throw ConfigError("simulator: features.dim must be >= num_classes");
        if (simulator.n_train < 1 || simulator.n_test < 1) throw ConfigError("simulator: n_train and n_test must be >= 1");
        if (!(eval.iou_thresh > 0.0 && eval.iou_thresh <= 1.0)) throw ConfigError("eval: iou must lie in (0, 1]");
    }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a non-negative integer");
    }
    try {
        out = it->template get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline void read_proposals(const json& j, synth::ProposalConfig& p, const std::string& where) {
    check_keys(j, {"n_total", "positive_share", "near_share", "jitter", "min_size", "max_retries"}, where);
    read_opt(j, "n_total", p.n_total, where);
    read_opt(j, "positive_share", p.positive_share, where);
    read_opt(j, "near_share", p.near_share, where);
    read_opt(j, "jitter", p.jitter, where);
    read_opt(j, "min_size", p.min_size, where);
    read_opt(j, "max_retries", p.max_retries, where);
}

inline json write_proposals(const synth::ProposalConfig& p) {
    return {{"n_total", p.n_total},       {"positive_share", p.positive_share}, {"near_share", p.near_share},
            {"jitter", p.jitter},         {"min_size", p.min_size},             {"max_retries", p.max_retries}};
}

inline std::string ap_mode_name(ApMode m) { return m == ApMode::Voc07 ? "voc07" : "all-points"; }

inline ApMode parse_ap_mode(const std::string& s) {
    if (s == "all-points") return ApMode::AllPoints;
    if (s == "voc07") return ApMode::Voc07;
    throw ConfigError("eval.ap_mode must be 'all-points' or 'voc07'");
}

}  // namespace detail

/// Apply the keys present in `j` on top of `cfg`, then revalidate.
inline void merge_config(RunConfig& cfg, const json& j) {
    using detail::check_keys;
    using detail::read_opt;
    check_keys(j, {"schema", "seed", "schedule", "partition", "trainer", "simulator", "ratio", "eval"}, "config");
    if (j.contains("schema") && j["schema"] != kSchema) throw ConfigError("config: unsupported schema version");
    read_opt(j, "seed", cfg.seed, "config");

    if (auto it = j.find("schedule"); it != j.end()) {
        const std::string w = "schedule";
        check_keys(*it, {"alpha", "beta", "omega", "n_min", "warm_frac", "stable_frac"}, w);
        read_opt(*it, "alpha", cfg.schedule.alpha, w);
        read_opt(*it, "beta", cfg.schedule.beta, w);
        read_opt(*it, "omega", cfg.schedule.omega, w);
        read_opt(*it, "n_min", cfg.schedule.n_min, w);
        read_opt(*it, "warm_frac", cfg.warm_frac, w);
        read_opt(*it, "stable_frac", cfg.stable_frac, w);
    }
    if (auto it = j.find("partition"); it != j.end()) {
        const std::string w = "partition";
        check_keys(*it, {"t_f", "t_b1", "t_b2", "r_p"}, w);
        read_opt(*it, "t_f", cfg.partition.t_f, w);
        read_opt(*it, "t_b1", cfg.partition.t_b1, w);
        read_opt(*it, "t_b2", cfg.partition.t_b2, w);
        read_opt(*it, "r_p", cfg.partition.r_p, w);
    }
    if (auto it = j.find("trainer"); it != j.end()) {
        const std::string w = "trainer";
        auto& t = cfg.trainer;
        check_keys(*it, {"steps", "batch_size", "branches", "learning_rate", "momentum", "weight_decay", "decay_at",
                         "decay_factor", "init_scale", "opg"},
                   w);
        read_opt(*it, "steps", t.steps, w);
        read_opt(*it, "batch_size", t.batch_size, w);
        read_opt(*it, "branches", t.branches, w);
        read_opt(*it, "learning_rate", t.learning_rate, w);
        read_opt(*it, "momentum", t.momentum, w);
        read_opt(*it, "weight_decay", t.weight_decay, w);
        read_opt(*it, "decay_at", t.decay_at, w);
        read_opt(*it, "decay_factor", t.decay_factor, w);
        read_opt(*it, "init_scale", t.init_scale, w);
        read_opt(*it, "opg", t.opg, w);
    }
    if (auto it = j.find("simulator"); it != j.end()) {
        const std::string w = "simulator";
        auto& s = cfg.simulator;
        check_keys(*it, {"num_classes", "min_objects", "max_objects", "width", "height", "min_size", "max_size",
                         "n_train", "n_test", "proposals", "features"},
                   w);
        read_opt(*it, "num_classes", s.scene.num_classes, w);
        read_opt(*it, "min_objects", s.scene.min_objects, w);
        read_opt(*it, "max_objects", s.scene.max_objects, w);
        read_opt(*it, "width", s.scene.width, w);
        read_opt(*it, "height", s.scene.height, w);
        read_opt(*it, "min_size", s.scene.min_size, w);
        read_opt(*it, "max_size", s.scene.max_size, w);
        read_opt(*it, "n_train", s.n_train, w);
        read_opt(*it, "n_test", s.n_test, w);
        if (auto p = it->find("proposals"); p != it->end()) detail::read_proposals(*p, s.proposals, w + ".proposals");
        if (auto f = it->find("features"); f != it->end()) {
            const std::string wf = w + ".features";
            check_keys(*f, {"dim", "noise", "extent_norm", "part_norm", "background_norm"}, wf);
            read_opt(*f, "dim", s.features.dim, wf);
            read_opt(*f, "noise", s.features.noise, wf);
            read_opt(*f, "extent_norm", s.features.extent_norm, wf);
            read_opt(*f, "part_norm", s.features.part_norm, wf);
            read_opt(*f, "background_norm", s.features.background_norm, wf);
        }
    }
    if (auto it = j.find("ratio"); it != j.end()) {
        const std::string w = "ratio";
        check_keys(*it, {"r_o_values", "fixed_total", "seeds", "pool"}, w);
        read_opt(*it, "r_o_values", cfg.ratio.r_o_values, w);
        read_opt(*it, "fixed_total", cfg.ratio.fixed_total, w);
        read_opt(*it, "seeds", cfg.ratio.seeds, w);
        if (auto p = it->find("pool"); p != it->end()) detail::read_proposals(*p, cfg.ratio.pool, w + ".pool");
    }
    if (auto it = j.find("eval"); it != j.end()) {
        const std::string w = "eval";
        check_keys(*it, {"iou", "ap_mode", "nms_iou", "max_per_class"}, w);
        read_opt(*it, "iou", cfg.eval.iou_thresh, w);
        std::string mode = detail::ap_mode_name(cfg.eval.mode);
        read_opt(*it, "ap_mode", mode, w);
        cfg.eval.mode = detail::parse_ap_mode(mode);
        read_opt(*it, "nms_iou", cfg.detect.nms_iou, w);
        read_opt(*it, "max_per_class", cfg.detect.max_per_class, w);
    }
    cfg.validate();
}

inline json to_json(const RunConfig& c) {
    const auto& s = c.simulator;
    const auto& t = c.trainer;
    return {
        {"schema", kSchema},
        {"seed", c.seed},
        {"schedule",
         {{"alpha", c.schedule.alpha},
          {"beta", c.schedule.beta},
          {"omega", c.schedule.omega},
          {"n_min", c.schedule.n_min},
          {"warm_frac", c.warm_frac},
          {"stable_frac", c.stable_frac}}},
        {"partition",
         {{"t_f", c.partition.t_f}, {"t_b1", c.partition.t_b1}, {"t_b2", c.partition.t_b2}, {"r_p", c.partition.r_p}}},
        {"trainer",
         {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"branches", t.branches},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"decay_at", t.decay_at},
          {"decay_factor", t.decay_factor},
          {"init_scale", t.init_scale},
          {"opg", t.opg}}},
        {"simulator",
         {{"num_classes", s.scene.num_classes},
          {"min_objects", s.scene.min_objects},
          {"max_objects", s.scene.max_objects},
          {"width", s.scene.width},
          {"height", s.scene.height},
          {"min_size", s.scene.min_size},
          {"max_size", s.scene.max_size},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"proposals", detail::write_proposals(s.proposals)},
          {"features",
           {{"dim", s.features.dim},
            {"noise", s.features.noise},
            {"extent_norm", s.features.extent_norm},
            {"part_norm", s.features.part_norm},
            {"background_norm", s.features.background_norm}}}}},
        {"ratio",
         {{"r_o_values", c.ratio.r_o_values},
          {"fixed_total", c.ratio.fixed_total},
          {"seeds", c.ratio.seeds},
          {"pool", detail::write_proposals(c.ratio.pool)}}},
        {"eval",
         {{"iou", c.eval.iou_thresh},
          {"ap_mode", detail::ap_mode_name(c.eval.mode)},
          {"nms_iou", c.detect.nms_iou},
          {"max_per_class", c.detect.max_per_class}}},
    };
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    RunConfig cfg;
    merge_config(cfg, j);
    return cfg;
}

// ---------------------------------------------------------------------------
// Snapshots: one JSON object per line, the inputs of proposal partition for
// one image as produced by an external detector.
//
// {"schema":1,"image_id":"img","num_classes":C,"proposals":[[x1,y1,x2,y2],...],
//  "scores":[C*R numbers, class-major],"present_classes":[...],"theta":0.5}

struct SnapshotRecord {
    std::string image_id;
    std::vector<Box> proposals;
    ScoreMatrix scores;  // C x R
    std::vector<int> present_classes;
    double theta = 0.0;

    std::size_t num_classes() const { return static_cast<std::size_t>(scores.rows()); }
    ProposalSet proposal_set() const { return {image_id, proposals}; }
    ImageLabels labels() const { return ImageLabels::from_present(num_classes(), present_classes); }

    friend bool operator==(const SnapshotRecord& a, const SnapshotRecord& b) {
        return a.image_id == b.image_id && a.proposals == b.proposals && a.scores == b.scores &&
               a.present_classes == b.present_classes && a.theta == b.theta;
    }
};

inline json to_json(const SnapshotRecord& r) {
    json boxes = json::array();
    for (const auto& b : r.proposals) boxes.push_back(to_json(b));
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(r.scores.size()));
    for (Eigen::Index c = 0; c < r.scores.rows(); ++c)
        for (Eigen::Index j = 0; j < r.scores.cols(); ++j) flat.push_back(r.scores(c, j));
    return {{"schema", kSchema},         {"image_id", r.image_id},
            {"num_classes", r.scores.rows()}, {"proposals", std::move(boxes)},
            {"scores", std::move(flat)}, {"present_classes", r.present_classes},
            {"theta", r.theta}};
}

/// Throws ParseError tagged with `line`.
inline SnapshotRecord snapshot_from_json(const json& j, std::size_t line) {
    auto fail = [&](const std::string& msg) { return ParseError(msg, line); };
    try {
        if (!j.is_object()) throw fail("snapshot must be a JSON object");
        if (j.value("schema", kSchema) != kSchema) throw fail("unsupported schema version");
        for (const char* key : {"image_id", "num_classes", "proposals", "scores", "present_classes", "theta"})
            if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");
        SnapshotRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        const auto C = j.at("num_classes").get<long long>();
        if (C < 1) throw fail("num_classes must be >= 1");
        for (const auto& b : j.at("proposals")) r.proposals.push_back(box_from_json(b));
        if (r.proposals.empty()) throw fail("record has no proposals");
        const auto& scores = j.at("scores");
        const auto R = static_cast<long long>(r.proposals.size());
        if (!scores.is_array() || static_cast<long long>(scores.size()) != C * R)
            throw fail("scores has " + std::to_string(scores.is_array() ? scores.size() : 0) + " entries, expected C*R = " +
                       std::to_string(C * R));
        r.scores.resize(C, R);
        for (long long c = 0; c < C; ++c)
            for (long long k = 0; k < R; ++k) {
                const double v = scores[static_cast<std::size_t>(c * R + k)].get<double>();
                if (!std::isfinite(v)) throw fail("scores must be finite");
                r.scores(c, k) = v;
            }
        r.present_classes = j.at("present_classes").get<std::vector<int>>();
        for (int c : r.present_classes)
            if (c < 0 || c >= C) throw fail("present class " + std::to_string(c) + " out of range");
        r.theta = j.at("theta").get<double>();
        if (!(r.theta >= 0.0 && r.theta <= 1.0)) throw fail("theta must lie in [0, 1]");
        return r;
    } catch (const ParseError&) {
        throw;
    } catch (const DomainError& e) {
        throw fail(e.what());
    } catch (const json::exception& e) {
        throw fail(e.what());
    }
}

/// Calls `fn` for each record in file order. Blank lines are skipped.
inline void for_each_snapshot(std::istream& in, const std::function<void(SnapshotRecord&&)>& fn) {
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), line);
        }
        fn(snapshot_from_json(j, line));
    }
}

inline std::vector<SnapshotRecord> read_snapshots(std::istream& in) {
    std::vector<SnapshotRecord> out;
    for_each_snapshot(in, [&](SnapshotRecord&& r) { out.push_back(std::move(r)); });
    return out;
}

inline std::vector<SnapshotRecord> read_snapshots(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path, 0);
    return read_snapshots(in);
}

inline void write_snapshots(std::ostream& out, const std::vector<SnapshotRecord>& records) {
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Reports and logs

inline json partition_report(const SnapshotRecord& rec, const PartitionResult& r, const RunConfig& cfg) {
    json pgts = json::array();
    for (const auto& g : r.pgts)
        pgts.push_back({{"class_id", g.class_id}, {"proposal", g.proposal}, {"box", to_json(g.box)}, {"score", g.score}});
    const auto counts = count_active(r, cfg.partition);
    const ScheduleState state{rec.theta};
    return {
        {"image_id", rec.image_id},
        {"theta", rec.theta},
        {"gamma", gamma(cfg.schedule, state)},
        {"stage", to_string(stage_of(cfg.schedule, state, cfg.warm_frac, cfg.stable_frac))},
        {"n_total", rec.proposals.size()},
        {"n_v", r.n_v},
        {"quotas", {{"n_p", r.quotas.n_p}, {"n_b", r.quotas.n_b}}},
        {"pgts", std::move(pgts)},
        {"positives", r.split.positives},
        {"negatives", r.split.negatives},
        {"risks", r.split.risks},
        {"active", r.active},
        {"risk_draws", r.risk_draws},
        {"overflow", r.overflow},
        {"active_counts", {{"positives", counts.positives}, {"negatives", counts.negatives}, {"risks", counts.risks}}},
    };
}

inline json to_json(const StepLog& row) {
    json images = json::array();
    for (const auto& im : row.images) {
        json branches = json::array();
        for (const auto& b : im.branches)
            branches.push_back(
                {{"active", b.active}, {"positives", b.positives}, {"negatives", b.negatives}, {"risks", b.risks}});
        images.push_back(
            {{"image_id", im.image_id}, {"n_total", im.n_total}, {"n_v", im.n_v}, {"branches", std::move(branches)}});
    }
    return {{"schema", kSchema},
            {"step", row.step},
            {"theta", row.theta},
            {"learning_rate", row.learning_rate},
            {"loss", {{"base", row.loss.l_base}, {"refine", row.loss.l_refine}, {"total", row.loss.total}}},
            {"images", std::move(images)}};
}

inline void write_log(std::ostream& out, const std::vector<StepLog>& log) {
    for (const auto& row : log) out << to_json(row).dump() << '\n';
}

inline json to_json(const Detection& d) {
    return {{"schema", kSchema},
            {"image_id", d.image_id},
            {"class_id", d.class_id},
            {"box", to_json(d.box)},
            {"confidence", d.confidence}};
}

namespace detail {

/// Parse every non-blank line of a JSONL file with `fn(json, line)`.
template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path, 0);
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(text);
            if (j.value("schema", kSchema) != kSchema) throw ParseError("unsupported schema version", line);
            fn(j, line);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(e.what(), line);
        }
    }
}

}  // namespace detail

inline std::vector<Detection> read_detections(const std::string& path) {
    std::vector<Detection> out;
    detail::for_each_jsonl(path, [&](const json& j, std::size_t line) {
        Detection d;
        d.image_id = j.at("image_id").get<std::string>();
        d.class_id = j.at("class_id").get<int>();
        d.box = box_from_json(j.at("box"));
        d.confidence = j.at("confidence").get<double>();
        if (!std::isfinite(d.confidence)) throw ParseError("confidence must be finite", line);
        out.push_back(std::move(d));
    });
    return out;
}

/// Scene file line: ground truth plus proposal boxes of one synthetic image.
struct SceneRecord {
    std::string image_id;
    std::string split;
    std::size_t num_classes = 0;
    std::vector<GroundTruthObject> objects;
    std::vector<Box> proposals;

    GroundTruthImage ground_truth() const { return {image_id, objects}; }
};

inline json scene_json(const synth::SyntheticImage& im, const std::string& split, std::size_t num_classes) {
    json objects = json::array();
    for (const auto& o : im.scene.objects) objects.push_back({{"class_id", o.class_id}, {"box", to_json(o.box)}});
    json proposals = json::array();
    for (const auto& b : im.proposals.set.boxes) proposals.push_back(to_json(b));
    return {{"schema", kSchema},
            {"image_id", im.scene.image_id},
            {"split", split},
            {"num_classes", num_classes},
            {"width", im.scene.width},
            {"height", im.scene.height},
            {"objects", std::move(objects)},
            {"present_classes", im.scene.labels.present()},
            {"proposals", std::move(proposals)}};
}

inline std::vector<SceneRecord> read_scenes(const std::string& path) {
    std::vector<SceneRecord> out;
    detail::for_each_jsonl(path, [&](const json& j, std::size_t) {
        SceneRecord s;
        s.image_id = j.at("image_id").get<std::string>();
        s.split = j.value("split", std::string{});
        s.num_classes = j.at("num_classes").get<std::size_t>();
        for (const auto& o : j.at("objects")) s.objects.push_back({o.at("class_id").get<int>(), box_from_json(o.at("box"))});
        if (auto it = j.find("proposals"); it != j.end())
            for (const auto& b : *it) s.proposals.push_back(box_from_json(b));
        out.push_back(std::move(s));
    });
    return out;
}

inline json to_json(const EvalReport& r, const EvalOptions& opts) {
    json per_class = json::object();
    for (const auto& [c, ap] : r.per_class_ap) per_class[std::to_string(c)] = ap;
    return {{"schema", kSchema},
            {"map", r.map},
            {"corloc", r.corloc},
            {"per_class_ap", std::move(per_class)},
            {"undefined_classes", r.undefined_classes},
            {"iou", opts.iou_thresh},
            {"ap_mode", detail::ap_mode_name(opts.mode)}};
}

}  // namespace opg::io

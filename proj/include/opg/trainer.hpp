// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "opg/errors.hpp"
#include "opg/eval.hpp"
#include "opg/mil_head.hpp"
#include "opg/partition.hpp"
#include "opg/random.hpp"
#include "opg/schedule.hpp"
#include "opg/synth.hpp"

namespace opg {

using synth::TrainingImage;

struct TrainerConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 2;
    std::size_t branches = 3;
    double learning_rate = 0.3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    /// Single step decay of the learning rate at this fraction of training.
    double decay_at = 40.0 / 95.0;
    double decay_factor = 0.1;
    double init_scale = 0.01;
    bool opg = true;

    void validate() const {
        if (steps < 2) throw ConfigError("trainer: steps must be >= 2");
        if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("trainer: learning_rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("trainer: momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("trainer: weight_decay must be >= 0");
        if (!(decay_at >= 0.0 && decay_at <= 1.0)) throw ConfigError("trainer: decay_at must lie in [0, 1]");
        if (!(decay_factor > 0.0)) throw ConfigError("trainer: decay_factor must be > 0");
    }
};

struct BranchLog {
    std::size_t active = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t risks = 0;
};

struct ImageLog {
    std::string image_id;
    std::size_t n_total = 0;
    std::size_t n_v = 0;
    std::vector<BranchLog> branches;
};

struct StepLog {
    std::size_t step = 0;
    double theta = 0.0;
    double learning_rate = 0.0;
    std::vector<ImageLog> images;
    LossReport loss;  // batch mean
};

struct TrainResult {
    ToyModel model;
    std::vector<StepLog> log;
};

/// PGT source for refinement branch k (0-based): the base head's fused
/// scores for k = 0, otherwise the foreground rows of branch k - 1.
inline ScoreMatrix pgt_scores(const ForwardPass& fp, std::size_t branch) {
    if (branch == 0) return fp.head.fused;
    const auto& p = fp.refine_probs[branch - 1];
    return p.topRows(p.rows() - 1);
}

struct ImageStep {
    std::vector<BranchTarget> targets;
    ImageLog log;
};

/// Per-branch supervision for one image at one training state. With OPG off
/// every proposal is active; the partition is still computed so the log
/// reports the same counts for both modes.
inline ImageStep build_targets(const ToyModel& model, const TrainingImage& img, const ScheduleConfig& schedule,
                               ScheduleState state, const PartitionConfig& pcfg, bool opg, std::uint64_t seed,
                               std::size_t step) {
    const ForwardPass fp = forward(model, img.features);
    const std::size_t C = model.num_classes();
    ImageStep out;
    out.log.image_id = img.image_id;
    out.log.n_total = img.proposals.size();
    out.log.n_v = opg ? n_v(schedule, state, img.proposals.size()) : img.proposals.size();
    for (std::size_t k = 0; k < model.refine.size(); ++k) {
        const ScoreMatrix scores = pgt_scores(fp, k);
        auto rng = make_rng(seed, img.image_id, k + 1, step);
        PartitionResult pr;
        if (opg) {
            pr = generate(img.proposals, scores, img.labels, schedule, state, pcfg, rng);
        } else {
            pr.pgts = select_pgts(scores, img.labels, img.proposals);
            pr.s_p = score_proposals(img.proposals, pr.pgts);
            pr.split = partition(pr.s_p, pcfg);
            pr.n_v = img.proposals.size();
            pr.active.resize(img.proposals.size());
            std::iota(pr.active.begin(), pr.active.end(), std::size_t{0});
        }
        const auto counts = count_active(pr, pcfg);
        out.log.branches.push_back({pr.active.size(), counts.positives, counts.negatives, counts.risks});
        out.targets.push_back({assign_refinement_labels(pr.pgts, img.proposals, C), std::move(pr.active)});
    }
    return out;
}

/// Mini-batch SGD with momentum. At each step theta = step / (steps - 1).
/// Deterministic for a given seed.
inline TrainResult train(std::span<const TrainingImage> data, std::size_t num_classes, const ScheduleConfig& schedule,
                         const PartitionConfig& pcfg, const TrainerConfig& tcfg, std::uint64_t seed) {
    tcfg.validate();
    schedule.validate();
    pcfg.validate();
    if (data.empty()) throw DomainError("train: empty dataset");
    const std::size_t dim = static_cast<std::size_t>(data.front().features.cols());
    for (const auto& im : data) {
        if (!im.labels.any()) throw DomainError("train: image " + im.image_id + " has no positive class");
        if (static_cast<std::size_t>(im.features.cols()) != dim ||
            static_cast<std::size_t>(im.features.rows()) != im.proposals.size())
            throw DomainError("train: feature table of " + im.image_id + " has the wrong shape");
    }

    auto init_rng = make_rng(seed, "init");
    TrainResult res{ToyModel::random(num_classes, dim, tcfg.branches, init_rng, tcfg.init_scale), {}};
    ToyModel velocity = ToyModel::zeros(num_classes, dim, tcfg.branches);
    res.log.reserve(tcfg.steps);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    std::size_t epoch = 0;

    const auto decay_step = static_cast<std::size_t>(std::llround(tcfg.decay_at * static_cast<double>(tcfg.steps)));

    for (std::size_t step = 0; step < tcfg.steps; ++step) {
        const ScheduleState state = ScheduleState::at(step, tcfg.steps - 1);
        StepLog row;
        row.step = step;
        row.theta = state.theta;
        row.learning_rate = step < decay_step ? tcfg.learning_rate : tcfg.learning_rate * tcfg.decay_factor;

        ToyModel grad = ToyModel::zeros(num_classes, dim, tcfg.branches);
        row.loss.l_refine.assign(tcfg.branches, 0.0);
        for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
            if (cursor == order.size()) {
                auto shuffle_rng = make_rng(seed, "order", 0, epoch++);
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
                cursor = 0;
            }
            const auto& img = data[order[cursor++]];
            ImageStep is = build_targets(res.model, img, schedule, state, pcfg, tcfg.opg, seed, step);
            const auto lg = loss_and_gradient(res.model, img.features, img.labels, is.targets);
            if (!std::isfinite(lg.loss.total)) throw TrainingError("non-finite loss on " + img.image_id, step);
            grad.unflatten(grad.flatten() + lg.grad.flatten());
            row.loss.l_base += lg.loss.l_base;
            for (std::size_t k = 0; k < tcfg.branches; ++k) row.loss.l_refine[k] += lg.loss.l_refine[k];
            row.images.push_back(std::move(is.log));
        }
        const double inv = 1.0 / static_cast<double>(tcfg.batch_size);
        row.loss.l_base *= inv;
        for (auto& l : row.loss.l_refine) l *= inv;
        row.loss.total = total_loss(row.loss.l_base, row.loss.l_refine);

        // Weight decay applies to weights, not biases.
        auto& m = res.model;
        const Eigen::VectorXd g = grad.flatten() * inv;
        ToyModel decay = m;
        decay.for_each([](Eigen::MatrixXd&, Eigen::VectorXd& b) { b.setZero(); });
        const Eigen::VectorXd v = tcfg.momentum * velocity.flatten() + row.learning_rate * (g + tcfg.weight_decay * decay.flatten());
        if (!v.allFinite()) throw TrainingError("non-finite gradient", step);
        velocity.unflatten(v);
        m.unflatten(m.flatten() - v);

        res.log.push_back(std::move(row));
    }
    return res;
}

struct DetectOptions {
    double nms_iou = 0.3;
    std::size_t max_per_class = 40;
};

/// Per-class proposal scores used for detection: the mean of the refinement
/// branches' foreground probabilities, or the fused base scores when the
/// model has no refinement branch.
inline ScoreMatrix detection_scores(const ToyModel& model, const Eigen::MatrixXd& features) {
    const ForwardPass fp = forward(model, features);
    if (fp.refine_probs.empty()) return fp.head.fused;
    const auto C = static_cast<Eigen::Index>(model.num_classes());
    ScoreMatrix s = ScoreMatrix::Zero(C, features.rows());
    for (const auto& p : fp.refine_probs) s += p.topRows(C);
    return s / static_cast<double>(fp.refine_probs.size());
}

/// Greedy NMS per class; returns surviving detections in descending confidence.
inline std::vector<Detection> detect(const ToyModel& model, const TrainingImage& img, const DetectOptions& opts = {}) {
    const ScoreMatrix s = detection_scores(model, img.features);
    std::vector<Detection> out;
    for (Eigen::Index c = 0; c < s.rows(); ++c) {
        std::vector<std::size_t> idx(img.proposals.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return s(c, static_cast<Eigen::Index>(a)) > s(c, static_cast<Eigen::Index>(b));
        });
        std::vector<std::size_t> kept;
        for (auto i : idx) {
            if (kept.size() >= opts.max_per_class) break;
            bool suppressed = false;
            for (auto k : kept)
                if (detail::iou_unchecked(img.proposals[i], img.proposals[k]) > opts.nms_iou) {
                    suppressed = true;
                    break;
                }
            if (!suppressed) kept.push_back(i);
        }
        for (auto i : kept)
            out.push_back({img.image_id, static_cast<int>(c), img.proposals[i], s(c, static_cast<Eigen::Index>(i))});
    }
    return out;
}

inline std::vector<Detection> detect_all(const ToyModel& model, std::span<const TrainingImage> images,
                                         const DetectOptions& opts = {}) {
    std::vector<Detection> out;
    for (const auto& im : images) {
        auto d = detect(model, im, opts);
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

/// Test mAP of `model` plus CorLoc on the training images.
inline EvalReport evaluate_model(const ToyModel& model, const synth::SyntheticDataset& ds,
                                 const DetectOptions& dopts = {}, const EvalOptions& eopts = {}) {
    const auto test_views = synth::SyntheticDataset::views(ds.test);
    const auto train_views = synth::SyntheticDataset::views(ds.train);
    const auto test_gt = synth::SyntheticDataset::ground_truth(ds.test);
    const auto train_gt = synth::SyntheticDataset::ground_truth(ds.train);
    EvalReport rep = evaluate(detect_all(model, test_views, dopts), test_gt, ds.num_classes, eopts);
    const auto train_dets = detect_all(model, train_views, dopts);
    rep.corloc = corloc(top_candidates(train_dets, train_gt), train_gt, eopts.iou_thresh);
    return rep;
}

inline double test_map(const ToyModel& model, const synth::SyntheticDataset& ds, const DetectOptions& dopts = {},
                       const EvalOptions& eopts = {}) {
    const auto views = synth::SyntheticDataset::views(ds.test);
    return evaluate(detect_all(model, views, dopts), synth::SyntheticDataset::ground_truth(ds.test), ds.num_classes,
                    eopts)
        .map;
}

// ---------------------------------------------------------------------------
// Positive:negative ratio experiment.

struct RatioExperimentConfig {
    std::vector<double> r_o_values{1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
    std::size_t fixed_total = 100;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    /// Proposal generator for the training pools. Denser in positives than
    /// the default so that R_o = 1 is reachable at fixed_total.
    synth::ProposalConfig pool{500, 0.35, 0.15, 0.05, 6.0, 200};

    void validate() const {
        if (r_o_values.empty()) throw ConfigError("ratio: no R_o values");
        for (double r : r_o_values)
            if (!(r > 0.0 && r <= 1.0)) throw ConfigError("ratio: each R_o must lie in (0, 1]");
        if (fixed_total < 2) throw ConfigError("ratio: fixed_total must be >= 2");
        if (seeds.empty()) throw ConfigError("ratio: no seeds");
    }

    /// (positives, negatives) per image for ratio r.
    std::pair<std::size_t, std::size_t> split(double r) const {
        const auto n_f = static_cast<std::size_t>(std::llround(static_cast<double>(fixed_total) * r / (1.0 + r)));
        return {n_f, fixed_total - n_f};
    }
};

struct RatioRow {
    double r_o = 0.0;
    std::vector<double> maps;  // one per seed, in config order
    double mean_map = 0.0;
};

/// Positive pool (s_p >= t_f) and negative pool (everything else) of one
/// training image under PGTs from a base-only model.
struct RatioPools {
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
};

inline RatioPools ratio_pools(const ToyModel& base_model, const TrainingImage& img, const PartitionConfig& pcfg) {
    const ForwardPass fp = forward(base_model, img.features);
    const auto pgts = select_pgts(fp.head.fused, img.labels, img.proposals);
    const auto s_p = score_proposals(img.proposals, pgts);
    RatioPools pools;
    for (std::size_t i = 0; i < s_p.size(); ++i) (s_p[i] >= pcfg.t_f ? pools.positives : pools.negatives).push_back(i);
    return pools;
}

inline TrainingImage subset(const TrainingImage& img, std::vector<std::size_t> keep) {
    std::sort(keep.begin(), keep.end());
    TrainingImage out;
    out.image_id = img.image_id;
    out.labels = img.labels;
    out.proposals.image_id = img.proposals.image_id;
    out.features.resize(static_cast<Eigen::Index>(keep.size()), img.features.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.proposals.boxes.push_back(img.proposals[keep[r]]);
        out.features.row(static_cast<Eigen::Index>(r)) = img.features.row(static_cast<Eigen::Index>(keep[r]));
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    pool.resize(k);
    return pool;
}

}  // namespace detail

/// Two-phase protocol: a base-only model trained on all proposals of
/// `train_pool` supplies PGTs; each image's proposals are then resampled to
/// fixed_total with positives:negatives = R_o, and a fresh model (OPG off) is
/// trained on the resampled sets and scored by mAP on `eval_ds.test`.
/// Seeds run in parallel; results are ordered by config.
inline std::vector<RatioRow> ratio_experiment(std::span<const TrainingImage> train_pool,
                                              const synth::SyntheticDataset& eval_ds,
                                              const RatioExperimentConfig& rcfg, const ScheduleConfig& schedule,
                                              const PartitionConfig& pcfg, const TrainerConfig& tcfg,
                                              const DetectOptions& dopts = {}, const EvalOptions& eopts = {}) {
    rcfg.validate();
    const auto& views = train_pool;
    const std::size_t num_classes = eval_ds.num_classes;

    TrainerConfig base_cfg = tcfg;
    base_cfg.branches = 0;
    base_cfg.opg = false;
    TrainerConfig fresh_cfg = tcfg;
    fresh_cfg.opg = false;

    auto run_seed = [&](std::uint64_t seed) {
        const auto base = train(views, num_classes, schedule, pcfg, base_cfg, splitmix64(seed ^ 0xB45E));
        std::vector<RatioPools> pools;
        pools.reserve(views.size());
        for (const auto& v : views) pools.push_back(ratio_pools(base.model, v, pcfg));

        std::vector<double> maps;
        for (double r : rcfg.r_o_values) {
            const auto [n_f, n_b] = rcfg.split(r);
            std::vector<TrainingImage> resampled;
            resampled.reserve(views.size());
            for (std::size_t i = 0; i < views.size(); ++i) {
                if (pools[i].positives.size() < n_f)
                    throw ConfigError("ratio: R_o=" + std::to_string(r) + " needs " + std::to_string(n_f) +
                                      " positives per image but the positive pool of " + views[i].image_id +
                                      " holds " + std::to_string(pools[i].positives.size()));
                if (pools[i].negatives.size() < n_b)
                    throw ConfigError("ratio: R_o=" + std::to_string(r) + " needs " + std::to_string(n_b) +
                                      " negatives per image but the negative pool of " + views[i].image_id +
                                      " holds " + std::to_string(pools[i].negatives.size()));
                auto rng = make_rng(seed, views[i].image_id, 7, static_cast<std::uint64_t>(std::llround(r * 1e6)));
                auto keep = detail::sample_without_replacement(pools[i].positives, n_f, rng);
                auto neg = detail::sample_without_replacement(pools[i].negatives, n_b, rng);
                keep.insert(keep.end(), neg.begin(), neg.end());
                resampled.push_back(subset(views[i], std::move(keep)));
            }
            const auto fresh = train(resampled, num_classes, schedule, pcfg, fresh_cfg, seed);
            maps.push_back(test_map(fresh.model, eval_ds, dopts, eopts));
        }
        return maps;
    };

    std::vector<std::future<std::vector<double>>> jobs;
    for (auto s : rcfg.seeds) jobs.push_back(std::async(std::launch::async, run_seed, s));
    std::vector<std::vector<double>> per_seed;
    for (auto& j : jobs) per_seed.push_back(j.get());

    std::vector<RatioRow> rows;
    for (std::size_t r = 0; r < rcfg.r_o_values.size(); ++r) {
        RatioRow row{rcfg.r_o_values[r], {}, 0.0};
        for (const auto& m : per_seed) row.maps.push_back(m[r]);
        row.mean_map = std::accumulate(row.maps.begin(), row.maps.end(), 0.0) / static_cast<double>(row.maps.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Training pool for the ratio experiment: the scenes of the default
/// training split with proposals redrawn from `rcfg.pool`.
inline std::vector<TrainingImage> ratio_training_pool(std::uint64_t seed, const synth::SimConfig& sim,
                                                      const RatioExperimentConfig& rcfg) {
    synth::SimConfig dense = sim;
    dense.proposals = rcfg.pool;
    return synth::SyntheticDataset::views(synth::build_split(seed, dense, "train", sim.n_train));
}

}  // namespace opg

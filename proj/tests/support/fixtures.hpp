// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Random instance generators shared by the unit tests and the acceptance
// runner.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "oracles/ap_oracle.hpp"
#include "oracles/loss_oracle.hpp"
#include "oracles/partition_oracle.hpp"
#include "opg/opg.hpp"

namespace fixtures {

inline opg::Box random_box(opg::Rng& rng, bool integer_grid, double canvas = 100.0) {
    for (;;) {
        double x1 = opg::uniform(rng, 0.0, canvas - 2.0), y1 = opg::uniform(rng, 0.0, canvas - 2.0);
        double x2 = opg::uniform(rng, x1 + 1.0, canvas), y2 = opg::uniform(rng, y1 + 1.0, canvas);
        if (integer_grid) {
            x1 = std::floor(x1), y1 = std::floor(y1), x2 = std::ceil(x2), y2 = std::ceil(y2);
        }
        if (x2 > x1 && y2 > y1) return opg::Box::make(x1, y1, x2, y2);
    }
}

/// Box overlapping `b` substantially: shifted and rescaled by up to `spread`.
inline opg::Box perturb(opg::Rng& rng, const opg::Box& b, double spread) {
    const double w = b.width(), h = b.height();
    const double x1 = b.x1 + opg::uniform(rng, -spread, spread) * w;
    const double y1 = b.y1 + opg::uniform(rng, -spread, spread) * h;
    const double nw = std::max(1.0, w * (1.0 + opg::uniform(rng, -spread, spread)));
    const double nh = std::max(1.0, h * (1.0 + opg::uniform(rng, -spread, spread)));
    return opg::Box::make(x1, y1, x1 + nw, y1 + nh);
}

/// One randomized partition problem in both library and oracle form.
struct PartitionCase {
    opg::ProposalSet proposals;
    opg::ScoreMatrix scores;
    opg::ImageLabels labels;
    opg::ScheduleConfig schedule;
    opg::ScheduleState state;
    opg::PartitionConfig cfg;

    oracle::PartitionInput oracle_input() const {
        oracle::PartitionInput in;
        in.boxes = proposals.boxes;
        in.scores.assign(static_cast<std::size_t>(scores.rows()), std::vector<double>(proposals.size()));
        for (Eigen::Index c = 0; c < scores.rows(); ++c)
            for (Eigen::Index j = 0; j < scores.cols(); ++j)
                in.scores[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] = scores(c, j);
        for (std::size_t c = 0; c < labels.num_classes(); ++c) in.present.push_back(labels.has(c));
        in.theta = state.theta;
        in.alpha = schedule.alpha;
        in.beta = schedule.beta;
        in.omega = schedule.omega;
        in.n_min = schedule.n_min;
        in.t_f = cfg.t_f;
        in.t_b1 = cfg.t_b1;
        in.t_b2 = cfg.t_b2;
        in.r_p = cfg.r_p;
        return in;
    }
};

/// R <= max_r proposals, C <= max_c classes. Mixes integer-grid boxes
/// (exact IoU ties), duplicated boxes, quantised scores (argmax ties) and
/// clusters around a few anchors so every label bucket is populated.
inline PartitionCase random_partition_case(opg::Rng& rng, std::size_t max_r = 300, std::size_t max_c = 5) {
    PartitionCase pc;
    const std::size_t R = 1 + opg::uniform_index(rng, max_r);
    const std::size_t C = 1 + opg::uniform_index(rng, max_c);
    const bool grid = opg::uniform01(rng) < 0.5;
    const bool quantised = opg::uniform01(rng) < 0.3;

    std::vector<opg::Box> anchors;
    for (int a = 0; a < 3; ++a) anchors.push_back(random_box(rng, grid));
    pc.proposals.image_id = "case";
    for (std::size_t j = 0; j < R; ++j) {
        const double u = opg::uniform01(rng);
        opg::Box b;
        if (u < 0.1 && j > 0)
            b = pc.proposals.boxes[opg::uniform_index(rng, j)];
        else if (u < 0.6)
            b = perturb(rng, anchors[opg::uniform_index(rng, anchors.size())], 0.4);
        else
            b = random_box(rng, grid);
        if (grid) b = opg::Box::make(std::round(b.x1), std::round(b.y1), std::round(b.x2) + (std::round(b.x2) <= std::round(b.x1)),
                                     std::round(b.y2) + (std::round(b.y2) <= std::round(b.y1)));
        pc.proposals.boxes.push_back(b);
    }

    pc.scores.resize(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(R));
    for (Eigen::Index c = 0; c < pc.scores.rows(); ++c)
        for (Eigen::Index j = 0; j < pc.scores.cols(); ++j) {
            const double s = opg::uniform01(rng);
            pc.scores(c, j) = quantised ? std::round(s * 4.0) / 4.0 : s;
        }

    std::vector<int> present;
    for (std::size_t c = 0; c < C; ++c)
        if (opg::uniform01(rng) < 0.5) present.push_back(static_cast<int>(c));
    if (present.empty()) present.push_back(static_cast<int>(opg::uniform_index(rng, C)));
    pc.labels = opg::ImageLabels::from_present(C, present);

    const double pick = opg::uniform01(rng);
    pc.state.theta = pick < 0.1 ? 0.0 : pick < 0.2 ? 1.0 : opg::uniform01(rng);
    pc.schedule.n_min = 1 + opg::uniform_index(rng, 200);
    if (opg::uniform01(rng) < 0.5) {
        pc.cfg.t_b2 = opg::uniform(rng, 0.0, 0.3);
        pc.cfg.t_b1 = opg::uniform(rng, pc.cfg.t_b2 + 0.01, 0.7);
        pc.cfg.t_f = opg::uniform(rng, pc.cfg.t_b1, 1.0);
        pc.cfg.r_p = opg::uniform(rng, 0.05, 0.95);
    }
    return pc;
}

/// Library vs oracle on one case; returns an empty string on agreement.
inline std::string compare_partition(const PartitionCase& pc, std::uint64_t seed) {
    auto rng_lib = opg::make_rng(seed, "partition");
    auto rng_ref = opg::make_rng(seed, "partition");
    const auto got = opg::generate(pc.proposals, pc.scores, pc.labels, pc.schedule, pc.state, pc.cfg, rng_lib);
    const auto want = oracle::partition(pc.oracle_input(), rng_ref);
    std::vector<std::size_t> pgt;
    for (const auto& g : got.pgts) pgt.push_back(g.proposal);
    if (pgt != want.pgt_proposals) return "pseudo ground truth differs";
    if (got.s_p != want.s_p) return "s_p differs";
    if (got.split.positives != want.positives) return "positive set differs";
    if (got.split.negatives != want.negatives) return "negative set differs";
    if (got.split.risks != want.risks) return "risk set differs";
    if (got.n_v != want.n_v) return "budget differs";
    if (got.quotas.n_p != want.n_p || got.quotas.n_b != want.n_b) return "quotas differ";
    if (got.active != want.active) return "active set differs";
    return {};
}

/// Ample-pool instance at the end of training: one object, a cluster of
/// well-localised boxes, a ring of partial overlaps and far background.
inline PartitionCase ample_pool_case(opg::Rng& rng) {
    PartitionCase pc;
    const opg::Box object = opg::Box::make(30.0, 30.0, 70.0, 70.0);
    pc.proposals.image_id = "ample";
    pc.proposals.boxes.push_back(object);
    while (pc.proposals.size() < 300) {
        const double u = opg::uniform01(rng);
        const opg::Box b = u < 0.3 ? perturb(rng, object, 0.08) : u < 0.9 ? perturb(rng, object, 0.6) : random_box(rng, false);
        pc.proposals.boxes.push_back(b);
    }
    const auto R = static_cast<Eigen::Index>(pc.proposals.size());
    pc.scores.resize(2, R);
    for (Eigen::Index i = 0; i < pc.scores.size(); ++i) pc.scores.data()[i] = 0.5 * opg::uniform01(rng);
    pc.scores(0, 0) = 1.0;  // the object itself is the pseudo ground truth
    pc.labels = opg::ImageLabels::from_present(2, {0});
    pc.state.theta = 1.0;
    pc.schedule.n_min = 4 * (4 + opg::uniform_index(rng, 30));
    return pc;
}

/// Random small training instance for gradient checks.
struct GradientCase {
    opg::ToyModel model;
    Eigen::MatrixXd features;
    opg::ImageLabels labels;
    std::vector<opg::BranchTarget> targets;

    std::vector<oracle::BranchSupervision> oracle_targets() const {
        std::vector<oracle::BranchSupervision> out;
        for (const auto& t : targets) out.push_back({t.labels.target, t.labels.weight, t.active});
        return out;
    }
    std::vector<bool> oracle_labels() const {
        std::vector<bool> y;
        for (std::size_t c = 0; c < labels.num_classes(); ++c) y.push_back(labels.has(c));
        return y;
    }
};

inline GradientCase random_gradient_case(opg::Rng& rng) {
    GradientCase g;
    const std::size_t C = 1 + opg::uniform_index(rng, 4);
    const std::size_t D = 2 + opg::uniform_index(rng, 5);
    const std::size_t R = 2 + opg::uniform_index(rng, 10);
    const std::size_t K = opg::uniform_index(rng, 4);
    g.model = opg::ToyModel::random(C, D, K, rng, 0.5);
    g.model.for_each([&](Eigen::MatrixXd&, Eigen::VectorXd& b) {
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.3 * opg::normal(rng);
    });
    g.features.resize(static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < g.features.size(); ++i) g.features.data()[i] = opg::normal(rng);
    std::vector<int> present;
    for (std::size_t c = 0; c < C; ++c)
        if (opg::uniform01(rng) < 0.5) present.push_back(static_cast<int>(c));
    g.labels = opg::ImageLabels::from_present(C, present);
    for (std::size_t k = 0; k < K; ++k) {
        opg::BranchTarget t;
        t.labels.num_classes = C;
        for (std::size_t j = 0; j < R; ++j) {
            t.labels.target.push_back(static_cast<int>(opg::uniform_index(rng, C + 1)));
            t.labels.weight.push_back(opg::uniform01(rng));
            if (opg::uniform01(rng) < 0.6) t.active.push_back(j);
        }
        if (t.active.empty()) t.active.push_back(opg::uniform_index(rng, R));
        g.targets.push_back(std::move(t));
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||), with a floor for all-zero gradients.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

/// Micro evaluation fixture: up to 4 ground truths and 10 detections over
/// two classes and a few images, confidences distinct.
struct EvalCase {
    std::vector<opg::GroundTruthImage> gt;
    std::vector<opg::Detection> dets;
};

inline EvalCase random_eval_case(opg::Rng& rng) {
    EvalCase e;
    const std::size_t n_img = 1 + opg::uniform_index(rng, 3);
    const std::size_t n_gt = 1 + opg::uniform_index(rng, 4);
    for (std::size_t i = 0; i < n_img; ++i) e.gt.push_back({"img-" + std::to_string(i), {}});
    for (std::size_t g = 0; g < n_gt; ++g) {
        auto& img = e.gt[opg::uniform_index(rng, n_img)];
        img.objects.push_back({static_cast<int>(opg::uniform_index(rng, 2)), random_box(rng, false)});
    }
    const std::size_t n_det = opg::uniform_index(rng, 11);
    std::vector<double> conf;
    for (std::size_t d = 0; d < n_det; ++d) conf.push_back((static_cast<double>(d) + opg::uniform01(rng)) / 11.0);
    for (std::size_t d = 0; d < n_det; ++d) std::swap(conf[d], conf[d + opg::uniform_index(rng, n_det - d)]);
    for (std::size_t d = 0; d < n_det; ++d) {
        opg::Detection det;
        const auto& img = e.gt[opg::uniform_index(rng, n_img)];
        det.image_id = img.image_id;
        det.class_id = static_cast<int>(opg::uniform_index(rng, 2));
        if (!img.objects.empty() && opg::uniform01(rng) < 0.6)
            det.box = perturb(rng, img.objects[opg::uniform_index(rng, img.objects.size())].box, 0.2);
        else
            det.box = random_box(rng, false);
        det.confidence = conf[d];
        e.dets.push_back(det);
    }
    return e;
}

/// Empty string when library metrics match the exhaustive oracle.
inline std::string compare_eval(const EvalCase& e, opg::ApMode mode = opg::ApMode::AllPoints) {
    for (int c = 0; c < 2; ++c) {
        std::vector<opg::Detection> dets;
        for (const auto& d : e.dets)
            if (d.class_id == c) dets.push_back(d);
        std::map<std::string, std::vector<opg::Box>> gt;
        for (const auto& img : e.gt) {
            auto& v = gt[img.image_id];
            for (const auto& o : img.objects)
                if (o.class_id == c) v.push_back(o.box);
        }
        const auto got = opg::average_precision(dets, gt, 0.5, mode);
        std::size_t n_gt = 0;
        for (const auto& [id, v] : gt) n_gt += v.size();
        if (n_gt == 0) {
            if (got) return "AP defined for a class without ground truth";
            continue;
        }
        if (!got) return "AP undefined for a class with ground truth";
        const auto pts = oracle::pr_points(dets, gt, 0.5);
        const double want = mode == opg::ApMode::Voc07 ? oracle::ap_eleven_point(pts) : oracle::ap_all_points(pts);
        if (std::abs(*got - want) > 1e-12) return "AP mismatch for class " + std::to_string(c);
    }
    const auto rep = opg::evaluate(e.dets, e.gt, 2, {0.5, mode});
    if (std::abs(rep.corloc - oracle::corloc(e.dets, e.gt, 0.5)) > 1e-12) return "CorLoc mismatch";
    return {};
}

}  // namespace fixtures

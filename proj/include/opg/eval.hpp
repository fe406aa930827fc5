// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "opg/errors.hpp"
#include "opg/geometry.hpp"

namespace opg {

struct Detection {
    std::string image_id;
    int class_id = 0;
    Box box;
    double confidence = 0.0;
};

struct GroundTruthObject {
    int class_id = 0;
    Box box;
};

struct GroundTruthImage {
    std::string image_id;
    std::vector<GroundTruthObject> objects;
};

enum class ApMode {
    AllPoints,  // area under the precision envelope
    Voc07,      // 11-point interpolation
};

inline constexpr double kEvalIou = 0.5;

namespace detail {

/// Precision/recall after each detection in ranked order.
struct PrCurve {
    std::vector<double> precision;
    std::vector<double> recall;
};

inline double ap_from_curve(const PrCurve& pr, ApMode mode) {
    if (mode == ApMode::Voc07) {
        double ap = 0.0;
        for (int t = 0; t <= 10; ++t) {
            const double thr = t / 10.0;
            double best = 0.0;
            for (std::size_t i = 0; i < pr.recall.size(); ++i)
                if (pr.recall[i] >= thr) best = std::max(best, pr.precision[i]);
            ap += best / 11.0;
        }
        return ap;
    }
    // Envelope from the right, then integrate over recall steps.
    std::vector<double> env = pr.precision;
    for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
    double ap = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < pr.recall.size(); ++i) {
        if (pr.recall[i] > prev) {
            ap += (pr.recall[i] - prev) * env[i];
            prev = pr.recall[i];
        }
    }
    return ap;
}

}  // namespace detail

/// AP for one class. `detections` may be in any order and must all share a
/// class; `gt` holds that class's boxes per image. Returns nullopt when the
/// class has no ground-truth instance.
///
/// Detections are ranked by descending confidence (stable on input order) and
/// matched greedily: a detection is a true positive when its best-overlapping
/// ground truth in the same image has IoU >= iou_thresh and is still unmatched.
inline std::optional<double> average_precision(std::span<const Detection> detections,
                                                const std::map<std::string, std::vector<Box>>& gt,
                                                double iou_thresh = kEvalIou, ApMode mode = ApMode::AllPoints) {
    std::size_t n_gt = 0;
    for (const auto& [id, boxes] : gt) n_gt += boxes.size();
    if (n_gt == 0) return std::nullopt;

    std::vector<std::size_t> order(detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });

    std::map<std::string, std::vector<bool>> used;
    for (const auto& [id, boxes] : gt) used[id].assign(boxes.size(), false);

    detail::PrCurve pr;
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto& d = detections[order[rank]];
        auto it = gt.find(d.image_id);
        if (it != gt.end() && !it->second.empty()) {
            double best = -1.0;
            std::size_t arg = 0;
            for (std::size_t g = 0; g < it->second.size(); ++g) {
                const double o = iou(d.box, it->second[g]);
                if (o > best) {
                    best = o;
                    arg = g;
                }
            }
            auto& flags = used[d.image_id];
            if (best >= iou_thresh && !flags[arg]) {
                flags[arg] = true;
                ++tp;
            }
        }
        pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
        pr.recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    return detail::ap_from_curve(pr, mode);
}

/// One localisation candidate per (image, present class).
struct CorlocCandidate {
    std::string image_id;
    int class_id = 0;
    std::optional<Box> box;  // empty when the model produced nothing for this pair
};

/// Fraction of candidates whose box overlaps some ground truth of the same
/// class in the same image with IoU >= iou_thresh.
inline double corloc(std::span<const CorlocCandidate> candidates, std::span<const GroundTruthImage> gt,
                     double iou_thresh = kEvalIou) {
    if (candidates.empty()) return 0.0;
    std::map<std::string, const GroundTruthImage*> by_id;
    for (const auto& g : gt) by_id[g.image_id] = &g;
    std::size_t hits = 0;
    for (const auto& c : candidates) {
        if (!c.box) continue;
        auto it = by_id.find(c.image_id);
        if (it == by_id.end()) continue;
        for (const auto& obj : it->second->objects) {
            if (obj.class_id == c.class_id && iou(*c.box, obj.box) >= iou_thresh) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

/// Highest-confidence detection for every (image, present class) pair of `gt`.
/// Ties keep the earlier detection.
inline std::vector<CorlocCandidate> top_candidates(std::span<const Detection> detections,
                                                   std::span<const GroundTruthImage> gt) {
    std::map<std::pair<std::string, int>, const Detection*> best;
    for (const auto& d : detections) {
        auto& slot = best[{d.image_id, d.class_id}];
        if (!slot || d.confidence > slot->confidence) slot = &d;
    }
    std::vector<CorlocCandidate> out;
    for (const auto& img : gt) {
        std::set<int> present;
        for (const auto& o : img.objects) present.insert(o.class_id);
        for (int c : present) {
            CorlocCandidate cand{img.image_id, c, std::nullopt};
            auto it = best.find({img.image_id, c});
            if (it != best.end() && it->second) cand.box = it->second->box;
            out.push_back(std::move(cand));
        }
    }
    return out;
}

struct EvalReport {
    std::map<int, double> per_class_ap;
    std::vector<int> undefined_classes;  // classes without any ground truth
    double map = 0.0;
    double corloc = 0.0;
};

struct EvalOptions {
    double iou_thresh = kEvalIou;
    ApMode mode = ApMode::AllPoints;
};

/// Per-class AP, mAP over classes with ground truth, and CorLoc over the same
/// images. Classes are 0..num_classes-1.
inline EvalReport evaluate(std::span<const Detection> detections, std::span<const GroundTruthImage> gt,
                           std::size_t num_classes, const EvalOptions& opts = {}) {
    EvalReport rep;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const int cls = static_cast<int>(c);
        std::vector<Detection> dets;
        for (const auto& d : detections)
            if (d.class_id == cls) dets.push_back(d);
        std::map<std::string, std::vector<Box>> boxes;
        for (const auto& img : gt) {
            auto& v = boxes[img.image_id];
            for (const auto& o : img.objects)
                if (o.class_id == cls) v.push_back(o.box);
        }
        if (auto ap = average_precision(dets, boxes, opts.iou_thresh, opts.mode))
            rep.per_class_ap[cls] = *ap;
        else
            rep.undefined_classes.push_back(cls);
    }
    if (!rep.per_class_ap.empty()) {
        double s = 0.0;
        for (const auto& [c, ap] : rep.per_class_ap) s += ap;
        rep.map = s / static_cast<double>(rep.per_class_ap.size());
    }
    const auto cands = top_candidates(detections, gt);
    rep.corloc = corloc(cands, gt, opts.iou_thresh);
    return rep;
}

}  // namespace opg

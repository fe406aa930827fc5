// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opg/errors.hpp"
#include "opg/eval.hpp"
#include "opg/geometry.hpp"
#include "opg/labels.hpp"
#include "opg/random.hpp"

namespace opg::synth {

struct SceneConfig {
    std::size_t num_classes = 4;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    double width = 100.0;
    double height = 100.0;
    double min_size = 20.0;
    double max_size = 45.0;
    std::size_t max_retries = 200;

    void validate() const {
        if (num_classes < 1) throw DomainError("scene: num_classes must be >= 1");
        if (min_objects < 1 || max_objects < min_objects) throw DomainError("scene: bad object count range");
        if (!(min_size > 0.0) || max_size < min_size) throw DomainError("scene: bad box size range");
        if (max_size > width || max_size > height) throw DomainError("scene: boxes larger than canvas");
    }
};

struct SyntheticScene {
    std::string image_id;
    double width = 0.0;
    double height = 0.0;
    std::vector<GroundTruthObject> objects;
    ImageLabels labels;

    GroundTruthImage ground_truth() const { return {image_id, objects}; }
};

/// Objects are placed uniformly; a candidate that contains or is contained
/// by an existing object is redrawn, up to max_retries times per object.
inline SyntheticScene generate_scene(Rng& rng, const SceneConfig& cfg, std::string image_id) {
    cfg.validate();
    SyntheticScene s;
    s.image_id = std::move(image_id);
    s.width = cfg.width;
    s.height = cfg.height;
    const std::size_t n = cfg.min_objects + uniform_index(rng, cfg.max_objects - cfg.min_objects + 1);
    std::vector<int> present;
    for (std::size_t k = 0; k < n; ++k) {
        const int cls = static_cast<int>(uniform_index(rng, cfg.num_classes));
        bool placed = false;
        for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
            const double w = uniform(rng, cfg.min_size, cfg.max_size);
            const double h = uniform(rng, cfg.min_size, cfg.max_size);
            const double x = uniform(rng, 0.0, cfg.width - w);
            const double y = uniform(rng, 0.0, cfg.height - h);
            const Box b{x, y, x + w, y + h};
            bool ok = true;
            for (const auto& o : s.objects)
                if (o.box.contains(b) || b.contains(o.box)) ok = false;
            if (ok) {
                s.objects.push_back({cls, b});
                present.push_back(cls);
                placed = true;
            }
        }
        if (!placed) throw GenerationError("scene " + s.image_id + ": could not place object " + std::to_string(k));
    }
    s.labels = ImageLabels::from_present(cfg.num_classes, present);
    return s;
}

struct ProposalConfig {
    std::size_t n_total = 500;
    /// Share of proposals jittered from a ground-truth box.
    double positive_share = 0.01;
    /// Share of partial-overlap boxes: object parts, loose boxes, shifted boxes.
    double near_share = 0.15;
    /// Jitter standard deviation as a fraction of object width/height.
    double jitter = 0.05;
    double min_size = 6.0;
    std::size_t max_retries = 200;

    void validate() const {
        if (n_total < 1) throw DomainError("proposals: n_total must be positive");
        if (!(positive_share >= 0.0 && near_share >= 0.0 && positive_share + near_share <= 1.0))
            throw DomainError("proposals: shares must be non-negative and sum to at most 1");
        if (!(jitter >= 0.0)) throw DomainError("proposals: jitter must be non-negative");
    }
};

/// Hidden per-proposal truth. Never part of TrainingImage.
struct Provenance {
    double best_gt_iou = 0.0;
    int best_gt_class = -1;
    /// Index into scene.objects, -1 when the proposal overlaps nothing.
    int best_gt_object = -1;
};

struct SyntheticProposals {
    ProposalSet set;
    std::vector<Provenance> provenance;
};

namespace detail {

inline Box clip_to(const Box& b, double w, double h) {
    return {std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w), std::clamp(b.y2, 0.0, h)};
}

inline Provenance provenance_of(const Box& b, const SyntheticScene& scene) {
    Provenance p;
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        const double o = iou(b, scene.objects[k].box);
        if (o > p.best_gt_iou) {
            p.best_gt_iou = o;
            p.best_gt_class = scene.objects[k].class_id;
            p.best_gt_object = static_cast<int>(k);
        }
    }
    return p;
}

inline double max_gt_iou(const Box& b, const SyntheticScene& scene) { return provenance_of(b, scene).best_gt_iou; }

/// A box overlapping `obj` without localising it: a sub-region, a loose
/// superset or a shifted copy.
inline Box near_box(Rng& rng, const Box& obj) {
    const double w = obj.width();
    const double h = obj.height();
    switch (uniform_index(rng, 3)) {
        case 0: {  // part
            const double pw = w * uniform(rng, 0.25, 0.6);
            const double ph = h * uniform(rng, 0.25, 0.6);
            const double x = obj.x1 + uniform(rng, 0.0, w - pw);
            const double y = obj.y1 + uniform(rng, 0.0, h - ph);
            return {x, y, x + pw, y + ph};
        }
        case 1: {  // loose
            const double sx = uniform(rng, 1.5, 2.5);
            const double sy = uniform(rng, 1.5, 2.5);
            const double cx = 0.5 * (obj.x1 + obj.x2) + uniform(rng, -0.25, 0.25) * w;
            const double cy = 0.5 * (obj.y1 + obj.y2) + uniform(rng, -0.25, 0.25) * h;
            return {cx - 0.5 * sx * w, cy - 0.5 * sy * h, cx + 0.5 * sx * w, cy + 0.5 * sy * h};
        }
        default: {  // shifted
            const double dx = uniform(rng, 0.35, 0.8) * w * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
            const double dy = uniform(rng, 0.0, 0.4) * h * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
            return {obj.x1 + dx, obj.y1 + dy, obj.x2 + dx, obj.y2 + dy};
        }
    }
}

}  // namespace detail

/// Proposal mixture: jittered ground-truth boxes (positive_share), partial
/// overlaps kept below IoU 0.5 (near_share), and uniform background boxes
/// kept below IoU 0.5 (the rest). The result is shuffled.
inline SyntheticProposals generate_proposals(const SyntheticScene& scene, Rng& rng, const ProposalConfig& cfg) {
    cfg.validate();
    if (scene.objects.empty()) throw DomainError("generate_proposals: scene has no objects");
    const auto n_obj = scene.objects.size();
    const auto n_pos = static_cast<std::size_t>(std::llround(cfg.positive_share * static_cast<double>(cfg.n_total)));
    const auto n_near = static_cast<std::size_t>(std::llround(cfg.near_share * static_cast<double>(cfg.n_total)));
    const std::size_t n_bg = cfg.n_total - std::min(cfg.n_total, n_pos + n_near);

    std::vector<Box> boxes;
    boxes.reserve(cfg.n_total);
    auto usable = [&](const Box& b) { return b.width() >= cfg.min_size * 0.5 && b.height() >= cfg.min_size * 0.5; };

    for (std::size_t k = 0; k < n_pos && boxes.size() < cfg.n_total; ++k) {
        const Box& obj = scene.objects[k % n_obj].box;
        Box b = obj;
        for (std::size_t t = 0; t < cfg.max_retries; ++t) {
            const Box cand = detail::clip_to({obj.x1 + cfg.jitter * obj.width() * normal(rng),
                                              obj.y1 + cfg.jitter * obj.height() * normal(rng),
                                              obj.x2 + cfg.jitter * obj.width() * normal(rng),
                                              obj.y2 + cfg.jitter * obj.height() * normal(rng)},
                                             scene.width, scene.height);
            if (cand.valid() && usable(cand)) {
                b = cand;
                break;
            }
        }
        boxes.push_back(b);
    }

    auto draw_below = [&](auto&& make) {
        for (std::size_t t = 0; t < cfg.max_retries; ++t) {
            const Box cand = detail::clip_to(make(), scene.width, scene.height);
            if (cand.valid() && usable(cand) && detail::max_gt_iou(cand, scene) < 0.5) return cand;
        }
        throw GenerationError("scene " + scene.image_id + ": proposal rejection sampling exhausted");
    };

    for (std::size_t k = 0; k < n_near && boxes.size() < cfg.n_total; ++k) {
        const Box obj = scene.objects[uniform_index(rng, n_obj)].box;
        boxes.push_back(draw_below([&] { return detail::near_box(rng, obj); }));
    }
    for (std::size_t k = 0; k < n_bg; ++k) {
        boxes.push_back(draw_below([&] {
            const double w = uniform(rng, cfg.min_size, 0.6 * scene.width);
            const double h = uniform(rng, cfg.min_size, 0.6 * scene.height);
            const double x = uniform(rng, 0.0, scene.width - w);
            const double y = uniform(rng, 0.0, scene.height - h);
            return Box{x, y, x + w, y + h};
        }));
    }

    for (std::size_t i = boxes.size(); i > 1; --i) std::swap(boxes[i - 1], boxes[uniform_index(rng, i)]);

    SyntheticProposals out;
    out.set.image_id = scene.image_id;
    out.set.boxes = std::move(boxes);
    out.provenance.reserve(out.set.size());
    for (const auto& b : out.set.boxes) out.provenance.push_back(detail::provenance_of(b, scene));
    return out;
}

struct FeatureConfig {
    std::size_t dim = 16;
    double noise = 0.15;
    /// Norm of the object-extent prototypes.
    double extent_norm = 1.0;
    /// Norm of the part (texture) prototypes.
    double part_norm = 1.0;
    double background_norm = 1.0;
};

/// Per-class extent and part directions plus a background direction.
/// A ground-truth box of class c maps exactly to extent[c] + part[c].
struct Prototypes {
    std::vector<Eigen::VectorXd> extent;
    std::vector<Eigen::VectorXd> part;
    Eigen::VectorXd background;

    Eigen::VectorXd class_prototype(std::size_t c) const { return extent[c] + part[c]; }

    static Prototypes generate(Rng& rng, std::size_t num_classes, const FeatureConfig& cfg) {
        if (cfg.dim < num_classes) throw DomainError("features: dim must be >= num_classes");
        auto draw = [&](double norm) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(cfg.dim));
            for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
            return Eigen::VectorXd(v * (norm / v.norm()));
        };
        Prototypes p;
        for (std::size_t c = 0; c < num_classes; ++c) {
            p.extent.push_back(draw(cfg.extent_norm));
            p.part.push_back(draw(cfg.part_norm));
        }
        p.background = draw(cfg.background_norm);
        return p;
    }
};

/// Feature of a proposal against its best-overlapping object of class c:
///   coverage * extent[c] + tightness * part[c] + (1 - tightness) * background + noise
/// with coverage = |box ∩ obj| / |obj| and tightness = |box ∩ obj| / |box|.
/// Proposals overlapping nothing get background + noise.
inline Eigen::MatrixXd generate_features(const SyntheticScene& scene, const SyntheticProposals& proposals,
                                         const Prototypes& protos, Rng& rng, const FeatureConfig& cfg) {
    const auto R = static_cast<Eigen::Index>(proposals.set.size());
    const auto D = static_cast<Eigen::Index>(cfg.dim);
    Eigen::MatrixXd f(R, D);
    for (Eigen::Index i = 0; i < R; ++i) {
        const auto& b = proposals.set.boxes[static_cast<std::size_t>(i)];
        const auto& prov = proposals.provenance[static_cast<std::size_t>(i)];
        Eigen::VectorXd v = protos.background;
        if (prov.best_gt_object >= 0) {
            const auto& obj = scene.objects[static_cast<std::size_t>(prov.best_gt_object)];
            const double inter = intersection_area(b, obj.box);
            const double coverage = inter / obj.box.area();
            const double tightness = inter / b.area();
            const auto c = static_cast<std::size_t>(obj.class_id);
            v = coverage * protos.extent[c] + tightness * protos.part[c] + (1.0 - tightness) * protos.background;
        }
        for (Eigen::Index d = 0; d < D; ++d) v(d) += cfg.noise * normal(rng);
        f.row(i) = v.transpose();
    }
    return f;
}

/// What the trainer is allowed to see: boxes, features, image-level labels.
struct TrainingImage {
    std::string image_id;
    ProposalSet proposals;
    Eigen::MatrixXd features;
    ImageLabels labels;
};

struct SyntheticImage {
    SyntheticScene scene;
    SyntheticProposals proposals;
    Eigen::MatrixXd features;

    TrainingImage training_view() const { return {scene.image_id, proposals.set, features, scene.labels}; }
};

struct SimConfig {
    SceneConfig scene;
    ProposalConfig proposals;
    FeatureConfig features;
    std::size_t n_train = 200;
    std::size_t n_test = 100;
};

struct SyntheticDataset {
    std::size_t num_classes = 0;
    Prototypes prototypes;
    std::vector<SyntheticImage> train;
    std::vector<SyntheticImage> test;

    static std::vector<TrainingImage> views(const std::vector<SyntheticImage>& images) {
        std::vector<TrainingImage> out;
        out.reserve(images.size());
        for (const auto& im : images) out.push_back(im.training_view());
        return out;
    }

    static std::vector<GroundTruthImage> ground_truth(const std::vector<SyntheticImage>& images) {
        std::vector<GroundTruthImage> out;
        out.reserve(images.size());
        for (const auto& im : images) out.push_back(im.scene.ground_truth());
        return out;
    }
};

inline SyntheticImage generate_image(std::uint64_t seed, const std::string& image_id, const Prototypes& protos,
                                     const SimConfig& cfg) {
    auto scene_rng = make_rng(seed, image_id, 1);
    auto prop_rng = make_rng(seed, image_id, 2);
    auto feat_rng = make_rng(seed, image_id, 3);
    SyntheticImage im;
    im.scene = generate_scene(scene_rng, cfg.scene, image_id);
    im.proposals = generate_proposals(im.scene, prop_rng, cfg.proposals);
    im.features = generate_features(im.scene, im.proposals, protos, feat_rng, cfg.features);
    return im;
}

inline std::string image_name(const char* split, std::size_t i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
    return std::string(split) + "-" + digits;
}

inline Prototypes dataset_prototypes(std::uint64_t seed, const SimConfig& cfg) {
    auto proto_rng = make_rng(seed, "prototypes");
    return Prototypes::generate(proto_rng, cfg.scene.num_classes, cfg.features);
}

/// Images "<split>-00000" .. "<split>-<n-1>". Scenes depend only on (seed,
/// image id, scene config), so two calls that differ only in proposal config
/// share their scenes.
inline std::vector<SyntheticImage> build_split(std::uint64_t seed, const SimConfig& cfg, const char* split,
                                               std::size_t n) {
    const Prototypes protos = dataset_prototypes(seed, cfg);
    std::vector<SyntheticImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_image(seed, image_name(split, i), protos, cfg));
    return out;
}

inline SyntheticDataset build_dataset(std::uint64_t seed, const SimConfig& cfg) {
    SyntheticDataset ds;
    ds.num_classes = cfg.scene.num_classes;
    ds.prototypes = dataset_prototypes(seed, cfg);
    ds.train = build_split(seed, cfg, "train", cfg.n_train);
    ds.test = build_split(seed, cfg, "test", cfg.n_test);
    return ds;
}

}  // namespace opg::synth

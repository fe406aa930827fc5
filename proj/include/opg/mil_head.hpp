// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "opg/errors.hpp"
#include "opg/geometry.hpp"
#include "opg/labels.hpp"
#include "opg/partition.hpp"
#include "opg/random.hpp"

namespace opg {

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

/// Foreground IoU for refinement labels (>= comparison).
inline constexpr double kRefineFgIou = 0.5;

/// Softmax over classes, independently for each proposal (column).
inline ScoreMatrix class_softmax(const ScoreMatrix& x) {
    ScoreMatrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double m = x.col(j).maxCoeff();
        out.col(j) = (x.col(j).array() - m).exp();
        out.col(j) /= out.col(j).sum();
    }
    return out;
}

/// Softmax over proposals, independently for each class (row).
inline ScoreMatrix detection_softmax(const ScoreMatrix& x) {
    ScoreMatrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

struct MilHeadOutput {
    ScoreMatrix fused;             // C x R, elementwise product of both softmaxes
    Eigen::VectorXd image_scores;  // p_c, row sums of fused
};

inline MilHeadOutput fuse(const ScoreMatrix& dc, const ScoreMatrix& dd) {
    if (dc.rows() != dd.rows() || dc.cols() != dd.cols()) throw DomainError("fuse: shape mismatch");
    MilHeadOutput out;
    out.fused = dc.cwiseProduct(dd);
    out.image_scores = out.fused.rowwise().sum();
    return out;
}

inline double clamp_prob(double p) noexcept { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

/// Multi-label binary cross entropy averaged over classes.
inline double base_loss(const Eigen::VectorXd& p, const ImageLabels& y) {
    if (static_cast<std::size_t>(p.size()) != y.num_classes() || p.size() == 0)
        throw DomainError("base_loss: class count mismatch");
    double acc = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
        const double q = clamp_prob(p(c));
        acc += y.has(static_cast<std::size_t>(c)) ? std::log(q) : std::log(1.0 - q);
    }
    return -acc / static_cast<double>(p.size());
}

/// Per-proposal (C+1)-way targets for one refinement branch. Class index
/// `num_classes` is background.
struct RefinementLabels {
    std::size_t num_classes = 0;
    std::vector<int> target;
    std::vector<double> weight;

    int background() const noexcept { return static_cast<int>(num_classes); }
};

/// Foreground label when the best-overlapping PGT has IoU >= 0.5, background
/// otherwise. Foreground weight is the labelling PGT's score; background
/// proposals all carry the image's highest PGT score.
inline RefinementLabels assign_refinement_labels(const PseudoGroundTruths& pgts, const ProposalSet& proposals,
                                                 std::size_t num_classes) {
    if (pgts.empty()) throw DomainError("assign_refinement_labels: no pseudo ground truths");
    RefinementLabels out;
    out.num_classes = num_classes;
    out.target.assign(proposals.size(), static_cast<int>(num_classes));
    out.weight.assign(proposals.size(), 0.0);

    double max_score = pgts.front().score;
    for (const auto& g : pgts) max_score = std::max(max_score, g.score);

    for (std::size_t i = 0; i < proposals.size(); ++i) {
        double best = -1.0;
        const PseudoGroundTruth* owner = nullptr;
        for (const auto& g : pgts) {
            const double o = iou(proposals[i], g.box);
            if (o > best) {
                best = o;
                owner = &g;
            }
        }
        if (best >= kRefineFgIou) {
            out.target[i] = owner->class_id;
            out.weight[i] = std::clamp(owner->score, 0.0, 1.0);
        } else {
            out.weight[i] = std::clamp(max_score, 0.0, 1.0);
        }
    }
    return out;
}

/// Weighted cross entropy over the active proposals only, normalised by the
/// active count.
inline double refinement_loss(const ScoreMatrix& probs, const RefinementLabels& labels,
                              std::span<const std::size_t> active) {
    if (active.empty()) throw DomainError("refinement_loss: empty active set");
    double acc = 0.0;
    for (auto i : active) {
        const auto col = static_cast<Eigen::Index>(i);
        acc += labels.weight[i] * std::log(clamp_prob(probs(labels.target[i], col)));
    }
    return -acc / static_cast<double>(active.size());
}

struct LossReport {
    double l_base = 0.0;
    std::vector<double> l_refine;
    double total = 0.0;
};

inline double total_loss(double l_base, std::span<const double> l_refine) {
    return std::accumulate(l_refine.begin(), l_refine.end(), l_base);
}

// ---------------------------------------------------------------------------
// Toy linear model: proposal features -> class logits, detection logits and
// one (C+1)-way head per refinement branch.

struct LinearMap {
    Eigen::MatrixXd weight;  // out x D
    Eigen::VectorXd bias;    // out

    static LinearMap zeros(Eigen::Index out, Eigen::Index in) {
        return {Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
    }

    /// out x R logits for an R x D feature table.
    ScoreMatrix apply(const Eigen::MatrixXd& features) const {
        ScoreMatrix z = weight * features.transpose();
        z.colwise() += bias;
        return z;
    }
};

struct ToyModel {
    LinearMap cls;
    LinearMap det;
    std::vector<LinearMap> refine;

    std::size_t num_classes() const { return static_cast<std::size_t>(cls.weight.rows()); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(cls.weight.cols()); }

    static ToyModel zeros(std::size_t num_classes, std::size_t dim, std::size_t branches) {
        const auto c = static_cast<Eigen::Index>(num_classes);
        const auto d = static_cast<Eigen::Index>(dim);
        ToyModel m{LinearMap::zeros(c, d), LinearMap::zeros(c, d), {}};
        for (std::size_t k = 0; k < branches; ++k) m.refine.push_back(LinearMap::zeros(c + 1, d));
        return m;
    }

    /// Gaussian weights with standard deviation `scale`, zero biases.
    static ToyModel random(std::size_t num_classes, std::size_t dim, std::size_t branches, Rng& rng,
                           double scale = 0.01) {
        ToyModel m = zeros(num_classes, dim, branches);
        m.for_each([&](Eigen::MatrixXd& w, Eigen::VectorXd&) {
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal(rng);
        });
        return m;
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn(cls.weight, cls.bias);
        fn(det.weight, det.bias);
        for (auto& r : refine) fn(r.weight, r.bias);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        fn(cls.weight, cls.bias);
        fn(det.weight, det.bias);
        for (const auto& r : refine) fn(r.weight, r.bias);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
            n += static_cast<std::size_t>(w.size() + b.size());
        });
        return n;
    }

    /// Flattened view in for_each order (weights column-major, then bias).
    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index at = 0;
        for_each([&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
            v.segment(at, w.size()) = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
            at += w.size();
            v.segment(at, b.size()) = b;
            at += b.size();
        });
        return v;
    }

    void unflatten(const Eigen::VectorXd& v) {
        Eigen::Index at = 0;
        for_each([&](Eigen::MatrixXd& w, Eigen::VectorXd& b) {
            Eigen::Map<Eigen::VectorXd>(w.data(), w.size()) = v.segment(at, w.size());
            at += w.size();
            b = v.segment(at, b.size());
            at += b.size();
        });
    }
};

/// Everything computed on the forward stage for one image.
struct ForwardPass {
    ScoreMatrix class_probs;              // delta_c, C x R
    ScoreMatrix det_probs;                // delta_d, C x R
    MilHeadOutput head;
    std::vector<ScoreMatrix> refine_probs;  // per branch, (C+1) x R
};

inline ForwardPass forward(const ToyModel& model, const Eigen::MatrixXd& features) {
    if (static_cast<std::size_t>(features.cols()) != model.feature_dim())
        throw DomainError("forward: feature dimension mismatch");
    if (features.rows() == 0) throw DomainError("forward: no proposals");
    ForwardPass fp;
    fp.class_probs = class_softmax(model.cls.apply(features));
    fp.det_probs = detection_softmax(model.det.apply(features));
    fp.head = fuse(fp.class_probs, fp.det_probs);
    for (const auto& r : model.refine) fp.refine_probs.push_back(class_softmax(r.apply(features)));
    return fp;
}

/// Supervision for one refinement branch: labels plus the proposals that
/// receive gradient.
struct BranchTarget {
    RefinementLabels labels;
    std::vector<std::size_t> active;
};

struct LossAndGradient {
    LossReport loss;
    ToyModel grad;
};

namespace detail {

inline void accumulate_linear(LinearMap& g, const ScoreMatrix& dlogits, const Eigen::MatrixXd& features) {
    g.weight.noalias() += dlogits * features;
    g.bias += dlogits.rowwise().sum();
}

}  // namespace detail

/// Loss L = L_base + sum_k L_r^k for one image and its analytic gradient.
/// The base branch always sees every proposal; branch k only back-propagates
/// through targets[k].active.
inline LossAndGradient loss_and_gradient(const ToyModel& model, const Eigen::MatrixXd& features,
                                         const ImageLabels& labels, std::span<const BranchTarget> targets) {
    if (targets.size() != model.refine.size()) throw DomainError("loss_and_gradient: one target per branch");
    const std::size_t C = model.num_classes();
    if (labels.num_classes() != C) throw DomainError("loss_and_gradient: label size mismatch");

    const ForwardPass fp = forward(model, features);
    LossAndGradient out{{}, ToyModel::zeros(C, model.feature_dim(), model.refine.size())};

    // Base branch.
    const auto& A = fp.class_probs;
    const auto& B = fp.det_probs;
    const Eigen::Index R = A.cols();
    out.loss.l_base = base_loss(fp.head.image_scores, labels);

    Eigen::VectorXd dp(static_cast<Eigen::Index>(C));
    for (std::size_t c = 0; c < C; ++c) {
        const double p = fp.head.image_scores(static_cast<Eigen::Index>(c));
        double g = 0.0;
        if (p > kProbEps && p < 1.0 - kProbEps)
            g = labels.has(c) ? -1.0 / p : 1.0 / (1.0 - p);
        dp(static_cast<Eigen::Index>(c)) = g / static_cast<double>(C);
    }
    const ScoreMatrix dA = dp.asDiagonal() * B;
    const ScoreMatrix dB = dp.asDiagonal() * A;
    ScoreMatrix dxc(A.rows(), R);
    for (Eigen::Index j = 0; j < R; ++j) {
        const double dot = A.col(j).dot(dA.col(j));
        dxc.col(j) = A.col(j).array() * (dA.col(j).array() - dot);
    }
    ScoreMatrix dxd(B.rows(), R);
    for (Eigen::Index i = 0; i < B.rows(); ++i) {
        const double dot = B.row(i).dot(dB.row(i));
        dxd.row(i) = B.row(i).array() * (dB.row(i).array() - dot);
    }
    detail::accumulate_linear(out.grad.cls, dxc, features);
    detail::accumulate_linear(out.grad.det, dxd, features);

    // Refinement branches.
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const auto& t = targets[k];
        const auto& P = fp.refine_probs[k];
        out.loss.l_refine.push_back(refinement_loss(P, t.labels, t.active));
        ScoreMatrix dz = ScoreMatrix::Zero(P.rows(), R);
        const double norm = static_cast<double>(t.active.size());
        for (auto i : t.active) {
            const auto col = static_cast<Eigen::Index>(i);
            const int y = t.labels.target[i];
            const double q = P(y, col);
            if (q <= kProbEps || q >= 1.0 - kProbEps) continue;
            const double w = t.labels.weight[i] / norm;
            dz.col(col) += w * P.col(col);
            dz(y, col) -= w;
        }
        detail::accumulate_linear(out.grad.refine[k], dz, features);
    }
    out.loss.total = total_loss(out.loss.l_base, out.loss.l_refine);
    return out;
}

/// Loss only; same definition as loss_and_gradient.
inline LossReport evaluate_loss(const ToyModel& model, const Eigen::MatrixXd& features, const ImageLabels& labels,
                                std::span<const BranchTarget> targets) {
    const ForwardPass fp = forward(model, features);
    LossReport r;
    r.l_base = base_loss(fp.head.image_scores, labels);
    for (std::size_t k = 0; k < targets.size(); ++k)
        r.l_refine.push_back(refinement_loss(fp.refine_probs[k], targets[k].labels, targets[k].active));
    r.total = total_loss(r.l_base, r.l_refine);
    return r;
}

}  // namespace opg

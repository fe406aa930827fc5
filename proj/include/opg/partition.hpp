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
#include "opg/random.hpp"
#include "opg/schedule.hpp"

namespace opg {

/// Classes x proposals.
using ScoreMatrix = Eigen::MatrixXd;

/// Thresholds and positive fraction for proposal partition.
///
/// s_p >= t_f              -> positive
/// t_b2 <= s_p < t_b1      -> negative
/// anything else           -> risk
///
/// t_f == t_b1 is the default, so positives and negatives share a boundary.
struct PartitionConfig {
    double t_f = 0.5;
    double t_b1 = 0.5;
    double t_b2 = 0.1;
    double r_p = 0.25;

    void validate() const {
        if (!(t_f <= 1.0 && t_f >= t_b1 && t_b1 > t_b2 && t_b2 >= 0.0))
            throw DomainError("partition: need 1 >= t_f >= t_b1 > t_b2 >= 0");
        if (!(r_p > 0.0 && r_p < 1.0)) throw DomainError("partition: r_p must lie in (0, 1)");
    }
};

struct PseudoGroundTruth {
    int class_id = 0;
    std::size_t proposal = 0;
    Box box;
    double score = 0.0;
};

using PseudoGroundTruths = std::vector<PseudoGroundTruth>;

enum class ProposalLabel : int { Risk = -1, Negative = 0, Positive = 1 };

struct ProposalSplit {
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::vector<std::size_t> risks;
};

struct Quotas {
    std::size_t n_p = 0;
    std::size_t n_b = 0;
};

struct PartitionResult {
    PseudoGroundTruths pgts;
    std::vector<double> s_p;
    ProposalSplit split;
    Quotas quotas;
    std::size_t n_v = 0;
    /// Selected proposals: positives, then negatives, then backfill draws.
    std::vector<std::size_t> active;
    /// How many entries of `active` came from the risk set.
    std::size_t risk_draws = 0;
    /// Unselected positives/negatives appended once the risk set ran dry.
    std::size_t overflow = 0;
};

/// One pseudo ground truth per present class: the highest scoring proposal
/// of that class's row. Ties go to the lowest proposal index.
inline PseudoGroundTruths select_pgts(const ScoreMatrix& scores, const ImageLabels& labels,
                                      const ProposalSet& proposals) {
    if (!labels.any()) throw DomainError("select_pgts: image has no positive class");
    if (static_cast<std::size_t>(scores.rows()) != labels.num_classes())
        throw DomainError("select_pgts: score rows do not match class count");
    if (static_cast<std::size_t>(scores.cols()) != proposals.size() || proposals.empty())
        throw DomainError("select_pgts: score columns do not match proposal count");

    PseudoGroundTruths out;
    for (Eigen::Index c = 0; c < scores.rows(); ++c) {
        if (!labels.has(static_cast<std::size_t>(c))) continue;
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < scores.cols(); ++j)
            if (scores(c, j) > scores(c, best)) best = j;
        const auto idx = static_cast<std::size_t>(best);
        out.push_back({static_cast<int>(c), idx, proposals[idx], scores(c, best)});
    }
    return out;
}

/// s_p[i] = max over PGT boxes of IoU(proposal i, PGT).
inline std::vector<double> score_proposals(const ProposalSet& proposals, const PseudoGroundTruths& pgts) {
    if (pgts.empty()) throw DomainError("score_proposals: no pseudo ground truths");
    std::vector<double> s(proposals.size(), 0.0);
    for (std::size_t i = 0; i < proposals.size(); ++i)
        for (const auto& g : pgts) s[i] = std::max(s[i], iou(proposals[i], g.box));
    return s;
}

inline ProposalLabel label_for(double s_p, const PartitionConfig& cfg) {
    if (s_p >= cfg.t_f) return ProposalLabel::Positive;
    if (s_p < cfg.t_b1 && s_p >= cfg.t_b2) return ProposalLabel::Negative;
    return ProposalLabel::Risk;
}

inline ProposalSplit partition(std::span<const double> s_p, const PartitionConfig& cfg) {
    cfg.validate();
    ProposalSplit out;
    for (std::size_t i = 0; i < s_p.size(); ++i) {
        if (!(s_p[i] >= 0.0 && s_p[i] <= 1.0)) throw DomainError("partition: s_p outside [0, 1]");
        switch (label_for(s_p[i], cfg)) {
            case ProposalLabel::Positive: out.positives.push_back(i); break;
            case ProposalLabel::Negative: out.negatives.push_back(i); break;
            case ProposalLabel::Risk: out.risks.push_back(i); break;
        }
    }
    return out;
}

/// n_p = floor(r_p * n_v), n_b = n_v - n_p.
inline Quotas quotas(std::size_t n_v, const PartitionConfig& cfg) {
    if (n_v < 1) throw DomainError("quotas: n_v must be >= 1");
    cfg.validate();
    // The epsilon keeps exact products such as 0.29 * 100 from flooring one low.
    const auto n_p = static_cast<std::size_t>(std::floor(cfg.r_p * static_cast<double>(n_v) + 1e-9));
    return {n_p, n_v - n_p};
}

namespace detail {

/// Indices ordered by descending score, ascending index on ties.
inline std::vector<std::size_t> sorted_by_score(std::vector<std::size_t> idx, std::span<const double> s_p) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (s_p[a] != s_p[b]) return s_p[a] > s_p[b];
        return a < b;
    });
    return idx;
}

}  // namespace detail

/// Assemble the active set under budget n_v.
///
/// 1. top n_p positives and top n_b negatives by descending s_p;
/// 2. if short of n_v, draw uniformly without replacement from the risk set
///    (partial Fisher-Yates over risk indices in ascending order);
/// 3. if the risk set is exhausted and still short, take the unselected
///    positives and negatives in descending s_p order.
inline PartitionResult build_active_set(const ProposalSplit& split, std::span<const double> s_p,
                                        const Quotas& q, std::size_t n_v, Rng& rng) {
    PartitionResult out;
    out.split = split;
    out.quotas = q;
    out.n_v = n_v;
    out.s_p.assign(s_p.begin(), s_p.end());

    const auto pos = detail::sorted_by_score(split.positives, s_p);
    const auto neg = detail::sorted_by_score(split.negatives, s_p);
    const std::size_t take_p = std::min(q.n_p, pos.size());
    const std::size_t take_b = std::min(q.n_b, neg.size());
    out.active.reserve(n_v);
    out.active.insert(out.active.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(take_p));
    out.active.insert(out.active.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(take_b));

    if (out.active.size() < n_v) {
        std::vector<std::size_t> pool = split.risks;
        std::sort(pool.begin(), pool.end());
        const std::size_t k = std::min(n_v - out.active.size(), pool.size());
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
            out.active.push_back(pool[i]);
        }
        out.risk_draws = k;
    }

    if (out.active.size() < n_v) {
        std::vector<std::size_t> rest(pos.begin() + static_cast<std::ptrdiff_t>(take_p), pos.end());
        rest.insert(rest.end(), neg.begin() + static_cast<std::ptrdiff_t>(take_b), neg.end());
        rest = detail::sorted_by_score(std::move(rest), s_p);
        const std::size_t k = std::min(n_v - out.active.size(), rest.size());
        out.active.insert(out.active.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(k));
        out.overflow = k;
    }
    return out;
}

/// Full proposal partition for one image at one training state.
inline PartitionResult generate(const ProposalSet& proposals, const ScoreMatrix& scores,
                                const ImageLabels& labels, const ScheduleConfig& schedule,
                                ScheduleState state, const PartitionConfig& cfg, Rng& rng) {
    cfg.validate();
    if (proposals.empty()) throw DomainError("generate: empty proposal set");
    auto pgts = select_pgts(scores, labels, proposals);
    const auto s_p = score_proposals(proposals, pgts);
    const auto split = partition(s_p, cfg);
    const std::size_t budget = n_v(schedule, state, proposals.size());
    auto out = build_active_set(split, s_p, quotas(budget, cfg), budget, rng);
    out.pgts = std::move(pgts);
    return out;
}

/// Counts of active entries per label, for logging and ratio checks.
struct ActiveCounts {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t risks = 0;
};

inline ActiveCounts count_active(const PartitionResult& r, const PartitionConfig& cfg) {
    ActiveCounts c;
    for (auto i : r.active) {
        switch (label_for(r.s_p[i], cfg)) {
            case ProposalLabel::Positive: ++c.positives; break;
            case ProposalLabel::Negative: ++c.negatives; break;
            case ProposalLabel::Risk: ++c.risks; break;
        }
    }
    return c;
}

}  // namespace opg

// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference for the training objective and its numerical gradient.
// Plain nested loops over the raw parameter arrays; no Eigen expressions and
// nothing from opg/mil_head.hpp beyond the ToyModel container.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "opg/mil_head.hpp"

namespace oracle {

struct BranchSupervision {
    std::vector<int> target;      // per proposal, C = background
    std::vector<double> weight;   // per proposal
    std::vector<std::size_t> active;
};

inline double clip(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

/// logits[o][j] = bias[o] + sum_d weight(o, d) * F(j, d)
inline std::vector<std::vector<double>> logits(const opg::LinearMap& m, const Eigen::MatrixXd& F) {
    const auto out = static_cast<std::size_t>(m.weight.rows());
    const auto R = static_cast<std::size_t>(F.rows());
    const auto D = static_cast<std::size_t>(F.cols());
    std::vector<std::vector<double>> z(out, std::vector<double>(R, 0.0));
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t j = 0; j < R; ++j) {
            double s = m.bias(static_cast<Eigen::Index>(o));
            for (std::size_t d = 0; d < D; ++d)
                s += m.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(d)) *
                     F(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d));
            z[o][j] = s;
        }
    return z;
}

/// Softmax of z over the first index (per column j).
inline std::vector<std::vector<double>> softmax_over_rows(std::vector<std::vector<double>> z) {
    const std::size_t n = z.size(), R = z.front().size();
    for (std::size_t j = 0; j < R; ++j) {
        double m = z[0][j];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, z[i][j]);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (z[i][j] = std::exp(z[i][j] - m));
        for (std::size_t i = 0; i < n; ++i) z[i][j] /= s;
    }
    return z;
}

/// Softmax of z over the second index (per row i).
inline std::vector<std::vector<double>> softmax_over_cols(std::vector<std::vector<double>> z) {
    for (auto& row : z) {
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (auto& v : row) s += (v = std::exp(v - m));
        for (auto& v : row) v /= s;
    }
    return z;
}

/// L = mean_c BCE(p_c, y_c) + sum_k weighted CE over branch k's active set.
inline double objective(const opg::ToyModel& model, const Eigen::MatrixXd& F, const std::vector<bool>& y,
                        const std::vector<BranchSupervision>& branches) {
    const auto a = softmax_over_rows(logits(model.cls, F));
    const auto b = softmax_over_cols(logits(model.det, F));
    const std::size_t C = a.size(), R = a.front().size();
    double base = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        double p = 0.0;
        for (std::size_t j = 0; j < R; ++j) p += a[c][j] * b[c][j];
        p = clip(p);
        base += y[c] ? -std::log(p) : -std::log(1.0 - p);
    }
    double total = base / static_cast<double>(C);
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const auto q = softmax_over_rows(logits(model.refine[k], F));
        const auto& s = branches[k];
        double acc = 0.0;
        for (auto j : s.active) acc -= s.weight[j] * std::log(clip(q[static_cast<std::size_t>(s.target[j])][j]));
        total += acc / static_cast<double>(s.active.size());
    }
    return total;
}

/// Central differences of `objective` with respect to every parameter, in
/// ToyModel::flatten order.
inline Eigen::VectorXd numeric_gradient(const opg::ToyModel& model, const Eigen::MatrixXd& F,
                                        const std::vector<bool>& y, const std::vector<BranchSupervision>& branches,
                                        double h = 1e-5) {
    const Eigen::VectorXd theta = model.flatten();
    Eigen::VectorXd g(theta.size());
    opg::ToyModel probe = model;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        Eigen::VectorXd t = theta;
        t(i) = theta(i) + h;
        probe.unflatten(t);
        const double up = objective(probe, F, y, branches);
        t(i) = theta(i) - h;
        probe.unflatten(t);
        const double down = objective(probe, F, y, branches);
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace oracle

// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opg/errors.hpp"

namespace opg {

/// Axis-aligned box in continuous image coordinates, corner convention.
/// Area is (x2 - x1) * (y2 - y1); no +1 pixel correction.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 1.0;
    double y2 = 1.0;

    /// Validating constructor. Throws DomainError on non-finite or
    /// non-positive-extent input.
    static Box make(double x1, double y1, double x2, double y2) {
        Box b{x1, y1, x2, y2};
        b.validate();
        return b;
    }

    void validate() const {
        if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2))
            throw DomainError("box has non-finite coordinates");
        if (!(x2 > x1) || !(y2 > y1))
            throw DomainError("box has non-positive area");
    }

    bool valid() const noexcept {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               x2 > x1 && y2 > y1;
    }

    double width() const noexcept { return x2 - x1; }
    double height() const noexcept { return y2 - y1; }
    double area() const noexcept { return width() * height(); }

    bool contains(const Box& o) const noexcept {
        return x1 <= o.x1 && y1 <= o.y1 && x2 >= o.x2 && y2 >= o.y2;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) noexcept {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

namespace detail {

inline double iou_unchecked(const Box& a, const Box& b) noexcept {
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    if (a == b) return 1.0;
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace detail

/// Intersection over union. Symmetric, in [0, 1], exactly 1 for identical boxes.
inline double iou(const Box& a, const Box& b) {
    a.validate();
    b.validate();
    return detail::iou_unchecked(a, b);
}

/// The candidate regions of one image. Index identity is stable.
struct ProposalSet {
    std::string image_id;
    std::vector<Box> boxes;

    std::size_t size() const noexcept { return boxes.size(); }
    bool empty() const noexcept { return boxes.empty(); }
    const Box& operator[](std::size_t i) const { return boxes[i]; }
};

/// |rows| x |cols| matrix of pairwise IoU.
inline Eigen::MatrixXd iou_matrix(std::span<const Box> rows, std::span<const Box> cols) {
    if (rows.empty() || cols.empty()) throw DomainError("iou_matrix: empty input");
    for (const auto& b : rows) b.validate();
    for (const auto& b : cols) b.validate();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = detail::iou_unchecked(rows[i], cols[j]);
    return out;
}

inline Eigen::MatrixXd iou_matrix(const ProposalSet& rows, std::span<const Box> cols) {
    return iou_matrix(std::span<const Box>(rows.boxes), cols);
}

}  // namespace opg

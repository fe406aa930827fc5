// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opg/errors.hpp"

namespace opg {

/// Image-level annotation: y[c] is 1 when class c appears in the image.
struct ImageLabels {
    std::vector<std::uint8_t> y;

    static ImageLabels from_present(std::size_t num_classes, const std::vector<int>& present) {
        ImageLabels out{std::vector<std::uint8_t>(num_classes, 0)};
        for (int c : present) {
            if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
                throw DomainError("class id " + std::to_string(c) + " out of range");
            out.y[static_cast<std::size_t>(c)] = 1;
        }
        return out;
    }

    std::size_t num_classes() const noexcept { return y.size(); }
    bool has(std::size_t c) const noexcept { return c < y.size() && y[c] != 0; }

    bool any() const noexcept {
        for (auto v : y)
            if (v) return true;
        return false;
    }

    std::vector<int> present() const {
        std::vector<int> out;
        for (std::size_t c = 0; c < y.size(); ++c)
            if (y[c]) out.push_back(static_cast<int>(c));
        return out;
    }

    friend bool operator==(const ImageLabels&, const ImageLabels&) = default;
};

}  // namespace opg

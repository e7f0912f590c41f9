#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wildtta/tensor.hpp"

namespace wildtta {

// Labeled feature vectors stored row-major.
struct Dataset {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

    // Rows `indices` as a [indices.size() x dim] tensor.
    Tensor rows(std::span<const std::size_t> indices) const;
    std::vector<int> labels_of(std::span<const std::size_t> indices) const;
    Tensor all() const;
};

}  // namespace wildtta

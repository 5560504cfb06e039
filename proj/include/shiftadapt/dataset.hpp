#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "shiftadapt/common.hpp"

namespace shiftadapt {

// Dense row-major matrix of doubles. Small helper, not a linear algebra
// library; the rest of the code works on rows as spans.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {}

    double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }

    std::span<const double> row(int r) const {
        return {data.data() + std::size_t(r) * cols, std::size_t(cols)};
    }
    std::span<double> row(int r) {
        return {data.data() + std::size_t(r) * cols, std::size_t(cols)};
    }
};

// A labeled study. `primary` may be empty, meaning the primary label column
// is absent (adaptation phases that must not see labels run on such views).
// `subgroup` is either empty or has one tag per row. Aux columns are keyed
// by task id; classification labels are stored as exact small integers.
struct Dataset {
    Matrix features;
    std::vector<int> primary;
    std::map<std::string, std::vector<double>> aux;
    std::string site_id;
    std::vector<std::string> subgroup;

    int size() const { return features.rows; }
    int dim() const { return features.cols; }
    bool has_primary() const { return !primary.empty(); }
    bool has_subgroup() const { return !subgroup.empty(); }
};

// Checks internal consistency: finite features, matching column lengths,
// primary labels within [0, num_classes). Throws DataError.
void validate_dataset(const Dataset& d, int num_classes);

// Returns a copy with the given row subset (indices into d).
Dataset subset(const Dataset& d, const std::vector<int>& indices);

// Returns a copy with the primary column removed.
Dataset strip_primary(const Dataset& d);

// Rows of d whose subgroup tag matches. Requires subgroup tags present.
std::vector<int> subgroup_indices(const Dataset& d, const std::string& tag);

} // namespace shiftadapt

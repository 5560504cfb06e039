#include "shiftadapt/dataset.hpp"

#include <cmath>

namespace shiftadapt {

void validate_dataset(const Dataset& d, int num_classes) {
    const std::size_t n = std::size_t(d.features.rows);
    if (d.features.rows <= 0 || d.features.cols <= 0)
        throw DataError("dataset '" + d.site_id + "': empty feature matrix");
    if (d.features.data.size() != n * std::size_t(d.features.cols))
        throw DataError("dataset '" + d.site_id + "': feature buffer size mismatch");
    for (double v : d.features.data)
        if (!std::isfinite(v)) throw DataError("dataset '" + d.site_id + "': non-finite feature");
    if (d.has_primary()) {
        if (d.primary.size() != n)
            throw DataError("dataset '" + d.site_id + "': primary column length mismatch");
        for (int y : d.primary)
            if (y < 0 || y >= num_classes)
                throw DataError("dataset '" + d.site_id + "': primary label out of range");
    }
    for (const auto& [name, col] : d.aux) {
        if (col.size() != n)
            throw DataError("dataset '" + d.site_id + "': aux column '" + name +
                            "' length mismatch");
        for (double v : col)
            if (!std::isfinite(v))
                throw DataError("dataset '" + d.site_id + "': non-finite aux value in '" + name +
                                "'");
    }
    if (d.has_subgroup() && d.subgroup.size() != n)
        throw DataError("dataset '" + d.site_id + "': subgroup column length mismatch");
}

Dataset subset(const Dataset& d, const std::vector<int>& indices) {
    Dataset out;
    out.site_id = d.site_id;
    out.features = Matrix(int(indices.size()), d.features.cols);
    for (auto& [name, col] : d.aux) out.aux[name].reserve(indices.size());
    if (d.has_primary()) out.primary.reserve(indices.size());
    if (d.has_subgroup()) out.subgroup.reserve(indices.size());
    int r = 0;
    for (int i : indices) {
        if (i < 0 || i >= d.size()) throw DataError("subset: row index out of range");
        auto src = d.features.row(i);
        auto dst = out.features.row(r++);
        for (int c = 0; c < d.features.cols; ++c) dst[c] = src[c];
        if (d.has_primary()) out.primary.push_back(d.primary[i]);
        for (const auto& [name, col] : d.aux) out.aux[name].push_back(col[i]);
        if (d.has_subgroup()) out.subgroup.push_back(d.subgroup[i]);
    }
    return out;
}

Dataset strip_primary(const Dataset& d) {
    Dataset out = d;
    out.primary.clear();
    return out;
}

std::vector<int> subgroup_indices(const Dataset& d, const std::string& tag) {
    if (!d.has_subgroup()) throw DataError("dataset '" + d.site_id + "': no subgroup tags");
    std::vector<int> out;
    for (int i = 0; i < d.size(); ++i)
        if (d.subgroup[i] == tag) out.push_back(i);
    return out;
}

} // namespace shiftadapt

#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/common.hpp"

namespace cqt {

struct ObservationRow {
    std::string center_id;
    std::string class_id;
    std::string item_id;
    double value = 0.0;
};

struct ClassroomInfo {
    std::string center_id;
    AgeGroup group = AgeGroup::Toddler;
};

struct ItemStandardization {
    double mean = 0.0;
    double sd = 1.0;
    int n_obs = 0;
};

// Long-format item observations plus classroom metadata.
struct ObservationFrame {
    std::vector<ObservationRow> rows;
    std::map<std::string, ClassroomInfo> classrooms;           // class_id -> info
    std::map<std::string, ItemStandardization> standardization;  // item_id -> stats

    bool standardized() const { return !standardization.empty(); }

    const ClassroomInfo& classroom(const std::string& class_id) const {
        auto it = classrooms.find(class_id);
        if (it == classrooms.end())
            throw DimensionMismatch("unknown classroom: " + class_id);
        return it->second;
    }
};

// Per-item z-scoring across observed rows (sample SD, divisor n-1).
// Reverse-keyed items are sign-flipped first. The standardization map is
// recorded on the returned frame for inverse transforms and audit.
inline ObservationFrame standardize_items(const ObservationFrame& frame,
                                          const ItemCatalog& catalog) {
    ObservationFrame out = frame;
    std::set<std::string> reversed;
    for (const auto& it : catalog.items())
        if (it.reverse) reversed.insert(it.item_id);
    for (auto& r : out.rows)
        if (reversed.count(r.item_id)) r.value = -r.value;

    // two-pass mean / variance per item
    std::map<std::string, std::vector<double>> by_item;
    for (const auto& r : out.rows) by_item[r.item_id].push_back(r.value);

    out.standardization.clear();
    for (const auto& [item, vals] : by_item) {
        const int n = static_cast<int>(vals.size());
        if (n < 2) throw TooFewObservations(item);
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= n;
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / (n - 1));
        if (!(sd > 0.0)) throw ConstantItem(item);
        out.standardization[item] = {mean, sd, n};
    }
    for (auto& r : out.rows) {
        const auto& s = out.standardization.at(r.item_id);
        r.value = (r.value - s.mean) / s.sd;
    }
    return out;
}

}  // namespace cqt

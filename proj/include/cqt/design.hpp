#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/frame.hpp"

namespace cqt {

struct ClassroomBlock {
    std::string class_id;
    AgeGroup group = AgeGroup::Toddler;
    std::vector<int> item_indices;  // catalog indices, ascending
    Eigen::VectorXd values;         // standardized, aligned with item_indices
};

struct CenterBlock {
    std::string center_id;
    std::vector<ClassroomBlock> classrooms;  // ordered by class_id
    int n_rows() const {
        int n = 0;
        for (const auto& c : classrooms) n += static_cast<int>(c.item_indices.size());
        return n;
    }
};

// Per-center observed-row structure consumed by the likelihood and the
// factor-score machinery.
struct DesignBundle {
    std::vector<CenterBlock> centers;  // ordered by center_id
    int n_items = 0;
    int n_factors = 0;

    int total_rows() const {
        int n = 0;
        for (const auto& c : centers) n += c.n_rows();
        return n;
    }
    int n_classrooms() const {
        int n = 0;
        for (const auto& c : centers) n += static_cast<int>(c.classrooms.size());
        return n;
    }
};

// Groups standardized rows into per-center classroom blocks, enforcing the
// design rule and the common-block bridging requirement.
inline DesignBundle assemble_design(const ObservationFrame& frame,
                                    const ItemCatalog& catalog) {
    // (center, class) -> item index -> value; map keys give deterministic order
    std::map<std::string, std::map<std::string, std::map<int, double>>> nested;
    for (const auto& r : frame.rows) {
        const int idx = catalog.item_index(r.item_id);
        if (idx < 0) throw ForbiddenRow("unknown item " + r.item_id);
        const auto& info = frame.classroom(r.class_id);
        if (info.center_id != r.center_id)
            throw ForbiddenRow("classroom " + r.class_id + " listed under center " +
                               r.center_id + " but registered to " + info.center_id);
        const auto& item = catalog.items()[static_cast<size_t>(idx)];
        if (!design_observable(item.block, info.group))
            throw ForbiddenRow("item " + r.item_id + " not administered in " +
                               to_string(info.group) + " classroom " + r.class_id);
        auto& cell = nested[r.center_id][r.class_id];
        if (!cell.emplace(idx, r.value).second)
            throw ForbiddenRow("duplicate (classroom,item) pair: " + r.class_id + "," +
                               r.item_id);
    }

    DesignBundle bundle;
    bundle.n_items = catalog.n_items();
    bundle.n_factors = catalog.n_factors();
    for (const auto& [center_id, classes] : nested) {
        CenterBlock cb;
        cb.center_id = center_id;
        for (const auto& [class_id, cells] : classes) {
            ClassroomBlock blk;
            blk.class_id = class_id;
            blk.group = frame.classroom(class_id).group;
            bool bridged = false;
            blk.values.resize(static_cast<Eigen::Index>(cells.size()));
            Eigen::Index r = 0;
            for (const auto& [idx, v] : cells) {
                blk.item_indices.push_back(idx);
                blk.values[r++] = v;
                if (catalog.items()[static_cast<size_t>(idx)].block == Block::QCIT)
                    bridged = true;
            }
            if (!bridged) throw UnbridgedClassroom(class_id);
            cb.classrooms.push_back(std::move(blk));
        }
        bundle.centers.push_back(std::move(cb));
    }
    return bundle;
}

}  // namespace cqt

#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "cqt/common.hpp"

namespace cqt {

enum class Block { QCIT, ClassToddler, ClassInfant };
enum class AgeGroup { Infant, Toddler };

inline std::string to_string(Block b) {
    switch (b) {
        case Block::QCIT: return "QCIT";
        case Block::ClassToddler: return "CLASS_T";
        case Block::ClassInfant: return "CLASS_I";
    }
    return "?";
}
inline std::string to_string(AgeGroup g) {
    return g == AgeGroup::Infant ? "Infant" : "Toddler";
}

inline Block block_from_string(const std::string& s) {
    if (s == "QCIT") return Block::QCIT;
    if (s == "CLASS_T") return Block::ClassToddler;
    if (s == "CLASS_I") return Block::ClassInfant;
    throw ConfigError("unknown instrument block: " + s);
}
inline AgeGroup age_group_from_string(const std::string& s) {
    if (s == "Infant" || s == "infant") return AgeGroup::Infant;
    if (s == "Toddler" || s == "toddler") return AgeGroup::Toddler;
    throw ConfigError("unknown age group: " + s);
}

// True iff an item of the given instrument block is administered in a
// classroom of the given age group. QCIT is the common block.
inline bool design_observable(Block block, AgeGroup group) {
    switch (block) {
        case Block::QCIT: return true;
        case Block::ClassToddler: return group == AgeGroup::Toddler;
        case Block::ClassInfant: return group == AgeGroup::Infant;
    }
    return false;
}

struct CatalogItem {
    std::string item_id;
    Block block = Block::QCIT;
    int factor_index = 0;  // 0-based
    bool is_anchor = false;
    bool reverse = false;  // sign-flip before standardization
    std::string label;
};

// Item inventory with the item-to-factor assignment and anchor set.
class ItemCatalog {
  public:
    ItemCatalog() = default;
    explicit ItemCatalog(std::vector<CatalogItem> items) : items_(std::move(items)) {
        validate();
    }

    const std::vector<CatalogItem>& items() const { return items_; }
    int n_items() const { return static_cast<int>(items_.size()); }
    int n_factors() const { return n_factors_; }

    int item_index(const std::string& item_id) const {
        for (int i = 0; i < n_items(); ++i)
            if (items_[i].item_id == item_id) return i;
        return -1;
    }
    // Anchor item index for factor f.
    int anchor_of(int f) const { return anchors_.at(static_cast<size_t>(f)); }

    std::string factor_name(int f) const {
        if (f < static_cast<int>(factor_names_.size()) && !factor_names_[f].empty())
            return factor_names_[f];
        return "factor" + std::to_string(f + 1);
    }
    void set_factor_name(int f, const std::string& name) {
        if (f >= static_cast<int>(factor_names_.size()))
            factor_names_.resize(static_cast<size_t>(f) + 1);
        factor_names_[f] = name;
    }
    int factor_index_by_name(const std::string& name) const {
        for (int f = 0; f < n_factors(); ++f)
            if (factor_name(f) == name) return f;
        return -1;
    }

  private:
    void validate() {
        if (items_.empty()) throw ConfigError("catalog is empty");
        std::set<std::string> ids;
        int max_f = -1;
        for (const auto& it : items_) {
            if (!ids.insert(it.item_id).second)
                throw ConfigError("duplicate item_id: " + it.item_id);
            if (it.factor_index < 0) throw ConfigError("factor index < 1");
            max_f = std::max(max_f, it.factor_index);
        }
        n_factors_ = max_f + 1;
        anchors_.assign(static_cast<size_t>(n_factors_), -1);
        std::vector<int> seen(static_cast<size_t>(n_factors_), 0);
        for (int i = 0; i < n_items(); ++i) {
            seen[static_cast<size_t>(items_[i].factor_index)] = 1;
            if (items_[i].is_anchor) {
                auto& a = anchors_[static_cast<size_t>(items_[i].factor_index)];
                if (a >= 0)
                    throw ConfigError("two anchors declared for factor " +
                                      std::to_string(items_[i].factor_index + 1));
                a = i;
            }
        }
        for (int f = 0; f < n_factors_; ++f) {
            if (!seen[static_cast<size_t>(f)])
                throw ConfigError("factor indices are not contiguous: missing " +
                                  std::to_string(f + 1));
            if (anchors_[static_cast<size_t>(f)] < 0)
                throw ConfigError("no anchor declared for factor " + std::to_string(f + 1));
        }
    }

    std::vector<CatalogItem> items_;
    std::vector<int> anchors_;
    std::vector<std::string> factor_names_;
    int n_factors_ = 0;
};

// Bundled default configuration: 25 items, 6 factors, three instrument blocks.
inline ItemCatalog default_catalog() {
    auto q = [](const char* id, int f, bool anchor, const char* label) {
        return CatalogItem{id, Block::QCIT, f, anchor, false, label};
    };
    auto t = [](const char* id, int f, bool anchor, const char* label) {
        return CatalogItem{id, Block::ClassToddler, f, anchor, false, label};
    };
    auto n = [](const char* id, int f, bool anchor, const char* label) {
        return CatalogItem{id, Block::ClassInfant, f, anchor, false, label};
    };
    std::vector<CatalogItem> items = {
        q("resp_social_cues", 0, true, "Responding to social cues"),
        q("resp_emotional_cues", 0, false, "Responding to emotional cues"),
        q("builds_pos_relation", 0, false, "Builds positive relationship"),
        q("sup_peer_interaction", 0, false, "Supporting peer interaction"),
        q("sup_object_explore", 1, true, "Supporting object exploration"),
        q("scaff_problem_solve", 1, false, "Scaffolding problem solving"),
        q("unique_concepts_7cat", 1, false, "Number of unique concepts"),
        q("caregiver_varied_vocab", 2, true, "Use of varied vocabulary"),
        q("caregiver_questions", 2, false, "Use of questions"),
        q("conv_turn_taking", 2, false, "Conversational turn-taking"),
        q("extend_child_lang", 2, false, "Extending child language"),
        q("engage_in_books", 2, false, "Engaging children in books"),
        q("variety_words", 2, false, "Variety of words"),
        q("variety_sent_types", 2, false, "Variety of sentence styles"),
        t("toddler_pos_climate", 3, true, "Positive climate"),
        t("toddler_teacher_sens", 3, false, "Teacher sensitivity (Toddler)"),
        t("toddler_child_persp", 3, false, "Regard for child perspectives"),
        t("toddler_behav_guidance", 3, false, "Behavioral guidance"),
        t("toddler_fac_learning", 4, true, "Facilitation of learning/dev."),
        t("toddler_quality_feedback", 4, false, "Quality of feedback"),
        t("toddler_lang_model", 4, false, "Language modeling"),
        n("infant_rel_climate", 5, true, "Relational climate"),
        n("infant_teacher_sens", 5, false, "Teacher sensitivity (Infant)"),
        n("infant_fac_explore", 5, false, "Facilitated exploration"),
        n("infant_early_lang", 5, false, "Early language support"),
    };
    ItemCatalog cat(std::move(items));
    cat.set_factor_name(0, "qcit_soc_emot");
    cat.set_factor_name(1, "qcit_cognitive");
    cat.set_factor_name(2, "qcit_lang_lit");
    cat.set_factor_name(3, "classt_emot_beh");
    cat.set_factor_name(4, "classt_learning");
    cat.set_factor_name(5, "classi_respons");
    return cat;
}

}  // namespace cqt

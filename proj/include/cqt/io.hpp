#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/csv.hpp"
#include "cqt/eb.hpp"
#include "cqt/frame.hpp"
#include "cqt/likelihood.hpp"
#include "cqt/vpc.hpp"

namespace cqt {

// ---------------------------------------------------------------------------
// key=value configuration with dotted keys; '#' starts a comment line
// ---------------------------------------------------------------------------

struct KeyValueConfig {
    std::map<std::string, std::string> values;
    std::string raw_text;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback = "") const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : parse_double(it->second);
    }
    long long get_int(const std::string& key, long long fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : std::stoll(it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        return it->second == "true" || it->second == "1" || it->second == "yes";
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline KeyValueConfig parse_config_text(const std::string& text) {
    KeyValueConfig cfg;
    cfg.raw_text = text;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == '[') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value, got: " + t);
        cfg.values[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    return cfg;
}

inline KeyValueConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// item catalog as [item] record blocks
// ---------------------------------------------------------------------------

inline ItemCatalog load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open catalog " + path);
    std::vector<CatalogItem> items;
    std::vector<std::string> factor_order;  // names, index by first appearance
    std::map<std::string, std::string> rec;
    bool open = false;

    auto flush = [&]() {
        if (!open) return;
        CatalogItem it;
        if (!rec.count("id")) throw ConfigError("catalog item without id");
        it.item_id = rec["id"];
        it.block = block_from_string(rec.count("block") ? rec["block"] : "QCIT");
        const std::string fname = rec.count("factor") ? rec["factor"] : "";
        if (fname.empty()) throw ConfigError("catalog item without factor: " + it.item_id);
        int f = -1;
        for (size_t k = 0; k < factor_order.size(); ++k)
            if (factor_order[k] == fname) f = static_cast<int>(k);
        if (f < 0) {
            f = static_cast<int>(factor_order.size());
            factor_order.push_back(fname);
        }
        it.factor_index = f;
        it.is_anchor = rec.count("anchor") && (rec["anchor"] == "true" || rec["anchor"] == "1");
        it.reverse = rec.count("reverse") && (rec["reverse"] == "true" || rec["reverse"] == "1");
        it.label = rec.count("label") ? rec["label"] : "";
        items.push_back(std::move(it));
        rec.clear();
    };

    std::string line;
    while (std::getline(in, line)) {
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t == "[item]") {
            flush();
            open = true;
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos || !open)
            throw ConfigError("bad catalog line: " + t);
        rec[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    flush();
    ItemCatalog cat(std::move(items));
    for (size_t k = 0; k < factor_order.size(); ++k)
        cat.set_factor_name(static_cast<int>(k), factor_order[k]);
    return cat;
}

inline void save_catalog(const ItemCatalog& cat, const std::string& path,
                         const std::string& header) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    if (!header.empty()) out << "# " << header << "\n";
    for (const auto& it : cat.items()) {
        out << "[item]\n";
        out << "id = " << it.item_id << "\n";
        out << "block = " << to_string(it.block) << "\n";
        out << "factor = " << cat.factor_name(it.factor_index) << "\n";
        if (it.is_anchor) out << "anchor = true\n";
        if (it.reverse) out << "reverse = true\n";
        if (!it.label.empty()) out << "label = " << it.label << "\n";
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// observation / covariate / outcome loaders
// ---------------------------------------------------------------------------

inline ObservationFrame load_observations(const std::string& items_csv,
                                          const std::string& classrooms_csv) {
    ObservationFrame frame;
    {
        CsvTable t = read_csv(classrooms_csv);
        const int c_class = t.require_col("class_id");
        const int c_center = t.require_col("center_id");
        const int c_group = t.require_col("age_group");
        for (const auto& r : t.rows)
            frame.classrooms[r[c_class]] =
                ClassroomInfo{r[c_center], age_group_from_string(r[c_group])};
    }
    {
        CsvTable t = read_csv(items_csv);
        const int c_center = t.require_col("center_id");
        const int c_class = t.require_col("class_id");
        const int c_item = t.require_col("item_id");
        const int c_value = t.require_col("value");
        for (const auto& r : t.rows)
            frame.rows.push_back(
                {r[c_center], r[c_class], r[c_item], parse_double(r[c_value])});
    }
    return frame;
}

struct CovariateTable {
    std::vector<std::string> class_ids;
    std::vector<std::string> names;
    Eigen::MatrixXd x;

    int row_of(const std::string& class_id) const {
        for (size_t i = 0; i < class_ids.size(); ++i)
            if (class_ids[i] == class_id) return static_cast<int>(i);
        return -1;
    }
};

inline CovariateTable load_covariates(const std::string& path) {
    CsvTable t = read_csv(path);
    const int c_class = t.require_col("class_id");
    CovariateTable out;
    std::vector<int> cols;
    for (size_t c = 0; c < t.columns.size(); ++c)
        if (static_cast<int>(c) != c_class) {
            out.names.push_back(t.columns[c]);
            cols.push_back(static_cast<int>(c));
        }
    out.x.resize(static_cast<Eigen::Index>(t.rows.size()),
                 static_cast<Eigen::Index>(cols.size()));
    for (size_t i = 0; i < t.rows.size(); ++i) {
        out.class_ids.push_back(t.rows[i][static_cast<size_t>(c_class)]);
        for (size_t j = 0; j < cols.size(); ++j)
            out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                parse_double(t.rows[i][static_cast<size_t>(cols[j])]);
    }
    return out;
}

struct OutcomeTable {
    std::vector<std::string> class_ids;
    std::vector<std::string> center_ids;
    std::vector<std::string> names;
    Eigen::MatrixXd y;  // n_classrooms x n_outcomes
};

inline OutcomeTable load_outcomes(const std::string& path) {
    CsvTable t = read_csv(path);
    const int c_class = t.require_col("class_id");
    const int c_center = t.require_col("center_id");
    OutcomeTable out;
    std::vector<int> cols;
    for (size_t c = 0; c < t.columns.size(); ++c)
        if (static_cast<int>(c) != c_class && static_cast<int>(c) != c_center) {
            out.names.push_back(t.columns[c]);
            cols.push_back(static_cast<int>(c));
        }
    out.y.resize(static_cast<Eigen::Index>(t.rows.size()),
                 static_cast<Eigen::Index>(cols.size()));
    for (size_t i = 0; i < t.rows.size(); ++i) {
        out.class_ids.push_back(t.rows[i][static_cast<size_t>(c_class)]);
        out.center_ids.push_back(t.rows[i][static_cast<size_t>(c_center)]);
        for (size_t j = 0; j < cols.size(); ++j)
            out.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                parse_double(t.rows[i][static_cast<size_t>(cols[j])]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// artifact writers / readers
// ---------------------------------------------------------------------------

inline std::string artifact_header(const std::string& config_hash) {
    return "cqt " + std::string(kVersion) + " config=" + config_hash;
}

inline void write_parameters(const FittedModel& model, const ItemCatalog& cat,
                             const std::string& path, const std::string& header) {
    const ParameterSet& p = model.theta_hat;
    CsvWriter w(path, header);
    w.header({"parameter", "index", "estimate"});
    for (int i = 0; i < p.n_items(); ++i)
        w.row_strings({"beta", cat.items()[static_cast<size_t>(i)].item_id,
                       format_double(p.beta[i])});
    for (int i = 0; i < p.n_items(); ++i) {
        const int f = p.meta.factor_of_item[static_cast<size_t>(i)];
        w.row_strings({"lambda", cat.items()[static_cast<size_t>(i)].item_id,
                       format_double(p.lambda(i, f))});
    }
    for (int f = 0; f < p.n_factors(); ++f)
        for (int g = 0; g <= f; ++g)
            w.row_strings({"psi", cat.factor_name(f) + ":" + cat.factor_name(g),
                           format_double(p.psi2(f, g))});
    w.row_strings({"sigma2_alpha", "", format_double(p.sigma2_alpha)});
    w.row_strings({"sigma2_eps", "", format_double(p.sigma2_eps)});
}

inline ParameterSet read_parameters(const std::string& path, const ItemCatalog& cat) {
    CsvTable t = read_csv(path);
    const int c_par = t.require_col("parameter");
    const int c_idx = t.require_col("index");
    const int c_est = t.require_col("estimate");
    ParameterSet p;
    const int I = cat.n_items(), F = cat.n_factors();
    p.meta = ConstraintMeta::from_catalog(cat);
    p.beta = Eigen::VectorXd::Zero(I);
    p.lambda = Eigen::MatrixXd::Zero(I, F);
    p.psi2 = Eigen::MatrixXd::Zero(F, F);
    for (const auto& r : t.rows) {
        const std::string& par = r[static_cast<size_t>(c_par)];
        const std::string& idx = r[static_cast<size_t>(c_idx)];
        const double est = parse_double(r[static_cast<size_t>(c_est)]);
        if (par == "beta") {
            const int i = cat.item_index(idx);
            if (i < 0) throw IoError("unknown item in parameters: " + idx);
            p.beta[i] = est;
        } else if (par == "lambda") {
            const int i = cat.item_index(idx);
            if (i < 0) throw IoError("unknown item in parameters: " + idx);
            p.lambda(i, p.meta.factor_of_item[static_cast<size_t>(i)]) = est;
        } else if (par == "psi") {
            const size_t colon = idx.find(':');
            if (colon == std::string::npos) throw IoError("bad psi index: " + idx);
            const int f = cat.factor_index_by_name(idx.substr(0, colon));
            const int g = cat.factor_index_by_name(idx.substr(colon + 1));
            if (f < 0 || g < 0) throw IoError("unknown factor in parameters: " + idx);
            p.psi2(f, g) = est;
            p.psi2(g, f) = est;
        } else if (par == "sigma2_alpha") {
            p.sigma2_alpha = est;
        } else if (par == "sigma2_eps") {
            p.sigma2_eps = est;
        } else {
            throw IoError("unknown parameter record: " + par);
        }
    }
    return p;
}

inline void write_scores(const FactorScoreSet& scores, const ItemCatalog& cat,
                         const std::string& class_path, const std::string& center_path,
                         const std::string& header) {
    {
        CsvWriter w(class_path, header);
        w.header({"class_id", "center_id", "factor_name", "eb_mean", "post_var",
                  "directly_measured"});
        for (const auto& c : scores.classrooms)
            for (int f = 0; f < c.eta_eb.size(); ++f)
                w.row_strings({c.class_id, c.center_id, cat.factor_name(f),
                               format_double(c.eta_eb[f]),
                               format_double(c.post_cov(f, f)),
                               c.directly_measured[static_cast<size_t>(f)] ? "1" : "0"});
    }
    {
        CsvWriter w(center_path, header);
        w.header({"center_id", "alpha_eb", "post_var"});
        for (const auto& c : scores.centers)
            w.row_strings({c.center_id, format_double(c.alpha_eb),
                           format_double(c.alpha_post_var)});
    }
}

struct ScoreRecord {
    std::string class_id;
    std::string center_id;
    double eb_mean = 0.0;
    double post_var = 0.0;
    bool directly_measured = false;
};

// Per-factor score records in file order.
inline std::map<std::string, std::vector<ScoreRecord>> read_scores(
    const std::string& path) {
    CsvTable t = read_csv(path);
    const int c_class = t.require_col("class_id");
    const int c_center = t.require_col("center_id");
    const int c_factor = t.require_col("factor_name");
    const int c_mean = t.require_col("eb_mean");
    const int c_var = t.require_col("post_var");
    const int c_dm = t.require_col("directly_measured");
    std::map<std::string, std::vector<ScoreRecord>> out;
    for (const auto& r : t.rows) {
        ScoreRecord rec;
        rec.class_id = r[static_cast<size_t>(c_class)];
        rec.center_id = r[static_cast<size_t>(c_center)];
        rec.eb_mean = parse_double(r[static_cast<size_t>(c_mean)]);
        rec.post_var = parse_double(r[static_cast<size_t>(c_var)]);
        rec.directly_measured = r[static_cast<size_t>(c_dm)] == "1";
        out[r[static_cast<size_t>(c_factor)]].push_back(std::move(rec));
    }
    return out;
}

inline void write_vpc(const VpcTable& vpc, const ItemCatalog& cat,
                      const std::string& path, const std::string& header) {
    CsvWriter w(path, header);
    w.header({"item_id", "factor", "lambda", "pi1", "pi2", "pi3"});
    for (const auto& r : vpc.items)
        w.row_strings({r.item_id, cat.factor_name(r.factor_index),
                       format_double(r.lambda), format_double(r.pi1),
                       format_double(r.pi2), format_double(r.pi3)});
    w.row_strings({"_overall", "", "", format_double(vpc.pi1_bar),
                   format_double(vpc.pi2_bar), format_double(vpc.pi3_bar)});
}

}  // namespace cqt

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cqt/balance.hpp"
#include "cqt/drf.hpp"
#include "cqt/eb.hpp"
#include "cqt/io.hpp"

namespace cqt {

struct DrfOptions {
    int poly_order = 2;
    int basis_dim = 10;
    int grid_size = 100;
};

struct DrfCell {
    std::string outcome;
    std::string factor;
    int n = 0;
    double ess = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    double p_value = 1.0;
    double edf = 0.0;
    double gam_p_value = 1.0;
    bool gam_available = false;
    std::vector<CurvePoint> linear_curve;
    std::vector<CurvePoint> gam_curve;
};

struct DrfSkip {
    std::string outcome;
    std::string factor;
    std::string reason;
};

struct DrfTable {
    std::vector<DrfCell> cells;  // deterministic (outcome, factor) order
    std::vector<DrfSkip> skipped;
};

// Stage 2 for every outcome x factor cell: EBCT weights per factor dose
// (dose-specific, shared across outcomes), center-mean centering, then the
// weighted linear and spline fits.
inline DrfTable drf_pipeline(const FactorScoreSet& scores, const ItemCatalog& catalog,
                             const OutcomeTable& outcomes, const CovariateTable& covariates,
                             const DrfOptions& opts = {}) {
    DrfTable out;
    const int F = catalog.n_factors();
    const size_t n_out = outcomes.names.size();

    for (size_t o = 0; o < n_out; ++o) {
        CenteredOutcome centered = center_mean_center(
            outcomes.class_ids, outcomes.center_ids,
            outcomes.y.col(static_cast<Eigen::Index>(o)));

        for (int f = 0; f < F; ++f) {
            const std::string fname = catalog.factor_name(f);
            // classrooms usable for this cell: outcome row + direct
            // measurement of the factor + covariates available
            std::vector<Eigen::Index> rows;
            std::vector<int> cov_rows;
            for (size_t i = 0; i < outcomes.class_ids.size(); ++i) {
                const ClassroomScore* cs = scores.find(outcomes.class_ids[i]);
                if (!cs || !cs->directly_measured[static_cast<size_t>(f)]) continue;
                const int cr = covariates.row_of(outcomes.class_ids[i]);
                if (cr < 0) continue;
                rows.push_back(static_cast<Eigen::Index>(i));
                cov_rows.push_back(cr);
            }
            const auto n = static_cast<Eigen::Index>(rows.size());
            if (n < static_cast<Eigen::Index>(covariates.names.size()) + 4) {
                out.skipped.push_back({outcomes.names[o], fname,
                                       "too few classrooms with a directly measured dose"});
                continue;
            }
            Eigen::VectorXd dose(n), z(n);
            Eigen::MatrixXd x(n, covariates.x.cols());
            for (Eigen::Index t = 0; t < n; ++t) {
                const ClassroomScore* cs = scores.find(outcomes.class_ids[static_cast<size_t>(rows[t])]);
                dose[t] = cs->eta_eb[f];
                z[t] = centered.z[rows[t]];
                x.row(t) = covariates.x.row(cov_rows[static_cast<size_t>(t)]);
            }

            DrfCell cell;
            cell.outcome = outcomes.names[o];
            cell.factor = fname;
            cell.n = static_cast<int>(n);
            try {
                BalanceProblem pb = BalanceProblem::make(dose, x, opts.poly_order);
                pb.covariate_names = covariates.names;
                WeightSet ws = ebct_solve(pb);
                cell.ess = ws.diagnostics.ess;

                DoseResponseFit lin = wls_fit(z, dose, ws.weights, opts.grid_size);
                cell.estimate = lin.gamma1;
                cell.se = lin.se_gamma1;
                cell.p_value = lin.p_value;
                cell.linear_curve = lin.curve;

                GamOptions gopts;
                gopts.basis_dim = opts.basis_dim;
                gopts.grid_size = opts.grid_size;
                try {
                    DoseResponseFit gam = gam_fit(z, dose, ws.weights, gopts);
                    cell.edf = gam.edf;
                    cell.gam_p_value = gam.smooth_p_value;
                    cell.gam_curve = gam.curve;
                    cell.gam_available = true;
                } catch (const TooFewDistinctDoses&) {
                    cell.gam_available = false;
                }
            } catch (const Error& e) {
                out.skipped.push_back({outcomes.names[o], fname, e.what()});
                continue;
            }
            out.cells.push_back(std::move(cell));
        }
    }
    return out;
}

inline void write_drf_table(const DrfTable& table, const std::string& path,
                            const std::string& header) {
    CsvWriter w(path, header);
    w.header({"outcome", "factor", "n", "ess", "estimate", "se", "p_value", "edf",
              "gam_p_value"});
    for (const auto& c : table.cells)
        w.row_strings({c.outcome, c.factor, std::to_string(c.n),
                       format_double(c.ess), format_double(c.estimate),
                       format_double(c.se), format_double(c.p_value),
                       c.gam_available ? format_double(c.edf) : "NA",
                       c.gam_available ? format_double(c.gam_p_value) : "NA"});
}

inline void write_curves(const DrfTable& table, const std::string& path,
                         const std::string& header) {
    CsvWriter w(path, header);
    w.header({"outcome", "factor", "kind", "d", "fit", "lo", "hi"});
    for (const auto& c : table.cells) {
        for (const auto& pt : c.linear_curve)
            w.row_strings({c.outcome, c.factor, "linear", format_double(pt.d),
                           format_double(pt.fit), format_double(pt.lower),
                           format_double(pt.upper)});
        for (const auto& pt : c.gam_curve)
            w.row_strings({c.outcome, c.factor, "gam", format_double(pt.d),
                           format_double(pt.fit), format_double(pt.lower),
                           format_double(pt.upper)});
    }
}

}  // namespace cqt

#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <string>
#include <vector>

#include "cqt/common.hpp"

namespace cqt {

enum class WeightMethod { EBCT, GPS_GLM };

struct BalanceProblem {
    Eigen::VectorXd dose;        // n
    Eigen::MatrixXd covariates;  // n x q, indicator-expanded, no intercept
    Eigen::VectorXd base_weights;  // n, sum 1
    int poly_order = 2;
    std::vector<std::string> covariate_names;

    static BalanceProblem make(Eigen::VectorXd dose, Eigen::MatrixXd covariates,
                               int poly_order = 2,
                               Eigen::VectorXd base = Eigen::VectorXd()) {
        BalanceProblem pb;
        const auto n = dose.size();
        if (covariates.rows() != n) throw DimensionMismatch("covariate rows");
        if (poly_order < 0) throw ConfigError("poly_order must be nonnegative");
        pb.dose = std::move(dose);
        pb.covariates = std::move(covariates);
        pb.poly_order = poly_order;
        if (base.size() == 0)
            pb.base_weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
        else {
            if (base.size() != n) throw DimensionMismatch("base weight length");
            if (base.minCoeff() <= 0.0) throw ConfigError("base weights must be positive");
            pb.base_weights = base / base.sum();
        }
        for (Eigen::Index c = 0; c < pb.covariates.cols(); ++c) {
            const double span = pb.covariates.col(c).maxCoeff() - pb.covariates.col(c).minCoeff();
            if (span == 0.0) throw ConfigError("constant covariate column " + std::to_string(c));
        }
        return pb;
    }

    // Balancing-function matrix: covariates and dose powers centered at their
    // base-weight means, plus all covariate-by-power cross products of the
    // centered columns. Every constraint is "weighted mean equals zero", so
    // the solution preserves the marginal means while zeroing every
    // covariate-by-dose-power covariance.
    Eigen::MatrixXd balance_functions() const {
        const auto n = dose.size();
        const auto q = covariates.cols();
        const int p = poly_order;
        Eigen::MatrixXd g(n, q + p + q * p);
        Eigen::MatrixXd cov_c = covariates;
        for (Eigen::Index c = 0; c < q; ++c)
            cov_c.col(c).array() -= base_weights.dot(covariates.col(c));
        g.leftCols(q) = cov_c;
        Eigen::MatrixXd pow_c(n, p);
        Eigen::VectorXd dk = dose;
        for (int r = 0; r < p; ++r) {
            pow_c.col(r) = dk.array() - base_weights.dot(dk);
            if (r + 1 < p) dk = dk.cwiseProduct(dose);
        }
        g.middleCols(q, p) = pow_c;
        Eigen::Index col = q + p;
        for (Eigen::Index c = 0; c < q; ++c)
            for (int r = 0; r < p; ++r)
                g.col(col++) = cov_c.col(c).cwiseProduct(pow_c.col(r));
        if (n <= g.cols()) throw ConfigError("more balance constraints than observations");
        return g;
    }
};

struct BalanceDiagnostics {
    double max_abs_balance_violation = 0.0;
    double ess = 0.0;
    double max_weight = 0.0;
    std::vector<int> pruned_columns;  // collinear constraints dropped pre-solve
};

struct WeightSet {
    Eigen::VectorXd weights;
    WeightMethod method = WeightMethod::EBCT;
    Eigen::VectorXd dual;
    BalanceDiagnostics diagnostics;
};

inline double effective_sample_size(const Eigen::VectorXd& w) {
    const double s = w.sum();
    return s * s / w.squaredNorm();
}

inline double effective_sample_size(const WeightSet& ws) {
    return effective_sample_size(ws.weights);
}

namespace detail {

// Drop columns that a rank-revealing QR flags as linearly dependent; exact
// duplicates are common after indicator expansion.
inline std::vector<int> independent_columns(const Eigen::MatrixXd& g, double tol = 1e-10) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
    qr.setThreshold(tol);
    const Eigen::Index rank = qr.rank();
    std::vector<int> keep;
    for (Eigen::Index k = 0; k < rank; ++k)
        keep.push_back(static_cast<int>(qr.colsPermutation().indices()[k]));
    std::sort(keep.begin(), keep.end());
    return keep;
}

}  // namespace detail

// Entropy balancing for a continuous dose: minimal KL divergence from the
// base weights subject to zero weighted means of every balance function.
// Damped Newton on the unconstrained dual with exp-normalized weights.
inline WeightSet ebct_solve(const BalanceProblem& problem,
                            const Eigen::VectorXd& dual_start = Eigen::VectorXd()) {
    Eigen::MatrixXd g_full = problem.balance_functions();
    const auto n = g_full.rows();
    std::vector<int> keep = detail::independent_columns(g_full);
    WeightSet out;
    out.method = WeightMethod::EBCT;
    for (int c = 0; c < g_full.cols(); ++c)
        if (std::find(keep.begin(), keep.end(), c) == keep.end())
            out.diagnostics.pruned_columns.push_back(c);
    Eigen::MatrixXd g(n, static_cast<Eigen::Index>(keep.size()));
    for (size_t k = 0; k < keep.size(); ++k) g.col(static_cast<Eigen::Index>(k)) = g_full.col(keep[k]);
    const auto m = g.cols();
    const Eigen::VectorXd& q = problem.base_weights;
    // scale each constraint to unit base-weighted spread; conditions the dual
    // Hessian when dose powers and cross moments live on very different scales
    Eigen::VectorXd colscale(m);
    for (Eigen::Index c = 0; c < m; ++c) {
        colscale[c] = std::sqrt(q.dot(g.col(c).cwiseAbs2()));
        if (colscale[c] <= 0.0) colscale[c] = 1.0;
        g.col(c) /= colscale[c];
    }

    Eigen::VectorXd lam = dual_start.size() == m ? dual_start : Eigen::VectorXd::Zero(m);
    auto weights_of = [&](const Eigen::VectorXd& l) {
        Eigen::VectorXd s = g * l;
        s.array() -= s.maxCoeff();  // exp-normalize
        Eigen::VectorXd w = q.array() * s.array().exp();
        return Eigen::VectorXd(w / w.sum());
    };
    auto dual_value = [&](const Eigen::VectorXd& l) {
        Eigen::VectorXd s = g * l;
        const double shift = s.maxCoeff();
        return shift + std::log((q.array() * (s.array() - shift).exp()).sum());
    };

    Eigen::VectorXd w = weights_of(lam);
    Eigen::VectorXd grad = g.transpose() * w;
    double fval = dual_value(lam);
    bool converged = false;
    for (int it = 0; it < 200; ++it) {
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10) {
            converged = true;
            break;
        }
        Eigen::MatrixXd H = g.transpose() * w.asDiagonal() * g - grad * grad.transpose();
        H.diagonal().array() += 1e-12;
        Eigen::VectorXd step = -H.ldlt().solve(grad);
        double t = 1.0;
        bool moved = false;
        for (int hs = 0; hs < 50; ++hs) {
            const double fnew = dual_value(lam + t * step);
            if (std::isfinite(fnew) && fnew < fval) {
                lam += t * step;
                fval = fnew;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;
        if (!std::isfinite(lam.lpNorm<Eigen::Infinity>()) ||
            lam.lpNorm<Eigen::Infinity>() > 1e8)
            throw InfeasibleConstraints("dual diverged");
        w = weights_of(lam);
        grad = g.transpose() * w;
    }
    if (!converged && grad.lpNorm<Eigen::Infinity>() >= 1e-8)
        throw InfeasibleConstraints("dual Newton did not reach tolerance");

    out.weights = w;
    out.dual = lam.cwiseQuotient(colscale);  // back on the original scale
    out.diagnostics.max_abs_balance_violation =
        (g_full.transpose() * w).lpNorm<Eigen::Infinity>();
    out.diagnostics.ess = effective_sample_size(w);
    out.diagnostics.max_weight = w.maxCoeff();
    return out;
}

// Stabilized Gaussian density-ratio weights: marginal normal over conditional
// normal fitted by ML linear regression of dose on covariates.
inline WeightSet gps_glm_weights(const Eigen::VectorXd& dose,
                                 const Eigen::MatrixXd& covariates) {
    const auto n = dose.size();
    const auto q = covariates.cols();
    if (covariates.rows() != n) throw DimensionMismatch("covariate rows");
    if (n <= q + 2) throw ConfigError("too few observations for the GPS model");
    const double mu = dose.mean();
    const double s2_marg = (dose.array() - mu).square().sum() / static_cast<double>(n);
    if (s2_marg <= 0.0) throw DegenerateDose("zero marginal dose variance");

    Eigen::MatrixXd X(n, q + 1);
    X.col(0).setOnes();
    X.rightCols(q) = covariates;
    Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * dose);
    Eigen::VectorXd resid = dose - X * beta;
    const double s2_cond = resid.squaredNorm() / static_cast<double>(n);
    if (s2_cond <= 1e-12 * s2_marg) throw DegenerateDose("perfect conditional fit");

    auto log_phi = [](double x, double m, double v) {
        const double z = x - m;
        return -0.5 * std::log(2.0 * M_PI * v) - 0.5 * z * z / v;
    };
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        w[i] = std::exp(log_phi(dose[i], mu, s2_marg) -
                        log_phi(dose[i], dose[i] - resid[i], s2_cond));
    w /= w.sum();
    WeightSet out;
    out.weights = std::move(w);
    out.method = WeightMethod::GPS_GLM;
    out.diagnostics.ess = effective_sample_size(out.weights);
    out.diagnostics.max_weight = out.weights.maxCoeff();
    return out;
}

struct BalanceRow {
    std::string covariate;
    double corr_unweighted = 0.0;
    double corr_weighted = 0.0;
    bool applicable = true;  // false for degenerate (constant) columns
};

namespace detail {

inline double weighted_corr(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& w) {
    const double sw = w.sum();
    const double mx = w.dot(x) / sw, my = w.dot(y) / sw;
    Eigen::ArrayXd dx = x.array() - mx, dy = y.array() - my;
    const double vxx = (w.array() * dx * dx).sum();
    const double vyy = (w.array() * dy * dy).sum();
    if (vxx <= 0.0 || vyy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (w.array() * dx * dy).sum() / std::sqrt(vxx * vyy);
}

inline double weighted_slope(const Eigen::VectorXd& y, const Eigen::VectorXd& d,
                             const Eigen::VectorXd& w) {
    const double sw = w.sum();
    const double md = w.dot(d) / sw, my = w.dot(y) / sw;
    Eigen::ArrayXd dd = d.array() - md;
    const double vdd = (w.array() * dd * dd).sum();
    if (vdd <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (w.array() * dd * (y.array() - my)).sum() / vdd;
}

}  // namespace detail

inline std::vector<BalanceRow> balance_table(const WeightSet& ws,
                                             const BalanceProblem& problem) {
    const auto q = problem.covariates.cols();
    Eigen::VectorXd uniform =
        Eigen::VectorXd::Constant(problem.dose.size(), 1.0);
    std::vector<BalanceRow> out;
    for (Eigen::Index c = 0; c < q; ++c) {
        BalanceRow row;
        row.covariate = c < static_cast<Eigen::Index>(problem.covariate_names.size())
                            ? problem.covariate_names[static_cast<size_t>(c)]
                            : "x" + std::to_string(c);
        row.corr_unweighted =
            detail::weighted_corr(problem.covariates.col(c), problem.dose, uniform);
        row.corr_weighted =
            detail::weighted_corr(problem.covariates.col(c), problem.dose, ws.weights);
        row.applicable = std::isfinite(row.corr_unweighted) && std::isfinite(row.corr_weighted);
        out.push_back(std::move(row));
    }
    return out;
}

struct PseudoDrfRow {
    std::string covariate;
    double slope = 0.0;
    bool applicable = true;
};

// Weighted slope of each covariate on the dose; exactly zero (to solver
// tolerance) after entropy balancing with cross-moment constraints.
inline std::vector<PseudoDrfRow> pseudo_drf_flatness(const WeightSet& ws,
                                                     const BalanceProblem& problem) {
    std::vector<PseudoDrfRow> out;
    for (Eigen::Index c = 0; c < problem.covariates.cols(); ++c) {
        PseudoDrfRow row;
        row.covariate = c < static_cast<Eigen::Index>(problem.covariate_names.size())
                            ? problem.covariate_names[static_cast<size_t>(c)]
                            : "x" + std::to_string(c);
        row.slope = detail::weighted_slope(problem.covariates.col(c), problem.dose,
                                           ws.weights);
        row.applicable = std::isfinite(row.slope);
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace cqt

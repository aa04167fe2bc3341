#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cqt/balance.hpp"
#include "cqt/common.hpp"
#include "cqt/spline.hpp"
#include "cqt/stats.hpp"

namespace cqt {

struct CenteredOutcome {
    std::vector<std::string> class_ids;
    std::vector<std::string> center_ids;
    Eigen::VectorXd z;  // center-mean-centered classroom outcomes
};

// Subtract the center mean from each classroom outcome; single-classroom
// centers carry no within-center contrast and come out exactly zero.
inline CenteredOutcome center_mean_center(const std::vector<std::string>& class_ids,
                                          const std::vector<std::string>& center_ids,
                                          const Eigen::VectorXd& y) {
    const auto n = y.size();
    if (static_cast<Eigen::Index>(class_ids.size()) != n ||
        static_cast<Eigen::Index>(center_ids.size()) != n)
        throw DimensionMismatch("outcome id lengths");
    std::map<std::string, std::pair<double, int>> acc;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& a = acc[center_ids[static_cast<size_t>(i)]];
        a.first += y[i];
        a.second += 1;
    }
    CenteredOutcome out;
    out.class_ids = class_ids;
    out.center_ids = center_ids;
    out.z.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& a = acc[center_ids[static_cast<size_t>(i)]];
        out.z[i] = y[i] - a.first / a.second;
    }
    return out;
}

inline Eigen::VectorXd demean_dose(const Eigen::VectorXd& dose,
                                   const std::vector<std::string>& center_ids) {
    return center_mean_center(std::vector<std::string>(center_ids.size()), center_ids, dose).z;
}

enum class FitKind { Linear, GAM };

struct CurvePoint {
    double d = 0.0, fit = 0.0, lower = 0.0, upper = 0.0;
};

struct DoseResponseFit {
    FitKind kind = FitKind::Linear;
    // linear
    double gamma0 = 0.0, gamma1 = 0.0, se_gamma1 = 0.0, p_value = 1.0;
    // gam
    int basis_dim = 0;
    Eigen::VectorXd coefficients;
    double lambda = 0.0;
    double edf = 0.0;  // smooth term only, excluding the intercept
    double smooth_p_value = 1.0;
    Eigen::MatrixXd coef_cov;
    double sigma2 = 0.0;
    bool lambda_at_bound = false;
    std::vector<CurvePoint> curve;
};

inline constexpr double kNormalQ975 = 1.959963984540054;

// Weighted least squares of z on (1, d) with an HC1-style weighted sandwich
// standard error for the slope. Optional cluster ids switch the meat to a
// cluster sum.
inline DoseResponseFit wls_fit(const Eigen::VectorXd& z, const Eigen::VectorXd& dose,
                               const Eigen::VectorXd& weights, int grid_size = 100,
                               const std::vector<std::string>& cluster_ids = {}) {
    const auto n = z.size();
    if (dose.size() != n || weights.size() != n)
        throw DimensionMismatch("wls input lengths");
    Eigen::VectorXd w = weights / weights.mean();
    Eigen::MatrixXd X(n, 2);
    X.col(0).setOnes();
    X.col(1) = dose;
    Eigen::Matrix2d XtWX = X.transpose() * w.asDiagonal() * X;
    const double detv = XtWX(0, 0) * XtWX(1, 1) - XtWX(0, 1) * XtWX(1, 0);
    if (detv <= 1e-14 * XtWX(0, 0) * XtWX(1, 1) || XtWX(1, 1) <= 0.0)
        throw DegenerateDose("weighted dose variance is zero");
    Eigen::Vector2d beta = XtWX.ldlt().solve(X.transpose() * (w.asDiagonal() * z));
    Eigen::VectorXd e = z - X * beta;

    Eigen::Matrix2d meat = Eigen::Matrix2d::Zero();
    double small_sample = 1.0;
    if (cluster_ids.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Vector2d s = w[i] * e[i] * X.row(i).transpose();
            meat += s * s.transpose();
        }
        small_sample = static_cast<double>(n) / std::max<double>(1.0, static_cast<double>(n) - 2);
    } else {
        std::map<std::string, Eigen::Vector2d> sums;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto it = sums.emplace(cluster_ids[static_cast<size_t>(i)],
                                   Eigen::Vector2d::Zero()).first;
            it->second += w[i] * e[i] * X.row(i).transpose();
        }
        for (const auto& [id, s] : sums) meat += s * s.transpose();
        const double G = static_cast<double>(sums.size());
        small_sample = G > 1.0 ? G / (G - 1.0) : 1.0;
    }
    Eigen::Matrix2d bread = XtWX.inverse();
    Eigen::Matrix2d V = small_sample * bread * meat * bread;

    DoseResponseFit out;
    out.kind = FitKind::Linear;
    out.gamma0 = beta[0];
    out.gamma1 = beta[1];
    out.se_gamma1 = std::sqrt(V(1, 1));
    out.p_value = out.se_gamma1 > 0.0
                      ? normal_two_sided_p(out.gamma1 / out.se_gamma1)
                      : 0.0;
    const double lo = dose.minCoeff(), hi = dose.maxCoeff();
    for (int g = 0; g < grid_size; ++g) {
        CurvePoint pt;
        pt.d = lo + (hi - lo) * g / std::max(1, grid_size - 1);
        pt.fit = beta[0] + beta[1] * pt.d;
        Eigen::Vector2d x(1.0, pt.d);
        const double se = std::sqrt(x.dot(V * x));
        pt.lower = pt.fit - kNormalQ975 * se;
        pt.upper = pt.fit + kNormalQ975 * se;
        out.curve.push_back(pt);
    }
    return out;
}

struct GamOptions {
    int basis_dim = 10;
    int grid_size = 100;
    double fixed_lambda = -1.0;  // <= 0 selects lambda by REML
    double log_lambda_lo = -15.0;
    double log_lambda_hi = 15.0;
};

namespace detail {

struct GamSystem {
    Eigen::MatrixXd A;   // [1 | B Z], intercept W-orthogonal to the smooth
    Eigen::MatrixXd S;   // penalty on the A coordinates (zero intercept block)
    Eigen::MatrixXd Z;   // constraint null-space basis, basis_dim x (basis_dim-1)
    BSplineBasis basis;
    int n_unpenalized = 2;  // intercept plus the in-constraint linear direction
    int penalty_rank = 0;
};

inline GamSystem build_gam_system(const Eigen::VectorXd& dose,
                                  const Eigen::VectorXd& w, int basis_dim) {
    GamSystem sys;
    sys.basis = BSplineBasis::from_quantiles(dose, w, basis_dim);
    Eigen::MatrixXd B = sys.basis.design(dose);
    Eigen::MatrixXd S0 = sys.basis.curvature_penalty();

    // absorb the weighted sum-to-zero constraint c'theta = 0, c = B'w
    Eigen::VectorXd c = B.transpose() * w;
    Eigen::FullPivHouseholderQR<Eigen::MatrixXd> qr(c);
    sys.Z = qr.matrixQ().rightCols(basis_dim - 1);

    const auto n = dose.size();
    sys.A.resize(n, basis_dim);
    sys.A.col(0).setOnes();
    sys.A.rightCols(basis_dim - 1) = B * sys.Z;
    sys.S = Eigen::MatrixXd::Zero(basis_dim, basis_dim);
    sys.S.bottomRightCorner(basis_dim - 1, basis_dim - 1) =
        sys.Z.transpose() * S0 * sys.Z;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.S);
    const double tol = es.eigenvalues().maxCoeff() * 1e-10;
    sys.penalty_rank = static_cast<int>((es.eigenvalues().array() > tol).count());
    sys.n_unpenalized = basis_dim - sys.penalty_rank;
    return sys;
}

}  // namespace detail

// Penalized cubic-spline fit with curvature penalty; lambda chosen by
// minimizing the profiled restricted likelihood of the variance-components
// form. Weights enter both the fitting and the REML criterion.
inline DoseResponseFit gam_fit(const Eigen::VectorXd& z, const Eigen::VectorXd& dose,
                               const Eigen::VectorXd& weights,
                               const GamOptions& opts = {}) {
    const auto n = z.size();
    if (dose.size() != n || weights.size() != n)
        throw DimensionMismatch("gam input lengths");
    {
        std::set<double> distinct(dose.data(), dose.data() + n);
        if (static_cast<int>(distinct.size()) < opts.basis_dim + 2)
            throw TooFewDistinctDoses(std::to_string(distinct.size()));
    }
    Eigen::VectorXd w = weights / weights.mean();
    auto sys = detail::build_gam_system(dose, w, opts.basis_dim);
    const int M = opts.basis_dim;
    Eigen::MatrixXd AtWA = sys.A.transpose() * w.asDiagonal() * sys.A;
    const double dof_resid = static_cast<double>(n) - sys.n_unpenalized;

    // square root of the penalty for the augmented least-squares form; the
    // stacked QR stays accurate at penalty scales where a normal-equations
    // solve loses the unpenalized directions to rounding
    Eigen::MatrixXd Lt;
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.S);
        Lt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
             es.eigenvectors().transpose();
    }
    Eigen::VectorXd sqw = w.cwiseSqrt();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + M);
    rhs.head(n) = sqw.cwiseProduct(z);

    struct Solve {
        Eigen::VectorXd theta;
        Eigen::MatrixXd Hinv;
        double rss_pen = 0.0;
        double logdet = 0.0;
    };
    auto solve_at = [&](double lam) {
        Solve s;
        Eigen::MatrixXd K(n + M, M);
        K.topRows(n) = sqw.asDiagonal() * sys.A;
        K.bottomRows(M) = std::sqrt(lam) * Lt;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(K);
        s.theta = qr.solve(rhs);
        s.rss_pen = (K * s.theta - rhs).squaredNorm();
        Eigen::MatrixXd R = qr.matrixQR().topRows(M).triangularView<Eigen::Upper>();
        Eigen::MatrixXd Rinv =
            R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(M, M));
        const auto& P = qr.colsPermutation();
        s.Hinv = P * (Rinv * Rinv.transpose()) * P.transpose();
        s.logdet = 0.0;
        for (int i = 0; i < M; ++i)
            s.logdet += 2.0 * std::log(std::max(std::abs(R(i, i)), 1e-300));
        return s;
    };
    auto reml = [&](double loglam) {
        const double lam = std::exp(loglam);
        Solve s = solve_at(lam);
        return dof_resid * std::log(std::max(s.rss_pen, 1e-300)) + s.logdet -
               sys.penalty_rank * loglam;
    };

    double lam;
    bool at_bound = false;
    if (opts.fixed_lambda > 0.0) {
        lam = opts.fixed_lambda;
    } else if (solve_at(std::exp(opts.log_lambda_hi)).rss_pen <
               1e-8 * (1.0 + z.dot(w.asDiagonal() * z))) {
        // the smoothest candidate already reproduces the data to rounding
        // noise, so the residual term cannot discriminate; take the bound
        lam = std::exp(opts.log_lambda_hi);
        at_bound = true;
    } else {
        const int ngrid = 61;
        double best_ll = opts.log_lambda_lo, best_val = std::numeric_limits<double>::infinity();
        int best_i = 0;
        for (int i = 0; i < ngrid; ++i) {
            const double ll = opts.log_lambda_lo +
                              (opts.log_lambda_hi - opts.log_lambda_lo) * i / (ngrid - 1);
            const double val = reml(ll);
            if (val < best_val) {
                best_val = val;
                best_ll = ll;
                best_i = i;
            }
        }
        at_bound = best_i == 0 || best_i == ngrid - 1;
        const double span = (opts.log_lambda_hi - opts.log_lambda_lo) / (ngrid - 1);
        double a = best_ll - span, b = best_ll + span;
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = reml(x1), f2 = reml(x2);
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = reml(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = reml(x2);
            }
        }
        lam = std::exp(0.5 * (a + b));
    }

    Solve s = solve_at(lam);
    Eigen::MatrixXd influence = s.Hinv * AtWA;  // edf contributions on the diagonal
    const double edf_total = influence.trace();

    DoseResponseFit out;
    out.kind = FitKind::GAM;
    out.basis_dim = M;
    out.coefficients = s.theta;
    out.lambda = lam;
    out.edf = edf_total - 1.0;  // intercept is exactly one df by orthogonality
    out.lambda_at_bound = at_bound;
    Eigen::VectorXd resid = z - sys.A * s.theta;
    out.sigma2 = resid.dot(w.asDiagonal() * resid) /
                 std::max(1.0, static_cast<double>(n) - edf_total);
    out.coef_cov = out.sigma2 * s.Hinv;

    // Wald-type test of the smooth block at rank round(edf), pseudo-inverse
    // truncated to that rank
    {
        Eigen::VectorXd ts = s.theta.tail(M - 1);
        Eigen::MatrixXd Vs = out.coef_cov.bottomRightCorner(M - 1, M - 1);
        int r = static_cast<int>(std::lround(std::min(out.edf, double(M - 1))));
        r = std::max(1, r);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Vs);
        double stat = 0.0;
        for (int k = 0; k < r; ++k) {
            const Eigen::Index j = M - 2 - k;  // largest eigenvalues last
            const double ev = es.eigenvalues()[j];
            if (ev <= 0.0) continue;
            const double proj = es.eigenvectors().col(j).dot(ts);
            stat += proj * proj / ev;
        }
        out.smooth_p_value = chi2_sf(stat, r);
    }

    const double lo = dose.minCoeff(), hi = dose.maxCoeff();
    for (int g = 0; g < opts.grid_size; ++g) {
        CurvePoint pt;
        pt.d = lo + (hi - lo) * g / std::max(1, opts.grid_size - 1);
        Eigen::VectorXd row(M);
        row[0] = 1.0;
        row.tail(M - 1) = sys.Z.transpose() * sys.basis.eval(pt.d);
        pt.fit = row.dot(s.theta);
        const double se = std::sqrt(std::max(0.0, row.dot(out.coef_cov * row)));
        pt.lower = pt.fit - kNormalQ975 * se;
        pt.upper = pt.fit + kNormalQ975 * se;
        out.curve.push_back(pt);
    }
    return out;
}

}  // namespace cqt

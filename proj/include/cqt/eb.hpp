#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cqt/likelihood.hpp"

namespace cqt {

struct ClassroomScore {
    std::string class_id;
    std::string center_id;
    Eigen::VectorXd eta_eb;    // F
    Eigen::MatrixXd post_cov;  // F x F
    std::vector<bool> directly_measured;  // per factor
};

struct CenterScore {
    std::string center_id;
    double alpha_eb = 0.0;
    double alpha_post_var = 0.0;
};

struct FactorScoreSet {
    std::vector<ClassroomScore> classrooms;  // ordered by (center_id, class_id)
    std::vector<CenterScore> centers;

    const ClassroomScore* find(const std::string& class_id) const {
        for (const auto& c : classrooms)
            if (c.class_id == class_id) return &c;
        return nullptr;
    }
};

// Joint Gaussian conditioning per center: bhat = G Z' V^-1 (y - X beta),
// posterior covariance G - G Z' V^-1 Z G, sliced into classroom blocks and
// the center intercept.
inline FactorScoreSet eb_predict(const FittedModel& model, const DesignBundle& bundle) {
    const ParameterSet& p = model.theta_hat;
    if (bundle.n_items != p.n_items())
        throw DimensionMismatch("bundle items unknown to the model");
    const int F = p.n_factors();
    FactorScoreSet out;
    for (const auto& cb : bundle.centers) {
        auto s = detail::build_center_system(cb, p.lambda);
        const int n = static_cast<int>(s.y.size());
        Eigen::MatrixXd G = detail::build_g(s.J, s.F, p.psi2, p.sigma2_alpha);
        Eigen::MatrixXd V = detail::build_v(s, G, p.sigma2_eps);
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("center " + cb.center_id);
        Eigen::VectorXd r = s.y;
        for (int t = 0; t < n; ++t) r[t] -= p.beta[s.item_of_row[static_cast<size_t>(t)]];
        Eigen::MatrixXd GZt = G * s.Z.transpose();
        Eigen::VectorXd bhat = GZt * llt.solve(r);
        Eigen::MatrixXd C = G - GZt * llt.solve(GZt.transpose());

        for (int j = 0; j < s.J; ++j) {
            ClassroomScore cs;
            cs.class_id = cb.classrooms[static_cast<size_t>(j)].class_id;
            cs.center_id = cb.center_id;
            cs.eta_eb = bhat.segment(F * j, F);
            cs.post_cov = C.block(F * j, F * j, F, F);
            cs.directly_measured.assign(static_cast<size_t>(F), false);
            for (int i : cb.classrooms[static_cast<size_t>(j)].item_indices)
                cs.directly_measured[static_cast<size_t>(
                    p.meta.factor_of_item[static_cast<size_t>(i)])] = true;
            out.classrooms.push_back(std::move(cs));
        }
        CenterScore c;
        c.center_id = cb.center_id;
        c.alpha_eb = bhat[F * s.J];
        c.alpha_post_var = C(F * s.J, F * s.J);
        out.centers.push_back(c);
    }
    return out;
}

// Residualized route: plug-in regression factor score applied to the item
// residuals net of the EB center intercept. Algebraically identical to
// eb_predict for the mean.
inline FactorScoreSet eb_residualized(const FittedModel& model,
                                      const DesignBundle& bundle,
                                      const FactorScoreSet& scores) {
    const ParameterSet& p = model.theta_hat;
    const int F = p.n_factors();
    FactorScoreSet out = scores;
    size_t ci = 0;
    size_t pos = 0;
    for (const auto& cb : bundle.centers) {
        const double alpha = out.centers[ci++].alpha_eb;
        for (const auto& cls : cb.classrooms) {
            const int n = static_cast<int>(cls.item_indices.size());
            Eigen::MatrixXd lam(n, F);
            Eigen::VectorXd resid(n);
            for (int t = 0; t < n; ++t) {
                const int i = cls.item_indices[static_cast<size_t>(t)];
                lam.row(t) = p.lambda.row(i);
                resid[t] = cls.values[t] - p.beta[i] - alpha;
            }
            Eigen::MatrixXd S = lam * p.psi2 * lam.transpose();
            S.diagonal().array() += p.sigma2_eps;
            Eigen::MatrixXd B = p.psi2 * lam.transpose() * S.llt().solve(
                Eigen::MatrixXd::Identity(n, n));
            out.classrooms[pos++].eta_eb = B * resid;
        }
    }
    return out;
}

// Ridge-type residual-maker that partials the center intercept out of a
// center's stacked residual vector: M = I - z (z'R^-1 z + 1/s2a)^-1 z'R^-1
// with z = ones and R = s2e I.
inline Eigen::MatrixXd partial_out_operator(const FittedModel& model,
                                            const CenterBlock& cb) {
    const ParameterSet& p = model.theta_hat;
    const int n = cb.n_rows();
    const double s2e = p.sigma2_eps;
    const double denom = n / s2e + 1.0 / p.sigma2_alpha;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
    M.array() -= (1.0 / (denom * s2e));
    return M;
}

// Solves the block-eliminated system for the classroom effects of one center
// using the partialled residual; reproduces eb_predict's classroom blocks.
inline Eigen::VectorXd eliminated_classroom_solve(const FittedModel& model,
                                                  const CenterBlock& cb) {
    const ParameterSet& p = model.theta_hat;
    auto s = detail::build_center_system(cb, p.lambda);
    const int F = p.n_factors();
    const int n = static_cast<int>(s.y.size());
    Eigen::VectorXd r = s.y;
    for (int t = 0; t < n; ++t) r[t] -= p.beta[s.item_of_row[static_cast<size_t>(t)]];
    Eigen::MatrixXd Zeta = s.Z.leftCols(F * s.J);
    Eigen::MatrixXd M = partial_out_operator(model, cb);
    Eigen::MatrixXd Geta_inv = Eigen::MatrixXd::Zero(F * s.J, F * s.J);
    Eigen::MatrixXd psi_inv = p.psi2.llt().solve(Eigen::MatrixXd::Identity(F, F));
    for (int j = 0; j < s.J; ++j) Geta_inv.block(F * j, F * j, F, F) = psi_inv;
    const double inv_s2e = 1.0 / p.sigma2_eps;
    Eigen::MatrixXd A = Zeta.transpose() * (inv_s2e * M) * Zeta + Geta_inv;
    Eigen::VectorXd b = Zeta.transpose() * (inv_s2e * M) * r;
    return A.ldlt().solve(b);
}

}  // namespace cqt

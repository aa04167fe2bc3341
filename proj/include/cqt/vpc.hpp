#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/likelihood.hpp"

namespace cqt {

struct ItemVpc {
    std::string item_id;
    int factor_index = 0;
    double lambda = 0.0;
    double v2 = 0.0;  // L_i' Psi L_i
    double v3 = 0.0;  // sigma2_alpha
    double v1 = 0.0;  // sigma2_eps
    double pi1 = 0.0, pi2 = 0.0, pi3 = 0.0;
};

struct VpcTable {
    std::vector<ItemVpc> items;
    double pi1_bar = 0.0, pi2_bar = 0.0, pi3_bar = 0.0;
    Eigen::VectorXd weights;
};

// Per-item level-1/2/3 variance shares from the fitted marginal covariance,
// plus weighted overall shares (share formula applied to the weighted mean
// of the level-2 variances, not the mean of per-item shares).
inline VpcTable item_vpc(const FittedModel& model, const ItemCatalog& catalog,
                         const Eigen::VectorXd& weights = Eigen::VectorXd()) {
    const ParameterSet& p = model.theta_hat;
    const int I = p.n_items();
    VpcTable out;
    out.weights = weights.size() == I
                      ? Eigen::VectorXd(weights / weights.sum())
                      : Eigen::VectorXd::Constant(I, 1.0 / I);
    double v2_bar = 0.0;
    for (int i = 0; i < I; ++i) {
        ItemVpc row;
        row.item_id = catalog.items()[static_cast<size_t>(i)].item_id;
        row.factor_index = p.meta.factor_of_item[static_cast<size_t>(i)];
        row.lambda = p.lambda(i, row.factor_index);
        row.v2 = p.lambda.row(i) * p.psi2 * p.lambda.row(i).transpose();
        row.v3 = p.sigma2_alpha;
        row.v1 = p.sigma2_eps;
        const double tot = row.v1 + row.v2 + row.v3;
        row.pi1 = row.v1 / tot;
        row.pi2 = row.v2 / tot;
        row.pi3 = row.v3 / tot;
        v2_bar += out.weights[i] * row.v2;
        out.items.push_back(std::move(row));
    }
    const double tot = v2_bar + p.sigma2_alpha + p.sigma2_eps;
    out.pi1_bar = p.sigma2_eps / tot;
    out.pi2_bar = v2_bar / tot;
    out.pi3_bar = p.sigma2_alpha / tot;
    return out;
}

struct CompositeVpc {
    double level1 = 0.0, level2 = 0.0, level3 = 0.0;  // shares
    double var_total = 0.0;
};

// Three-way split of Var(w'y); differs from the overall item-level shares
// because the level-2 term carries cross-item covariance.
inline CompositeVpc composite_vpc(const FittedModel& model,
                                  const Eigen::VectorXd& w) {
    if (w.size() != model.theta_hat.n_items())
        throw DimensionMismatch("composite weights length");
    if (w.isZero(0.0)) throw ZeroWeightVector();
    const ParameterSet& p = model.theta_hat;
    const double l2 = w.transpose() * p.lambda * p.psi2 * p.lambda.transpose() * w;
    const double sum_w = w.sum();
    const double l3 = p.sigma2_alpha * sum_w * sum_w;
    const double l1 = p.sigma2_eps * w.squaredNorm();
    CompositeVpc out;
    out.var_total = l1 + l2 + l3;
    out.level1 = l1 / out.var_total;
    out.level2 = l2 / out.var_total;
    out.level3 = l3 / out.var_total;
    return out;
}

struct FactorCorrelations {
    Eigen::MatrixXd corr;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> point_identified;
};

inline FactorCorrelations factor_correlations(const FittedModel& model) {
    const ParameterSet& p = model.theta_hat;
    const int F = p.n_factors();
    FactorCorrelations out;
    out.corr.resize(F, F);
    out.point_identified = p.meta.identified;
    for (int f = 0; f < F; ++f)
        if (p.psi2(f, f) <= 0.0)
            throw DegenerateFactor("psi diagonal " + std::to_string(f));
    for (int f = 0; f < F; ++f)
        for (int g = 0; g < F; ++g)
            out.corr(f, g) = p.psi2(f, g) / std::sqrt(p.psi2(f, f) * p.psi2(g, g));
    return out;
}

// Max entrywise discrepancy of Lambda Psi Lambda' under a diagonal factor
// rescaling; zero in exact arithmetic.
inline double rescaling_invariance_check(const FittedModel& model,
                                         const Eigen::VectorXd& d) {
    const ParameterSet& p = model.theta_hat;
    Eigen::MatrixXd D = d.asDiagonal();
    Eigen::MatrixXd Dinv = d.cwiseInverse().asDiagonal();
    Eigen::MatrixXd base = p.lambda * p.psi2 * p.lambda.transpose();
    Eigen::MatrixXd scaled =
        (p.lambda * Dinv) * (D * p.psi2 * D) * (p.lambda * Dinv).transpose();
    return (scaled - base).cwiseAbs().maxCoeff();
}

}  // namespace cqt

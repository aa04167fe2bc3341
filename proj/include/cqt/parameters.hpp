#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/common.hpp"

namespace cqt {

// Structural constraints baked into the parameterization: simple-structure
// zero pattern, marker loadings fixed at 1, and the mask of covariance
// entries that the design actually identifies.
struct ConstraintMeta {
    std::vector<int> anchor_items;             // per factor
    std::vector<int> factor_of_item;           // per item
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> identified;  // FxF

    static ConstraintMeta from_catalog(const ItemCatalog& cat) {
        ConstraintMeta m;
        const int F = cat.n_factors();
        m.anchor_items.resize(static_cast<size_t>(F));
        for (int f = 0; f < F; ++f) m.anchor_items[static_cast<size_t>(f)] = cat.anchor_of(f);
        m.factor_of_item.resize(static_cast<size_t>(cat.n_items()));
        for (int i = 0; i < cat.n_items(); ++i)
            m.factor_of_item[static_cast<size_t>(i)] = cat.items()[static_cast<size_t>(i)].factor_index;

        // Psi entry (f,g) is identified iff some classroom type co-measures
        // items of factor f and factor g.
        std::vector<bool> obs_inf(static_cast<size_t>(F), false),
            obs_tod(static_cast<size_t>(F), false);
        for (const auto& it : cat.items()) {
            if (design_observable(it.block, AgeGroup::Infant))
                obs_inf[static_cast<size_t>(it.factor_index)] = true;
            if (design_observable(it.block, AgeGroup::Toddler))
                obs_tod[static_cast<size_t>(it.factor_index)] = true;
        }
        m.identified.resize(F, F);
        for (int f = 0; f < F; ++f)
            for (int g = 0; g < F; ++g)
                m.identified(f, g) =
                    (obs_inf[static_cast<size_t>(f)] && obs_inf[static_cast<size_t>(g)]) ||
                    (obs_tod[static_cast<size_t>(f)] && obs_tod[static_cast<size_t>(g)]);
        return m;
    }
};

// theta = {beta, Lambda, Psi, sigma2_alpha, sigma2_eps}.
struct ParameterSet {
    Eigen::VectorXd beta;     // I
    Eigen::MatrixXd lambda;   // I x F, structural zeros off f(i), anchors = 1
    Eigen::MatrixXd psi2;     // F x F symmetric positive definite
    double sigma2_alpha = 0.0;
    double sigma2_eps = 1.0;
    ConstraintMeta meta;

    int n_items() const { return static_cast<int>(beta.size()); }
    int n_factors() const { return static_cast<int>(psi2.rows()); }

    void validate() const {
        const int I = n_items(), F = n_factors();
        if (lambda.rows() != I || lambda.cols() != F)
            throw DimensionMismatch("lambda shape");
        for (int i = 0; i < I; ++i)
            for (int f = 0; f < F; ++f)
                if (f != meta.factor_of_item[static_cast<size_t>(i)] && lambda(i, f) != 0.0)
                    throw Error("nonzero cross-loading at item " + std::to_string(i));
        for (int f = 0; f < F; ++f)
            if (lambda(meta.anchor_items[static_cast<size_t>(f)], f) != 1.0)
                throw Error("anchor loading not fixed at 1 for factor " + std::to_string(f));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(psi2);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw Error("psi2 not positive definite");
        if (!(sigma2_eps > 0.0)) throw Error("sigma2_eps must be positive");
        if (sigma2_alpha < 0.0) throw Error("sigma2_alpha must be nonnegative");
    }
};

// Unconstrained optimization coordinates: free loadings, log-Cholesky factor
// of Psi (column-major lower triangle, log on the diagonal), log sigma2_alpha,
// log sigma2_eps. Item intercepts are profiled out by GLS and do not appear.
struct FreeCoords {
    // item indices of free (non-anchor) loadings, catalog order
    std::vector<int> free_items;
    int F = 0;

    static FreeCoords layout(const ConstraintMeta& meta) {
        FreeCoords fc;
        fc.F = static_cast<int>(meta.anchor_items.size());
        for (int i = 0; i < static_cast<int>(meta.factor_of_item.size()); ++i) {
            const int f = meta.factor_of_item[static_cast<size_t>(i)];
            if (meta.anchor_items[static_cast<size_t>(f)] != i) fc.free_items.push_back(i);
        }
        return fc;
    }

    int n_loadings() const { return static_cast<int>(free_items.size()); }
    int n_chol() const { return F * (F + 1) / 2; }
    int size() const { return n_loadings() + n_chol() + 2; }

    Eigen::VectorXd pack(const ParameterSet& p) const {
        Eigen::VectorXd x(size());
        int k = 0;
        for (int i : free_items)
            x[k++] = p.lambda(i, p.meta.factor_of_item[static_cast<size_t>(i)]);
        Eigen::LLT<Eigen::MatrixXd> llt(p.psi2);
        if (llt.info() != Eigen::Success)
            throw Error("psi2 not positive definite in pack()");
        Eigen::MatrixXd T = llt.matrixL();
        for (int c = 0; c < F; ++c)
            for (int r = c; r < F; ++r)
                x[k++] = (r == c) ? std::log(T(r, c)) : T(r, c);
        x[k++] = std::log(std::max(p.sigma2_alpha, 1e-12));
        x[k++] = std::log(p.sigma2_eps);
        return x;
    }

    // beta is left as provided (typically zero; it is profiled separately).
    ParameterSet unpack(const Eigen::VectorXd& x, const ConstraintMeta& meta,
                        int n_items) const {
        ParameterSet p;
        p.meta = meta;
        p.beta = Eigen::VectorXd::Zero(n_items);
        p.lambda = Eigen::MatrixXd::Zero(n_items, F);
        int k = 0;
        for (int i : free_items)
            p.lambda(i, meta.factor_of_item[static_cast<size_t>(i)]) = x[k++];
        for (int f = 0; f < F; ++f)
            p.lambda(meta.anchor_items[static_cast<size_t>(f)], f) = 1.0;
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(F, F);
        for (int c = 0; c < F; ++c)
            for (int r = c; r < F; ++r)
                T(r, c) = (r == c) ? std::exp(x[k++]) : x[k++];
        p.psi2 = T * T.transpose();
        p.sigma2_alpha = std::exp(x[k++]);
        p.sigma2_eps = std::exp(x[k++]);
        return p;
    }

    // Cholesky factor implied by coordinates (needed by the gradient chain rule).
    Eigen::MatrixXd chol_factor(const Eigen::VectorXd& x) const {
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(F, F);
        int k = n_loadings();
        for (int c = 0; c < F; ++c)
            for (int r = c; r < F; ++r)
                T(r, c) = (r == c) ? std::exp(x[k++]) : x[k++];
        return T;
    }
};

}  // namespace cqt

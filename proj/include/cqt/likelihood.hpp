#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cqt/bfgs.hpp"
#include "cqt/design.hpp"
#include "cqt/parameters.hpp"

namespace cqt {

namespace detail {

// Long-format system for one center: y = X beta + Z b + eps with
// b = (eta_1, ..., eta_J, alpha) and G = blockdiag(I_J (x) Psi, sigma2_alpha).
struct CenterSystem {
    Eigen::VectorXd y;
    Eigen::MatrixXd Z;             // n x (F*J + 1)
    std::vector<int> item_of_row;  // catalog item index per row
    std::vector<int> class_of_row; // classroom position per row
    int J = 0;
    int F = 0;
};

inline CenterSystem build_center_system(const CenterBlock& cb,
                                        const Eigen::MatrixXd& lambda) {
    CenterSystem s;
    s.J = static_cast<int>(cb.classrooms.size());
    s.F = static_cast<int>(lambda.cols());
    const int n = cb.n_rows();
    s.y.resize(n);
    s.Z = Eigen::MatrixXd::Zero(n, s.F * s.J + 1);
    s.item_of_row.reserve(static_cast<size_t>(n));
    s.class_of_row.reserve(static_cast<size_t>(n));
    int r = 0;
    for (int j = 0; j < s.J; ++j) {
        const auto& cls = cb.classrooms[static_cast<size_t>(j)];
        for (size_t t = 0; t < cls.item_indices.size(); ++t) {
            const int i = cls.item_indices[t];
            s.y[r] = cls.values[static_cast<Eigen::Index>(t)];
            s.Z.block(r, s.F * j, 1, s.F) = lambda.row(i);
            s.Z(r, s.F * s.J) = 1.0;
            s.item_of_row.push_back(i);
            s.class_of_row.push_back(j);
            ++r;
        }
    }
    return s;
}

inline Eigen::MatrixXd build_g(int J, int F, const Eigen::MatrixXd& psi,
                               double sigma2_alpha) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(F * J + 1, F * J + 1);
    for (int j = 0; j < J; ++j) G.block(F * j, F * j, F, F) = psi;
    G(F * J, F * J) = sigma2_alpha;
    return G;
}

inline Eigen::MatrixXd build_v(const CenterSystem& s, const Eigen::MatrixXd& G,
                               double sigma2_eps) {
    Eigen::MatrixXd V = s.Z * G * s.Z.transpose();
    V.diagonal().array() += sigma2_eps;
    return V;
}

}  // namespace detail

// Marginal Gaussian log-likelihood, summed over centers, each term evaluated
// on the observed sub-vector via a dense per-center Cholesky.
inline double marginal_loglik(const ParameterSet& theta, const DesignBundle& bundle) {
    constexpr double log2pi = 1.8378770664093454836;
    double ll = 0.0;
    const Eigen::MatrixXd psi = theta.psi2;
    for (const auto& cb : bundle.centers) {
        auto s = detail::build_center_system(cb, theta.lambda);
        const int n = static_cast<int>(s.y.size());
        Eigen::MatrixXd G = detail::build_g(s.J, s.F, psi, theta.sigma2_alpha);
        Eigen::MatrixXd V = detail::build_v(s, G, theta.sigma2_eps);
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("center " + cb.center_id);
        Eigen::VectorXd r = s.y;
        for (int t = 0; t < n; ++t) r[t] -= theta.beta[s.item_of_row[static_cast<size_t>(t)]];
        double logdet = 0.0;
        const auto& L = llt.matrixLLT();
        for (int t = 0; t < n; ++t) logdet += 2.0 * std::log(L(t, t));
        ll += -0.5 * n * log2pi - 0.5 * logdet - 0.5 * r.dot(llt.solve(r));
    }
    return ll;
}

// Same quantity through the low-rank (Woodbury) route; cross-checks the
// dense path. Requires sigma2_alpha > 0 so G is invertible.
inline double marginal_loglik_woodbury(const ParameterSet& theta,
                                       const DesignBundle& bundle) {
    constexpr double log2pi = 1.8378770664093454836;
    double ll = 0.0;
    for (const auto& cb : bundle.centers) {
        auto s = detail::build_center_system(cb, theta.lambda);
        const int n = static_cast<int>(s.y.size());
        Eigen::MatrixXd G = detail::build_g(s.J, s.F, theta.psi2, theta.sigma2_alpha);
        Eigen::LLT<Eigen::MatrixXd> gll(G);
        if (gll.info() != Eigen::Success)
            throw SingularCovariance("G in center " + cb.center_id);
        const double se2 = theta.sigma2_eps;
        Eigen::MatrixXd Ginv = gll.solve(
            Eigen::MatrixXd::Identity(G.rows(), G.cols()));
        Eigen::MatrixXd M = Ginv + s.Z.transpose() * s.Z / se2;
        Eigen::LLT<Eigen::MatrixXd> mll(M);
        if (mll.info() != Eigen::Success)
            throw SingularCovariance("Woodbury core in center " + cb.center_id);
        Eigen::VectorXd r = s.y;
        for (int t = 0; t < n; ++t) r[t] -= theta.beta[s.item_of_row[static_cast<size_t>(t)]];
        // log|V| = log|M| + log|G| + n log se2
        double logdet = n * std::log(se2);
        for (int t = 0; t < G.rows(); ++t)
            logdet += 2.0 * std::log(gll.matrixLLT()(t, t)) +
                      2.0 * std::log(mll.matrixLLT()(t, t));
        // r' V^-1 r = (r'r - (Z'r)' M^-1 (Z'r) / se2) / se2
        Eigen::VectorXd zr = s.Z.transpose() * r;
        const double quad = (r.squaredNorm() - zr.dot(mll.solve(zr)) / se2) / se2;
        ll += -0.5 * n * log2pi - 0.5 * logdet - 0.5 * quad;
    }
    return ll;
}

struct FitOptions {
    double rel_tol = 1e-9;
    double grad_tol = 1e-6;
    int max_iter = 500;
    double start_loading = 1.0;
    double start_psi_diag = 0.5;
    double start_sigma2_alpha = 0.1;
    double start_sigma2_eps = 0.5;
    double boundary_threshold = 1e-4;  // sigma2_alpha below this is flagged
};

struct FittedModel {
    ParameterSet theta_hat;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool boundary_sigma_alpha = false;
    double vk_condition_min = 0.0;
    double vk_condition_max = 0.0;
};

namespace detail {

// Profiled objective: beta solved by GLS at each point, gradient of the
// remaining coordinates by the chain rule through Z, the Psi Cholesky factor,
// and the log variance transforms.
class ProfiledLoglik {
  public:
    ProfiledLoglik(const DesignBundle& bundle, const ConstraintMeta& meta)
        : bundle_(bundle), meta_(meta), fc_(FreeCoords::layout(meta)) {}

    const FreeCoords& coords() const { return fc_; }

    // Returns log-likelihood at x with beta profiled; fills beta_hat.
    double value(const Eigen::VectorXd& x, Eigen::VectorXd* beta_hat = nullptr) const {
        ParameterSet p = fc_.unpack(x, meta_, bundle_.n_items);
        p.beta = profile_beta(p);
        if (beta_hat) *beta_hat = p.beta;
        return marginal_loglik(p, bundle_);
    }

    Eigen::VectorXd profile_beta(const ParameterSet& p) const {
        const int I = bundle_.n_items;
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(I, I);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(I);
        for (const auto& cb : bundle_.centers) {
            auto s = build_center_system(cb, p.lambda);
            Eigen::MatrixXd G = build_g(s.J, s.F, p.psi2, p.sigma2_alpha);
            Eigen::MatrixXd V = build_v(s, G, p.sigma2_eps);
            Eigen::LLT<Eigen::MatrixXd> llt(V);
            if (llt.info() != Eigen::Success)
                throw SingularCovariance("center " + cb.center_id);
            const int n = static_cast<int>(s.y.size());
            Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, I);
            for (int t = 0; t < n; ++t) X(t, s.item_of_row[static_cast<size_t>(t)]) = 1.0;
            Eigen::MatrixXd VX = llt.solve(X);
            A += X.transpose() * VX;
            b += VX.transpose() * s.y;
        }
        return A.ldlt().solve(b);
    }

    // Objective -loglik and gradient in free coordinates (beta profiled; its
    // first-order contribution vanishes at the GLS optimum). One factorization
    // per center feeds both the GLS profile and the gradient.
    double value_and_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
        constexpr double log2pi = 1.8378770664093454836;
        ParameterSet p = fc_.unpack(x, meta_, bundle_.n_items);
        const int F = fc_.F;
        const int I = bundle_.n_items;
        const Eigen::MatrixXd T = fc_.chol_factor(x);
        const size_t K = bundle_.centers.size();

        std::vector<CenterSystem> sys(K);
        std::vector<Eigen::MatrixXd> winv(K);
        std::vector<double> logdets(K, 0.0);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(I, I);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(I);

        for (size_t k = 0; k < K; ++k) {
            const auto& cb = bundle_.centers[k];
            sys[k] = build_center_system(cb, p.lambda);
            auto& s = sys[k];
            const int n = static_cast<int>(s.y.size());
            Eigen::MatrixXd G = build_g(s.J, s.F, p.psi2, p.sigma2_alpha);
            Eigen::MatrixXd V = build_v(s, G, p.sigma2_eps);
            Eigen::LLT<Eigen::MatrixXd> llt(V);
            if (llt.info() != Eigen::Success)
                throw SingularCovariance("center " + cb.center_id);
            const auto& L = llt.matrixLLT();
            for (int t = 0; t < n; ++t) logdets[k] += 2.0 * std::log(L(t, t));
            winv[k] = llt.solve(Eigen::MatrixXd::Identity(n, n));

            // X'WX and X'Wy with the indicator structure of X
            Eigen::VectorXd wy = winv[k] * s.y;
            for (int t1 = 0; t1 < n; ++t1) {
                const int i1 = s.item_of_row[static_cast<size_t>(t1)];
                b[i1] += wy[t1];
                for (int t2 = 0; t2 < n; ++t2)
                    A(i1, s.item_of_row[static_cast<size_t>(t2)]) += winv[k](t1, t2);
            }
        }
        p.beta = A.ldlt().solve(b);

        double ll = 0.0;
        Eigen::VectorXd grad_load = Eigen::VectorXd::Zero(fc_.n_loadings());
        Eigen::MatrixXd mgrad = Eigen::MatrixXd::Zero(F, F);  // d ll / d Psi
        double grad_sa = 0.0, grad_se = 0.0;

        // map item -> position in free_items
        std::vector<int> pos(static_cast<size_t>(I), -1);
        for (int k = 0; k < fc_.n_loadings(); ++k)
            pos[static_cast<size_t>(fc_.free_items[static_cast<size_t>(k)])] = k;

        Eigen::MatrixXd Gshared;  // rebuilt when J changes
        int g_built_for = -1;
        for (size_t k = 0; k < K; ++k) {
            auto& s = sys[k];
            const int n = static_cast<int>(s.y.size());
            const Eigen::MatrixXd& W = winv[k];
            if (s.J != g_built_for) {
                Gshared = build_g(s.J, s.F, p.psi2, p.sigma2_alpha);
                g_built_for = s.J;
            }
            Eigen::VectorXd r = s.y;
            for (int t = 0; t < n; ++t)
                r[t] -= p.beta[s.item_of_row[static_cast<size_t>(t)]];
            Eigen::VectorXd u = W * r;
            ll += -0.5 * n * log2pi - 0.5 * logdets[k] - 0.5 * r.dot(u);

            Eigen::MatrixXd Q = 0.5 * (u * u.transpose() - W);  // d ll / d V
            Eigen::MatrixXd QZ = Q * s.Z;

            // loadings: dV = dZ G Z' + Z G dZ'
            Eigen::MatrixXd P = QZ * Gshared;  // n x m
            for (int t = 0; t < n; ++t) {
                const int i = s.item_of_row[static_cast<size_t>(t)];
                const int kk = pos[static_cast<size_t>(i)];
                if (kk < 0) continue;
                const int f = meta_.factor_of_item[static_cast<size_t>(i)];
                grad_load[kk] += 2.0 * P(t, F * s.class_of_row[static_cast<size_t>(t)] + f);
            }
            // Psi: dV = sum_j Zj dPsi Zj'
            for (int j = 0; j < s.J; ++j)
                mgrad += s.Z.middleCols(F * j, F).transpose() * QZ.middleCols(F * j, F);
            // variances
            grad_sa += Q.sum();
            grad_se += Q.trace();
        }

        grad.resize(fc_.size());
        int k = 0;
        for (int i = 0; i < fc_.n_loadings(); ++i) grad[k++] = -grad_load[i];
        Eigen::MatrixXd gT = 2.0 * mgrad * T;  // mgrad is symmetric
        for (int c = 0; c < F; ++c)
            for (int rI = c; rI < F; ++rI)
                grad[k++] = -((rI == c) ? gT(rI, c) * T(rI, c) : gT(rI, c));
        grad[k++] = -grad_sa * p.sigma2_alpha;
        grad[k++] = -grad_se * p.sigma2_eps;
        return -ll;
    }

  private:
    const DesignBundle& bundle_;
    ConstraintMeta meta_;
    FreeCoords fc_;
};

}  // namespace detail

// Gradient of the profiled log-likelihood in free coordinates (anchors and
// profiled intercepts carry no entry). Order: free loadings, Psi log-Cholesky
// lower triangle, log sigma2_alpha, log sigma2_eps.
inline Eigen::VectorXd loglik_gradient(const ParameterSet& theta,
                                       const DesignBundle& bundle) {
    detail::ProfiledLoglik obj(bundle, theta.meta);
    Eigen::VectorXd g;
    obj.value_and_grad(obj.coords().pack(theta), g);
    return -g;  // back to the maximization convention
}

inline FittedModel fit_ml(const DesignBundle& bundle, const ItemCatalog& catalog,
                          const FitOptions& opts = {}) {
    ConstraintMeta meta = ConstraintMeta::from_catalog(catalog);
    detail::ProfiledLoglik obj(bundle, meta);
    const FreeCoords& fc = obj.coords();

    ParameterSet start;
    start.meta = meta;
    start.beta = Eigen::VectorXd::Zero(catalog.n_items());
    start.lambda = Eigen::MatrixXd::Zero(catalog.n_items(), catalog.n_factors());
    for (int i = 0; i < catalog.n_items(); ++i)
        start.lambda(i, meta.factor_of_item[static_cast<size_t>(i)]) = opts.start_loading;
    for (int f = 0; f < catalog.n_factors(); ++f)
        start.lambda(meta.anchor_items[static_cast<size_t>(f)], f) = 1.0;
    start.psi2 = opts.start_psi_diag *
                 Eigen::MatrixXd::Identity(catalog.n_factors(), catalog.n_factors());
    start.sigma2_alpha = opts.start_sigma2_alpha;
    start.sigma2_eps = opts.start_sigma2_eps;

    BfgsOptions bopts;
    bopts.rel_tol = opts.rel_tol;
    bopts.grad_tol = opts.grad_tol;
    bopts.max_iter = opts.max_iter;
    // optimize the per-observation objective so the tolerances are scale-free
    const double scale = 1.0 / std::max(1, bundle.total_rows());
    auto res = bfgs_minimize(
        [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
            // off-manifold trial points (V numerically non-PD) are rejected
            // by the line search via an infinite objective
            try {
                const double f = obj.value_and_grad(x, g);
                g *= scale;
                return f * scale;
            } catch (const SingularCovariance&) {
                g.setConstant(fc.size(), 0.0);
                return std::numeric_limits<double>::infinity();
            }
        },
        fc.pack(start), bopts);

    FittedModel fit;
    fit.theta_hat = fc.unpack(res.x, meta, catalog.n_items());
    fit.theta_hat.beta = obj.profile_beta(fit.theta_hat);
    fit.loglik = -res.fval / scale;
    fit.converged = res.converged;
    fit.iterations = res.iterations;
    fit.gradient_norm = res.grad.lpNorm<Eigen::Infinity>();
    fit.boundary_sigma_alpha = fit.theta_hat.sigma2_alpha < opts.boundary_threshold;

    double cmin = std::numeric_limits<double>::infinity(), cmax = 0.0;
    for (const auto& cb : bundle.centers) {
        auto s = detail::build_center_system(cb, fit.theta_hat.lambda);
        Eigen::MatrixXd G = detail::build_g(s.J, s.F, fit.theta_hat.psi2,
                                            fit.theta_hat.sigma2_alpha);
        Eigen::MatrixXd V = detail::build_v(s, G, fit.theta_hat.sigma2_eps);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V);
        const double c = es.eigenvalues().maxCoeff() /
                         std::max(es.eigenvalues().minCoeff(), 1e-300);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
    }
    fit.vk_condition_min = cmin;
    fit.vk_condition_max = cmax;
    return fit;
}

}  // namespace cqt

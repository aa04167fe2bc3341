#pragma once

// Brute-force reference implementations used only by tests. These are kept
// deliberately naive and do not share numerical kernels with the production
// code paths they check.

#include <Eigen/Dense>
#include <cmath>

#include "cqt/balance.hpp"
#include "cqt/design.hpp"
#include "cqt/parameters.hpp"

namespace cqt {

struct DensePosterior {
    Eigen::VectorXd mean;  // stacked (eta for each classroom, alpha)
    Eigen::MatrixXd cov;
    Eigen::MatrixXd prior;  // G for the Loewner check
};

// Direct joint-Gaussian conditioning for one center: assemble the full
// covariance of (b, y), then apply the textbook conditional formulas with a
// pivoted QR solve.
inline DensePosterior dense_conditioning_oracle(const ParameterSet& theta,
                                                const CenterBlock& cb) {
    const int F = theta.n_factors();
    const int J = static_cast<int>(cb.classrooms.size());
    const int nb = F * J + 1;
    const int n = cb.n_rows();

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nb, nb);
    for (int j = 0; j < J; ++j) G.block(F * j, F * j, F, F) = theta.psi2;
    G(nb - 1, nb - 1) = theta.sigma2_alpha;

    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, nb);
    Eigen::VectorXd r(n);
    int row = 0;
    for (int j = 0; j < J; ++j) {
        const auto& cls = cb.classrooms[static_cast<size_t>(j)];
        for (size_t t = 0; t < cls.item_indices.size(); ++t) {
            const int i = cls.item_indices[t];
            for (int f = 0; f < F; ++f) Z(row, F * j + f) = theta.lambda(i, f);
            Z(row, nb - 1) = 1.0;
            r[row] = cls.values[static_cast<Eigen::Index>(t)] - theta.beta[i];
            ++row;
        }
    }

    Eigen::MatrixXd cov_by = Z * G;                       // Cov(y, b)
    Eigen::MatrixXd vy = Z * G * Z.transpose();           // Cov(y)
    vy.diagonal().array() += theta.sigma2_eps;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vy);

    DensePosterior out;
    out.prior = G;
    out.mean = cov_by.transpose() * qr.solve(r);
    out.cov = G - cov_by.transpose() * qr.solve(cov_by);
    return out;
}

// KL-minimal feasible weights by infeasible-start Newton on the primal KKT
// system, with step-halving to stay strictly positive.
inline Eigen::VectorXd primal_balance_oracle(const BalanceProblem& problem) {
    Eigen::MatrixXd g = problem.balance_functions();
    const auto n = g.rows();
    Eigen::MatrixXd A(n, g.cols() + 1);  // columns: constraints then normalization
    A.leftCols(g.cols()) = g;
    A.col(g.cols()).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(A.cols());
    b[A.cols() - 1] = 1.0;
    const Eigen::VectorXd& q = problem.base_weights;

    Eigen::VectorXd w = q;
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(A.cols());
    auto residual = [&](const Eigen::VectorXd& wv, const Eigen::VectorXd& nuv,
                        Eigen::VectorXd& rd, Eigen::VectorXd& rp) {
        rd = (wv.array() / q.array()).log().matrix() + Eigen::VectorXd::Ones(n) + A * nuv;
        rp = A.transpose() * wv - b;
        return std::sqrt(rd.squaredNorm() + rp.squaredNorm());
    };

    Eigen::VectorXd rd, rp;
    double rnorm = residual(w, nu, rd, rp);
    for (int it = 0; it < 500; ++it) {
        if (rnorm < 1e-12) break;
        // eliminate dw = -W (rd + A dnu), W = diag(w)
        Eigen::MatrixXd AtWA = A.transpose() * w.asDiagonal() * A;
        Eigen::VectorXd rhs = rp - A.transpose() * (w.asDiagonal() * rd);
        Eigen::VectorXd dnu = AtWA.ldlt().solve(rhs);
        Eigen::VectorXd dw = -(w.array() * (rd + A * dnu).array()).matrix();

        double t = 1.0;
        bool moved = false;
        for (int hs = 0; hs < 60; ++hs) {
            Eigen::VectorXd wn = w + t * dw;
            if (wn.minCoeff() > 0.0) {
                Eigen::VectorXd rdn, rpn;
                const double rn = residual(wn, nu + t * dnu, rdn, rpn);
                if (rn < (1.0 - 0.25 * t) * rnorm + 1e-15) {
                    w = std::move(wn);
                    nu += t * dnu;
                    rd = std::move(rdn);
                    rp = std::move(rpn);
                    rnorm = rn;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if (!moved) break;
    }
    if (rnorm > 1e-8) throw InfeasibleConstraints("primal Newton stalled");
    return w;
}

}  // namespace cqt

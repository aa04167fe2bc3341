#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

namespace cqt {

struct BfgsResult {
    Eigen::VectorXd x;
    double fval = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd grad;
    int iterations = 0;
    bool converged = false;
};

struct BfgsOptions {
    double rel_tol = 1e-9;   // relative objective change
    double grad_tol = 1e-6;  // infinity norm of the gradient
    int max_iter = 500;
};

// Dense BFGS with a weak Wolfe line search (bisection bracketing) and
// scaled initial inverse Hessian. Minimizes f; fg must fill the gradient and
// return the objective (may return +inf outside the feasible region).
inline BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
    Eigen::VectorXd x0, const BfgsOptions& opts = {}) {
    constexpr double c1 = 1e-4;  // sufficient decrease
    constexpr double c2 = 0.9;   // curvature
    const int n = static_cast<int>(x0.size());
    BfgsResult res;
    res.x = std::move(x0);
    res.grad.resize(n);
    res.fval = fg(res.x, res.grad);
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian
    bool scaled = false;

    for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
        if (res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd p = -H * res.grad;
        double dir = p.dot(res.grad);
        if (!(dir < 0.0)) {  // reset on loss of descent
            H.setIdentity();
            scaled = false;
            p = -res.grad;
            dir = p.dot(res.grad);
        }

        // weak Wolfe by bisection: expand until curvature holds, shrink until
        // sufficient decrease holds
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double step = 1.0;
        double fnew = res.fval;
        Eigen::VectorXd xnew, gnew(n);
        bool ok = false;
        // allowance for rounding noise in the objective near the optimum
        const double fnoise = 4.0 * std::numeric_limits<double>::epsilon() *
                              (1.0 + std::abs(res.fval));
        for (int ls = 0; ls < 60; ++ls) {
            xnew = res.x + step * p;
            fnew = fg(xnew, gnew);
            if (!std::isfinite(fnew) || fnew > res.fval + c1 * step * dir + fnoise) {
                hi = step;
                step = 0.5 * (lo + hi);
            } else if (gnew.dot(p) < c2 * dir) {
                lo = step;
                step = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * step;
            } else {
                ok = true;
                break;
            }
        }
        // fall back to the best sufficient-decrease point if curvature was
        // never satisfied within the bisection budget
        if (!ok && std::isfinite(fnew) && fnew <= res.fval + c1 * step * dir + fnoise)
            ok = true;
        if (!ok) break;

        Eigen::VectorXd s = xnew - res.x;
        Eigen::VectorXd y = gnew - res.grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (!scaled) {
                H *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n) - rho * s * y.transpose();
            H = V * H * V.transpose() + rho * s * s.transpose();
        }
        const double prev = res.fval;
        res.x = std::move(xnew);
        res.fval = fnew;
        res.grad = std::move(gnew);
        if (std::abs(prev - res.fval) <
                opts.rel_tol * (std::abs(prev) + std::abs(res.fval) + 1e-10) &&
            res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
            res.converged = true;
            ++res.iterations;
            break;
        }
    }
    return res;
}

}  // namespace cqt

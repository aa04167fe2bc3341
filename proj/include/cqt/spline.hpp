#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "cqt/common.hpp"

namespace cqt {

// Cubic B-spline basis on a clamped knot vector. Second derivatives are
// piecewise linear, so the curvature penalty integral is exact under
// two-point Gauss-Legendre quadrature per knot span.
class BSplineBasis {
public:
    static constexpr int kOrder = 4;  // cubic

    static BSplineBasis from_quantiles(const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& w, int dim) {
        if (dim < kOrder + 1) throw ConfigError("basis dimension too small");
        const auto n = x.size();
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x[a] < x[b]; });
        const double lo = x[idx.front()], hi = x[idx.back()];
        if (!(hi > lo)) throw DegenerateDose("all doses equal");

        Eigen::VectorXd wn = w.size() == n
                                 ? Eigen::VectorXd(w / w.sum())
                                 : Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
        const int n_int = dim - kOrder;
        std::vector<double> interior;
        double cum = 0.0;
        size_t pos = 0;
        for (int j = 1; j <= n_int; ++j) {
            const double target = static_cast<double>(j) / (n_int + 1);
            while (pos < idx.size() && cum + wn[idx[pos]] < target)
                cum += wn[idx[pos++]];
            double v = pos < idx.size() ? x[idx[pos]] : hi;
            interior.push_back(v);
        }
        // enforce strictly increasing interior knots inside (lo, hi)
        double prev = lo;
        for (size_t j = 0; j < interior.size(); ++j) {
            const double remaining = static_cast<double>(interior.size() - j);
            const double ceiling = hi - 1e-9 * (hi - lo) * remaining;
            if (interior[j] <= prev || interior[j] >= ceiling)
                interior[j] = prev + (hi - prev) / (remaining + 1.0);
            prev = interior[j];
        }

        BSplineBasis b;
        b.knots_.resize(dim + kOrder);
        for (int i = 0; i < kOrder; ++i) b.knots_[i] = lo;
        for (int j = 0; j < n_int; ++j) b.knots_[kOrder + j] = interior[static_cast<size_t>(j)];
        for (int i = 0; i < kOrder; ++i) b.knots_[dim + i] = hi;
        return b;
    }

    int n_basis() const { return static_cast<int>(knots_.size()) - kOrder; }
    double lo() const { return knots_[kOrder - 1]; }
    double hi() const { return knots_[static_cast<size_t>(n_basis())]; }

    // Row of basis values (or d-th derivatives) at x; x is clamped to the
    // knot range so evaluation is defined everywhere.
    Eigen::VectorXd eval(double x, int deriv = 0) const {
        const int nb = n_basis();
        x = std::min(std::max(x, lo()), hi());
        const int base_order = kOrder - deriv;
        if (base_order < 1) return Eigen::VectorXd::Zero(nb);

        // order-1 indicators; the last span is closed on the right
        std::vector<double> cur(static_cast<size_t>(nb + kOrder - 1), 0.0);
        for (int i = 0; i < nb + kOrder - 1; ++i) {
            const double t0 = knots_[static_cast<size_t>(i)];
            const double t1 = knots_[static_cast<size_t>(i + 1)];
            const bool last = t1 >= hi() && t0 < t1;
            if ((x >= t0 && x < t1) || (last && x == t1)) cur[static_cast<size_t>(i)] = 1.0;
        }
        for (int m = 2; m <= base_order; ++m) {
            for (int i = 0; i < nb + kOrder - m; ++i) {
                const double d1 = knots_[static_cast<size_t>(i + m - 1)] - knots_[static_cast<size_t>(i)];
                const double d2 = knots_[static_cast<size_t>(i + m)] - knots_[static_cast<size_t>(i + 1)];
                double v = 0.0;
                if (d1 > 0.0) v += (x - knots_[static_cast<size_t>(i)]) / d1 * cur[static_cast<size_t>(i)];
                if (d2 > 0.0) v += (knots_[static_cast<size_t>(i + m)] - x) / d2 * cur[static_cast<size_t>(i + 1)];
                cur[static_cast<size_t>(i)] = v;
            }
        }
        for (int m = base_order + 1; m <= kOrder; ++m) {
            for (int i = 0; i < nb + kOrder - m; ++i) {
                const double d1 = knots_[static_cast<size_t>(i + m - 1)] - knots_[static_cast<size_t>(i)];
                const double d2 = knots_[static_cast<size_t>(i + m)] - knots_[static_cast<size_t>(i + 1)];
                double v = 0.0;
                if (d1 > 0.0) v += cur[static_cast<size_t>(i)] / d1;
                if (d2 > 0.0) v -= cur[static_cast<size_t>(i + 1)] / d2;
                cur[static_cast<size_t>(i)] = (m - 1) * v;
            }
        }
        Eigen::VectorXd out(nb);
        for (int i = 0; i < nb; ++i) out[i] = cur[static_cast<size_t>(i)];
        return out;
    }

    Eigen::MatrixXd design(const Eigen::VectorXd& x, int deriv = 0) const {
        Eigen::MatrixXd D(x.size(), n_basis());
        for (Eigen::Index i = 0; i < x.size(); ++i) D.row(i) = eval(x[i], deriv);
        return D;
    }

    // Exact integral of the outer product of second derivatives over the
    // knot range; null space is {constants, linears}.
    Eigen::MatrixXd curvature_penalty() const {
        const int nb = n_basis();
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nb, nb);
        const double node = 1.0 / std::sqrt(3.0);
        for (size_t j = kOrder - 1; j + 1 <= static_cast<size_t>(nb); ++j) {
            const double a = knots_[j], b = knots_[j + 1];
            if (!(b > a)) continue;
            const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
            for (double s : {-node, node}) {
                Eigen::VectorXd d2 = eval(mid + half * s, 2);
                S.noalias() += half * d2 * d2.transpose();
            }
        }
        return S;
    }

    const std::vector<double>& knots() const { return knots_; }

private:
    std::vector<double> knots_;
};

}  // namespace cqt

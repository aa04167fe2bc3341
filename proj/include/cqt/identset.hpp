#pragma once

#include <Eigen/Dense>

#include "cqt/common.hpp"

namespace cqt {

// Block partition of the factor covariance: A = common block, D/e = the two
// age-specific blocks, B/C their cross blocks with the common block, and f
// the candidate cross block between the disjoint age-specific factors.
struct BlockPartition {
    Eigen::MatrixXd A;  // q x q
    Eigen::MatrixXd B;  // q x t
    Eigen::VectorXd C;  // q
    Eigen::MatrixXd D;  // t x t
    double e = 0.0;
    Eigen::VectorXd f;  // t, candidate completion

    // Partition a full covariance with leading common block of size q and
    // age-specific blocks of sizes t and 1.
    static BlockPartition from_psi(const Eigen::MatrixXd& psi, int q, int t) {
        if (psi.rows() != q + t + 1)
            throw DimensionMismatch("psi partition sizes");
        BlockPartition p;
        p.A = psi.topLeftCorner(q, q);
        p.B = psi.block(0, q, q, t);
        p.C = psi.block(0, q + t, q, 1);
        p.D = psi.block(q, q, t, t);
        p.e = psi(q + t, q + t);
        p.f = psi.block(q, q + t, t, 1);
        return p;
    }

    Eigen::MatrixXd completed() const {
        const int q = static_cast<int>(A.rows());
        const int t = static_cast<int>(D.rows());
        Eigen::MatrixXd psi(q + t + 1, q + t + 1);
        psi.topLeftCorner(q, q) = A;
        psi.block(0, q, q, t) = B;
        psi.block(q, 0, t, q) = B.transpose();
        psi.block(0, q + t, q, 1) = C;
        psi.block(q + t, 0, 1, q) = C.transpose();
        psi.block(q, q, t, t) = D;
        psi.block(q, q + t, t, 1) = f;
        psi.block(q + t, q, 1, t) = f.transpose();
        psi(q + t, q + t) = e;
        return psi;
    }
};

struct Feasibility {
    bool feasible = false;
    double margin = 0.0;  // v minus the Schur quadratic form
    bool boundary = false;
};

inline constexpr double kBoundaryTol = 1e-8;

// Schur-complement feasibility of the candidate cross block: the completed
// covariance is positive definite iff M > 0, v > 0 and the quadratic form of
// (f - B'A^-1 C) in M^-1 stays below v.
inline Feasibility feasibility_check(const BlockPartition& p) {
    Eigen::LLT<Eigen::MatrixXd> allt(p.A);
    if (allt.info() != Eigen::Success) throw SingularA();
    Eigen::MatrixXd AinvB = allt.solve(p.B);
    Eigen::VectorXd AinvC = allt.solve(p.C);
    Eigen::MatrixXd M = p.D - p.B.transpose() * AinvB;
    const double v = p.e - p.C.dot(AinvC);
    Feasibility out;
    Eigen::LLT<Eigen::MatrixXd> mllt(M);
    if (mllt.info() != Eigen::Success || v <= 0.0) {
        out.feasible = false;
        out.margin = -std::numeric_limits<double>::infinity();
        return out;
    }
    Eigen::VectorXd center = p.B.transpose() * AinvC;
    Eigen::VectorXd d = p.f - center;
    const double qform = d.dot(mllt.solve(d));
    out.margin = v - qform;
    out.feasible = out.margin > 0.0;
    out.boundary = std::abs(out.margin) <= kBoundaryTol;
    return out;
}

// Completion under conditional independence of the two age-specific blocks
// given the common block: the center of the feasibility ellipsoid.
inline Eigen::VectorXd ci_completion(const BlockPartition& p) {
    Eigen::LLT<Eigen::MatrixXd> allt(p.A);
    if (allt.info() != Eigen::Success) throw SingularA();
    return p.B.transpose() * allt.solve(p.C);
}

}  // namespace cqt

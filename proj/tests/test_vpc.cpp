#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cqt/vpc.hpp"

using namespace cqt;

namespace {

// two items on one factor with distinct loadings
FittedModel two_item_model(double lam2, double psi, double s2a, double s2e) {
    ItemCatalog cat({{"a", Block::QCIT, 0, true, false, ""},
                     {"b", Block::QCIT, 0, false, false, ""}});
    FittedModel m;
    m.theta_hat.meta = ConstraintMeta::from_catalog(cat);
    m.theta_hat.beta = Eigen::VectorXd::Zero(2);
    m.theta_hat.lambda = Eigen::MatrixXd::Zero(2, 1);
    m.theta_hat.lambda(0, 0) = 1.0;
    m.theta_hat.lambda(1, 0) = lam2;
    m.theta_hat.psi2 = Eigen::MatrixXd::Constant(1, 1, psi);
    m.theta_hat.sigma2_alpha = s2a;
    m.theta_hat.sigma2_eps = s2e;
    m.converged = true;
    return m;
}

ItemCatalog two_item_catalog() {
    return ItemCatalog({{"a", Block::QCIT, 0, true, false, ""},
                        {"b", Block::QCIT, 0, false, false, ""}});
}

}  // namespace

TEST_CASE("single item share arithmetic") {
    // lambda .52, psi 1, s2a .5, s2e 1: v2 = .2704, total 1.7704
    auto m = two_item_model(0.52, 1.0, 0.5, 1.0);
    auto vpc = item_vpc(m, two_item_catalog());
    const auto& row = vpc.items[1];
    CHECK(row.v2 == doctest::Approx(0.2704).epsilon(1e-14));
    CHECK(row.pi2 == doctest::Approx(0.2704 / 1.7704).epsilon(1e-12));
    CHECK(row.pi2 == doctest::Approx(0.15273).epsilon(1e-4));
    CHECK(row.pi3 == doctest::Approx(0.5 / 1.7704).epsilon(1e-12));
}

TEST_CASE("shares sum to one per item") {
    auto m = two_item_model(0.7, 1.3, 0.21, 0.9);
    auto vpc = item_vpc(m, two_item_catalog());
    for (const auto& r : vpc.items)
        CHECK(std::abs(r.pi1 + r.pi2 + r.pi3 - 1.0) < 1e-12);
    CHECK(std::abs(vpc.pi1_bar + vpc.pi2_bar + vpc.pi3_bar - 1.0) < 1e-12);
}

TEST_CASE("overall shares pool level-2 variance, not per-item shares") {
    auto m = two_item_model(2.0, 1.0, 0.5, 1.0);
    auto vpc = item_vpc(m, two_item_catalog());
    const double v2_bar = 0.5 * (1.0 + 4.0);
    const double tot = v2_bar + 0.5 + 1.0;
    CHECK(vpc.pi2_bar == doctest::Approx(v2_bar / tot).epsilon(1e-12));
    const double mean_of_shares = 0.5 * (vpc.items[0].pi2 + vpc.items[1].pi2);
    CHECK(std::abs(vpc.pi2_bar - mean_of_shares) > 1e-3);  // genuinely different
}

TEST_CASE("composite split worked example") {
    // equal weights on two unit-loading items, psi 1, s2e 1, s2a 0:
    // level-2 share 2/3
    auto m = two_item_model(1.0, 1.0, 0.0, 1.0);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(2, 0.5);
    auto c = composite_vpc(m, w);
    CHECK(c.level2 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(c.level1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(c.level3 == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(c.level1 + c.level2 + c.level3 - 1.0) < 1e-12);
}

TEST_CASE("composite rejects degenerate input") {
    auto m = two_item_model(1.0, 1.0, 0.1, 1.0);
    CHECK_THROWS_AS(composite_vpc(m, Eigen::VectorXd::Ones(3)), DimensionMismatch);
    CHECK_THROWS_AS(composite_vpc(m, Eigen::VectorXd::Zero(2)), ZeroWeightVector);
}

TEST_CASE("factor correlation from covariance") {
    ItemCatalog cat({{"a", Block::QCIT, 0, true, false, ""},
                     {"b", Block::QCIT, 1, true, false, ""}});
    FittedModel m;
    m.theta_hat.meta = ConstraintMeta::from_catalog(cat);
    m.theta_hat.beta = Eigen::VectorXd::Zero(2);
    m.theta_hat.lambda = Eigen::MatrixXd::Identity(2, 2);
    m.theta_hat.psi2.resize(2, 2);
    m.theta_hat.psi2 << 4.0, 2.0, 2.0, 4.0;
    m.theta_hat.sigma2_alpha = 0.1;
    m.theta_hat.sigma2_eps = 1.0;
    auto fc = factor_correlations(m);
    CHECK(fc.corr(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(fc.corr(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(fc.point_identified(0, 1));

    m.theta_hat.psi2(0, 0) = 0.0;
    CHECK_THROWS_AS(factor_correlations(m), DegenerateFactor);
}

TEST_CASE("rescaling the factor leaves implied covariances unchanged") {
    auto m = two_item_model(0.8, 1.7, 0.3, 0.6);
    Eigen::VectorXd d = Eigen::VectorXd::Constant(1, 3.7);
    CHECK(rescaling_invariance_check(m, d) < 1e-10);
}

TEST_CASE("shares match Monte Carlo correlations") {
    // same item on two classrooms of a center shares only alpha: corr = pi3;
    // a replicate of the same classroom shares eta and alpha: corr = pi2+pi3
    const double lam = 0.52, psi = 1.0, s2a = 0.5, s2e = 1.0;
    auto m = two_item_model(lam, psi, s2a, s2e);
    auto vpc = item_vpc(m, two_item_catalog());
    const double pi2 = vpc.items[1].pi2, pi3 = vpc.items[1].pi3;

    std::mt19937_64 rng(99);
    std::normal_distribution<double> N(0.0, 1.0);
    const int R = 50000;
    double sxy_cross = 0.0, sxy_rep = 0.0, sxx = 0.0;
    for (int r = 0; r < R; ++r) {
        const double alpha = std::sqrt(s2a) * N(rng);
        const double eta1 = std::sqrt(psi) * N(rng), eta2 = std::sqrt(psi) * N(rng);
        const double y1 = lam * eta1 + alpha + std::sqrt(s2e) * N(rng);
        const double y2 = lam * eta2 + alpha + std::sqrt(s2e) * N(rng);
        const double y1rep = lam * eta1 + alpha + std::sqrt(s2e) * N(rng);
        sxy_cross += y1 * y2;
        sxy_rep += y1 * y1rep;
        sxx += y1 * y1;
    }
    const double var = sxx / R;
    const double corr_cross = (sxy_cross / R) / var;
    const double corr_rep = (sxy_rep / R) / var;
    const double tol = 3.0 / std::sqrt((double)R);
    CHECK(std::abs(corr_cross - pi3) < tol);
    CHECK(std::abs(corr_rep - (pi2 + pi3)) < tol);
}

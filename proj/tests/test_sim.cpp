#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "cqt/sim.hpp"

using namespace cqt;

namespace {

ParameterSet make_truth(double loading, double psi_off, double psi_diag,
                        double s2a, double s2e) {
    auto cat = default_catalog();
    ParameterSet t;
    t.meta = ConstraintMeta::from_catalog(cat);
    const int I = cat.n_items(), F = cat.n_factors();
    t.beta = Eigen::VectorXd::Zero(I);
    t.lambda = Eigen::MatrixXd::Zero(I, F);
    for (int i = 0; i < I; ++i) t.lambda(i, t.meta.factor_of_item[(size_t)i]) = loading;
    for (int f = 0; f < F; ++f) t.lambda(t.meta.anchor_items[(size_t)f], f) = 1.0;
    t.psi2 = Eigen::MatrixXd::Constant(F, F, psi_off);
    t.psi2.diagonal().setConstant(psi_diag);
    t.sigma2_alpha = s2a;
    t.sigma2_eps = s2e;
    return t;
}

}  // namespace

TEST_CASE("degenerate variances reproduce the intercepts exactly") {
    SimConfig cfg;
    cfg.seed = 99;
    cfg.n_centers = 4;
    cfg.classrooms_min = cfg.classrooms_max = 2;
    cfg.truth = make_truth(0.9, 0.0, 0.0, 0.0, 0.0);
    auto cat = default_catalog();
    for (int i = 0; i < cat.n_items(); ++i) cfg.truth.beta[i] = 0.1 * i - 1.0;
    auto sim = simulate_measurement(cfg);
    REQUIRE_FALSE(sim.frame.rows.empty());
    for (const auto& r : sim.frame.rows)
        CHECK(r.value ==
              doctest::Approx(0.1 * cat.item_index(r.item_id) - 1.0).epsilon(1e-14));
    for (const auto& c : sim.centers) CHECK(c.alpha == 0.0);
    for (const auto& c : sim.classrooms) CHECK(c.eta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identifiers are zero padded and rows obey the design") {
    SimConfig cfg;
    cfg.seed = 5;
    cfg.n_centers = 3;
    cfg.truth = make_truth(0.9, 0.2, 1.0, 0.3, 0.4);
    auto sim = simulate_measurement(cfg);
    CHECK(sim.centers[0].center_id == "C00000");
    CHECK(sim.classrooms[0].class_id == "R00000");
    auto cat = default_catalog();
    for (const auto& r : sim.frame.rows) {
        const auto& info = sim.frame.classroom(r.class_id);
        const auto& item = cat.items()[(size_t)cat.item_index(r.item_id)];
        CHECK(design_observable(item.block, info.group));
    }
    // assembles without violations
    CHECK_NOTHROW(assemble_design(sim.frame, cat));
}

TEST_CASE("same seed gives identical draws") {
    SimConfig cfg;
    cfg.seed = 321;
    cfg.n_centers = 6;
    cfg.n_covariates = 2;
    cfg.truth = make_truth(0.8, 0.3, 1.0, 0.3, 0.4);
    cfg.outcome.beta1 = Eigen::VectorXd::Constant(6, 0.5);
    cfg.outcome.beta_x = Eigen::VectorXd::Constant(2, 0.2);
    auto a = simulate_measurement(cfg);
    auto b = simulate_measurement(cfg);
    REQUIRE(a.frame.rows.size() == b.frame.rows.size());
    for (size_t i = 0; i < a.frame.rows.size(); ++i) {
        CHECK(a.frame.rows[i].item_id == b.frame.rows[i].item_id);
        CHECK(a.frame.rows[i].value == b.frame.rows[i].value);  // bitwise
    }
    for (size_t j = 0; j < a.classrooms.size(); ++j)
        CHECK(a.classrooms[j].outcome == b.classrooms[j].outcome);
}

TEST_CASE("adding centers never perturbs earlier substreams") {
    SimConfig small;
    small.seed = 77;
    small.n_centers = 8;
    small.truth = make_truth(0.8, 0.3, 1.0, 0.3, 0.4);
    SimConfig big = small;
    big.n_centers = 18;
    auto a = simulate_measurement(small);
    auto b = simulate_measurement(big);
    REQUIRE(b.frame.rows.size() > a.frame.rows.size());
    for (size_t i = 0; i < a.frame.rows.size(); ++i) {
        CHECK(a.frame.rows[i].class_id == b.frame.rows[i].class_id);
        CHECK(a.frame.rows[i].value == b.frame.rows[i].value);
    }
}

TEST_CASE("long-run moments match the variance components") {
    SimConfig cfg;
    cfg.seed = 2024;
    cfg.n_centers = 30000;
    cfg.classrooms_min = cfg.classrooms_max = 1;
    cfg.toddler_prob = 1.0;
    const double lam = 0.8, psi = 1.0, off = 0.3, s2a = 0.3, s2e = 0.4;
    cfg.truth = make_truth(lam, off, psi, s2a, s2e);
    auto sim = simulate_measurement(cfg);
    auto cat = default_catalog();

    // pick one non-anchor item and one anchor on the same factor
    const int ia = cat.anchor_of(0);
    int ib = -1;
    for (const auto& it : cat.items())
        if (it.factor_index == 0 && !it.is_anchor) {
            ib = cat.item_index(it.item_id);
            break;
        }
    REQUIRE(ib >= 0);
    std::map<std::string, std::pair<double, double>> pairs;  // class -> (ya, yb)
    for (const auto& r : sim.frame.rows) {
        const int idx = cat.item_index(r.item_id);
        if (idx == ia) pairs[r.class_id].first = r.value;
        if (idx == ib) pairs[r.class_id].second = r.value;
    }
    const double n = static_cast<double>(pairs.size());
    REQUIRE(n == 30000.0);
    double ma = 0, mb = 0;
    for (const auto& [id, p] : pairs) {
        ma += p.first;
        mb += p.second;
    }
    ma /= n;
    mb /= n;
    double va = 0, vb = 0, cab = 0;
    for (const auto& [id, p] : pairs) {
        va += (p.first - ma) * (p.first - ma);
        vb += (p.second - mb) * (p.second - mb);
        cab += (p.first - ma) * (p.second - mb);
    }
    va /= n - 1;
    vb /= n - 1;
    cab /= n - 1;
    // anchor variance 1*psi + s2a + s2e, non-anchor lam^2 psi + s2a + s2e,
    // within-classroom covariance lam*psi + s2a; 3-sigma Monte Carlo bands
    const double band = 3.0 * std::sqrt(2.0 / n) * 2.0;
    CHECK(va == doctest::Approx(psi + s2a + s2e).epsilon(band));
    CHECK(vb == doctest::Approx(lam * lam * psi + s2a + s2e).epsilon(band));
    CHECK(cab == doctest::Approx(lam * psi + s2a).epsilon(2.0 * band));
}

TEST_CASE("confounding splits eta into covariate and residual parts") {
    SimConfig cfg;
    cfg.seed = 404;
    cfg.n_centers = 20000;
    cfg.classrooms_min = cfg.classrooms_max = 1;
    cfg.truth = make_truth(0.9, 0.2, 1.0, 0.0, 0.4);
    cfg.n_covariates = 2;
    cfg.confound = Eigen::MatrixXd::Zero(6, 2);
    cfg.confound(0, 0) = 0.6;
    cfg.confound(1, 1) = 0.5;
    auto sim = simulate_measurement(cfg);
    const double n = static_cast<double>(sim.classrooms.size());
    Eigen::VectorXd m_eta = Eigen::VectorXd::Zero(6), m_x = Eigen::VectorXd::Zero(2);
    for (const auto& c : sim.classrooms) {
        m_eta += c.eta;
        m_x += c.covariates;
    }
    m_eta /= n;
    m_x /= n;
    Eigen::MatrixXd v_eta = Eigen::MatrixXd::Zero(6, 6);
    Eigen::MatrixXd c_ex = Eigen::MatrixXd::Zero(6, 2);
    for (const auto& c : sim.classrooms) {
        v_eta += (c.eta - m_eta) * (c.eta - m_eta).transpose();
        c_ex += (c.eta - m_eta) * (c.covariates - m_x).transpose();
    }
    v_eta /= n - 1;
    c_ex /= n - 1;
    // total factor covariance is still psi; cross covariance equals the map
    CHECK((v_eta - cfg.truth.psi2).cwiseAbs().maxCoeff() < 0.05);
    CHECK((c_ex - cfg.confound).cwiseAbs().maxCoeff() < 0.04);
}

TEST_CASE("outcome channel is exact without noise") {
    SimConfig cfg;
    cfg.seed = 11;
    cfg.n_centers = 5;
    cfg.n_covariates = 3;
    cfg.truth = make_truth(0.9, 0.2, 1.0, 0.3, 0.4);
    cfg.outcome.beta1 = Eigen::VectorXd::LinSpaced(6, 0.1, 0.6);
    cfg.outcome.beta_x = Eigen::VectorXd::LinSpaced(3, -0.2, 0.2);
    cfg.outcome.noise_sd = 0.0;
    auto sim = simulate_measurement(cfg);
    for (const auto& c : sim.classrooms) {
        REQUIRE(c.has_outcome);
        CHECK(c.outcome == doctest::Approx(cfg.outcome.beta1.dot(c.eta) +
                                           cfg.outcome.beta_x.dot(c.covariates))
                               .epsilon(1e-12));
    }
}

TEST_CASE("indefinite residual covariance is rejected") {
    SimConfig cfg;
    cfg.truth = make_truth(0.9, 0.2, 1.0, 0.3, 0.4);
    cfg.n_covariates = 1;
    cfg.confound = Eigen::MatrixXd::Zero(6, 1);
    cfg.confound(0, 0) = 2.0;  // more than the factor variance
    CHECK_THROWS_AS(simulate_measurement(cfg), ConfigError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cqt/eb.hpp"
#include "cqt/oracle.hpp"
#include "cqt/sim.hpp"

using namespace cqt;

namespace {

SimConfig make_truth(uint64_t seed, int centers) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.n_centers = centers;
    cfg.classrooms_min = 1;
    cfg.classrooms_max = 3;
    cfg.toddler_prob = 0.6;
    auto cat = default_catalog();
    auto meta = ConstraintMeta::from_catalog(cat);
    const int I = cat.n_items(), F = cat.n_factors();
    cfg.truth.meta = meta;
    cfg.truth.beta = Eigen::VectorXd::Zero(I);
    cfg.truth.lambda = Eigen::MatrixXd::Zero(I, F);
    for (int i = 0; i < I; ++i) cfg.truth.lambda(i, meta.factor_of_item[(size_t)i]) = 0.85;
    for (int f = 0; f < F; ++f) cfg.truth.lambda(meta.anchor_items[(size_t)f], f) = 1.0;
    cfg.truth.psi2 = Eigen::MatrixXd::Constant(F, F, 0.25);
    cfg.truth.psi2.diagonal().setConstant(1.0);
    cfg.truth.sigma2_alpha = 0.3;
    cfg.truth.sigma2_eps = 0.4;
    return cfg;
}

FittedModel as_model(const ParameterSet& p) {
    FittedModel m;
    m.theta_hat = p;
    m.converged = true;
    return m;
}

// one classroom, one item, lambda = 1: the scalar shrinkage configuration
DesignBundle scalar_bundle(double y) {
    DesignBundle b;
    b.n_items = 1;
    b.n_factors = 1;
    CenterBlock cb;
    cb.center_id = "c1";
    ClassroomBlock cls;
    cls.class_id = "r1";
    cls.item_indices = {0};
    cls.values.resize(1);
    cls.values << y;
    cb.classrooms.push_back(cls);
    b.centers.push_back(cb);
    return b;
}

ParameterSet scalar_params(double tau2, double s2) {
    ItemCatalog cat({{"a", Block::QCIT, 0, true, false, ""}});
    ParameterSet p;
    p.meta = ConstraintMeta::from_catalog(cat);
    p.beta = Eigen::VectorXd::Zero(1);
    p.lambda = Eigen::MatrixXd::Constant(1, 1, 1.0);
    p.psi2 = Eigen::MatrixXd::Constant(1, 1, tau2);
    p.sigma2_alpha = 0.0;
    p.sigma2_eps = s2;
    return p;
}

}  // namespace

TEST_CASE("eb_predict matches the dense conditioning oracle") {
    for (int rep = 0; rep < 100; ++rep) {
        auto cfg = make_truth(900 + rep, 1);
        auto sim = simulate_measurement(cfg);
        auto bundle = assemble_design(sim.frame, default_catalog());
        auto scores = eb_predict(as_model(cfg.truth), bundle);
        const auto& cb = bundle.centers[0];
        auto oracle = dense_conditioning_oracle(cfg.truth, cb);

        const int F = 6;
        for (size_t j = 0; j < cb.classrooms.size(); ++j) {
            const auto* cs = scores.find(cb.classrooms[j].class_id);
            REQUIRE(cs != nullptr);
            for (int f = 0; f < F; ++f) {
                CHECK(cs->eta_eb[f] ==
                      doctest::Approx(oracle.mean[F * (int)j + f]).epsilon(1e-9));
                for (int g = 0; g < F; ++g)
                    CHECK(std::abs(cs->post_cov(f, g) -
                                   oracle.cov(F * (int)j + f, F * (int)j + g)) < 1e-8);
            }
        }
        CHECK(scores.centers[0].alpha_eb ==
              doctest::Approx(oracle.mean[oracle.mean.size() - 1]).epsilon(1e-9));
        // conditioning can only reduce variance (Loewner order)
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(oracle.prior - oracle.cov);
        CHECK(es.eigenvalues().minCoeff() > -1e-10);
    }
}

TEST_CASE("residualized route equals joint conditioning") {
    auto cfg = make_truth(42, 12);
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    auto model = as_model(cfg.truth);
    auto joint = eb_predict(model, bundle);
    auto resid = eb_residualized(model, bundle, joint);
    REQUIRE(joint.classrooms.size() == resid.classrooms.size());
    for (size_t i = 0; i < joint.classrooms.size(); ++i)
        for (int f = 0; f < 6; ++f)
            CHECK(joint.classrooms[i].eta_eb[f] ==
                  doctest::Approx(resid.classrooms[i].eta_eb[f]).epsilon(2e-8));
}

TEST_CASE("eliminated per-center solve reproduces the classroom effects") {
    auto cfg = make_truth(77, 6);
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    auto model = as_model(cfg.truth);
    auto joint = eb_predict(model, bundle);
    size_t pos = 0;
    for (const auto& cb : bundle.centers) {
        Eigen::VectorXd stacked = eliminated_classroom_solve(model, cb);
        for (size_t j = 0; j < cb.classrooms.size(); ++j) {
            for (int f = 0; f < 6; ++f)
                CHECK(joint.classrooms[pos].eta_eb[f] ==
                      doctest::Approx(stacked[6 * (Eigen::Index)j + f]).epsilon(1e-8));
            ++pos;
        }
    }
}

TEST_CASE("partial-out operator annihilates the intercept direction correctly") {
    auto cfg = make_truth(5, 1);
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    const auto& cb = bundle.centers[0];
    auto model = as_model(cfg.truth);
    Eigen::MatrixXd M = partial_out_operator(model, cb);
    const int n = cb.n_rows();
    // direct ridge residual-maker: I - z (z'z/s2e + 1/s2a)^-1 z' / s2e
    const double s2e = cfg.truth.sigma2_eps, s2a = cfg.truth.sigma2_alpha;
    Eigen::MatrixXd direct = Eigen::MatrixXd::Identity(n, n);
    direct.array() -= 1.0 / ((n / s2e + 1.0 / s2a) * s2e);
    CHECK((M - direct).cwiseAbs().maxCoeff() < 1e-14);
    // symmetric and contracts the ones vector by the shrinkage ratio
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const double expected = 1.0 - n * s2a / (n * s2a + s2e);
    CHECK((M * ones - expected * ones).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero residual gives zero posterior mean") {
    auto cfg = make_truth(9, 1);
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    for (auto& cls : bundle.centers[0].classrooms) cls.values.setZero();
    auto scores = eb_predict(as_model(cfg.truth), bundle);
    for (const auto& c : scores.classrooms)
        CHECK(c.eta_eb.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(scores.centers[0].alpha_eb) < 1e-12);
}

TEST_CASE("directly_measured follows the design") {
    auto cfg = make_truth(13, 8);
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    auto scores = eb_predict(as_model(cfg.truth), bundle);
    for (const auto& cb : bundle.centers)
        for (const auto& cls : cb.classrooms) {
            const auto* cs = scores.find(cls.class_id);
            REQUIRE(cs != nullptr);
            for (int f = 0; f < 3; ++f) CHECK(cs->directly_measured[(size_t)f]);
            const bool toddler = cls.group == AgeGroup::Toddler;
            CHECK(cs->directly_measured[3] == toddler);
            CHECK(cs->directly_measured[4] == toddler);
            CHECK(cs->directly_measured[5] == !toddler);
        }
}

TEST_CASE("scalar shrinkage worked example") {
    // tau2 = s2 = 1, observation 2: posterior mean 1, posterior var 1/2
    auto scores = eb_predict(as_model(scalar_params(1.0, 1.0)), scalar_bundle(2.0));
    CHECK(scores.classrooms[0].eta_eb[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scores.classrooms[0].post_cov(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("scalar shrinkage Monte Carlo risk") {
    // eta ~ N(0,1), y = eta + e: posterior mean halves the squared risk
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> N(0.0, 1.0);
    const int R = 200000;
    double mse_eb = 0.0, mse_raw = 0.0;
    for (int r = 0; r < R; ++r) {
        const double eta = N(rng), y = eta + N(rng);
        mse_eb += (0.5 * y - eta) * (0.5 * y - eta);
        mse_raw += (y - eta) * (y - eta);
    }
    mse_eb /= R;
    mse_raw /= R;
    // 3 standard errors of the Monte Carlo mean
    CHECK(std::abs(mse_eb - 0.5) < 3.0 * std::sqrt(2.0 * 0.25 / R) * std::sqrt(2.0));
    CHECK(std::abs(mse_raw - 1.0) < 3.0 * std::sqrt(2.0 / R) * std::sqrt(2.0));
}

TEST_CASE("vanishing residual variance pins measured factors") {
    auto cfg = make_truth(31, 1);
    cfg.truth.sigma2_eps = 1e-8;
    auto sim = simulate_measurement(cfg);
    auto bundle = assemble_design(sim.frame, default_catalog());
    auto scores = eb_predict(as_model(cfg.truth), bundle);
    for (const auto& c : scores.classrooms)
        for (int f = 0; f < 6; ++f)
            if (c.directly_measured[(size_t)f])
                CHECK(c.post_cov(f, f) < 1e-6);
}

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cqt/catalog.hpp"
#include "cqt/design.hpp"
#include "cqt/frame.hpp"
#include "cqt/parameters.hpp"

namespace cqt {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct OutcomeModel {
    Eigen::VectorXd beta1;     // per-factor true linear effects on the outcome
    Eigen::VectorXd beta_x;    // direct covariate effects on the outcome
    double noise_sd = 1.0;
};

struct SimConfig {
    int n_centers = 50;
    int classrooms_min = 1;
    int classrooms_max = 3;
    double toddler_prob = 0.6;
    ParameterSet truth;
    uint64_t seed = 1;

    int n_covariates = 0;       // classroom covariates X ~ N(0, I)
    Eigen::MatrixXd confound;   // F x n_covariates map from X into eta
    OutcomeModel outcome;
};

struct ClassroomTruth {
    std::string class_id;
    std::string center_id;
    AgeGroup group = AgeGroup::Toddler;
    Eigen::VectorXd eta;
    Eigen::VectorXd covariates;
    double outcome = 0.0;
    bool has_outcome = false;
};

struct CenterTruth {
    std::string center_id;
    double alpha = 0.0;
};

struct SimResult {
    ObservationFrame frame;
    std::vector<ClassroomTruth> classrooms;
    std::vector<CenterTruth> centers;
};

namespace detail {

inline std::string padded_id(const char* prefix, int k, int width = 5) {
    std::string s = std::to_string(k);
    if (static_cast<int>(s.size()) < width)
        s.insert(0, static_cast<size_t>(width - static_cast<int>(s.size())), '0');
    return prefix + s;
}

}  // namespace detail

// Draws from the full generative model and emits only design-permitted rows.
// Each center gets its own RNG substream, so adding centers never perturbs
// the draws of earlier ones.
inline SimResult simulate_measurement(const SimConfig& cfg,
                                      const ItemCatalog& catalog = default_catalog()) {
    const int F = cfg.truth.n_factors();
    const int I = cfg.truth.n_items();
    if (I != catalog.n_items()) throw DimensionMismatch("truth vs catalog items");
    const bool confounded = cfg.n_covariates > 0 && cfg.confound.size() > 0;

    // square root via eigendecomposition so semidefinite cases (zero factor
    // variance, confounding soaking up all of psi) are still valid
    Eigen::MatrixXd resid = cfg.truth.psi2;
    if (confounded) resid -= cfg.confound * cfg.confound.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(resid);
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw ConfigError("residual factor covariance not positive semidefinite");
    Eigen::MatrixXd psi_chol =
        es.eigenvectors() *
        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();

    SimResult out;
    int next_class = 0;
    for (int k = 0; k < cfg.n_centers; ++k) {
        // per-center stream from the splitmix64 sequence; hashing the seed
        // first keeps streams uncorrelated across nearby seeds
        std::mt19937_64 rng(splitmix64(splitmix64(cfg.seed) +
                                       0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(k)));
        std::normal_distribution<double> N(0.0, 1.0);
        std::uniform_real_distribution<double> U(0.0, 1.0);

        const std::string center_id = detail::padded_id("C", k);
        CenterTruth ct;
        ct.center_id = center_id;
        ct.alpha = std::sqrt(cfg.truth.sigma2_alpha) * N(rng);
        out.centers.push_back(ct);

        const int nj = cfg.classrooms_min +
                       (cfg.classrooms_max > cfg.classrooms_min
                            ? static_cast<int>(U(rng) * (cfg.classrooms_max - cfg.classrooms_min + 1))
                            : 0);
        for (int j = 0; j < std::max(1, std::min(nj, cfg.classrooms_max)); ++j) {
            ClassroomTruth cls;
            cls.class_id = detail::padded_id("R", next_class++);
            cls.center_id = center_id;
            cls.group = U(rng) < cfg.toddler_prob ? AgeGroup::Toddler : AgeGroup::Infant;

            Eigen::VectorXd x = Eigen::VectorXd::Zero(cfg.n_covariates);
            for (int q = 0; q < cfg.n_covariates; ++q) x[q] = N(rng);
            cls.covariates = x;
            Eigen::VectorXd xi(F);
            for (int f = 0; f < F; ++f) xi[f] = N(rng);
            cls.eta = psi_chol * xi;
            if (confounded) cls.eta += cfg.confound * x;

            out.frame.classrooms[cls.class_id] = ClassroomInfo{center_id, cls.group};
            for (const auto& item : catalog.items()) {
                if (!design_observable(item.block, cls.group)) continue;
                const int i = catalog.item_index(item.item_id);
                const int f = item.factor_index;
                double y = cfg.truth.beta[i] + cfg.truth.lambda(i, f) * cls.eta[f] +
                           ct.alpha + std::sqrt(cfg.truth.sigma2_eps) * N(rng);
                out.frame.rows.push_back({center_id, cls.class_id, item.item_id, y});
            }

            if (cfg.outcome.beta1.size() == F) {
                double z = cfg.outcome.beta1.dot(cls.eta);
                if (cfg.outcome.beta_x.size() == x.size()) z += cfg.outcome.beta_x.dot(x);
                z += cfg.outcome.noise_sd * N(rng);
                cls.outcome = z;
                cls.has_outcome = true;
            }
            out.classrooms.push_back(std::move(cls));
        }
    }
    return out;
}

}  // namespace cqt

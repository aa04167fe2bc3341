// cqt: two-stage classroom-quality toolkit.
// Stage 1: latent-factor measurement model (fit, scores, decompose, identify).
// Stage 2: balancing weights and dose-response fits (balance, drf).

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cqt/balance.hpp"
#include "cqt/design.hpp"
#include "cqt/drf.hpp"
#include "cqt/eb.hpp"
#include "cqt/identset.hpp"
#include "cqt/io.hpp"
#include "cqt/likelihood.hpp"
#include "cqt/pipeline.hpp"
#include "cqt/sim.hpp"
#include "cqt/vpc.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct RunContext {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 1;
    int threads = 1;
    cqt::KeyValueConfig cfg;
    std::string hash;
    std::vector<std::string> artifacts;
    std::vector<std::string> flags;

    void load() {
        if (!config_path.empty()) cfg = cqt::load_config(config_path);
        if (cfg.has("seed")) seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
        hash = cqt::hex64(cqt::fnv1a64(cfg.raw_text + "|seed=" + std::to_string(seed)));
        fs::create_directories(out_dir);
    }
    std::string header() const { return cqt::artifact_header(hash); }
    std::string path(const std::string& name) {
        artifacts.push_back(name);
        return (fs::path(out_dir) / name).string();
    }
    void manifest(const std::string& command) {
        json m;
        m["tool"] = "cqt";
        m["version"] = cqt::kVersion;
        m["command"] = command;
        m["config_hash"] = hash;
        m["seed"] = seed;
        m["artifacts"] = artifacts;
        m["flags"] = flags;
        std::ofstream out(fs::path(out_dir) / (command + "_manifest.json"));
        out << m.dump(2) << "\n";
    }
};

cqt::ItemCatalog catalog_for(const RunContext& ctx) {
    const std::string p = ctx.cfg.get("paths.catalog");
    return p.empty() ? cqt::default_catalog() : cqt::load_catalog(p);
}

std::string required_path(const RunContext& ctx, const std::string& key) {
    const std::string p = ctx.cfg.get(key);
    if (p.empty()) throw cqt::ConfigError("config is missing " + key);
    if (!fs::exists(p)) throw cqt::IoError("path does not exist: " + p + " (" + key + ")");
    return p;
}

cqt::DesignBundle load_bundle(const RunContext& ctx, const cqt::ItemCatalog& cat) {
    auto frame = cqt::load_observations(required_path(ctx, "paths.items"),
                                        required_path(ctx, "paths.classrooms"));
    auto std_frame = cqt::standardize_items(frame, cat);
    return cqt::assemble_design(std_frame, cat);
}

cqt::FitOptions fit_options(const RunContext& ctx) {
    cqt::FitOptions o;
    o.rel_tol = ctx.cfg.get_double("fit.rel_tol", o.rel_tol);
    o.grad_tol = ctx.cfg.get_double("fit.grad_tol", o.grad_tol);
    o.max_iter = static_cast<int>(ctx.cfg.get_int("fit.max_iter", o.max_iter));
    return o;
}

cqt::FittedModel run_fit(RunContext& ctx, const cqt::ItemCatalog& cat,
                         const cqt::DesignBundle& bundle) {
    auto fit = cqt::fit_ml(bundle, cat, fit_options(ctx));
    if (!fit.converged) ctx.flags.push_back("fit_not_converged");
    if (fit.boundary_sigma_alpha) ctx.flags.push_back("sigma2_alpha_boundary");
    return fit;
}

cqt::FittedModel load_fitted(const RunContext& ctx, const cqt::ItemCatalog& cat) {
    cqt::FittedModel m;
    m.theta_hat = cqt::read_parameters(required_path(ctx, "paths.parameters"), cat);
    m.converged = true;
    return m;
}

int cmd_fit(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto bundle = load_bundle(ctx, cat);
    auto fit = run_fit(ctx, cat, bundle);
    cqt::write_parameters(fit, cat, ctx.path("parameters.csv"), ctx.header());
    {
        cqt::CsvWriter w(ctx.path("fit_report.csv"), ctx.header());
        w.header({"loglik", "converged", "iterations", "gradient_norm",
                  "boundary_sigma_alpha", "vk_condition_max"});
        w.row_strings({cqt::format_double(fit.loglik), fit.converged ? "1" : "0",
                       std::to_string(fit.iterations),
                       cqt::format_double(fit.gradient_norm),
                       fit.boundary_sigma_alpha ? "1" : "0",
                       cqt::format_double(fit.vk_condition_max)});
    }
    ctx.manifest("fit");
    return ctx.flags.empty() ? 0 : 2;
}

int cmd_scores(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto bundle = load_bundle(ctx, cat);
    cqt::FittedModel fit = ctx.cfg.has("paths.parameters")
                               ? load_fitted(ctx, cat)
                               : run_fit(ctx, cat, bundle);
    auto scores = cqt::eb_predict(fit, bundle);
    cqt::write_scores(scores, cat, ctx.path("scores.csv"),
                      ctx.path("center_scores.csv"), ctx.header());
    ctx.manifest("scores");
    return ctx.flags.empty() ? 0 : 2;
}

int cmd_decompose(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    cqt::FittedModel fit;
    if (ctx.cfg.has("paths.parameters")) {
        fit = load_fitted(ctx, cat);
    } else {
        auto bundle = load_bundle(ctx, cat);
        fit = run_fit(ctx, cat, bundle);
    }
    auto vpc = cqt::item_vpc(fit, cat);
    cqt::write_vpc(vpc, cat, ctx.path("vpc.csv"), ctx.header());
    {
        auto corr = cqt::factor_correlations(fit);
        cqt::CsvWriter w(ctx.path("factor_correlations.csv"), ctx.header());
        std::vector<std::string> head = {"factor"};
        for (int f = 0; f < cat.n_factors(); ++f) head.push_back(cat.factor_name(f));
        w.header(head);
        for (int f = 0; f < cat.n_factors(); ++f) {
            std::vector<std::string> row = {cat.factor_name(f)};
            for (int g = 0; g < cat.n_factors(); ++g)
                row.push_back(corr.point_identified(f, g)
                                  ? cqt::format_double(corr.corr(f, g))
                                  : "NA");
            w.row_strings(row);
        }
    }
    ctx.manifest("decompose");
    return ctx.flags.empty() ? 0 : 2;
}

int cmd_identify(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    cqt::FittedModel fit;
    if (ctx.cfg.has("paths.parameters")) {
        fit = load_fitted(ctx, cat);
    } else {
        auto bundle = load_bundle(ctx, cat);
        fit = run_fit(ctx, cat, bundle);
    }
    const int q = static_cast<int>(ctx.cfg.get_int("identify.common_block", 3));
    const int t = static_cast<int>(ctx.cfg.get_int("identify.toddler_block", 2));
    auto part = cqt::BlockPartition::from_psi(fit.theta_hat.psi2, q, t);
    auto feas = cqt::feasibility_check(part);
    auto center = cqt::ci_completion(part);

    json rep;
    rep["feasible"] = feas.feasible;
    rep["margin"] = feas.margin;
    rep["boundary"] = feas.boundary;
    rep["fitted_cross_block"] = std::vector<double>(part.f.data(), part.f.data() + part.f.size());
    rep["ci_completion"] = std::vector<double>(center.data(), center.data() + center.size());
    std::ofstream out(ctx.path("feasibility.json"));
    out << rep.dump(2) << "\n";
    if (feas.boundary) ctx.flags.push_back("feasibility_boundary");
    ctx.manifest("identify");
    return ctx.flags.empty() ? 0 : 2;
}

int cmd_balance(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto scores = cqt::read_scores(required_path(ctx, "paths.scores"));
    auto cov = cqt::load_covariates(required_path(ctx, "paths.covariates"));
    const std::string factor = ctx.cfg.get("balance.factor", cat.factor_name(0));
    auto it = scores.find(factor);
    if (it == scores.end()) throw cqt::ConfigError("no scores for factor " + factor);

    std::vector<const cqt::ScoreRecord*> used;
    for (const auto& rec : it->second)
        if (rec.directly_measured && cov.row_of(rec.class_id) >= 0) used.push_back(&rec);
    const auto n = static_cast<Eigen::Index>(used.size());
    Eigen::VectorXd dose(n);
    Eigen::MatrixXd x(n, cov.x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        dose[i] = used[static_cast<size_t>(i)]->eb_mean;
        x.row(i) = cov.x.row(cov.row_of(used[static_cast<size_t>(i)]->class_id));
    }
    auto pb = cqt::BalanceProblem::make(
        dose, x, static_cast<int>(ctx.cfg.get_int("balance.poly_order", 2)));
    pb.covariate_names = cov.names;
    const std::string method = ctx.cfg.get("balance.method", "ebct");
    cqt::WeightSet ws = method == "gps_glm" ? cqt::gps_glm_weights(dose, x)
                                            : cqt::ebct_solve(pb);

    {
        cqt::CsvWriter w(ctx.path("weights.csv"), ctx.header());
        w.header({"class_id", "weight", "method"});
        for (Eigen::Index i = 0; i < n; ++i)
            w.row_strings({used[static_cast<size_t>(i)]->class_id,
                           cqt::format_double(ws.weights[i]),
                           method == "gps_glm" ? "gps_glm" : "ebct"});
    }
    {
        auto table = cqt::balance_table(ws, pb);
        auto slopes = cqt::pseudo_drf_flatness(ws, pb);
        cqt::CsvWriter w(ctx.path("balance_diagnostics.csv"), ctx.header());
        w.header({"covariate", "corr_unweighted", "corr_weighted", "pseudo_drf_slope"});
        double max_corr = 0.0;
        for (size_t c = 0; c < table.size(); ++c) {
            w.row_strings({table[c].covariate,
                           table[c].applicable ? cqt::format_double(table[c].corr_unweighted) : "NA",
                           table[c].applicable ? cqt::format_double(table[c].corr_weighted) : "NA",
                           slopes[c].applicable ? cqt::format_double(slopes[c].slope) : "NA"});
            if (table[c].applicable)
                max_corr = std::max(max_corr, std::abs(table[c].corr_weighted));
        }
        std::cout << "balance: factor=" << factor << " n=" << n
                  << " ess=" << cqt::format_double(ws.diagnostics.ess)
                  << " max_weighted_abs_corr=" << cqt::format_double(max_corr) << "\n";
    }
    ctx.manifest("balance");
    return ctx.flags.empty() ? 0 : 2;
}

cqt::DrfOptions drf_options(const RunContext& ctx) {
    cqt::DrfOptions o;
    o.poly_order = static_cast<int>(ctx.cfg.get_int("balance.poly_order", o.poly_order));
    o.basis_dim = static_cast<int>(ctx.cfg.get_int("drf.basis_dim", o.basis_dim));
    o.grid_size = static_cast<int>(ctx.cfg.get_int("drf.grid_size", o.grid_size));
    return o;
}

int run_drf(RunContext& ctx, const cqt::ItemCatalog& cat,
            const cqt::FactorScoreSet& scores, const std::string& command) {
    auto cov = cqt::load_covariates(required_path(ctx, "paths.covariates"));
    auto outcomes = cqt::load_outcomes(required_path(ctx, "paths.outcomes"));
    auto table = cqt::drf_pipeline(scores, cat, outcomes, cov, drf_options(ctx));
    cqt::write_drf_table(table, ctx.path("drf_table.csv"), ctx.header());
    cqt::write_curves(table, ctx.path("drf_curves.csv"), ctx.header());
    if (!table.skipped.empty()) {
        ctx.flags.push_back("drf_cells_skipped");
        for (const auto& s : table.skipped)
            std::cerr << "skipped " << s.outcome << " x " << s.factor << ": "
                      << s.reason << "\n";
    }
    ctx.manifest(command);
    return ctx.flags.empty() ? 0 : 2;
}

int cmd_drf(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto by_factor = cqt::read_scores(required_path(ctx, "paths.scores"));
    // rebuild a FactorScoreSet from the exported per-factor records
    cqt::FactorScoreSet scores;
    const int F = cat.n_factors();
    const auto& first = by_factor.begin()->second;
    for (size_t i = 0; i < first.size(); ++i) {
        cqt::ClassroomScore cs;
        cs.class_id = first[i].class_id;
        cs.center_id = first[i].center_id;
        cs.eta_eb = Eigen::VectorXd::Zero(F);
        cs.post_cov = Eigen::MatrixXd::Zero(F, F);
        cs.directly_measured.assign(static_cast<size_t>(F), false);
        for (int f = 0; f < F; ++f) {
            auto it = by_factor.find(cat.factor_name(f));
            if (it == by_factor.end() || it->second.size() != first.size())
                throw cqt::IoError("scores file is missing factor " + cat.factor_name(f));
            cs.eta_eb[f] = it->second[i].eb_mean;
            cs.post_cov(f, f) = it->second[i].post_var;
            cs.directly_measured[static_cast<size_t>(f)] = it->second[i].directly_measured;
        }
        scores.classrooms.push_back(std::move(cs));
    }
    return run_drf(ctx, cat, scores, "drf");
}

cqt::SimConfig sim_config(const RunContext& ctx, const cqt::ItemCatalog& cat) {
    cqt::SimConfig sc;
    sc.seed = ctx.seed;
    sc.n_centers = static_cast<int>(ctx.cfg.get_int("sim.centers", 50));
    sc.classrooms_min = static_cast<int>(ctx.cfg.get_int("sim.classrooms_min", 1));
    sc.classrooms_max = static_cast<int>(ctx.cfg.get_int("sim.classrooms_max", 3));
    sc.toddler_prob = ctx.cfg.get_double("sim.toddler_prob", 0.6);

    const int I = cat.n_items(), F = cat.n_factors();
    auto meta = cqt::ConstraintMeta::from_catalog(cat);
    sc.truth.meta = meta;
    sc.truth.beta = Eigen::VectorXd::Zero(I);
    sc.truth.lambda = Eigen::MatrixXd::Zero(I, F);
    const double loading = ctx.cfg.get_double("sim.loading", 0.9);
    for (int i = 0; i < I; ++i)
        sc.truth.lambda(i, meta.factor_of_item[static_cast<size_t>(i)]) = loading;
    for (int f = 0; f < F; ++f)
        sc.truth.lambda(meta.anchor_items[static_cast<size_t>(f)], f) = 1.0;
    const double pd = ctx.cfg.get_double("sim.psi_diag", 1.0);
    const double po = ctx.cfg.get_double("sim.psi_offdiag", 0.3);
    sc.truth.psi2 = Eigen::MatrixXd::Constant(F, F, po * pd);
    sc.truth.psi2.diagonal().setConstant(pd);
    sc.truth.sigma2_alpha = ctx.cfg.get_double("sim.sigma2_alpha", 0.3);
    sc.truth.sigma2_eps = ctx.cfg.get_double("sim.sigma2_eps", 0.4);

    sc.n_covariates = static_cast<int>(ctx.cfg.get_int("sim.n_covariates", 0));
    const double conf = ctx.cfg.get_double("sim.confound", 0.0);
    if (sc.n_covariates > 0 && conf != 0.0) {
        sc.confound = Eigen::MatrixXd::Zero(F, sc.n_covariates);
        for (int f = 0; f < F; ++f)
            sc.confound(f, f % sc.n_covariates) = conf;
    }
    if (ctx.cfg.has("sim.outcome_betas")) {
        std::stringstream ss(ctx.cfg.get("sim.outcome_betas"));
        std::vector<double> b;
        std::string tok;
        while (std::getline(ss, tok, ',')) b.push_back(cqt::parse_double(tok));
        if (static_cast<int>(b.size()) != F)
            throw cqt::ConfigError("sim.outcome_betas must list one effect per factor");
        sc.outcome.beta1 = Eigen::Map<Eigen::VectorXd>(b.data(), F);
        sc.outcome.beta_x = Eigen::VectorXd::Constant(
            sc.n_covariates, ctx.cfg.get_double("sim.outcome_beta_x", 0.0));
        sc.outcome.noise_sd = ctx.cfg.get_double("sim.outcome_noise_sd", 1.0);
    }
    return sc;
}

int cmd_simulate(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto sim = cqt::simulate_measurement(sim_config(ctx, cat), cat);
    {
        cqt::CsvWriter w(ctx.path("items.csv"), ctx.header());
        w.header({"center_id", "class_id", "item_id", "value"});
        for (const auto& r : sim.frame.rows)
            w.row_strings({r.center_id, r.class_id, r.item_id, cqt::format_double(r.value)});
    }
    {
        cqt::CsvWriter w(ctx.path("classrooms.csv"), ctx.header());
        w.header({"class_id", "center_id", "age_group"});
        for (const auto& [id, info] : sim.frame.classrooms)
            w.row_strings({id, info.center_id, cqt::to_string(info.group)});
    }
    {
        cqt::CsvWriter w(ctx.path("truth_classrooms.csv"), ctx.header());
        std::vector<std::string> head = {"class_id", "center_id"};
        for (int f = 0; f < cat.n_factors(); ++f) head.push_back("eta_" + cat.factor_name(f));
        w.header(head);
        for (const auto& c : sim.classrooms) {
            std::vector<std::string> row = {c.class_id, c.center_id};
            for (int f = 0; f < cat.n_factors(); ++f)
                row.push_back(cqt::format_double(c.eta[f]));
            w.row_strings(row);
        }
    }
    {
        cqt::CsvWriter w(ctx.path("truth_centers.csv"), ctx.header());
        w.header({"center_id", "alpha"});
        for (const auto& c : sim.centers)
            w.row_strings({c.center_id, cqt::format_double(c.alpha)});
    }
    if (!sim.classrooms.empty() && sim.classrooms.front().covariates.size() > 0) {
        cqt::CsvWriter w(ctx.path("covariates.csv"), ctx.header());
        std::vector<std::string> head = {"class_id"};
        for (Eigen::Index c = 0; c < sim.classrooms.front().covariates.size(); ++c)
            head.push_back("x" + std::to_string(c + 1));
        w.header(head);
        for (const auto& cls : sim.classrooms) {
            std::vector<std::string> row = {cls.class_id};
            for (Eigen::Index c = 0; c < cls.covariates.size(); ++c)
                row.push_back(cqt::format_double(cls.covariates[c]));
            w.row_strings(row);
        }
    }
    if (!sim.classrooms.empty() && sim.classrooms.front().has_outcome) {
        cqt::CsvWriter w(ctx.path("outcomes.csv"), ctx.header());
        w.header({"class_id", "center_id", "outcome"});
        for (const auto& cls : sim.classrooms)
            w.row_strings({cls.class_id, cls.center_id, cqt::format_double(cls.outcome)});
    }
    ctx.manifest("simulate");
    return 0;
}

int cmd_pipeline(RunContext& ctx) {
    auto cat = catalog_for(ctx);
    auto bundle = load_bundle(ctx, cat);
    auto fit = run_fit(ctx, cat, bundle);
    cqt::write_parameters(fit, cat, ctx.path("parameters.csv"), ctx.header());
    auto scores = cqt::eb_predict(fit, bundle);
    cqt::write_scores(scores, cat, ctx.path("scores.csv"),
                      ctx.path("center_scores.csv"), ctx.header());
    auto vpc = cqt::item_vpc(fit, cat);
    cqt::write_vpc(vpc, cat, ctx.path("vpc.csv"), ctx.header());
    return run_drf(ctx, cat, scores, "pipeline");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage classroom quality measurement and dose-response toolkit"};
    app.require_subcommand(1);

    RunContext ctx;
    app.add_option("--config", ctx.config_path, "key=value configuration file");
    app.add_option("--seed", ctx.seed, "root RNG seed");
    app.add_option("--out", ctx.out_dir, "output directory");
    app.add_option("--threads", ctx.threads, "worker thread budget");

    std::string sub;
    for (const char* name : {"fit", "scores", "decompose", "identify", "balance",
                             "drf", "simulate", "pipeline"})
        app.add_subcommand(name)->callback([&sub, name] { sub = name; });

    CLI11_PARSE(app, argc, argv);
    Eigen::setNbThreads(ctx.threads);

    try {
        ctx.load();
        if (sub == "fit") return cmd_fit(ctx);
        if (sub == "scores") return cmd_scores(ctx);
        if (sub == "decompose") return cmd_decompose(ctx);
        if (sub == "identify") return cmd_identify(ctx);
        if (sub == "balance") return cmd_balance(ctx);
        if (sub == "drf") return cmd_drf(ctx);
        if (sub == "simulate") return cmd_simulate(ctx);
        if (sub == "pipeline") return cmd_pipeline(ctx);
        std::cerr << "unknown subcommand\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::ordered_json err;
        err["error"] = e.what();
        err["command"] = sub;
        std::cerr << err.dump() << "\n";
        return 1;
    }
}

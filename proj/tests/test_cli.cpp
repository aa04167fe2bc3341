#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string bin_path() {
    const char* env = std::getenv("CQT_BIN");
    return env ? env : "build/cqt";
}

int run(const std::string& args, const std::string& stderr_file = "") {
    std::string cmd = bin_path() + " " + args;
    if (!stderr_file.empty()) cmd += " 2>" + stderr_file;
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() /
               ("cqt_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
    std::string p(const std::string& name) const { return (root / name).string(); }
    static int counter;
};
int Workspace::counter = 0;

// simulate once per binary run and fan the artifacts into the other commands
const Workspace& fixture() {
    static Workspace ws;
    static bool done = false;
    if (!done) {
        write_file(ws.p("sim.cfg"),
                   "seed = 42\n"
                   "sim.centers = 60\n"
                   "sim.classrooms_min = 2\n"
                   "sim.classrooms_max = 2\n"
                   "sim.n_covariates = 2\n"
                   "sim.confound = 0.4\n"
                   "sim.outcome_betas = 1,0,0,0,0,0\n"
                   "sim.outcome_beta_x = 0.5\n"
                   "sim.outcome_noise_sd = 0.5\n");
        REQUIRE(run("--config " + ws.p("sim.cfg") + " --out " + ws.p("sim") +
                    " simulate") == 0);
        write_file(ws.p("fit.cfg"), "seed = 42\n"
                                    "paths.items = " + ws.p("sim/items.csv") + "\n"
                                    "paths.classrooms = " + ws.p("sim/classrooms.csv") + "\n");
        done = true;
    }
    return ws;
}

}  // namespace

TEST_CASE("simulate emits the full artifact family") {
    const auto& ws = fixture();
    for (const char* f : {"items.csv", "classrooms.csv", "truth_classrooms.csv",
                          "truth_centers.csv", "covariates.csv", "outcomes.csv",
                          "simulate_manifest.json"})
        CHECK(fs::exists(ws.root / "sim" / f));
    const std::string head = slurp(ws.root / "sim" / "items.csv").substr(0, 6);
    CHECK(head == "# cqt ");
    const std::string manifest = slurp(ws.root / "sim" / "simulate_manifest.json");
    CHECK(manifest.find("\"config_hash\"") != std::string::npos);
    CHECK(manifest.find("items.csv") != std::string::npos);
}

TEST_CASE("fit, scores, decompose and identify run off the simulated data") {
    const auto& ws = fixture();
    REQUIRE(run("--config " + ws.p("fit.cfg") + " --out " + ws.p("fit") + " fit") == 0);
    CHECK(fs::exists(ws.root / "fit" / "parameters.csv"));
    const std::string report = slurp(ws.root / "fit" / "fit_report.csv");
    CHECK(report.find("loglik") != std::string::npos);

    // downstream commands reuse the fitted parameters instead of refitting
    write_file(ws.p("stage.cfg"),
               "seed = 42\n"
               "paths.items = " + ws.p("sim/items.csv") + "\n"
               "paths.classrooms = " + ws.p("sim/classrooms.csv") + "\n"
               "paths.parameters = " + ws.p("fit/parameters.csv") + "\n");
    REQUIRE(run("--config " + ws.p("stage.cfg") + " --out " + ws.p("sc") + " scores") == 0);
    CHECK(fs::exists(ws.root / "sc" / "scores.csv"));
    CHECK(fs::exists(ws.root / "sc" / "center_scores.csv"));

    REQUIRE(run("--config " + ws.p("stage.cfg") + " --out " + ws.p("dec") +
                " decompose") == 0);
    const std::string corr = slurp(ws.root / "dec" / "factor_correlations.csv");
    CHECK(corr.find("NA") != std::string::npos);  // cross-block not identified
    CHECK(fs::exists(ws.root / "dec" / "vpc.csv"));
    const std::string vpc = slurp(ws.root / "dec" / "vpc.csv");
    CHECK(vpc.find("_overall") != std::string::npos);

    REQUIRE(run("--config " + ws.p("stage.cfg") + " --out " + ws.p("id") +
                " identify") == 0);
    const std::string feas = slurp(ws.root / "id" / "feasibility.json");
    CHECK(feas.find("\"feasible\": true") != std::string::npos);
}

TEST_CASE("balance and drf consume exported scores") {
    const auto& ws = fixture();
    // depends on the previous test having produced sc/scores.csv
    REQUIRE(fs::exists(ws.root / "sc" / "scores.csv"));
    write_file(ws.p("bal.cfg"),
               "seed = 42\n"
               "paths.scores = " + ws.p("sc/scores.csv") + "\n"
               "paths.covariates = " + ws.p("sim/covariates.csv") + "\n"
               "paths.outcomes = " + ws.p("sim/outcomes.csv") + "\n"
               "balance.factor = qcit_soc_emot\n");
    REQUIRE(run("--config " + ws.p("bal.cfg") + " --out " + ws.p("bal") +
                " balance > /dev/null") == 0);
    CHECK(fs::exists(ws.root / "bal" / "weights.csv"));
    CHECK(fs::exists(ws.root / "bal" / "balance_diagnostics.csv"));

    const int rc = run("--config " + ws.p("bal.cfg") + " --out " + ws.p("drf") + " drf");
    REQUIRE((rc == 0 || rc == 2));  // 2 when some cells are skipped, still valid
    CHECK(fs::exists(ws.root / "drf" / "drf_table.csv"));
    CHECK(fs::exists(ws.root / "drf" / "drf_curves.csv"));
    const std::string table = slurp(ws.root / "drf" / "drf_table.csv");
    CHECK(table.find("outcome,factor,n,ess,estimate") != std::string::npos);
}

TEST_CASE("pipeline reruns are byte identical") {
    const auto& ws = fixture();
    write_file(ws.p("pipe.cfg"),
               "seed = 42\n"
               "paths.items = " + ws.p("sim/items.csv") + "\n"
               "paths.classrooms = " + ws.p("sim/classrooms.csv") + "\n"
               "paths.covariates = " + ws.p("sim/covariates.csv") + "\n"
               "paths.outcomes = " + ws.p("sim/outcomes.csv") + "\n");
    const int rc1 = run("--config " + ws.p("pipe.cfg") + " --out " + ws.p("p1") +
                        " pipeline 2>/dev/null");
    const int rc2 = run("--config " + ws.p("pipe.cfg") + " --out " + ws.p("p2") +
                        " pipeline 2>/dev/null");
    REQUIRE((rc1 == 0 || rc1 == 2));
    CHECK(rc2 == rc1);
    for (const char* f : {"parameters.csv", "scores.csv", "center_scores.csv",
                          "vpc.csv", "drf_table.csv", "drf_curves.csv",
                          "pipeline_manifest.json"}) {
        REQUIRE(fs::exists(ws.root / "p1" / f));
        CHECK(slurp(ws.root / "p1" / f) == slurp(ws.root / "p2" / f));
    }
}

TEST_CASE("missing inputs produce a structured error and exit 1") {
    Workspace ws;
    write_file(ws.p("bad.cfg"), "paths.items = /nonexistent/items.csv\n"
                                "paths.classrooms = /nonexistent/cls.csv\n");
    const int rc = run("--config " + ws.p("bad.cfg") + " --out " + ws.p("out") + " fit",
                       ws.p("err.txt"));
    CHECK(rc == 1);
    const std::string err = slurp(ws.p("err.txt"));
    CHECK(err.find("\"error\"") != std::string::npos);
    CHECK(err.find("does not exist") != std::string::npos);
}

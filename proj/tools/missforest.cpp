#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rfimpute/data.hpp"
#include "rfimpute/eval.hpp"
#include "rfimpute/knn.hpp"
#include "rfimpute/missforest.hpp"

using namespace rfimpute;
using nlohmann::json;

namespace {

constexpr int kExitModule = 1;
constexpr int kExitUsage = 2;

struct InputOptions {
    std::string in;
    std::string schema;
    std::string na = "NA";
};

struct ForestOptions {
    std::size_t ntree = 100;
    std::size_t mtry = 0;  // 0: default
    std::size_t maxiter = 10;
};

struct KnnOptions {
    std::string k_range = "1:15";
    std::size_t cv_sets = 5;
    double cv_fraction = 0.1;
};

const CLI::Validator kOpenUnit(
    [](std::string& text) -> std::string {
        double v = 0;
        if (!CLI::detail::lexical_cast(text, v) || !(v > 0.0 && v < 1.0)) return "value " + text + " not in (0, 1)";
        return {};
    },
    "in (0, 1)");

const CLI::Validator kPositive(
    [](std::string& text) -> std::string {
        long long v = 0;
        if (!CLI::detail::lexical_cast(text, v) || v < 1) return "value " + text + " must be a positive integer";
        return {};
    },
    "positive");

std::vector<std::size_t> parse_k_range(const std::string& text);

const CLI::Validator kKRange(
    [](std::string& text) -> std::string {
        try {
            parse_k_range(text);
        } catch (const CLI::ValidationError& e) {
            return e.what();
        }
        return {};
    },
    "a:b");

void add_input(CLI::App* cmd, InputOptions& o) {
    cmd->add_option("--in", o.in, "input CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--schema", o.schema, "schema JSON sidecar")->check(CLI::ExistingFile);
    cmd->add_option("--na", o.na, "missing-value token")->capture_default_str();
}

void add_forest(CLI::App* cmd, ForestOptions& o, bool axes) {
    if (!axes) {
        cmd->add_option("--ntree", o.ntree, "trees per forest")->check(kPositive)->capture_default_str();
        cmd->add_option("--mtry", o.mtry, "variables tried per split (default floor(sqrt(p-1)))")
            ->check(kPositive);
    }
    cmd->add_option("--maxiter", o.maxiter, "maximum missForest sweeps")
        ->check(kPositive)
        ->capture_default_str();
}

void add_knn(CLI::App* cmd, KnnOptions& o) {
    cmd->add_option("--k-range", o.k_range, "candidate neighbour counts a:b")->check(kKRange)->capture_default_str();
    cmd->add_option("--cv-sets", o.cv_sets, "validation sets")->check(kPositive)->capture_default_str();
    cmd->add_option("--cv-fraction", o.cv_fraction, "share of observed cells hidden per validation set")
        ->check(kOpenUnit)
        ->capture_default_str();
}

std::vector<std::size_t> parse_k_range(const std::string& text) {
    const auto colon = text.find(':');
    try {
        std::size_t a = 0, b = 0;
        std::size_t used = 0;
        if (colon == std::string::npos) {
            a = b = std::stoul(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
        } else {
            const std::string lo = text.substr(0, colon), hi = text.substr(colon + 1);
            a = std::stoul(lo, &used);
            if (used != lo.size()) throw std::invalid_argument(text);
            b = std::stoul(hi, &used);
            if (used != hi.size()) throw std::invalid_argument(text);
        }
        if (a < 1 || b < a) throw std::invalid_argument(text);
        std::vector<std::size_t> out;
        for (std::size_t k = a; k <= b; ++k) out.push_back(k);
        return out;
    } catch (const std::logic_error&) {
        throw CLI::ValidationError("--k-range", "expected a:b with 1 <= a <= b, got '" + text + "'");
    }
}

MixedMatrix read_input(const InputOptions& o) {
    std::optional<Schema> schema;
    if (!o.schema.empty()) {
        std::ifstream s(o.schema);
        if (!s) throw Error("cannot open schema '" + o.schema + "'");
        schema = parse_schema_json(s);
    }
    std::ifstream in(o.in, std::ios::binary);
    if (!in) throw Error("cannot open input '" + o.in + "'");
    return parse_csv(in, CsvOptions{o.na}, schema);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw Error("write to '" + path + "' failed");
}

std::string sibling(const std::string& path, const std::string& ext) {
    const auto slash = path.find_last_of('/');
    const auto dot = path.find_last_of('.');
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return path.substr(0, dot) + ext;
    return path + ext;
}

MissForestConfig missforest_config(const ForestOptions& o, std::uint64_t seed, unsigned threads) {
    MissForestConfig cfg;
    cfg.forest.n_tree = o.ntree;
    if (o.mtry) cfg.forest.m_try = o.mtry;
    cfg.forest.threads = threads;
    cfg.max_iterations = o.maxiter;
    cfg.seed = seed;
    return cfg;
}

KnnConfig knn_config(const KnnOptions& o, std::uint64_t seed) {
    KnnConfig cfg;
    cfg.k_candidates = parse_k_range(o.k_range);
    cfg.n_validation_sets = o.cv_sets;
    cfg.cv_missing_fraction = o.cv_fraction;
    cfg.seed = seed;
    return cfg;
}

json input_json(const InputOptions& o) {
    return {{"path", o.in}, {"schema", o.schema.empty() ? json(nullptr) : json(o.schema)}, {"na_token", o.na}};
}

struct ImputeArgs {
    InputOptions input;
    ForestOptions forest;
    KnnOptions knn;
    std::string method = "missforest";
    std::string out;
    std::string report;
    std::string cv_errors;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

void cmd_impute(const ImputeArgs& a) {
    const MixedMatrix x = read_input(a.input);
    const Method method = parse_method(a.method);
    json doc;
    doc["format"] = "rfimpute-impute";
    doc["version"] = 1;
    doc["input"] = input_json(a.input);
    doc["rows"] = x.rows();
    doc["columns"] = x.cols();
    doc["missing_cells"] = x.n_missing();
    json config = {{"method", to_string(method)}, {"seed", a.seed}};

    MixedMatrix imputed;
    switch (method) {
        case Method::MissForest: {
            const auto cfg = missforest_config(a.forest, a.seed, a.threads);
            config["n_tree"] = cfg.forest.n_tree;
            config["m_try"] = cfg.forest.m_try ? json(*cfg.forest.m_try) : json("floor(sqrt(p-1))");
            config["max_iterations"] = cfg.max_iterations;
            auto outcome = impute(x, cfg);
            doc["result"] = to_json(outcome);
            imputed = std::move(outcome.imputed);
            break;
        }
        case Method::KnnCv: {
            const auto cfg = knn_config(a.knn, a.seed);
            config["k_candidates"] = cfg.k_candidates;
            config["n_validation_sets"] = cfg.n_validation_sets;
            config["cv_missing_fraction"] = cfg.cv_missing_fraction;
            if (x.n_missing() == 0) {
                doc["result"] = {{"k_best", nullptr}};
                imputed = x;
                break;
            }
            auto outcome = knn_impute_mixed(x, cfg);
            doc["result"] = to_json(outcome.cv);
            if (!a.cv_errors.empty()) {
                std::ostringstream cv;
                write_cv_errors_csv(cv, outcome.cv);
                write_text(a.cv_errors, cv.str());
            }
            imputed = std::move(outcome.imputed);
            break;
        }
        case Method::MeanMode:
            imputed = initial_guess(x);
            doc["result"] = json::object();
            break;
    }
    doc["config"] = std::move(config);
    write_text(a.out, to_csv(imputed, CsvOptions{a.input.na}));
    write_text(a.report.empty() ? sibling(a.out, ".report.json") : a.report, doc.dump(2) + "\n");
}

struct BenchmarkArgs {
    InputOptions input;
    ForestOptions forest;
    KnnOptions knn;
    std::vector<std::string> methods = {"missforest", "knn_cv", "mean_mode"};
    std::vector<double> fractions = {0.1, 0.2, 0.3};
    std::size_t sims = 50;
    std::string report;
    std::string csv;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

MixedMatrix read_truth(const InputOptions& o) {
    MixedMatrix x = read_input(o);
    if (!x.complete()) throw Error("benchmark requires complete data");
    return x;
}

void write_reports(const json& doc, const std::string& report, const std::string& csv_path, const std::string& csv) {
    write_text(report, doc.dump(2) + "\n");
    write_text(csv_path.empty() ? sibling(report, ".csv") : csv_path, csv);
}

void cmd_benchmark(const BenchmarkArgs& a) {
    const MixedMatrix truth = read_truth(a.input);
    BenchmarkConfig cfg;
    cfg.methods.clear();
    for (const auto& m : a.methods) cfg.methods.push_back(parse_method(m));
    cfg.fractions = a.fractions;
    cfg.n_simulations = a.sims;
    cfg.seed = a.seed;
    cfg.missforest = missforest_config(a.forest, a.seed, 1);
    cfg.knn = knn_config(a.knn, a.seed);
    cfg.threads = a.threads;
    const auto report = run_benchmark(truth, cfg);
    json doc = to_json(report);
    doc["input"] = input_json(a.input);
    std::ostringstream csv;
    write_csv(csv, report);
    write_reports(doc, a.report, a.csv, csv.str());
}

struct SweepArgs {
    InputOptions input;
    ForestOptions forest;
    std::vector<std::size_t> ntree = {10, 50, 100, 250, 500};
    std::vector<std::size_t> mtry = {1, 2, 4, 8, 16};
    double fraction = 0.1;
    std::size_t sims = 50;
    std::string report;
    std::string csv;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

void cmd_sweep(const SweepArgs& a) {
    const MixedMatrix truth = read_truth(a.input);
    SweepConfig cfg;
    cfg.fraction = a.fraction;
    cfg.n_tree_axis = a.ntree;
    cfg.m_try_axis = a.mtry;
    cfg.n_simulations = a.sims;
    cfg.seed = a.seed;
    cfg.missforest = missforest_config(a.forest, a.seed, a.threads);
    const auto report = run_sweep(truth, cfg);
    json doc = to_json(report);
    doc["input"] = input_json(a.input);
    std::ostringstream csv;
    write_csv(csv, report);
    write_reports(doc, a.report, a.csv, csv.str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-type missing value imputation with random forests"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "missforest 1.0.0");

    ImputeArgs imp;
    auto* c_imp = app.add_subcommand("impute", "impute the missing cells of a CSV file");
    add_input(c_imp, imp.input);
    add_forest(c_imp, imp.forest, false);
    add_knn(c_imp, imp.knn);
    c_imp->add_option("--method", imp.method, "missforest, knn or mean_mode")
        ->check(CLI::IsMember({"missforest", "knn", "knn_cv", "mean_mode"}))
        ->capture_default_str();
    c_imp->add_option("--out", imp.out, "imputed CSV")->required();
    c_imp->add_option("--report", imp.report, "JSON report (default <out>.report.json)");
    c_imp->add_option("--cv-errors", imp.cv_errors, "CSV of KNN cross-validation errors");
    c_imp->add_option("--seed", imp.seed)->capture_default_str();
    c_imp->add_option("--threads", imp.threads)->check(kPositive)->capture_default_str();

    BenchmarkArgs bench;
    auto* c_bench = app.add_subcommand("benchmark", "compare imputers on masked copies of complete data");
    add_input(c_bench, bench.input);
    add_forest(c_bench, bench.forest, false);
    add_knn(c_bench, bench.knn);
    c_bench->add_option("--methods", bench.methods, "comma-separated imputers")
        ->delimiter(',')
        ->check(CLI::IsMember({"missforest", "knn", "knn_cv", "mean_mode"}))
        ->capture_default_str();
    c_bench->add_option("--fractions", bench.fractions, "comma-separated missing fractions")
        ->delimiter(',')
        ->check(kOpenUnit)
        ->capture_default_str();
    c_bench->add_option("--sims", bench.sims, "simulations per fraction")
        ->check(kPositive)
        ->capture_default_str();
    c_bench->add_option("--report", bench.report, "JSON report")->required();
    c_bench->add_option("--csv", bench.csv, "per-simulation CSV (default next to the report)");
    c_bench->add_option("--seed", bench.seed)->capture_default_str();
    c_bench->add_option("--threads", bench.threads, "simulations run in parallel")
        ->check(kPositive)
        ->capture_default_str();

    SweepArgs sweep;
    auto* c_sweep = app.add_subcommand("sweep", "grid of tree counts and split variables");
    add_input(c_sweep, sweep.input);
    add_forest(c_sweep, sweep.forest, true);
    c_sweep->add_option("--ntree", sweep.ntree, "comma-separated tree counts")
        ->delimiter(',')
        ->check(kPositive)
        ->capture_default_str();
    c_sweep->add_option("--mtry", sweep.mtry, "comma-separated split variable counts")
        ->delimiter(',')
        ->check(kPositive)
        ->capture_default_str();
    c_sweep->add_option("--fraction", sweep.fraction, "missing fraction")
        ->check(kOpenUnit)
        ->capture_default_str();
    c_sweep->add_option("--sims", sweep.sims)->check(kPositive)->capture_default_str();
    c_sweep->add_option("--report", sweep.report, "JSON report")->required();
    c_sweep->add_option("--csv", sweep.csv, "per-simulation CSV (default next to the report)");
    c_sweep->add_option("--seed", sweep.seed)->capture_default_str();
    c_sweep->add_option("--threads", sweep.threads, "threads per forest")
        ->check(kPositive)
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_imp->parsed()) cmd_impute(imp);
        if (c_bench->parsed()) cmd_benchmark(bench);
        if (c_sweep->parsed()) cmd_sweep(sweep);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "missforest: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "missforest: " << e.what() << '\n';
        return kExitModule;
    }
    return EXIT_SUCCESS;
}

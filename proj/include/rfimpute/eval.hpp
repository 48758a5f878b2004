#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfimpute/data.hpp"
#include "rfimpute/knn.hpp"
#include "rfimpute/missforest.hpp"

namespace rfimpute {

struct MissingnessSpec {
    double fraction = 0.1;
    std::uint64_t seed = 0;
};

struct Injection {
    MixedMatrix masked;
    Mask mask;
};

/// Hide exactly round(fraction * n * p) cells chosen uniformly without
/// replacement. Masks that would empty a column are redrawn (up to 1000
/// times).
Injection inject_mcar(const MixedMatrix& complete, const MissingnessSpec& spec);

/// sqrt(mean squared error / population variance of the truth), both over
/// the masked continuous cells pooled across columns.
double nrmse(const MixedMatrix& truth, const MixedMatrix& imputed, const Mask& mask);

/// Share of masked categorical cells imputed with the wrong level.
double pfc(const MixedMatrix& truth, const MixedMatrix& imputed, const Mask& mask);

bool has_masked_continuous(const MixedMatrix& x, const Mask& mask);
bool has_masked_categorical(const MixedMatrix& x, const Mask& mask);

/// One-sided paired Wilcoxon signed-rank test of "a tends to exceed b".
/// Zero differences are dropped, tied magnitudes share their average rank.
/// Exact for up to 20 non-zero differences, normal approximation with tie and
/// continuity correction above. All-zero differences give 1.
double wilcoxon_paired(std::span<const double> a, std::span<const double> b);

inline constexpr std::size_t kWilcoxonExactLimit = 20;
inline constexpr std::size_t kWilcoxonMinPairs = 5;

enum class Method { MissForest, KnnCv, MeanMode };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct SimulationResult {
    std::size_t simulation = 0;
    std::uint64_t mask_seed = 0;
    std::optional<double> nrmse;
    std::optional<double> pfc;
    std::optional<double> oob_nrmse;
    std::optional<double> oob_pfc;
    std::optional<std::size_t> iterations;
    std::optional<bool> stopped_by_criterion;
    std::optional<std::size_t> k_best;
    std::optional<std::string> error;
    double runtime_seconds = 0.0;  // wall clock of the imputation call
};

struct MetricSummary {
    std::optional<double> mean;
    std::optional<double> standard_error;
    std::size_t count = 0;
};

struct BenchmarkCell {
    Method method;
    double fraction;
    std::vector<SimulationResult> simulations;
    MetricSummary nrmse;
    MetricSummary pfc;
};

struct WilcoxonEntry {
    Method comparator;
    double fraction;
    std::string metric;  // "nrmse" or "pfc"
    std::size_t pairs = 0;
    std::optional<double> p_value;  // absent when fewer than kWilcoxonMinPairs pairs
};

struct BenchmarkConfig {
    std::vector<Method> methods = {Method::MissForest, Method::KnnCv, Method::MeanMode};
    std::vector<double> fractions = {0.1, 0.2, 0.3};
    std::size_t n_simulations = 50;
    std::uint64_t seed = 0;
    MissForestConfig missforest;  // its seed is replaced per simulation
    KnnConfig knn;                // likewise
    unsigned threads = 1;         // simulations run in parallel
};

struct BenchmarkReport {
    BenchmarkConfig config;
    std::vector<BenchmarkCell> cells;  // method-major, then fraction
    std::vector<WilcoxonEntry> wilcoxon;

    const BenchmarkCell& cell(Method m, double fraction) const;
};

/// Every method imputes the same masked copy of `truth` in each simulation.
/// Method failures are recorded per simulation and do not abort the run.
BenchmarkReport run_benchmark(const MixedMatrix& truth, const BenchmarkConfig& config);

struct SweepConfig {
    double fraction = 0.1;
    std::vector<std::size_t> n_tree_axis = {10, 50, 100, 250, 500};
    std::vector<std::size_t> m_try_axis = {1, 2, 4, 8, 16};
    std::size_t n_simulations = 50;
    std::uint64_t seed = 0;
    MissForestConfig missforest;  // n_tree / m_try overridden per cell
};

struct SweepCell {
    std::size_t m_try = 0;
    std::size_t n_tree = 0;
    std::vector<SimulationResult> simulations;
    MetricSummary nrmse;
    MetricSummary pfc;
    double mean_runtime_seconds = 0.0;
};

struct SweepReport {
    SweepConfig config;
    std::vector<SweepCell> cells;  // m_try-major, then n_tree

    const SweepCell& cell(std::size_t m_try, std::size_t n_tree) const;
};

/// n_tree x m_try grid of missForest runs; one mask per simulation is shared
/// by every cell. Runs sequentially so cell runtimes are comparable.
SweepReport run_sweep(const MixedMatrix& truth, const SweepConfig& config);

/// JSON reports hold only seed-determined content; wall-clock runtimes go
/// to the CSV tables.
nlohmann::json to_json(const BenchmarkReport& report);
nlohmann::json to_json(const SweepReport& report);
void write_csv(std::ostream& out, const BenchmarkReport& report);
void write_csv(std::ostream& out, const SweepReport& report);

}  // namespace rfimpute

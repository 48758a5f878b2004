#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfimpute/data.hpp"
#include "rfimpute/forest.hpp"

namespace rfimpute {

struct SweepSnapshot {
    std::size_t sweep = 0;  // 1-based
    const MixedMatrix& imputed;
};

struct MissForestConfig {
    /// Tree settings. `forest.seed` is replaced per (sweep, column) by a
    /// substream of `seed`.
    ForestParams forest;
    std::size_t max_iterations = 10;
    std::uint64_t seed = 0;
    /// Called after every completed sweep; for diagnostics and tests.
    std::function<void(const SweepSnapshot&)> on_sweep;
};

struct DeltaRecord {
    std::optional<double> delta_n;
    std::optional<double> delta_f;
};

using DeltaTrace = std::vector<DeltaRecord>;

struct ImputationOutcome {
    MixedMatrix imputed;
    std::size_t iterations_run = 0;
    bool stopped_by_criterion = false;
    DeltaTrace trace;
    std::optional<double> oob_nrmse;
    std::optional<double> oob_pfc;
    std::map<std::size_t, double> per_variable_oob;
};

/// Iterative random-forest imputation.
///
/// Starts from mean/mode, then sweeps the incomplete columns in ascending
/// order of missingness, refitting a forest on each column's observed rows
/// and overwriting its missing cells in place. Stops at the first sweep
/// where the relative change increases for every variable type present, and
/// then returns the matrix from the sweep before; otherwise stops after
/// `max_iterations` sweeps.
ImputationOutcome impute(const MixedMatrix& x, const MissForestConfig& config);

/// Sum of squared changes over sum of squares, across all continuous cells.
/// Returns +inf when the denominator is zero but the numerator is not.
double delta_continuous(const MixedMatrix& now, const MixedMatrix& old);

/// Fraction of the originally missing categorical cells whose level changed.
double delta_categorical(const MixedMatrix& now, const MixedMatrix& old, std::size_t n_missing_categorical);

bool stopping_fired(const DeltaTrace& trace);

/// Unweighted per-type mean of per-variable OOB errors: (continuous, categorical).
std::pair<std::optional<double>, std::optional<double>> aggregate_oob(const std::map<std::size_t, double>& per_variable,
                                                                      const Schema& schema);

nlohmann::json to_json(const ImputationOutcome& outcome);

}  // namespace rfimpute

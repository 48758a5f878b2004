#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "rfimpute/data.hpp"

namespace rfimpute {

struct KnnConfig {
    std::vector<std::size_t> k_candidates = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    std::size_t n_validation_sets = 5;
    double cv_missing_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Guards the inverse-distance weights against d = 0.
inline constexpr double kKnnWeightEpsilon = 1e-9;

/// Variable-wise KNN imputation on an all-continuous matrix.
///
/// A missing cell (i, j) is filled with the inverse-distance weighted mean of
/// row i over the k columns closest to column j among those observed at row
/// i. The distance between two columns is the root mean squared difference
/// over rows where both are observed.
MixedMatrix knn_impute_continuous(const MixedMatrix& x, std::size_t k);

struct CvResult {
    std::size_t k_best = 0;
    std::vector<std::size_t> k_values;
    std::vector<std::vector<double>> errors;  // errors[k index][validation set]
};

/// Cross-validated choice of k: mean-impute, hide a fraction of the
/// originally observed cells, KNN-impute them for every candidate k and
/// score NRMSE / PFC (their mean for mixed data). Categorical columns go
/// through dummy coding and standardization as in knn_impute_mixed.
/// Candidates >= the encoded column count are dropped.
CvResult cv_select_k(const MixedMatrix& x, const KnnConfig& config);

struct KnnOutcome {
    MixedMatrix imputed;
    CvResult cv;
};

/// Dummy-code, standardize, cross-validate k, impute, retransform, decode.
KnnOutcome knn_impute_mixed(const MixedMatrix& x, const KnnConfig& config);

/// Rows are k, columns are validation sets.
void write_cv_errors_csv(std::ostream& out, const CvResult& cv);
nlohmann::json to_json(const CvResult& cv);

}  // namespace rfimpute

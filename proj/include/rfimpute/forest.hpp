#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rfimpute/data.hpp"

namespace rfimpute {

struct ForestParams {
    std::size_t n_tree = 100;
    std::optional<std::size_t> m_try;  // unset: floor(sqrt(p_pred)), at least 1
    std::size_t min_node_regression = 5;
    std::size_t min_node_classification = 1;
    std::uint64_t seed = 0;
    bool bootstrap = true;  // false grows every tree on all rows exactly once
    unsigned threads = 1;
};

std::size_t default_mtry(std::size_t n_predictors);

enum class Task { Regression, Classification };

/// Node of an unpruned CART tree. Leaves have `left < 0`.
///
/// Continuous splits send `x <= threshold` left. Categorical splits send a
/// level left iff `left_levels[level]` is set; levels outside the vector go
/// left as well, which is how levels unseen during training are routed.
struct TreeNode {
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::size_t variable = 0;
    double threshold = 0.0;
    std::vector<std::uint8_t> left_levels;
    double prediction = 0.0;  // leaf mean, or leaf majority level index
    double impurity_decrease = 0.0;
    std::size_t n_samples = 0;  // bootstrap draws reaching the node

    bool is_leaf() const { return left < 0; }
    bool goes_left(const MixedMatrix& x, std::size_t row) const;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(const MixedMatrix& x, std::size_t row) const;
    std::size_t depth() const;
};

struct Forest {
    Task task = Task::Regression;
    std::size_t n_classes = 0;
    Schema predictor_schema;
    std::vector<Tree> trees;
    /// in_bag[t][i] = multiplicity of training row i in tree t's sample.
    std::vector<std::vector<std::uint32_t>> in_bag;
    double response_variance = 0.0;          // population variance, regression
    std::vector<std::size_t> class_counts;   // classification

    bool is_oob(std::size_t tree, std::size_t row) const { return in_bag[tree][row] == 0; }
};

/// Grow `params.n_tree` trees on bootstrap samples of (x, y). Tree t draws
/// from an RNG seeded with `params.seed ^ t`, so the result does not depend
/// on `params.threads`.
Forest fit(const MixedMatrix& x, const Column& y, const ForestParams& params);

/// Mean of tree predictions (regression) or plurality vote, ties to the
/// lowest level index (classification).
std::vector<double> predict(const Forest& forest, const MixedMatrix& x);

/// Out-of-bag error on the training data: sqrt(MSE_oob / var_pop(y)) for
/// regression, misclassification rate for classification.
double oob_error(const Forest& forest, const MixedMatrix& x, const Column& y);

/// Minimum relative impurity decrease for a split to count as valid.
inline constexpr double kMinRelativeDecrease = 1e-10;

/// Debug dump; nodes flattened, schema fingerprint included.
nlohmann::json to_json(const Forest& forest);
std::uint64_t schema_fingerprint(const Schema& schema);

}  // namespace rfimpute

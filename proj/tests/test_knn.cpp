#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rfimpute/eval.hpp"
#include "rfimpute/knn.hpp"
#include "support/synthetic.hpp"

using namespace rfimpute;

namespace {

constexpr double NA = std::numeric_limits<double>::quiet_NaN();

Column cont(std::string name, std::vector<double> v) { return Column({std::move(name), VariableType::continuous()}, std::move(v)); }

/// Three column pairs; the columns of a pair are identical, pairs are
/// independent.
MixedMatrix duplicate_pairs(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Column> cols;
    for (int pair = 0; pair < 3; ++pair) {
        std::vector<double> v(n);
        for (auto& e : v) e = normal(rng);
        cols.push_back(cont("p" + std::to_string(pair) + "a", v));
        cols.push_back(cont("p" + std::to_string(pair) + "b", v));
    }
    return MixedMatrix(std::move(cols));
}

/// 20 x 6: g is the sign of x1, x2 mirrors x1, x3..x5 are noise.
MixedMatrix sign_copy(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x1(20), x2(20), x3(20), x4(20), x5(20), g(20);
    for (std::size_t i = 0; i < 20; ++i) {
        x1[i] = normal(rng);
        x2[i] = -x1[i] + 0.1 * normal(rng);
        x3[i] = normal(rng);
        x4[i] = normal(rng);
        x5[i] = normal(rng);
        g[i] = x1[i] > 0 ? 1 : 0;
    }
    return MixedMatrix({cont("x1", x1), cont("x2", x2), cont("x3", x3), cont("x4", x4), cont("x5", x5),
                        Column({"g", VariableType::categorical({"neg", "pos"})}, g)});
}

}  // namespace

TEST_CASE("k = 1 copies the nearest variable") {
    // d(c, a) = 0.1, d(c, b) = 2.
    auto x = MixedMatrix({cont("a", {5, 1.1, 2.1}), cont("b", {-7, 3, 4}), cont("c", {NA, 1, 2})});
    auto out = knn_impute_continuous(x, 1);
    CHECK(out.value(0, 2) == doctest::Approx(5.0));
    CHECK(out.value(1, 2) == 1.0);
}

TEST_CASE("inverse-distance weighted mean of two neighbours") {
    auto x = MixedMatrix({cont("c1", {2, 1, 1}), cont("c2", {6, 3, 3}), cont("c3", {NA, 0, 0})});
    auto out = knn_impute_continuous(x, 2);
    const double e = kKnnWeightEpsilon;
    const double expected = (2.0 / (1 + e) + 6.0 / (3 + e)) / (1 / (1 + e) + 1 / (3 + e));
    CHECK(out.value(0, 2) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(out.value(0, 2) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("a duplicate variable dominates the weighted mean") {
    auto x = MixedMatrix({cont("a", {4, 1, 2, 3}), cont("b", {-9, 7, -1, 0}), cont("c", {NA, 1, 2, 3})});
    auto out = knn_impute_continuous(x, 2);
    CHECK(out.value(0, 2) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("identical columns impute the shared value") {
    auto x = MixedMatrix({cont("a", {1, 2, NA, 4}), cont("b", {1, NA, 3, 4}), cont("c", {NA, 2, 3, 4}),
                          cont("d", {1, 2, 3, NA})});
    auto out = knn_impute_continuous(x, 2);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(out.value(i, j) == doctest::Approx(i + 1.0).epsilon(1e-6));
}

TEST_CASE("no candidate neighbours falls back to the column mean") {
    auto x = MixedMatrix({cont("a", {NA, 1, 2}), cont("b", {NA, 5, 6}), cont("c", {NA, 3, 7})});
    auto out = knn_impute_continuous(x, 1);
    CHECK(out.value(0, 0) == 1.5);
    CHECK(out.value(0, 1) == 5.5);
    CHECK(out.value(0, 2) == 5.0);
}

TEST_CASE("k must be below the number of variables") {
    auto x = MixedMatrix({cont("a", {NA, 1, 2}), cont("b", {1, 5, 6})});
    CHECK_THROWS_AS(knn_impute_continuous(x, 2), Error);
    CHECK_THROWS_AS(knn_impute_continuous(x, 0), Error);
}

TEST_CASE("cv with one candidate returns it") {
    auto x = testing::correlated_gaussian(40, 5, 1);
    KnnConfig cfg;
    cfg.k_candidates = {3};
    auto cv = cv_select_k(x, cfg);
    CHECK(cv.k_best == 3);
    REQUIRE(cv.errors.size() == 1);
    CHECK(cv.errors[0].size() == cfg.n_validation_sets);
}

TEST_CASE("duplicate pairs select k = 1") {
    // Few enough validation gaps that no row loses both columns of a pair.
    auto x = duplicate_pairs(100, 4);
    KnnConfig cfg;
    cfg.k_candidates = {1, 2, 3, 4, 5};
    cfg.cv_missing_fraction = 0.02;
    cfg.seed = 8;
    auto cv = cv_select_k(x, cfg);
    CHECK(cv.k_best == 1);
    double mean_k1 = 0;
    for (double e : cv.errors[0]) mean_k1 += e / static_cast<double>(cv.errors[0].size());
    CHECK(mean_k1 < 1e-6);
}

TEST_CASE("cv errors have the grid shape, are non-negative and deterministic") {
    auto truth = testing::mixed_suite(60, 2);
    auto inj = inject_mcar(truth, {0.1, 3});
    KnnConfig cfg;
    cfg.seed = 5;
    cfg.n_validation_sets = 3;
    auto cv = cv_select_k(inj.masked, cfg);
    // 15 encoded columns, so k = 15 is dropped.
    REQUIRE(cv.k_values.size() == 14);
    REQUIRE(cv.errors.size() == cv.k_values.size());
    for (const auto& row : cv.errors) {
        CHECK(row.size() == 3);
        for (double e : row) CHECK(e >= 0.0);
    }
    auto again = cv_select_k(inj.masked, cfg);
    CHECK(to_json(again).dump() == to_json(cv).dump());

    std::ostringstream csv;
    write_cv_errors_csv(csv, cv);
    CHECK(csv.str().rfind("k,set1,set2,set3\n", 0) == 0);
}

TEST_CASE("candidates beyond the encoded width are dropped") {
    auto x = testing::correlated_gaussian(30, 4, 6);
    KnnConfig cfg;
    cfg.k_candidates = {1, 2, 3, 4, 5};
    auto cv = cv_select_k(x, cfg);
    CHECK(cv.k_values == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("mixed pipeline is the identity without missing cells") {
    auto x = testing::mixed_suite(40, 3);
    KnnConfig cfg;
    cfg.k_candidates = {1, 2};
    cfg.n_validation_sets = 2;
    CHECK(knn_impute_mixed(x, cfg).imputed == x);
}

TEST_CASE("mixed pipeline preserves observed cells and is deterministic") {
    auto truth = testing::mixed_suite(80, 9);
    auto inj = inject_mcar(truth, {0.2, 1});
    KnnConfig cfg;
    cfg.seed = 2;
    auto a = knn_impute_mixed(inj.masked, cfg);
    auto b = knn_impute_mixed(inj.masked, cfg);
    CHECK(a.imputed == b.imputed);
    CHECK(a.imputed.complete());
    for (std::size_t j = 0; j < truth.cols(); ++j)
        for (std::size_t i = 0; i < truth.rows(); ++i)
            if (!inj.mask(i, j)) CHECK(a.imputed.value(i, j) == inj.masked.value(i, j));
}

TEST_CASE("continuous-only pipeline beats mean imputation on correlated data") {
    auto truth = testing::correlated_gaussian(100, 6, 3);
    auto inj = inject_mcar(truth, {0.1, 4});
    auto out = knn_impute_mixed(inj.masked, {});
    CHECK(nrmse(truth, out.imputed, inj.mask) < nrmse(truth, initial_guess(inj.masked), inj.mask));
}

TEST_CASE("a categorical copied from a sign is recovered") {
    double total = 0;
    std::size_t runs = 0;
    for (std::uint64_t s = 0; runs < 10; ++s) {
        auto truth = sign_copy(100 + s);
        auto inj = inject_mcar(truth, {0.1, s});
        if (!has_masked_categorical(truth, inj.mask)) continue;
        KnnConfig cfg;
        cfg.seed = s;
        total += pfc(truth, knn_impute_mixed(inj.masked, cfg).imputed, inj.mask);
        ++runs;
    }
    CHECK(total / static_cast<double>(runs) < 0.2);
}

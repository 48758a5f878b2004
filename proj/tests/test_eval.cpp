#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "rfimpute/eval.hpp"
#include "support/synthetic.hpp"
#include "support/wilcoxon_oracle.hpp"

using namespace rfimpute;

namespace {

Column cont(std::string name, std::vector<double> v) { return Column({std::move(name), VariableType::continuous()}, std::move(v)); }

Column cat(std::string name, std::vector<std::string> levels, std::vector<double> v) {
    return Column({std::move(name), VariableType::categorical(std::move(levels))}, std::move(v));
}

Mask full_mask(std::size_t n, std::size_t p) {
    Mask m(n, p);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t i = 0; i < n; ++i) m.set(i, j);
    return m;
}

}  // namespace

TEST_CASE("inject_mcar masks an exact count and keeps every column observed") {
    auto x = testing::correlated_gaussian(10, 10, 1);
    auto a = inject_mcar(x, {0.1, 42});
    CHECK(a.mask.count() == 10);
    CHECK(a.masked.n_missing() == 10);
    auto b = inject_mcar(x, {0.1, 42});
    CHECK(a.mask == b.mask);
    CHECK(inject_mcar(x, {0.1, 43}).mask != a.mask);

    auto rng = std::mt19937_64(5);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 2 + rng() % 15, p = 1 + rng() % 6;
        const double f = 0.05 + 0.4 * static_cast<double>(rng() % 100) / 100.0;
        auto y = testing::correlated_gaussian(n, p, rng());
        auto inj = inject_mcar(y, {f, rng()});
        CHECK(inj.mask.count() == static_cast<std::size_t>(std::llround(f * static_cast<double>(n * p))));
        for (std::size_t j = 0; j < p; ++j) {
            CHECK(inj.mask.count_in_column(j) < n);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(inj.masked.is_missing(i, j) == inj.mask(i, j));
        }
    }
}

TEST_CASE("inject_mcar edge cases") {
    auto x = testing::correlated_gaussian(3, 3, 1);
    auto none = inject_mcar(x, {0.01, 1});
    CHECK(none.mask.count() == 0);
    CHECK(none.masked == x);
    auto one_row = testing::correlated_gaussian(1, 3, 1);
    CHECK_THROWS_WITH_AS(inject_mcar(one_row, {0.5, 1}), doctest::Contains("cannot satisfy column coverage"), Error);
    CHECK_THROWS_AS(inject_mcar(none.masked.rows() ? inject_mcar(x, {0.3, 1}).masked : x, {0.1, 1}), Error);
}

TEST_CASE("nrmse examples") {
    auto truth = MixedMatrix({cont("a", {1, 2, 3})});
    auto m = full_mask(3, 1);
    CHECK(nrmse(truth, truth, m) == 0.0);
    auto twos = MixedMatrix({cont("a", {2, 2, 2})});
    CHECK(std::abs(nrmse(truth, twos, m) - 1.0) <= 1e-12);
    auto truth2 = MixedMatrix({cont("a", {1, 2, 4})});
    CHECK(std::abs(nrmse(truth2, truth, m) - std::sqrt((1.0 / 3.0) / (14.0 / 9.0))) <= 1e-12);
    CHECK(std::abs(nrmse(truth2, truth, m) - 0.4629) < 1e-4);

    CHECK_THROWS_WITH_AS(nrmse(twos, truth, m), doctest::Contains("degenerate truth"), Error);
    CHECK_THROWS_AS(nrmse(truth, truth, Mask(3, 1)), Error);
}

TEST_CASE("nrmse pools masked cells across columns and ignores the rest") {
    auto truth = MixedMatrix({cont("a", {1, 100}), cont("b", {3, -50}),
                              cat("g", {"u", "v"}, {0, 1})});
    auto imp = MixedMatrix({cont("a", {2, 0}), cont("b", {2, 0}), cat("g", {"u", "v"}, {1, 1})});
    Mask m(2, 3);
    m.set(0, 0);
    m.set(0, 1);
    m.set(0, 2);
    // Masked continuous truth {1, 3}, guesses {2, 2}: mse 1, var 1.
    CHECK(nrmse(truth, imp, m) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pfc(truth, imp, m) == 1.0);
}

TEST_CASE("pfc examples") {
    const std::vector<std::string> lv = {"a", "b", "c"};
    auto truth = MixedMatrix({cat("g", lv, {0, 1, 2, 0})});
    auto m = full_mask(4, 1);
    CHECK(pfc(truth, truth, m) == 0.0);
    CHECK(pfc(truth, MixedMatrix({cat("g", lv, {0, 1, 0, 1})}), m) == 0.5);
    CHECK(pfc(truth, MixedMatrix({cat("g", lv, {1, 2, 0, 2})}), m) == 1.0);
    CHECK_THROWS_AS(pfc(truth, truth, Mask(4, 1)), Error);
}

TEST_CASE("nrmse is scale invariant for a single continuous column") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> t(30), g(30);
    for (std::size_t i = 0; i < 30; ++i) {
        t[i] = normal(rng);
        g[i] = t[i] + 0.3 * normal(rng);
    }
    Mask m(30, 1);
    for (std::size_t i = 0; i < 30; i += 3) m.set(i, 0);
    const double base = nrmse(MixedMatrix({cont("a", t)}), MixedMatrix({cont("a", g)}), m);
    for (double c : {-3.0, 0.5, 8.0}) {
        auto ts = t, gs = g;
        for (auto& v : ts) v *= c;
        for (auto& v : gs) v *= c;
        CHECK(nrmse(MixedMatrix({cont("a", ts)}), MixedMatrix({cont("a", gs)}), m) ==
              doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("pfc is invariant under relabeling") {
    std::mt19937_64 rng(9);
    const std::vector<std::string> lv = {"a", "b", "c", "d"};
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> t(25), g(25);
        for (std::size_t i = 0; i < 25; ++i) {
            t[i] = static_cast<double>(rng() % 4);
            g[i] = static_cast<double>(rng() % 4);
        }
        Mask m(25, 1);
        for (std::size_t i = 0; i < 25; ++i)
            if (rng() % 2) m.set(i, 0);
        m.set(0, 0);
        std::vector<std::size_t> perm = {0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        auto tp = t, gp = g;
        for (auto& v : tp) v = static_cast<double>(perm[static_cast<std::size_t>(v)]);
        for (auto& v : gp) v = static_cast<double>(perm[static_cast<std::size_t>(v)]);
        CHECK(pfc(MixedMatrix({cat("g", lv, t)}), MixedMatrix({cat("g", lv, g)}), m) ==
              pfc(MixedMatrix({cat("g", lv, tp)}), MixedMatrix({cat("g", lv, gp)}), m));
    }
}

TEST_CASE("wilcoxon examples") {
    std::vector<double> a = {1, 2, 3, 4, 5}, b = a;
    CHECK(wilcoxon_paired(a, b) == 1.0);

    std::vector<double> hi(10), lo(10);
    for (std::size_t i = 0; i < 10; ++i) {
        lo[i] = static_cast<double>(i);
        hi[i] = lo[i] + 0.5 + static_cast<double>(i);
    }
    CHECK(std::abs(wilcoxon_paired(hi, lo) - 1.0 / 1024.0) <= 1e-12);

    // Four small positive differences, one large negative one.
    std::vector<double> c = {1.1, 1.2, 1.3, 1.4, 0.0}, d = {1, 1, 1, 1, 5};
    const double p = wilcoxon_paired(c, d);
    CHECK(std::abs(p - testing::wilcoxon_bruteforce(c, d)) <= 1e-12);
    // W+ = 1 + 2 + 3 + 4 = 10; ten of the 32 sign assignments reach it.
    CHECK(std::abs(p - 10.0 / 32.0) <= 1e-12);

    CHECK_THROWS_AS(wilcoxon_paired(std::vector<double>{1, 2, 3, 4}, std::vector<double>{0, 0, 0, 0}), Error);
    CHECK_THROWS_AS(wilcoxon_paired(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{0, 0, 0, 0}), Error);
}

TEST_CASE("wilcoxon matches sign enumeration with ties and zeros") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 5 + rng() % 12;
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(rng() % 7);
            b[i] = static_cast<double>(rng() % 7);
        }
        INFO("rep " << rep);
        CHECK(std::abs(wilcoxon_paired(a, b) - testing::wilcoxon_bruteforce(a, b)) <= 1e-12);
    }
}

TEST_CASE("wilcoxon normal approximation above the exact limit") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < 40; ++i) {
        b[i] = normal(rng);
        a[i] = b[i] + 0.8 + normal(rng);
    }
    const double p = wilcoxon_paired(a, b);
    CHECK(p > 0.0);
    CHECK(p < 1e-3);
    const double q = wilcoxon_paired(b, a);
    CHECK(q > 0.99);
    CHECK(q <= 1.0);
}

TEST_CASE("method names") {
    for (auto m : {Method::MissForest, Method::KnnCv, Method::MeanMode}) CHECK(parse_method(to_string(m)) == m);
    CHECK(parse_method("knn") == Method::KnnCv);
    CHECK_THROWS_AS(parse_method("mice"), Error);
}

TEST_CASE("mean imputation benchmark sits at the nrmse anchor") {
    auto truth = testing::correlated_gaussian(100, 5, 3);
    BenchmarkConfig cfg;
    cfg.methods = {Method::MeanMode};
    cfg.fractions = {0.2};
    cfg.n_simulations = 10;
    auto report = run_benchmark(truth, cfg);
    const auto& cell = report.cell(Method::MeanMode, 0.2);
    CHECK(cell.simulations.size() == 10);
    REQUIRE(cell.nrmse.mean);
    CHECK(std::abs(*cell.nrmse.mean - 1.0) <= 0.1);
    CHECK_FALSE(cell.pfc.mean);
    CHECK(report.wilcoxon.empty());
}

TEST_CASE("single simulation benchmark has no wilcoxon p-values") {
    auto truth = testing::mixed_suite(60, 1);
    BenchmarkConfig cfg;
    cfg.fractions = {0.1};
    cfg.n_simulations = 1;
    cfg.missforest.forest.n_tree = 10;
    cfg.knn.k_candidates = {1, 2, 3};
    cfg.knn.n_validation_sets = 2;
    auto report = run_benchmark(truth, cfg);
    CHECK(report.cells.size() == 3);
    for (const auto& c : report.cells) CHECK(c.simulations.size() == 1);
    for (const auto& w : report.wilcoxon) {
        CHECK(w.pairs == 1);
        CHECK_FALSE(w.p_value);
    }
    auto j = to_json(report);
    for (const auto& w : j["wilcoxon"]["tests"]) CHECK(w["p_value"].is_null());
}

TEST_CASE("benchmark is deterministic and shares masks across methods") {
    auto truth = testing::mixed_suite(50, 2);
    BenchmarkConfig cfg;
    cfg.fractions = {0.1, 0.2};
    cfg.n_simulations = 5;
    cfg.seed = 3;
    cfg.missforest.forest.n_tree = 10;
    cfg.knn.k_candidates = {1, 2, 3};
    cfg.knn.n_validation_sets = 2;
    auto a = run_benchmark(truth, cfg);
    cfg.threads = 3;
    auto b = run_benchmark(truth, cfg);
    CHECK(to_json(a).dump() == to_json(b).dump());
    for (double f : cfg.fractions)
        for (std::size_t s = 0; s < 5; ++s) {
            const auto seed = a.cell(Method::MissForest, f).simulations[s].mask_seed;
            CHECK(a.cell(Method::KnnCv, f).simulations[s].mask_seed == seed);
            CHECK(a.cell(Method::MeanMode, f).simulations[s].mask_seed == seed);
        }
    REQUIRE(a.wilcoxon.size() == 2 * 2 * 2);
    for (const auto& w : a.wilcoxon) {
        REQUIRE(w.p_value);
        CHECK(*w.p_value > 0.0);
        CHECK(*w.p_value <= 1.0);
    }
    std::ostringstream csv;
    write_csv(csv, a);
    const std::string text = csv.str();
    const auto lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == 1 + 3 * 2 * 5);
}

TEST_CASE("benchmark rejects incomplete truth") {
    auto truth = testing::correlated_gaussian(20, 3, 1);
    auto masked = inject_mcar(truth, {0.1, 1}).masked;
    CHECK_THROWS_WITH_AS(run_benchmark(masked, {}), doctest::Contains("benchmark requires complete data"), Error);
}

TEST_CASE("a 1 x 1 sweep equals the matching benchmark run") {
    auto truth = testing::mixed_suite(60, 5);
    SweepConfig sc;
    sc.n_tree_axis = {15};
    sc.m_try_axis = {2};
    sc.n_simulations = 3;
    sc.seed = 11;
    auto sweep = run_sweep(truth, sc);
    REQUIRE(sweep.cells.size() == 1);

    BenchmarkConfig bc;
    bc.methods = {Method::MissForest};
    bc.fractions = {sc.fraction};
    bc.n_simulations = 3;
    bc.seed = 11;
    bc.missforest.forest.n_tree = 15;
    bc.missforest.forest.m_try = 2;
    auto bench = run_benchmark(truth, bc);
    const auto& bcell = bench.cell(Method::MissForest, sc.fraction);
    const auto& scell = sweep.cell(2, 15);
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(scell.simulations[s].mask_seed == bcell.simulations[s].mask_seed);
        CHECK(scell.simulations[s].nrmse == bcell.simulations[s].nrmse);
        CHECK(scell.simulations[s].pfc == bcell.simulations[s].pfc);
    }
}

TEST_CASE("sweep grid and validation") {
    auto truth = testing::mixed_suite(50, 5);
    SweepConfig sc;
    sc.n_tree_axis = {5, 20};
    sc.m_try_axis = {1, 3};
    sc.n_simulations = 2;
    auto r = run_sweep(truth, sc);
    CHECK(r.cells.size() == 4);
    CHECK(r.cell(3, 20).simulations.size() == 2);
    auto j = to_json(r);
    CHECK(j["format"] == "rfimpute-sweep");
    CHECK(j.dump().find("runtime") == std::string::npos);
    std::ostringstream csv;
    write_csv(csv, r);
    CHECK(csv.str().find("runtime_seconds") != std::string::npos);

    sc.m_try_axis = {0};
    CHECK_THROWS_AS(run_sweep(truth, sc), Error);
    sc.m_try_axis = {8};
    CHECK_THROWS_AS(run_sweep(truth, sc), Error);
}

TEST_CASE("more trees do not hurt on the mixed suite") {
    auto truth = testing::mixed_suite(120, 8);
    SweepConfig sc;
    sc.n_tree_axis = {10, 100};
    sc.m_try_axis = {2};
    sc.n_simulations = 6;
    auto r = run_sweep(truth, sc);
    CHECK(*r.cell(2, 100).nrmse.mean <= *r.cell(2, 10).nrmse.mean);
}

#include "rfimpute/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "rfimpute/random.hpp"

namespace rfimpute {

Injection inject_mcar(const MixedMatrix& complete, const MissingnessSpec& spec) {
    if (!complete.complete()) throw Error("inject_mcar: input must be complete");
    if (!(spec.fraction > 0.0 && spec.fraction < 1.0)) throw Error("inject_mcar: fraction must lie in (0, 1)");
    const std::size_t n = complete.rows();
    const std::size_t p = complete.cols();
    const std::size_t total = n * p;
    const auto hide = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(total)));

    Rng rng(spec.seed);
    std::vector<std::size_t> cells(total);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::iota(cells.begin(), cells.end(), std::size_t{0});
        for (std::size_t q = 0; q < hide; ++q) std::swap(cells[q], cells[q + uniform_index(rng, total - q)]);
        Mask mask(n, p);
        for (std::size_t q = 0; q < hide; ++q) mask.set(cells[q] % n, cells[q] / n);
        bool covered = true;
        for (std::size_t j = 0; j < p && covered; ++j) covered = mask.count_in_column(j) < n;
        if (!covered) continue;

        Injection out{complete, mask};
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t i = 0; i < n; ++i)
                if (mask(i, j)) out.masked.set_missing(i, j);
        return out;
    }
    throw Error("inject_mcar: cannot satisfy column coverage");
}

namespace {

void check_shapes(const MixedMatrix& truth, const MixedMatrix& imputed, const Mask& mask) {
    if (truth.rows() != imputed.rows() || truth.cols() != imputed.cols() || mask.rows() != truth.rows() ||
        mask.cols() != truth.cols())
        throw Error("metric: shape mismatch");
}

}  // namespace

bool has_masked_continuous(const MixedMatrix& x, const Mask& mask) {
    for (std::size_t j = 0; j < x.cols(); ++j)
        if (x.column(j).type().is_continuous() && mask.count_in_column(j) > 0) return true;
    return false;
}

bool has_masked_categorical(const MixedMatrix& x, const Mask& mask) {
    for (std::size_t j = 0; j < x.cols(); ++j)
        if (x.column(j).type().is_categorical() && mask.count_in_column(j) > 0) return true;
    return false;
}

double nrmse(const MixedMatrix& truth, const MixedMatrix& imputed, const Mask& mask) {
    check_shapes(truth, imputed, mask);
    std::vector<double> t, e;
    for (std::size_t j = 0; j < truth.cols(); ++j) {
        if (!truth.column(j).type().is_continuous()) continue;
        for (std::size_t i = 0; i < truth.rows(); ++i) {
            if (!mask(i, j)) continue;
            t.push_back(truth.value(i, j));
            e.push_back(truth.value(i, j) - imputed.value(i, j));
        }
    }
    if (t.empty()) throw Error("nrmse: no masked continuous cells");
    const double n = static_cast<double>(t.size());
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / n;
    double var = 0.0, mse = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        var += (t[k] - mean) * (t[k] - mean);
        mse += e[k] * e[k];
    }
    var /= n;
    mse /= n;
    if (!(var > 0.0)) throw Error("nrmse: degenerate truth (zero variance)");
    return std::sqrt(mse / var);
}

double pfc(const MixedMatrix& truth, const MixedMatrix& imputed, const Mask& mask) {
    check_shapes(truth, imputed, mask);
    std::size_t total = 0, wrong = 0;
    for (std::size_t j = 0; j < truth.cols(); ++j) {
        if (!truth.column(j).type().is_categorical()) continue;
        for (std::size_t i = 0; i < truth.rows(); ++i) {
            if (!mask(i, j)) continue;
            ++total;
            wrong += truth.value(i, j) != imputed.value(i, j) ? 1 : 0;
        }
    }
    if (total == 0) throw Error("pfc: no masked categorical cells");
    return static_cast<double>(wrong) / static_cast<double>(total);
}

double wilcoxon_paired(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("wilcoxon: samples differ in length");
    if (a.size() < kWilcoxonMinPairs) throw Error("wilcoxon: need at least 5 pairs");

    std::vector<double> diff;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] != 0.0) diff.push_back(a[i] - b[i]);
    const std::size_t n = diff.size();
    if (n == 0) return 1.0;

    // Average ranks of |d|, kept doubled so they stay integral.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(diff[x]) < std::abs(diff[y]); });
    std::vector<std::size_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi + 1 < n && std::abs(diff[order[hi + 1]]) == std::abs(diff[order[lo]])) ++hi;
        const std::size_t shared = lo + hi + 2;  // 2 * average of ranks lo+1..hi+1
        for (std::size_t q = lo; q <= hi; ++q) rank2[order[q]] = shared;
        const double t = static_cast<double>(hi - lo + 1);
        tie_term += t * t * t - t;
        lo = hi + 1;
    }
    std::size_t w2 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (diff[i] > 0) w2 += rank2[i];

    if (n <= kWilcoxonExactLimit) {
        const std::size_t max_sum = std::accumulate(rank2.begin(), rank2.end(), std::size_t{0});
        std::vector<double> ways(max_sum + 1, 0.0);
        ways[0] = 1.0;
        std::size_t reach = 0;
        for (std::size_t r : rank2) {
            for (std::size_t s = reach + 1; s-- > 0;)
                if (ways[s] != 0.0) ways[s + r] += ways[s];
            reach += r;
        }
        double tail = 0.0;
        for (std::size_t s = w2; s <= max_sum; ++s) tail += ways[s];
        return std::min(1.0, tail / std::ldexp(1.0, static_cast<int>(n)));
    }

    const double dn = static_cast<double>(n);
    const double w = static_cast<double>(w2) / 2.0;
    const double mean = dn * (dn + 1.0) / 4.0;
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) return 1.0;
    const double z = (w - mean - 0.5) / std::sqrt(var);
    const double p = 0.5 * std::erfc(z / std::sqrt(2.0));
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

std::string to_string(Method m) {
    switch (m) {
    case Method::MissForest: return "missforest";
    case Method::KnnCv: return "knn_cv";
    case Method::MeanMode: return "mean_mode";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    if (name == "missforest") return Method::MissForest;
    if (name == "knn_cv" || name == "knn") return Method::KnnCv;
    if (name == "mean_mode") return Method::MeanMode;
    throw Error("unknown method '" + name + "'");
}

const BenchmarkCell& BenchmarkReport::cell(Method m, double fraction) const {
    for (const auto& c : cells)
        if (c.method == m && c.fraction == fraction) return c;
    throw Error("benchmark report has no cell for " + to_string(m));
}

const SweepCell& SweepReport::cell(std::size_t m_try, std::size_t n_tree) const {
    for (const auto& c : cells)
        if (c.m_try == m_try && c.n_tree == n_tree) return c;
    throw Error("sweep report has no such cell");
}

namespace {

SimulationResult run_method(Method method, const MixedMatrix& truth, const Injection& inj, MissForestConfig mf,
                            KnnConfig knn, std::uint64_t mf_seed, std::uint64_t knn_seed) {
    SimulationResult r;
    try {
        MixedMatrix imputed;
        const auto start = std::chrono::steady_clock::now();
        switch (method) {
        case Method::MissForest: {
            mf.seed = mf_seed;
            auto outcome = impute(inj.masked, mf);
            r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            r.oob_nrmse = outcome.oob_nrmse;
            r.oob_pfc = outcome.oob_pfc;
            r.iterations = outcome.iterations_run;
            r.stopped_by_criterion = outcome.stopped_by_criterion;
            imputed = std::move(outcome.imputed);
            break;
        }
        case Method::KnnCv: {
            knn.seed = knn_seed;
            auto outcome = knn_impute_mixed(inj.masked, knn);
            r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            r.k_best = outcome.cv.k_best;
            imputed = std::move(outcome.imputed);
            break;
        }
        case Method::MeanMode:
            imputed = initial_guess(inj.masked);
            r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            break;
        }
        if (has_masked_continuous(truth, inj.mask)) r.nrmse = nrmse(truth, imputed, inj.mask);
        if (has_masked_categorical(truth, inj.mask)) r.pfc = pfc(truth, imputed, inj.mask);
    } catch (const std::exception& e) {
        r.error = e.what();
        r.nrmse.reset();
        r.pfc.reset();
    }
    return r;
}

MetricSummary summarize(const std::vector<SimulationResult>& sims, std::optional<double> SimulationResult::*field) {
    std::vector<double> v;
    for (const auto& s : sims)
        if (s.*field) v.push_back(*(s.*field));
    MetricSummary out;
    out.count = v.size();
    if (v.empty()) return out;
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    out.mean = mean;
    if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out.standard_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

void require_complete(const MixedMatrix& truth) {
    if (!truth.complete()) throw Error("benchmark requires complete data");
    if (truth.cols() < 2) throw Error("no predictor columns");
}

template <class Job>
void run_parallel(std::size_t count, unsigned threads, Job job) {
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        for (std::size_t k = 0; k < count; ++k) job(k);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < threads; ++w)
            workers.emplace_back([&, w] {
                try {
                    for (std::size_t k = w; k < count; k += threads) job(k);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json sim_to_json(const SimulationResult& s) {
    nlohmann::json j;
    j["simulation"] = s.simulation;
    j["mask_seed"] = s.mask_seed;
    j["nrmse"] = opt(s.nrmse);
    j["pfc"] = opt(s.pfc);
    if (s.oob_nrmse || s.oob_pfc || s.iterations) {
        j["oob_nrmse"] = opt(s.oob_nrmse);
        j["oob_pfc"] = opt(s.oob_pfc);
    }
    if (s.iterations) j["iterations"] = *s.iterations;
    if (s.stopped_by_criterion) j["stopped_by_criterion"] = *s.stopped_by_criterion;
    if (s.k_best) j["k_best"] = *s.k_best;
    if (s.error) j["error"] = *s.error;
    return j;
}

nlohmann::json summary_to_json(const MetricSummary& m) {
    return {{"mean", opt(m.mean)}, {"standard_error", opt(m.standard_error)}, {"count", m.count}};
}

nlohmann::json forest_config_json(const MissForestConfig& c) {
    return {{"n_tree", c.forest.n_tree},
            {"m_try", c.forest.m_try ? nlohmann::json(*c.forest.m_try) : nlohmann::json("floor(sqrt(p-1))")},
            {"min_node_regression", c.forest.min_node_regression},
            {"min_node_classification", c.forest.min_node_classification},
            {"max_iterations", c.max_iterations}};
}

nlohmann::json knn_config_json(const KnnConfig& c) {
    return {{"k_candidates", c.k_candidates},
            {"n_validation_sets", c.n_validation_sets},
            {"cv_missing_fraction", c.cv_missing_fraction}};
}

std::string csv_opt(const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : ""; }

std::string csv_text(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    return out + "\"";
}

void csv_sim_fields(std::ostream& out, const SimulationResult& s) {
    out << csv_opt(s.nrmse) << ',' << csv_opt(s.pfc) << ',' << csv_opt(s.oob_nrmse) << ',' << csv_opt(s.oob_pfc)
        << ',' << (s.iterations ? std::to_string(*s.iterations) : "") << ','
        << (s.stopped_by_criterion ? (*s.stopped_by_criterion ? "true" : "false") : "") << ','
        << (s.k_best ? std::to_string(*s.k_best) : "") << ',' << nlohmann::json(s.runtime_seconds).dump() << ','
        << (s.error ? csv_text(*s.error) : "");
}

constexpr const char* kSimCsvColumns =
    "nrmse,pfc,oob_nrmse,oob_pfc,iterations,stopped_by_criterion,k_best,runtime_seconds,error";

}  // namespace

BenchmarkReport run_benchmark(const MixedMatrix& truth, const BenchmarkConfig& config) {
    require_complete(truth);
    if (config.methods.empty()) throw Error("benchmark: no methods");
    if (config.fractions.empty()) throw Error("benchmark: no missingness fractions");
    if (config.n_simulations < 1) throw Error("benchmark: need at least one simulation");
    for (double f : config.fractions)
        if (!(f > 0.0 && f < 1.0)) throw Error("benchmark: fractions must lie in (0, 1)");

    BenchmarkReport report;
    report.config = config;
    const std::size_t n_frac = config.fractions.size();
    const std::size_t n_sim = config.n_simulations;
    // results[method][fraction * n_sim + sim]
    std::vector<std::vector<SimulationResult>> results(config.methods.size(),
                                                       std::vector<SimulationResult>(n_frac * n_sim));

    run_parallel(n_frac * n_sim, config.threads, [&](std::size_t job) {
        const std::size_t f = job / n_sim;
        const std::size_t s = job % n_sim;
        const std::uint64_t mask_seed = derive_seed(config.seed, {kMaskStream, f, s});
        const Injection inj = inject_mcar(truth, {config.fractions[f], mask_seed});
        for (std::size_t m = 0; m < config.methods.size(); ++m) {
            auto r = run_method(config.methods[m], truth, inj, config.missforest, config.knn,
                                derive_seed(config.seed, {kForestStream, f, s}),
                                derive_seed(config.seed, {kCvStream, f, s}));
            r.simulation = s;
            r.mask_seed = mask_seed;
            results[m][job] = std::move(r);
        }
    });

    for (std::size_t m = 0; m < config.methods.size(); ++m) {
        for (std::size_t f = 0; f < n_frac; ++f) {
            BenchmarkCell cell{config.methods[m], config.fractions[f], {}, {}, {}};
            cell.simulations.assign(results[m].begin() + static_cast<std::ptrdiff_t>(f * n_sim),
                                    results[m].begin() + static_cast<std::ptrdiff_t>((f + 1) * n_sim));
            cell.nrmse = summarize(cell.simulations, &SimulationResult::nrmse);
            cell.pfc = summarize(cell.simulations, &SimulationResult::pfc);
            report.cells.push_back(std::move(cell));
        }
    }

    const auto mf = std::find(config.methods.begin(), config.methods.end(), Method::MissForest);
    if (mf == config.methods.end()) return report;
    const std::size_t mf_index = static_cast<std::size_t>(mf - config.methods.begin());
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
        if (m == mf_index) continue;
        for (std::size_t f = 0; f < n_frac; ++f) {
            for (auto field : {&SimulationResult::nrmse, &SimulationResult::pfc}) {
                std::vector<double> a, b;
                for (std::size_t s = 0; s < n_sim; ++s) {
                    const auto& ra = results[m][f * n_sim + s];
                    const auto& rb = results[mf_index][f * n_sim + s];
                    if (ra.*field && rb.*field) {
                        a.push_back(*(ra.*field));
                        b.push_back(*(rb.*field));
                    }
                }
                WilcoxonEntry entry{config.methods[m], config.fractions[f],
                                    field == &SimulationResult::nrmse ? "nrmse" : "pfc", a.size(), std::nullopt};
                if (a.empty()) continue;
                if (a.size() >= kWilcoxonMinPairs) entry.p_value = wilcoxon_paired(a, b);
                report.wilcoxon.push_back(std::move(entry));
            }
        }
    }
    return report;
}

SweepReport run_sweep(const MixedMatrix& truth, const SweepConfig& config) {
    require_complete(truth);
    if (config.n_tree_axis.empty() || config.m_try_axis.empty()) throw Error("sweep: empty axis");
    if (config.n_simulations < 1) throw Error("sweep: need at least one simulation");
    for (std::size_t t : config.n_tree_axis)
        if (t < 1) throw Error("sweep: n_tree values must be positive");
    for (std::size_t m : config.m_try_axis)
        if (m < 1 || m >= truth.cols())
            throw Error("sweep: m_try " + std::to_string(m) + " outside [1, " + std::to_string(truth.cols() - 1) + "]");

    SweepReport report;
    report.config = config;
    for (std::size_t m : config.m_try_axis)
        for (std::size_t t : config.n_tree_axis) {
            SweepCell cell;
            cell.m_try = m;
            cell.n_tree = t;
            report.cells.push_back(std::move(cell));
        }

    for (std::size_t s = 0; s < config.n_simulations; ++s) {
        const std::uint64_t mask_seed = derive_seed(config.seed, {kMaskStream, 0, s});
        const Injection inj = inject_mcar(truth, {config.fraction, mask_seed});
        for (auto& cell : report.cells) {
            MissForestConfig mf = config.missforest;
            mf.forest.n_tree = cell.n_tree;
            mf.forest.m_try = cell.m_try;
            auto r = run_method(Method::MissForest, truth, inj, mf, {}, derive_seed(config.seed, {kForestStream, 0, s}), 0);
            r.simulation = s;
            r.mask_seed = mask_seed;
            cell.simulations.push_back(std::move(r));
        }
    }
    for (auto& cell : report.cells) {
        cell.nrmse = summarize(cell.simulations, &SimulationResult::nrmse);
        cell.pfc = summarize(cell.simulations, &SimulationResult::pfc);
        double total = 0.0;
        for (const auto& s : cell.simulations) total += s.runtime_seconds;
        cell.mean_runtime_seconds = total / static_cast<double>(cell.simulations.size());
    }
    return report;
}

nlohmann::json to_json(const BenchmarkReport& report) {
    const auto& c = report.config;
    nlohmann::json methods = nlohmann::json::array();
    for (auto m : c.methods) methods.push_back(to_string(m));
    nlohmann::json doc;
    doc["format"] = "rfimpute-benchmark";
    doc["version"] = 1;
    doc["config"] = {{"methods", methods},
                     {"fractions", c.fractions},
                     {"n_simulations", c.n_simulations},
                     {"seed", c.seed},
                     {"missforest", forest_config_json(c.missforest)},
                     {"knn", knn_config_json(c.knn)},
                     {"seed_streams", {{"mask", kMaskStream}, {"forest", kForestStream}, {"cv", kCvStream}}}};
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : report.cells) {
        nlohmann::json sims = nlohmann::json::array();
        for (const auto& s : cell.simulations) sims.push_back(sim_to_json(s));
        cells.push_back({{"method", to_string(cell.method)},
                         {"fraction", cell.fraction},
                         {"nrmse", summary_to_json(cell.nrmse)},
                         {"pfc", summary_to_json(cell.pfc)},
                         {"simulations", std::move(sims)}});
    }
    doc["cells"] = std::move(cells);
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& w : report.wilcoxon)
        tests.push_back({{"comparator", to_string(w.comparator)},
                         {"reference", "missforest"},
                         {"fraction", w.fraction},
                         {"metric", w.metric},
                         {"pairs", w.pairs},
                         {"p_value", opt(w.p_value)}});
    doc["wilcoxon"] = {{"test", "paired signed-rank"},
                       {"alternative", "comparator error greater than missforest error"},
                       {"zero_differences", "dropped"},
                       {"ties", "average ranks"},
                       {"exact_up_to", kWilcoxonExactLimit},
                       {"min_pairs", kWilcoxonMinPairs},
                       {"results", std::move(tests)}};
    return doc;
}

nlohmann::json to_json(const SweepReport& report) {
    const auto& c = report.config;
    nlohmann::json doc;
    doc["format"] = "rfimpute-sweep";
    doc["version"] = 1;
    doc["config"] = {{"fraction", c.fraction},
                     {"n_tree_axis", c.n_tree_axis},
                     {"m_try_axis", c.m_try_axis},
                     {"n_simulations", c.n_simulations},
                     {"seed", c.seed},
                     {"missforest", forest_config_json(c.missforest)},
                     {"shared_mask_per_simulation", true}};
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : report.cells) {
        nlohmann::json sims = nlohmann::json::array();
        for (const auto& s : cell.simulations) sims.push_back(sim_to_json(s));
        cells.push_back({{"m_try", cell.m_try},
                         {"n_tree", cell.n_tree},
                         {"nrmse", summary_to_json(cell.nrmse)},
                         {"pfc", summary_to_json(cell.pfc)},
                         {"simulations", std::move(sims)}});
    }
    doc["cells"] = std::move(cells);
    return doc;
}

void write_csv(std::ostream& out, const BenchmarkReport& report) {
    out << "fraction,simulation,method,mask_seed," << kSimCsvColumns << '\n';
    for (std::size_t f = 0; f < report.config.fractions.size(); ++f)
        for (std::size_t s = 0; s < report.config.n_simulations; ++s)
            for (const auto& cell : report.cells) {
                if (cell.fraction != report.config.fractions[f]) continue;
                const auto& sim = cell.simulations[s];
                out << nlohmann::json(cell.fraction).dump() << ',' << s << ',' << to_string(cell.method) << ','
                    << sim.mask_seed << ',';
                csv_sim_fields(out, sim);
                out << '\n';
            }
}

void write_csv(std::ostream& out, const SweepReport& report) {
    out << "fraction,simulation,m_try,n_tree,mask_seed," << kSimCsvColumns << '\n';
    for (std::size_t s = 0; s < report.config.n_simulations; ++s)
        for (const auto& cell : report.cells) {
            const auto& sim = cell.simulations[s];
            out << nlohmann::json(report.config.fraction).dump() << ',' << s << ',' << cell.m_try << ','
                << cell.n_tree << ',' << sim.mask_seed << ',';
            csv_sim_fields(out, sim);
            out << '\n';
        }
}

}  // namespace rfimpute

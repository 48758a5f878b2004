#include "rfimpute/knn.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "rfimpute/random.hpp"

namespace rfimpute {

namespace {

// Neighbour lists for every missing cell, computed once and reused for any k.
class NeighbourIndex {
public:
    explicit NeighbourIndex(const MixedMatrix& x) : x_(x) {
        for (const auto& c : x.columns())
            if (!c.type().is_continuous()) throw Error("knn: all columns must be continuous");
        const std::size_t p = x.cols();
        const std::size_t n = x.rows();

        std::vector<double> dist(p * p, -1.0);  // -1: no co-observed rows
        auto distance = [&](std::size_t a, std::size_t b) {
            double& d = dist[a * p + b];
            if (d != -1.0) return d;
            const auto& ca = x.column(a);
            const auto& cb = x.column(b);
            double ss = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (ca.missing[i] || cb.missing[i]) continue;
                const double diff = ca.values[i] - cb.values[i];
                ss += diff * diff;
                ++count;
            }
            d = count ? std::sqrt(ss / static_cast<double>(count)) : -2.0;
            dist[b * p + a] = d;
            return d;
        };

        for (std::size_t j = 0; j < p; ++j) {
            const auto& col = x.column(j);
            if (col.n_missing() == 0) continue;
            double sum = 0.0;
            std::size_t obs = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (!col.missing[i]) {
                    sum += col.values[i];
                    ++obs;
                }
            if (obs == 0) throw Error("knn: column '" + col.name() + "' has no observed values");
            const double mean = sum / static_cast<double>(obs);

            for (std::size_t i = 0; i < n; ++i) {
                if (!col.missing[i]) continue;
                Cell cell{i, j, mean, {}};
                for (std::size_t c = 0; c < p; ++c) {
                    if (c == j || x.is_missing(i, c)) continue;
                    const double d = distance(j, c);
                    if (d < 0) continue;
                    cell.neighbours.push_back({d, c});
                }
                std::sort(cell.neighbours.begin(), cell.neighbours.end());
                cells_.push_back(std::move(cell));
            }
        }
    }

    MixedMatrix impute(std::size_t k) const {
        MixedMatrix out = x_;
        for (const auto& cell : cells_) {
            if (cell.neighbours.empty()) {
                out.set(cell.row, cell.col, cell.fallback);
                continue;
            }
            const std::size_t use = std::min(k, cell.neighbours.size());
            double num = 0.0, den = 0.0;
            for (std::size_t q = 0; q < use; ++q) {
                const auto [d, c] = cell.neighbours[q];
                const double w = 1.0 / (d + kKnnWeightEpsilon);
                num += w * x_.value(cell.row, c);
                den += w;
            }
            out.set(cell.row, cell.col, num / den);
        }
        return out;
    }

private:
    struct Cell {
        std::size_t row, col;
        double fallback;
        std::vector<std::pair<double, std::size_t>> neighbours;  // (distance, column)
    };

    const MixedMatrix& x_;
    std::vector<Cell> cells_;
};

struct CellRef {
    std::size_t row;
    std::size_t group;
};

}  // namespace

MixedMatrix knn_impute_continuous(const MixedMatrix& x, std::size_t k) {
    if (k < 1) throw Error("knn: k must be positive");
    if (k >= x.cols()) throw Error("knn: k must be smaller than the number of columns");
    return NeighbourIndex(x).impute(k);
}

CvResult cv_select_k(const MixedMatrix& x, const KnnConfig& config) {
    if (config.n_validation_sets < 1) throw Error("knn: need at least one validation set");
    if (!(config.cv_missing_fraction > 0.0 && config.cv_missing_fraction < 1.0))
        throw Error("knn: cv_missing_fraction must lie in (0, 1)");

    const DummyEncoding enc = dummy_encode(x);
    const auto [standardized, params] = standardize(enc.encoded);
    const std::size_t p_encoded = standardized.cols();

    CvResult result;
    std::set<std::size_t> seen;
    for (std::size_t k : config.k_candidates)
        if (k >= 1 && k < p_encoded && seen.insert(k).second) result.k_values.push_back(k);
    if (result.k_values.empty())
        throw Error("knn: no candidate k is smaller than the " + std::to_string(p_encoded) + " encoded columns");

    const MixedMatrix complete = initial_guess(standardized);
    std::vector<CellRef> observed;
    for (std::size_t g = 0; g < x.cols(); ++g)
        for (std::size_t i = 0; i < x.rows(); ++i)
            if (!x.is_missing(i, g)) observed.push_back({i, g});
    const auto n_hide =
        static_cast<std::size_t>(std::llround(config.cv_missing_fraction * static_cast<double>(observed.size())));
    if (n_hide == 0) throw Error("knn: not enough observed cells to inject validation gaps");

    result.errors.assign(result.k_values.size(), std::vector<double>(config.n_validation_sets, 0.0));
    for (std::size_t t = 0; t < config.n_validation_sets; ++t) {
        Rng rng(derive_seed(config.seed, {kCvStream, t}));
        std::vector<CellRef> hidden;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            std::vector<CellRef> pool = observed;
            for (std::size_t q = 0; q < n_hide; ++q) std::swap(pool[q], pool[q + uniform_index(rng, pool.size() - q)]);
            hidden.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_hide));
            std::vector<std::size_t> per_group(x.cols(), 0);
            for (const auto& c : hidden) ++per_group[c.group];
            ok = true;
            for (std::size_t g = 0; g < x.cols(); ++g) ok = ok && per_group[g] < x.rows();
        }
        if (!ok) throw Error("knn: cannot place validation gaps without emptying a column");

        MixedMatrix masked = complete;
        for (const auto& c : hidden) {
            const auto& group = enc.groups[c.group];
            for (std::size_t q = 0; q < group.count; ++q) masked.set_missing(c.row, group.first + q);
        }
        const NeighbourIndex index(masked);

        for (std::size_t ki = 0; ki < result.k_values.size(); ++ki) {
            const MixedMatrix decoded =
                dummy_decode(retransform(index.impute(result.k_values[ki]), params), enc.source_schema, enc.groups);
            double se = 0.0, sum = 0.0, sum_sq = 0.0;
            std::size_t n_cont = 0, n_cat = 0, wrong = 0;
            for (const auto& c : hidden) {
                const double truth = x.value(c.row, c.group);
                const double guess = decoded.value(c.row, c.group);
                if (x.column(c.group).type().is_continuous()) {
                    se += (truth - guess) * (truth - guess);
                    sum += truth;
                    sum_sq += truth * truth;
                    ++n_cont;
                } else {
                    ++n_cat;
                    wrong += truth != guess ? 1 : 0;
                }
            }
            double err = 0.0;
            int parts = 0;
            if (n_cont) {
                const double dn = static_cast<double>(n_cont);
                const double mse = se / dn;
                const double var = std::max(0.0, sum_sq / dn - (sum / dn) * (sum / dn));
                // Constant truth: fall back to plain RMSE.
                err += var > 0.0 ? std::sqrt(mse / var) : std::sqrt(mse);
                ++parts;
            }
            if (n_cat) {
                err += static_cast<double>(wrong) / static_cast<double>(n_cat);
                ++parts;
            }
            result.errors[ki][t] = err / parts;
        }
    }

    double best = 0.0;
    for (std::size_t ki = 0; ki < result.k_values.size(); ++ki) {
        double mean = 0.0;
        for (double e : result.errors[ki]) mean += e;
        mean /= static_cast<double>(config.n_validation_sets);
        if (ki == 0 || mean < best || (mean == best && result.k_values[ki] < result.k_best)) {
            best = mean;
            result.k_best = result.k_values[ki];
        }
    }
    return result;
}

KnnOutcome knn_impute_mixed(const MixedMatrix& x, const KnnConfig& config) {
    KnnOutcome outcome;
    outcome.cv = cv_select_k(x, config);
    const DummyEncoding enc = dummy_encode(x);
    const auto [standardized, params] = standardize(enc.encoded);
    const MixedMatrix decoded =
        dummy_decode(retransform(knn_impute_continuous(standardized, outcome.cv.k_best), params), enc.source_schema,
                     enc.groups);
    // Copy only the filled cells so observed cells stay bit-identical.
    outcome.imputed = x;
    for (std::size_t j = 0; j < x.cols(); ++j)
        for (std::size_t i = 0; i < x.rows(); ++i)
            if (x.is_missing(i, j)) outcome.imputed.set(i, j, decoded.value(i, j));
    return outcome;
}

void write_cv_errors_csv(std::ostream& out, const CvResult& cv) {
    out << "k";
    const std::size_t l = cv.errors.empty() ? 0 : cv.errors.front().size();
    for (std::size_t t = 0; t < l; ++t) out << ",set" << (t + 1);
    out << '\n';
    for (std::size_t ki = 0; ki < cv.k_values.size(); ++ki) {
        out << cv.k_values[ki];
        for (double e : cv.errors[ki]) out << ',' << nlohmann::json(e).dump();
        out << '\n';
    }
}

nlohmann::json to_json(const CvResult& cv) {
    return {{"k_best", cv.k_best}, {"k_values", cv.k_values}, {"cv_errors", cv.errors}};
}

}  // namespace rfimpute

#include "rfimpute/forest.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "rfimpute/random.hpp"

namespace rfimpute {

namespace {

constexpr std::size_t kMaxExhaustiveLevels = 10;

struct Candidate {
    bool valid = false;
    std::size_t variable = 0;
    double threshold = 0.0;
    std::vector<std::uint8_t> left_levels;
    double decrease = 0.0;
};

// Grows one tree over a multiset of training rows. Regression responses are
// centred at each node before scanning so that sum-of-squares differences do
// not cancel catastrophically.
class TreeGrower {
public:
    TreeGrower(const MixedMatrix& x, const std::vector<double>& y, Task task, std::size_t n_classes,
               std::size_t min_node, std::size_t m_try, Rng& rng)
        : x_(x), y_(y), task_(task), n_classes_(n_classes), min_node_(min_node), m_try_(m_try), rng_(rng),
          variables_(x.cols()) {
        std::iota(variables_.begin(), variables_.end(), std::size_t{0});
    }

    Tree grow(std::vector<std::size_t> samples) {
        samples_ = std::move(samples);
        Tree tree;
        tree.nodes.emplace_back();
        struct Pending {
            std::size_t node, begin, end;
        };
        std::vector<Pending> stack{{0, 0, samples_.size()}};
        while (!stack.empty()) {
            auto [node, begin, end] = stack.back();
            stack.pop_back();
            tree.nodes[node].n_samples = end - begin;
            tree.nodes[node].prediction = leaf_value(begin, end);

            Candidate best = find_split(begin, end);
            if (!best.valid) continue;

            TreeNode& n = tree.nodes[node];
            n.variable = best.variable;
            n.threshold = best.threshold;
            n.left_levels = std::move(best.left_levels);
            n.impurity_decrease = best.decrease;
            n.left = static_cast<std::int32_t>(tree.nodes.size());
            n.right = n.left + 1;
            const TreeNode rule = n;
            auto mid = std::stable_partition(samples_.begin() + static_cast<std::ptrdiff_t>(begin),
                                             samples_.begin() + static_cast<std::ptrdiff_t>(end),
                                             [&](std::size_t r) { return rule.goes_left(x_, r); });
            const auto split = static_cast<std::size_t>(mid - samples_.begin());
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            stack.push_back({static_cast<std::size_t>(rule.right), split, end});
            stack.push_back({static_cast<std::size_t>(rule.left), begin, split});
        }
        return tree;
    }

private:
    double leaf_value(std::size_t begin, std::size_t end) const {
        if (task_ == Task::Regression) {
            double sum = 0.0;
            for (std::size_t k = begin; k < end; ++k) sum += y_[samples_[k]];
            return sum / static_cast<double>(end - begin);
        }
        std::vector<std::size_t> counts(n_classes_, 0);
        for (std::size_t k = begin; k < end; ++k) ++counts[static_cast<std::size_t>(y_[samples_[k]])];
        return static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }

    Candidate find_split(std::size_t begin, std::size_t end) {
        const std::size_t n = end - begin;
        if (n <= min_node_ || n < 2) return {};

        // Node impurity: sum of squares about the mean, or n * Gini.
        double impurity = 0.0;
        if (task_ == Task::Regression) {
            double sum = 0.0;
            for (std::size_t k = begin; k < end; ++k) sum += y_[samples_[k]];
            node_mean_ = sum / static_cast<double>(n);
            bool pure = true;
            const double first = y_[samples_[begin]];
            for (std::size_t k = begin; k < end; ++k) {
                const double d = y_[samples_[k]] - node_mean_;
                impurity += d * d;
                pure = pure && y_[samples_[k]] == first;
            }
            if (pure) return {};
        } else {
            node_counts_.assign(n_classes_, 0.0);
            for (std::size_t k = begin; k < end; ++k) node_counts_[static_cast<std::size_t>(y_[samples_[k]])] += 1.0;
            double sq = 0.0;
            std::size_t present = 0;
            for (double c : node_counts_) {
                sq += c * c;
                present += c > 0 ? 1 : 0;
            }
            if (present < 2) return {};
            impurity = static_cast<double>(n) - sq / static_cast<double>(n);
        }
        min_decrease_ = kMinRelativeDecrease * impurity;

        const std::size_t p = variables_.size();
        const std::size_t first_draw = std::min(m_try_, p);
        Candidate best = search(begin, end, draw(0, first_draw));
        if (!best.valid && first_draw < p) {
            const std::size_t extra = std::min(m_try_, p - first_draw);
            best = search(begin, end, draw(first_draw, first_draw + extra));
        }
        return best;
    }

    // Partial Fisher-Yates over variables_[from, to); returns them sorted.
    std::vector<std::size_t> draw(std::size_t from, std::size_t to) {
        const std::size_t p = variables_.size();
        for (std::size_t k = from; k < to; ++k) {
            std::size_t pick = k + uniform_index(rng_, p - k);
            std::swap(variables_[k], variables_[pick]);
        }
        std::vector<std::size_t> chosen(variables_.begin() + static_cast<std::ptrdiff_t>(from),
                                        variables_.begin() + static_cast<std::ptrdiff_t>(to));
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

    Candidate search(std::size_t begin, std::size_t end, const std::vector<std::size_t>& vars) {
        Candidate best;
        for (std::size_t v : vars) {
            if (x_.column(v).type().is_continuous())
                scan_continuous(begin, end, v, best);
            else
                scan_categorical(begin, end, v, best);
        }
        return best;
    }

    void consider(Candidate& best, std::size_t v, double decrease, double threshold,
                  const std::vector<std::uint8_t>* levels) {
        if (!(decrease > min_decrease_)) return;
        if (best.valid && !(decrease > best.decrease)) return;
        best.valid = true;
        best.variable = v;
        best.decrease = decrease;
        best.threshold = threshold;
        if (levels)
            best.left_levels = *levels;
        else
            best.left_levels.clear();
    }

    void scan_continuous(std::size_t begin, std::size_t end, std::size_t v, Candidate& best) {
        const auto& xs = x_.column(v).values;
        const std::size_t n = end - begin;
        pairs_.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t r = samples_[begin + k];
            pairs_[k] = {xs[r], task_ == Task::Regression ? y_[r] - node_mean_ : y_[r]};
        }
        std::sort(pairs_.begin(), pairs_.end());
        if (pairs_.front().first == pairs_.back().first) return;
        const double dn = static_cast<double>(n);

        if (task_ == Task::Regression) {
            double total = 0.0;
            for (const auto& pr : pairs_) total += pr.second;
            double left = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                left += pairs_[k].second;
                if (pairs_[k].first == pairs_[k + 1].first) continue;
                const double nl = static_cast<double>(k + 1);
                const double right = total - left;
                const double decrease = left * left / nl + right * right / (dn - nl) - total * total / dn;
                consider(best, v, decrease, midpoint(pairs_[k].first, pairs_[k + 1].first), nullptr);
            }
            return;
        }

        left_counts_.assign(n_classes_, 0.0);
        right_counts_ = node_counts_;
        double sq_left = 0.0;
        double sq_right = 0.0;
        for (double c : right_counts_) sq_right += c * c;
        const double sq_node = sq_right;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const auto cls = static_cast<std::size_t>(pairs_[k].second);
            sq_left += 2.0 * left_counts_[cls] + 1.0;
            sq_right -= 2.0 * right_counts_[cls] - 1.0;
            left_counts_[cls] += 1.0;
            right_counts_[cls] -= 1.0;
            if (pairs_[k].first == pairs_[k + 1].first) continue;
            const double nl = static_cast<double>(k + 1);
            const double decrease = sq_left / nl + sq_right / (dn - nl) - sq_node / dn;
            consider(best, v, decrease, midpoint(pairs_[k].first, pairs_[k + 1].first), nullptr);
        }
    }

    static double midpoint(double lo, double hi) {
        const double mid = lo + (hi - lo) / 2.0;
        return mid < hi ? mid : lo;
    }

    void scan_categorical(std::size_t begin, std::size_t end, std::size_t v, Candidate& best) {
        const auto& xs = x_.column(v).values;
        const std::size_t m_all = x_.column(v).type().n_levels();
        const std::size_t k_stats = task_ == Task::Regression ? 1 : n_classes_;
        // Per level: draw count and response sum (regression) or class counts.
        level_n_.assign(m_all, 0.0);
        level_stats_.assign(m_all * k_stats, 0.0);
        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t r = samples_[k];
            const auto l = static_cast<std::size_t>(xs[r]);
            level_n_[l] += 1.0;
            if (task_ == Task::Regression)
                level_stats_[l] += y_[r] - node_mean_;
            else
                level_stats_[l * k_stats + static_cast<std::size_t>(y_[r])] += 1.0;
        }
        std::vector<std::size_t> present;
        for (std::size_t l = 0; l < m_all; ++l)
            if (level_n_[l] > 0) present.push_back(l);
        const std::size_t m = present.size();
        if (m < 2) return;

        const double dn = static_cast<double>(end - begin);
        std::vector<double> total(k_stats, 0.0);
        for (std::size_t l : present)
            for (std::size_t c = 0; c < k_stats; ++c) total[c] += level_stats_[l * k_stats + c];
        double total_term = 0.0;
        for (double t : total) total_term += t * t;

        std::vector<double> left(k_stats);
        auto evaluate = [&](const std::vector<std::uint8_t>& goes_left) {
            std::fill(left.begin(), left.end(), 0.0);
            double nl = 0.0;
            for (std::size_t l : present) {
                if (!goes_left[l]) continue;
                nl += level_n_[l];
                for (std::size_t c = 0; c < k_stats; ++c) left[c] += level_stats_[l * k_stats + c];
            }
            double lt = 0.0, rt = 0.0;
            for (std::size_t c = 0; c < k_stats; ++c) {
                lt += left[c] * left[c];
                const double rc = total[c] - left[c];
                rt += rc * rc;
            }
            return lt / nl + rt / (dn - nl) - total_term / dn;
        };

        // Levels absent from the node always go left.
        std::vector<std::uint8_t> goes_left(m_all, 1);
        if (m <= kMaxExhaustiveLevels) {
            // The last present level stays right; the other m-1 enumerate
            // all 2^(m-1)-1 nontrivial left sets.
            const std::uint64_t limit = std::uint64_t{1} << (m - 1);
            for (std::uint64_t bits = 1; bits < limit; ++bits) {
                for (std::size_t q = 0; q < m; ++q)
                    goes_left[present[q]] = q + 1 < m && ((bits >> q) & 1U) ? 1 : 0;
                consider(best, v, evaluate(goes_left), 0.0, &goes_left);
            }
            return;
        }

        // Many levels: order by mean response / share of the first class and
        // scan prefixes as if ordinal.
        std::vector<double> key(m_all, 0.0);
        for (std::size_t l : present) key[l] = level_stats_[l * k_stats] / level_n_[l];
        std::vector<std::size_t> ordered = present;
        std::stable_sort(ordered.begin(), ordered.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
        for (std::size_t l : present) goes_left[l] = 0;
        for (std::size_t q = 0; q + 1 < m; ++q) {
            goes_left[ordered[q]] = 1;
            consider(best, v, evaluate(goes_left), 0.0, &goes_left);
        }
    }

    const MixedMatrix& x_;
    const std::vector<double>& y_;
    Task task_;
    std::size_t n_classes_;
    std::size_t min_node_;
    std::size_t m_try_;
    Rng& rng_;
    std::vector<std::size_t> variables_;
    std::vector<std::size_t> samples_;

    double node_mean_ = 0.0;
    double min_decrease_ = 0.0;
    std::vector<double> node_counts_, left_counts_, right_counts_;
    std::vector<std::pair<double, double>> pairs_;
    std::vector<double> level_n_, level_stats_;
};

void check_predictors(const MixedMatrix& x, const char* what) {
    if (x.rows() > 0 && !x.complete()) throw Error(std::string(what) + ": predictors must be complete");
}

}  // namespace

std::size_t default_mtry(std::size_t n_predictors) {
    std::size_t r = 0;
    while ((r + 1) * (r + 1) <= n_predictors) ++r;
    return std::max<std::size_t>(r, 1);
}

bool TreeNode::goes_left(const MixedMatrix& x, std::size_t row) const {
    const double v = x.value(row, variable);
    if (left_levels.empty() && x.column(variable).type().is_continuous()) return v <= threshold;
    const auto level = static_cast<std::size_t>(v);
    return level >= left_levels.size() || left_levels[level] != 0;
}

double Tree::predict(const MixedMatrix& x, std::size_t row) const {
    std::size_t k = 0;
    while (!nodes[k].is_leaf())
        k = static_cast<std::size_t>(nodes[k].goes_left(x, row) ? nodes[k].left : nodes[k].right);
    return nodes[k].prediction;
}

std::size_t Tree::depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        deepest = std::max(deepest, d[k]);
        if (!nodes[k].is_leaf()) {
            d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
            d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
        }
    }
    return deepest;
}

Forest fit(const MixedMatrix& x, const Column& y, const ForestParams& params) {
    const std::size_t n = x.rows();
    if (y.size() != n) throw Error("fit: response length does not match predictor rows");
    if (n < 2) throw Error("fit: need at least 2 rows");
    if (x.cols() < 1) throw Error("fit: no predictor columns");
    if (params.n_tree < 1) throw Error("fit: n_tree must be at least 1");
    check_predictors(x, "fit");
    if (y.n_missing() > 0) throw Error("fit: response must be complete");
    const std::size_t m_try = params.m_try.value_or(default_mtry(x.cols()));
    if (m_try < 1 || m_try > x.cols())
        throw Error("fit: m_try must lie in [1, " + std::to_string(x.cols()) + "]");

    Forest forest;
    forest.predictor_schema = x.schema();
    forest.task = y.type().is_categorical() ? Task::Classification : Task::Regression;
    if (forest.task == Task::Classification) {
        forest.n_classes = y.type().n_levels();
        forest.class_counts.assign(forest.n_classes, 0);
        for (double v : y.values) ++forest.class_counts[static_cast<std::size_t>(v)];
    } else {
        double mean = std::accumulate(y.values.begin(), y.values.end(), 0.0) / static_cast<double>(n);
        double ss = 0.0;
        for (double v : y.values) ss += (v - mean) * (v - mean);
        forest.response_variance = ss / static_cast<double>(n);
    }
    const std::size_t min_node =
        forest.task == Task::Regression ? params.min_node_regression : params.min_node_classification;

    forest.trees.resize(params.n_tree);
    forest.in_bag.assign(params.n_tree, std::vector<std::uint32_t>(n, 0));

    auto grow_one = [&](std::size_t t) {
        Rng rng(params.seed ^ static_cast<std::uint64_t>(t));
        std::vector<std::size_t> sample(n);
        if (params.bootstrap) {
            for (auto& s : sample) s = uniform_index(rng, n);
        } else {
            std::iota(sample.begin(), sample.end(), std::size_t{0});
        }
        for (std::size_t s : sample) ++forest.in_bag[t][s];
        TreeGrower grower(x, y.values, forest.task, forest.n_classes, min_node, m_try, rng);
        forest.trees[t] = grower.grow(std::move(sample));
    };

    const unsigned threads = std::max(1U, std::min<unsigned>(params.threads, static_cast<unsigned>(params.n_tree)));
    if (threads == 1) {
        for (std::size_t t = 0; t < params.n_tree; ++t) grow_one(t);
        return forest;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < threads; ++w)
            workers.emplace_back([&, w] {
                try {
                    for (std::size_t t = w; t < params.n_tree; t += threads) grow_one(t);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return forest;
}

namespace {

void check_schema(const Forest& forest, const MixedMatrix& x) {
    if (x.cols() != forest.predictor_schema.size()) throw Error("predict: schema mismatch (column count)");
    for (std::size_t j = 0; j < x.cols(); ++j)
        if (!(x.column(j).spec.type == forest.predictor_schema[j].type))
            throw Error("predict: schema mismatch at column '" + x.column(j).name() + "'");
    check_predictors(x, "predict");
}

double vote(const std::vector<std::size_t>& votes) {
    return static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

}  // namespace

std::vector<double> predict(const Forest& forest, const MixedMatrix& x) {
    check_schema(forest, x);
    std::vector<double> out(x.rows(), 0.0);
    std::vector<std::size_t> votes;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (forest.task == Task::Regression) {
            double sum = 0.0;
            for (const auto& tree : forest.trees) sum += tree.predict(x, i);
            out[i] = sum / static_cast<double>(forest.trees.size());
        } else {
            votes.assign(forest.n_classes, 0);
            for (const auto& tree : forest.trees) ++votes[static_cast<std::size_t>(tree.predict(x, i))];
            out[i] = vote(votes);
        }
    }
    return out;
}

double oob_error(const Forest& forest, const MixedMatrix& x, const Column& y) {
    check_schema(forest, x);
    const std::size_t n = x.rows();
    if (y.size() != n || forest.in_bag.empty() || forest.in_bag.front().size() != n)
        throw Error("oob_error: data does not match the training set");

    std::vector<double> sum(n, 0.0);
    std::vector<std::size_t> hits(n, 0);
    std::vector<std::vector<std::size_t>> votes;
    if (forest.task == Task::Classification) votes.assign(n, std::vector<std::size_t>(forest.n_classes, 0));
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!forest.is_oob(t, i)) continue;
            const double p = forest.trees[t].predict(x, i);
            ++hits[i];
            if (forest.task == Task::Regression)
                sum[i] += p;
            else
                ++votes[i][static_cast<std::size_t>(p)];
        }
    }

    double loss = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (hits[i] == 0) continue;
        ++used;
        if (forest.task == Task::Regression) {
            const double d = sum[i] / static_cast<double>(hits[i]) - y.values[i];
            loss += d * d;
        } else if (vote(votes[i]) != y.values[i]) {
            loss += 1.0;
        }
    }
    if (used == 0) throw Error("oob_error: no row is out of bag");
    const double mean_loss = loss / static_cast<double>(used);
    if (forest.task == Task::Classification) return mean_loss;
    if (!(forest.response_variance > 0.0)) return 0.0;
    return std::sqrt(mean_loss / forest.response_variance);
}

std::uint64_t schema_fingerprint(const Schema& schema) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](std::string_view s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff;
        h *= 0x100000001b3ULL;
    };
    for (const auto& spec : schema) {
        mix(spec.name);
        mix(spec.type.is_categorical() ? "categorical" : "continuous");
        for (const auto& l : spec.type.levels) mix(l);
    }
    return h;
}

nlohmann::json to_json(const Forest& forest) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : forest.trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& node : tree.nodes) {
            nlohmann::json j = {{"n", node.n_samples}, {"prediction", node.prediction}};
            if (!node.is_leaf()) {
                j["variable"] = node.variable;
                j["left"] = node.left;
                j["right"] = node.right;
                j["decrease"] = node.impurity_decrease;
                if (node.left_levels.empty())
                    j["threshold"] = node.threshold;
                else
                    j["left_levels"] = node.left_levels;
            }
            nodes.push_back(std::move(j));
        }
        trees.push_back({{"nodes", std::move(nodes)}});
    }
    return {{"format", "rfimpute-forest"},
            {"version", 1},
            {"task", forest.task == Task::Regression ? "regression" : "classification"},
            {"n_classes", forest.n_classes},
            {"schema_fingerprint", schema_fingerprint(forest.predictor_schema)},
            {"trees", std::move(trees)}};
}

}  // namespace rfimpute

#include "rfimpute/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace rfimpute {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::uint8_t> missing_from_nan(const std::vector<double>& values) {
    std::vector<std::uint8_t> missing(values.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) missing[i] = std::isnan(values[i]) ? 1 : 0;
    return missing;
}

}  // namespace

VariableType VariableType::categorical(std::vector<std::string> levels) {
    VariableType t;
    t.kind = Kind::Categorical;
    t.levels = std::move(levels);
    return t;
}

Column::Column(ColumnSpec spec_, std::vector<double> values_)
    : spec(std::move(spec_)), values(std::move(values_)), missing(missing_from_nan(values)) {}

Column::Column(ColumnSpec spec_, std::vector<double> values_, std::vector<std::uint8_t> missing_)
    : spec(std::move(spec_)), values(std::move(values_)), missing(std::move(missing_)) {
    for (std::size_t i = 0; i < missing.size() && i < values.size(); ++i)
        if (missing[i]) values[i] = kNaN;
}

std::size_t Column::n_missing() const {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t Mask::count_in_column(std::size_t j) const {
    auto first = bits_.begin() + static_cast<std::ptrdiff_t>(j * rows_);
    return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(rows_), std::uint8_t{1}));
}

MixedMatrix::MixedMatrix(std::vector<Column> columns) : columns_(std::move(columns)) {
    if (columns_.empty()) throw Error("matrix needs at least one column");
    rows_ = columns_.front().size();
    if (rows_ == 0) throw Error("matrix needs at least one row");
    std::set<std::string> names;
    for (const auto& c : columns_) {
        if (c.spec.name.empty()) throw Error("empty column name");
        if (!names.insert(c.spec.name).second) throw Error("duplicate column name '" + c.spec.name + "'");
        if (c.values.size() != rows_ || c.missing.size() != rows_)
            throw Error("column '" + c.spec.name + "' has inconsistent length");
        const auto& type = c.spec.type;
        if (type.is_continuous() && !type.levels.empty())
            throw Error("continuous column '" + c.spec.name + "' carries levels");
        if (type.is_categorical()) {
            if (type.levels.size() < 2)
                throw Error("categorical column '" + c.spec.name + "' needs at least 2 levels");
            std::set<std::string> seen;
            for (const auto& l : type.levels) {
                if (l.empty()) throw Error("categorical column '" + c.spec.name + "' has an empty level");
                if (!seen.insert(l).second)
                    throw Error("categorical column '" + c.spec.name + "' repeats level '" + l + "'");
            }
        }
        for (std::size_t i = 0; i < rows_; ++i) {
            if (c.missing[i]) continue;
            double v = c.values[i];
            if (!std::isfinite(v)) throw Error("column '" + c.spec.name + "' holds a non-finite observed value");
            if (type.is_categorical()) {
                if (v < 0 || v != std::floor(v) || v >= static_cast<double>(type.levels.size()))
                    throw Error("column '" + c.spec.name + "' holds an invalid level index");
            }
        }
    }
}

Schema MixedMatrix::schema() const {
    Schema s;
    s.reserve(columns_.size());
    for (const auto& c : columns_) s.push_back(c.spec);
    return s;
}

void MixedMatrix::set(std::size_t i, std::size_t j, double value) {
    auto& c = columns_.at(j);
    if (c.spec.type.is_categorical() &&
        (value < 0 || value != std::floor(value) || value >= static_cast<double>(c.spec.type.n_levels())))
        throw Error("invalid level index for column '" + c.spec.name + "'");
    if (!std::isfinite(value)) throw Error("non-finite value for column '" + c.spec.name + "'");
    c.values.at(i) = value;
    c.missing[i] = 0;
}

void MixedMatrix::set_missing(std::size_t i, std::size_t j) {
    auto& c = columns_.at(j);
    c.values.at(i) = kNaN;
    c.missing[i] = 1;
}

Mask MixedMatrix::mask() const {
    Mask m(rows_, cols());
    for (std::size_t j = 0; j < cols(); ++j)
        for (std::size_t i = 0; i < rows_; ++i)
            if (columns_[j].missing[i]) m.set(i, j);
    return m;
}

std::size_t MixedMatrix::n_missing() const {
    std::size_t n = 0;
    for (const auto& c : columns_) n += c.n_missing();
    return n;
}

MixedMatrix MixedMatrix::select(std::span<const std::size_t> rows, std::span<const std::size_t> keep) const {
    std::vector<Column> out;
    out.reserve(keep.size());
    for (std::size_t j : keep) {
        const auto& src = columns_.at(j);
        Column c;
        c.spec = src.spec;
        c.values.reserve(rows.size());
        c.missing.reserve(rows.size());
        for (std::size_t i : rows) {
            c.values.push_back(src.values.at(i));
            c.missing.push_back(src.missing[i]);
        }
        out.push_back(std::move(c));
    }
    if (rows.empty()) {
        // Empty row selections are legal (e.g. x_mis of a complete column)
        // but the validating constructor rejects n = 0.
        MixedMatrix m;
        m.columns_ = std::move(out);
        m.rows_ = 0;
        return m;
    }
    return MixedMatrix(std::move(out));
}

bool operator==(const MixedMatrix& a, const MixedMatrix& b) {
    if (a.rows_ != b.rows_ || a.cols() != b.cols()) return false;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const auto& ca = a.columns_[j];
        const auto& cb = b.columns_[j];
        if (!(ca.spec == cb.spec) || ca.missing != cb.missing) return false;
        for (std::size_t i = 0; i < a.rows_; ++i)
            if (!ca.missing[i] && ca.values[i] != cb.values[i]) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

MixedMatrix initial_guess(const MixedMatrix& x) {
    std::vector<Column> out = x.columns();
    for (auto& c : out) {
        if (c.n_observed() == 0) throw Error("column '" + c.spec.name + "' has no observed values");
        if (c.n_missing() == 0) continue;
        double fill = 0.0;
        if (c.spec.type.is_continuous()) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < c.size(); ++i)
                if (!c.missing[i]) {
                    sum += c.values[i];
                    ++n;
                }
            fill = sum / static_cast<double>(n);
        } else {
            std::vector<std::size_t> counts(c.spec.type.n_levels(), 0);
            for (std::size_t i = 0; i < c.size(); ++i)
                if (!c.missing[i]) ++counts[static_cast<std::size_t>(c.values[i])];
            // max_element returns the first maximum, i.e. the lowest index.
            fill = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        }
        for (std::size_t i = 0; i < c.size(); ++i)
            if (c.missing[i]) {
                c.values[i] = fill;
                c.missing[i] = 0;
            }
    }
    return MixedMatrix(std::move(out));
}

std::vector<std::size_t> missingness_order(const MixedMatrix& x) {
    std::vector<std::size_t> order(x.cols());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> counts(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) counts[j] = x.column(j).n_missing();
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });
    return order;
}

VariablePartition partition(const MixedMatrix& working, const Mask& original, std::size_t s) {
    if (s >= working.cols()) throw Error("partition: column index out of range");
    if (working.cols() < 2) throw Error("no predictor columns");
    if (!working.complete()) throw Error("partition: working matrix must be complete");
    if (original.rows() != working.rows() || original.cols() != working.cols())
        throw Error("partition: mask shape mismatch");

    VariablePartition part;
    part.target = s;
    for (std::size_t i = 0; i < working.rows(); ++i)
        (original(i, s) ? part.mis_rows : part.obs_rows).push_back(i);

    std::vector<std::size_t> predictors;
    for (std::size_t j = 0; j < working.cols(); ++j)
        if (j != s) predictors.push_back(j);

    const auto& target = working.column(s);
    part.y_obs.spec = target.spec;
    for (std::size_t i : part.obs_rows) {
        part.y_obs.values.push_back(target.values[i]);
        part.y_obs.missing.push_back(0);
    }
    part.x_obs = working.select(part.obs_rows, predictors);
    part.x_mis = working.select(part.mis_rows, predictors);
    return part;
}

std::pair<MixedMatrix, StandardizationParams> standardize(const MixedMatrix& x) {
    StandardizationParams params;
    params.columns.resize(x.cols());
    std::vector<Column> out = x.columns();
    for (std::size_t j = 0; j < out.size(); ++j) {
        auto& c = out[j];
        if (!c.spec.type.is_continuous()) continue;
        auto& scale = params.columns[j];
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < c.size(); ++i)
            if (!c.missing[i]) {
                sum += c.values[i];
                ++n;
            }
        double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
        double ss = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i)
            if (!c.missing[i]) ss += (c.values[i] - mean) * (c.values[i] - mean);
        double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        scale.mean = mean;
        if (!(sd > 0.0)) {
            scale.constant = true;
            continue;
        }
        scale.standardized = true;
        scale.sd = sd;
        for (std::size_t i = 0; i < c.size(); ++i)
            if (!c.missing[i]) c.values[i] = (c.values[i] - mean) / sd;
    }
    return {MixedMatrix(std::move(out)), std::move(params)};
}

MixedMatrix retransform(const MixedMatrix& x, const StandardizationParams& params) {
    if (params.columns.size() != x.cols()) throw Error("retransform: parameter count mismatch");
    std::vector<Column> out = x.columns();
    for (std::size_t j = 0; j < out.size(); ++j) {
        const auto& scale = params.columns[j];
        if (!scale.standardized) continue;
        auto& c = out[j];
        for (std::size_t i = 0; i < c.size(); ++i)
            if (!c.missing[i]) c.values[i] = c.values[i] * scale.sd + scale.mean;
    }
    return MixedMatrix(std::move(out));
}

DummyEncoding dummy_encode(const MixedMatrix& x) {
    DummyEncoding enc;
    enc.source_schema = x.schema();
    std::vector<Column> out;
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const auto& src = x.column(j);
        DummyGroup g{j, out.size(), 1};
        if (src.spec.type.is_continuous()) {
            out.push_back(src);
        } else {
            const std::size_t m = src.spec.type.n_levels();
            g.count = m;
            for (std::size_t l = 0; l < m; ++l) {
                Column d;
                d.spec = {src.spec.name + "=" + src.spec.type.levels[l], VariableType::continuous()};
                d.values.resize(x.rows());
                d.missing = src.missing;
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    if (src.missing[i])
                        d.values[i] = kNaN;
                    else
                        d.values[i] = static_cast<std::size_t>(src.values[i]) == l ? 1.0 : -1.0;
                }
                out.push_back(std::move(d));
            }
        }
        enc.groups.push_back(g);
    }
    enc.encoded = MixedMatrix(std::move(out));
    return enc;
}

MixedMatrix dummy_decode(const MixedMatrix& encoded, const Schema& source_schema,
                         std::span<const DummyGroup> groups) {
    if (groups.size() != source_schema.size()) throw Error("dummy_decode: group count does not match schema");
    std::size_t next = 0;
    std::vector<Column> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        const auto& spec = source_schema[g];
        const std::size_t expected = spec.type.is_categorical() ? spec.type.n_levels() : 1;
        if (group.source != g || group.first != next || group.count != expected)
            throw Error("dummy_decode: malformed group for column '" + spec.name + "'");
        next += group.count;
        if (next > encoded.cols()) throw Error("dummy_decode: groups exceed encoded columns");
        for (std::size_t k = group.first; k < group.first + group.count; ++k)
            if (!encoded.column(k).type().is_continuous())
                throw Error("dummy_decode: encoded columns must be continuous");

        Column c;
        c.spec = spec;
        if (spec.type.is_continuous()) {
            c.values = encoded.column(group.first).values;
            c.missing = encoded.column(group.first).missing;
        } else {
            c.values.assign(encoded.rows(), kNaN);
            c.missing.assign(encoded.rows(), 0);
            for (std::size_t i = 0; i < encoded.rows(); ++i) {
                bool any_missing = false;
                std::size_t best = 0;
                double best_value = -std::numeric_limits<double>::infinity();
                for (std::size_t l = 0; l < group.count; ++l) {
                    if (encoded.is_missing(i, group.first + l)) {
                        any_missing = true;
                        break;
                    }
                    double v = encoded.value(i, group.first + l);
                    if (v > best_value) {
                        best_value = v;
                        best = l;
                    }
                }
                if (any_missing)
                    c.missing[i] = 1;
                else
                    c.values[i] = static_cast<double>(best);
            }
        }
        out.push_back(std::move(c));
    }
    if (next != encoded.cols()) throw Error("dummy_decode: groups do not cover all encoded columns");
    return MixedMatrix(std::move(out));
}

}  // namespace rfimpute

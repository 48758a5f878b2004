#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rfimpute {

/// Raised for any violated precondition or malformed input in this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Kind { Continuous, Categorical };

struct VariableType {
    Kind kind = Kind::Continuous;
    std::vector<std::string> levels;  // categorical only

    static VariableType continuous() { return {}; }
    static VariableType categorical(std::vector<std::string> levels);

    bool is_categorical() const { return kind == Kind::Categorical; }
    bool is_continuous() const { return kind == Kind::Continuous; }
    std::size_t n_levels() const { return levels.size(); }

    friend bool operator==(const VariableType&, const VariableType&) = default;
};

struct ColumnSpec {
    std::string name;
    VariableType type;

    friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

using Schema = std::vector<ColumnSpec>;

/// One variable of a MixedMatrix. Categorical cells hold their level index
/// as a double; missing cells hold NaN and are flagged in `missing`.
struct Column {
    ColumnSpec spec;
    std::vector<double> values;
    std::vector<std::uint8_t> missing;

    Column() = default;
    Column(ColumnSpec spec, std::vector<double> values);
    Column(ColumnSpec spec, std::vector<double> values, std::vector<std::uint8_t> missing);

    std::size_t size() const { return values.size(); }
    bool is_missing(std::size_t i) const { return missing[i] != 0; }
    std::size_t n_missing() const;
    std::size_t n_observed() const { return size() - n_missing(); }
    const VariableType& type() const { return spec.type; }
    const std::string& name() const { return spec.name; }
};

/// n x p boolean missingness indicator, column-major.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool operator()(std::size_t i, std::size_t j) const { return bits_[j * rows_ + i] != 0; }
    void set(std::size_t i, std::size_t j, bool value = true) { bits_[j * rows_ + i] = value ? 1 : 0; }
    std::size_t count() const;
    std::size_t count_in_column(std::size_t j) const;

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// n x p table with a per-column type and a missingness mask.
///
/// Construction validates shape and categorical level indices. The only
/// mutators are cell setters, which keep the mask and the stored values in
/// step.
class MixedMatrix {
public:
    MixedMatrix() = default;
    explicit MixedMatrix(std::vector<Column> columns);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return columns_.size(); }

    const Column& column(std::size_t j) const { return columns_.at(j); }
    const std::vector<Column>& columns() const { return columns_; }
    Schema schema() const;

    double value(std::size_t i, std::size_t j) const { return columns_[j].values[i]; }
    std::size_t level(std::size_t i, std::size_t j) const {
        return static_cast<std::size_t>(columns_[j].values[i]);
    }
    bool is_missing(std::size_t i, std::size_t j) const { return columns_[j].missing[i] != 0; }

    void set(std::size_t i, std::size_t j, double value);
    void set_missing(std::size_t i, std::size_t j);

    Mask mask() const;
    std::size_t n_missing() const;
    bool complete() const { return n_missing() == 0; }

    /// Columns `keep` (in that order) restricted to `rows` (in that order).
    MixedMatrix select(std::span<const std::size_t> rows, std::span<const std::size_t> keep) const;

    friend bool operator==(const MixedMatrix& a, const MixedMatrix& b);

private:
    std::size_t rows_ = 0;
    std::vector<Column> columns_;
};

// ---------------------------------------------------------------------------
// CSV and schema I/O

struct CsvOptions {
    std::string na_token = "NA";
};

MixedMatrix parse_csv(std::istream& in, const CsvOptions& options = {},
                      const std::optional<Schema>& schema = std::nullopt);
MixedMatrix parse_csv(std::string_view text, const CsvOptions& options = {},
                      const std::optional<Schema>& schema = std::nullopt);

void write_csv(std::ostream& out, const MixedMatrix& x, const CsvOptions& options = {});
std::string to_csv(const MixedMatrix& x, const CsvOptions& options = {});

/// Schema sidecar: JSON list of {"name", "kind", "levels"?}.
Schema parse_schema_json(std::istream& in);
std::string schema_to_json(const Schema& schema);

// ---------------------------------------------------------------------------
// Imputation building blocks

/// Mean (continuous) / mode (categorical, ties to lowest level index) fill.
MixedMatrix initial_guess(const MixedMatrix& x);

/// Column indices sorted by ascending missing count, ties by index.
std::vector<std::size_t> missingness_order(const MixedMatrix& x);

struct VariablePartition {
    std::size_t target = 0;
    Column y_obs;
    std::vector<std::size_t> obs_rows;
    std::vector<std::size_t> mis_rows;
    MixedMatrix x_obs;
    MixedMatrix x_mis;
};

/// Split a complete working matrix into the four parts used to refit
/// column `s`, using the original missingness to decide which rows are
/// observed.
VariablePartition partition(const MixedMatrix& working, const Mask& original, std::size_t s);

struct ColumnScale {
    bool standardized = false;  // false for categorical and constant columns
    bool constant = false;
    double mean = 0.0;
    double sd = 1.0;
};

struct StandardizationParams {
    std::vector<ColumnScale> columns;
};

std::pair<MixedMatrix, StandardizationParams> standardize(const MixedMatrix& x);
MixedMatrix retransform(const MixedMatrix& x, const StandardizationParams& params);

/// Maps one source column onto a contiguous run of encoded columns.
struct DummyGroup {
    std::size_t source = 0;
    std::size_t first = 0;
    std::size_t count = 1;
};

struct DummyEncoding {
    MixedMatrix encoded;
    Schema source_schema;
    std::vector<DummyGroup> groups;
};

/// Expand every m-level categorical column into m {-1,+1} indicator columns.
DummyEncoding dummy_encode(const MixedMatrix& x);

/// Inverse of dummy_encode; categorical cells take the level whose indicator
/// is largest (ties to lowest level index).
MixedMatrix dummy_decode(const MixedMatrix& encoded, const Schema& source_schema,
                         std::span<const DummyGroup> groups);

}  // namespace rfimpute

#include "rfimpute/data.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <iterator>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rfimpute {

namespace {

struct Field {
    std::string text;
    bool quoted = false;
};

using Record = std::vector<Field>;

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

// RFC 4180 records. Quoted fields may span lines and escape quotes as "".
// Unquoted fields are trimmed of surrounding blanks.
std::vector<Record> read_records(std::string_view text) {
    std::vector<Record> records;
    Record record;
    std::string raw;
    bool quoted = false;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;

    auto end_field = [&] {
        Field f;
        f.quoted = quoted;
        f.text = quoted ? raw : std::string(trim(raw));
        record.push_back(std::move(f));
        raw.clear();
        quoted = false;
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A physical line that is entirely blank is not a record.
        if (!(record.size() == 1 && !record[0].quoted && record[0].text.empty())) records.push_back(std::move(record));
        record.clear();
    };

    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        char ch = text[pos];
        if (in_quotes) {
            if (ch == '"') {
                if (pos + 1 < text.size() && text[pos + 1] == '"') {
                    raw.push_back('"');
                    ++pos;
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                raw.push_back(ch);
            }
            continue;
        }
        switch (ch) {
        case '"':
            if (quoted || !std::string(trim(raw)).empty())
                throw Error("csv: unexpected quote on line " + std::to_string(line));
            raw.clear();
            quoted = true;
            in_quotes = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            ++line;
            break;
        default:
            if (quoted && ch != ' ' && ch != '\t')
                throw Error("csv: text after closing quote on line " + std::to_string(line));
            if (!quoted) raw.push_back(ch);
            field_started = true;
            break;
        }
    }
    if (in_quotes) throw Error("csv: unterminated quoted field");
    if (field_started || !raw.empty() || !record.empty()) end_record();
    return records;
}

std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool is_missing_field(const Field& f, const CsvOptions& options) {
    return !f.quoted && (f.text == options.na_token || f.text.empty());
}

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s, const CsvOptions& options) {
    bool needs = s.empty() || s == options.na_token || s.find_first_of(",\"\r\n") != std::string::npos ||
                 s.front() == ' ' || s.front() == '\t' || s.back() == ' ' || s.back() == '\t';
    if (!needs) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

}  // namespace

MixedMatrix parse_csv(std::string_view text, const CsvOptions& options, const std::optional<Schema>& schema) {
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
        text.remove_prefix(3);

    auto records = read_records(text);
    if (records.empty()) throw Error("csv: missing header row");
    const Record& header = records.front();
    const std::size_t p = header.size();
    const std::size_t n = records.size() - 1;
    if (n == 0) throw Error("csv: no data rows");

    std::map<std::string, const ColumnSpec*> by_name;
    if (schema)
        for (const auto& spec : *schema) by_name[spec.name] = &spec;

    std::vector<Column> columns(p);
    std::set<std::string> seen;
    for (std::size_t j = 0; j < p; ++j) {
        const std::string& name = header[j].text;
        if (name.empty()) throw Error("csv: empty column name at position " + std::to_string(j + 1));
        if (!seen.insert(name).second) throw Error("csv: duplicate column name '" + name + "'");
        columns[j].spec.name = name;
        if (schema) {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw Error("csv: column '" + name + "' is not in the schema");
            columns[j].spec.type = it->second->type;
        }
    }
    for (std::size_t r = 1; r < records.size(); ++r)
        if (records[r].size() != p)
            throw Error("csv: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                        " fields, expected " + std::to_string(p));

    for (std::size_t j = 0; j < p; ++j) {
        auto& col = columns[j];
        col.values.assign(n, std::numeric_limits<double>::quiet_NaN());
        col.missing.assign(n, 0);
        std::size_t observed = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (is_missing_field(records[i + 1][j], options))
                col.missing[i] = 1;
            else
                ++observed;
        }
        if (observed == 0) throw Error("csv: column '" + col.spec.name + "' has no observed values");

        bool continuous = false;
        if (schema) {
            continuous = col.spec.type.is_continuous();
        } else {
            continuous = true;
            for (std::size_t i = 0; i < n && continuous; ++i)
                if (!col.missing[i] && !parse_number(records[i + 1][j].text)) continuous = false;
            col.spec.type = continuous ? VariableType::continuous() : VariableType::categorical({});
        }

        if (continuous) {
            for (std::size_t i = 0; i < n; ++i) {
                if (col.missing[i]) continue;
                auto v = parse_number(records[i + 1][j].text);
                if (!v)
                    throw Error("csv: row " + std::to_string(i + 1) + ", column '" + col.spec.name +
                                "': '" + records[i + 1][j].text + "' is not a number");
                col.values[i] = *v;
            }
            continue;
        }

        auto& levels = col.spec.type.levels;
        std::map<std::string, std::size_t> index;
        for (std::size_t l = 0; l < levels.size(); ++l) index[levels[l]] = l;
        for (std::size_t i = 0; i < n; ++i) {
            if (col.missing[i]) continue;
            const std::string& label = records[i + 1][j].text;
            auto it = index.find(label);
            if (it == index.end()) {
                if (schema)
                    throw Error("csv: row " + std::to_string(i + 1) + ", column '" + col.spec.name +
                                "': level '" + label + "' is not in the schema");
                it = index.emplace(label, levels.size()).first;
                levels.push_back(label);
            }
            col.values[i] = static_cast<double>(it->second);
        }
        if (levels.size() < 2)
            throw Error("csv: categorical column '" + col.spec.name + "' has fewer than 2 levels");
    }
    return MixedMatrix(std::move(columns));
}

MixedMatrix parse_csv(std::istream& in, const CsvOptions& options, const std::optional<Schema>& schema) {
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_csv(std::string_view(text), options, schema);
}

void write_csv(std::ostream& out, const MixedMatrix& x, const CsvOptions& options) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
        if (j) out << ',';
        out << quote_if_needed(x.column(j).name(), options);
    }
    out << '\n';
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            if (j) out << ',';
            const auto& c = x.column(j);
            if (c.is_missing(i))
                out << options.na_token;
            else if (c.type().is_categorical())
                out << quote_if_needed(c.type().levels[static_cast<std::size_t>(c.values[i])], options);
            else
                out << format_number(c.values[i]);
        }
        out << '\n';
    }
}

std::string to_csv(const MixedMatrix& x, const CsvOptions& options) {
    std::ostringstream os;
    write_csv(os, x, options);
    return os.str();
}

Schema parse_schema_json(std::istream& in) {
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("schema: ") + e.what());
    }
    if (!doc.is_array()) throw Error("schema: expected a JSON list");
    Schema schema;
    for (const auto& entry : doc) {
        if (!entry.is_object() || !entry.contains("name") || !entry.contains("kind"))
            throw Error("schema: each entry needs 'name' and 'kind'");
        ColumnSpec spec;
        spec.name = entry.at("name").get<std::string>();
        const auto kind = entry.at("kind").get<std::string>();
        if (kind == "continuous") {
            if (entry.contains("levels")) throw Error("schema: continuous column '" + spec.name + "' has levels");
        } else if (kind == "categorical") {
            if (!entry.contains("levels")) throw Error("schema: categorical column '" + spec.name + "' needs levels");
            spec.type = VariableType::categorical(entry.at("levels").get<std::vector<std::string>>());
            std::set<std::string> uniq(spec.type.levels.begin(), spec.type.levels.end());
            if (spec.type.levels.size() < 2 || uniq.size() != spec.type.levels.size() || uniq.count(""))
                throw Error("schema: column '" + spec.name + "' needs at least 2 unique non-empty levels");
        } else {
            throw Error("schema: unknown kind '" + kind + "'");
        }
        schema.push_back(std::move(spec));
    }
    return schema;
}

std::string schema_to_json(const Schema& schema) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& spec : schema) {
        nlohmann::json e = {{"name", spec.name}, {"kind", spec.type.is_categorical() ? "categorical" : "continuous"}};
        if (spec.type.is_categorical()) e["levels"] = spec.type.levels;
        doc.push_back(std::move(e));
    }
    return doc.dump(2);
}

}  // namespace rfimpute

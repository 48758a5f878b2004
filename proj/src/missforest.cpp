#include "rfimpute/missforest.hpp"

#include <cmath>
#include <limits>

#include "rfimpute/random.hpp"

namespace rfimpute {

double delta_continuous(const MixedMatrix& now, const MixedMatrix& old) {
    if (now.rows() != old.rows() || now.cols() != old.cols()) throw Error("delta_continuous: shape mismatch");
    double num = 0.0;
    double den = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < now.cols(); ++j) {
        if (!now.column(j).type().is_continuous()) continue;
        if (!old.column(j).type().is_continuous()) throw Error("delta_continuous: schema mismatch");
        any = true;
        const auto& a = now.column(j).values;
        const auto& b = old.column(j).values;
        for (std::size_t i = 0; i < now.rows(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += a[i] * a[i];
        }
    }
    if (!any) throw Error("delta_continuous: no continuous columns");
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

double delta_categorical(const MixedMatrix& now, const MixedMatrix& old, std::size_t n_missing_categorical) {
    if (now.rows() != old.rows() || now.cols() != old.cols()) throw Error("delta_categorical: shape mismatch");
    if (n_missing_categorical == 0) throw Error("delta_categorical: no missing categorical cells");
    std::size_t changed = 0;
    bool any = false;
    for (std::size_t j = 0; j < now.cols(); ++j) {
        if (!now.column(j).type().is_categorical()) continue;
        any = true;
        const auto& a = now.column(j).values;
        const auto& b = old.column(j).values;
        for (std::size_t i = 0; i < now.rows(); ++i) changed += a[i] != b[i] ? 1 : 0;
    }
    if (!any) throw Error("delta_categorical: no categorical columns");
    return static_cast<double>(changed) / static_cast<double>(n_missing_categorical);
}

bool stopping_fired(const DeltaTrace& trace) {
    if (trace.size() < 2) return false;
    const auto& now = trace[trace.size() - 1];
    const auto& before = trace[trace.size() - 2];
    bool any_type = false;
    auto increased = [&](const std::optional<double>& a, const std::optional<double>& b) {
        if (!a || !b) return true;
        any_type = true;
        return *a > *b;
    };
    const bool n_up = increased(now.delta_n, before.delta_n);
    const bool f_up = increased(now.delta_f, before.delta_f);
    return any_type && n_up && f_up;
}

std::pair<std::optional<double>, std::optional<double>> aggregate_oob(const std::map<std::size_t, double>& per_variable,
                                                                      const Schema& schema) {
    double sum_n = 0.0, sum_f = 0.0;
    std::size_t count_n = 0, count_f = 0;
    for (const auto& [j, err] : per_variable) {
        if (j >= schema.size()) throw Error("aggregate_oob: column index out of range");
        if (schema[j].type.is_categorical()) {
            sum_f += err;
            ++count_f;
        } else {
            sum_n += err;
            ++count_n;
        }
    }
    std::pair<std::optional<double>, std::optional<double>> out;
    if (count_n) out.first = sum_n / static_cast<double>(count_n);
    if (count_f) out.second = sum_f / static_cast<double>(count_f);
    return out;
}

ImputationOutcome impute(const MixedMatrix& x, const MissForestConfig& config) {
    if (config.max_iterations < 1) throw Error("impute: max_iterations must be at least 1");
    if (x.cols() < 2) throw Error("no predictor columns");
    for (const auto& c : x.columns())
        if (c.n_observed() == 0) throw Error("column '" + c.name() + "' has no observed values");

    ImputationOutcome outcome;
    const Mask mask = x.mask();
    std::vector<std::size_t> order;
    for (std::size_t j : missingness_order(x))
        if (mask.count_in_column(j) > 0) order.push_back(j);
    if (order.empty()) {
        outcome.imputed = x;
        return outcome;
    }

    std::size_t n_missing_categorical = 0;
    bool continuous_missing = false;
    for (std::size_t j : order) {
        if (x.column(j).type().is_categorical())
            n_missing_categorical += mask.count_in_column(j);
        else
            continuous_missing = true;
    }
    const Schema schema = x.schema();
    MixedMatrix working = initial_guess(x);
    std::map<std::size_t, double> previous_oob;

    for (std::size_t sweep = 1; sweep <= config.max_iterations; ++sweep) {
        MixedMatrix old = working;
        std::map<std::size_t, double> oob;
        for (std::size_t s : order) {
            const auto part = partition(working, mask, s);
            ForestParams params = config.forest;
            params.seed = derive_seed(config.seed, {kForestStream, sweep, s});
            try {
                const Forest forest = fit(part.x_obs, part.y_obs, params);
                const auto predicted = predict(forest, part.x_mis);
                for (std::size_t k = 0; k < part.mis_rows.size(); ++k) working.set(part.mis_rows[k], s, predicted[k]);
                if (params.bootstrap) oob[s] = oob_error(forest, part.x_obs, part.y_obs);
            } catch (const Error& e) {
                throw Error("column '" + x.column(s).name() + "': " + e.what());
            }
        }

        DeltaRecord record;
        if (continuous_missing) record.delta_n = delta_continuous(working, old);
        if (n_missing_categorical > 0) record.delta_f = delta_categorical(working, old, n_missing_categorical);
        outcome.trace.push_back(record);
        outcome.iterations_run = sweep;
        if (config.on_sweep) config.on_sweep(SweepSnapshot{sweep, working});

        if (stopping_fired(outcome.trace)) {
            outcome.stopped_by_criterion = true;
            working = std::move(old);  // previous_oob already belongs to it
            break;
        }
        previous_oob = std::move(oob);
    }

    outcome.imputed = std::move(working);
    outcome.per_variable_oob = std::move(previous_oob);
    std::tie(outcome.oob_nrmse, outcome.oob_pfc) = aggregate_oob(outcome.per_variable_oob, schema);
    return outcome;
}

nlohmann::json to_json(const ImputationOutcome& outcome) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& r : outcome.trace) {
        nlohmann::json rec = nlohmann::json::object();
        rec["delta_n"] = r.delta_n ? nlohmann::json(*r.delta_n) : nlohmann::json(nullptr);
        rec["delta_f"] = r.delta_f ? nlohmann::json(*r.delta_f) : nlohmann::json(nullptr);
        trace.push_back(std::move(rec));
    }
    nlohmann::json per_variable = nlohmann::json::object();
    for (const auto& [j, err] : outcome.per_variable_oob) {
        const std::string name = j < outcome.imputed.cols() ? outcome.imputed.column(j).name() : std::to_string(j);
        per_variable[name] = err;
    }
    nlohmann::json doc;
    doc["iterations"] = outcome.iterations_run;
    doc["stopped_by_criterion"] = outcome.stopped_by_criterion;
    doc["delta_trace"] = std::move(trace);
    doc["oob_nrmse"] = outcome.oob_nrmse ? nlohmann::json(*outcome.oob_nrmse) : nlohmann::json(nullptr);
    doc["oob_pfc"] = outcome.oob_pfc ? nlohmann::json(*outcome.oob_pfc) : nlohmann::json(nullptr);
    doc["per_variable_oob"] = std::move(per_variable);
    return doc;
}

}  // namespace rfimpute

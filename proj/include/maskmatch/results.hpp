#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmatch/harness.hpp"

namespace maskmatch {

// One CSV line per (run, metric).
struct ResultRow {
    std::string run_id;
    std::string paradigm;
    std::string dataset;
    std::string template_id;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
    double wall_seconds = 0.0;
};

inline constexpr std::string_view kCsvHeader = "run_id,paradigm,dataset,template,seed,metric,value,wall_seconds";

inline std::vector<ResultRow> result_rows(const RunReport& r) {
    std::vector<ResultRow> rows;
    auto add = [&](const std::string& metric, double value) {
        rows.push_back({r.run_id, std::string(to_string(r.paradigm)), r.dataset, std::string(to_string(r.label_template)),
                        r.seed, metric, value, r.wall_seconds});
    };
    add("dev_" + std::string(to_string(r.metric)), r.best_dev);
    if (r.test) add("test_" + std::string(to_string(r.metric)), *r.test);
    return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string number(double v, int digits = 17) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace detail

inline void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
        os << detail::csv_field(r.run_id) << ',' << r.paradigm << ',' << detail::csv_field(r.dataset) << ','
           << r.template_id << ',' << r.seed << ',' << r.metric << ',' << detail::number(r.value) << ','
           << detail::number(r.wall_seconds, 6) << '\n';
    }
}

inline nlohmann::json config_json(const TrainRunConfig& c) {
    nlohmann::json j = nlohmann::json::object();
    const KeyValues kv = c.to_keyvalues();
    for (const auto& [k, v] : kv.entries()) j[k] = v;
    return j;
}

inline nlohmann::json run_json(const RunRecord& rec) {
    const RunReport& r = rec.report;
    nlohmann::json j;
    j["run_id"] = r.run_id;
    j["paradigm"] = std::string(to_string(r.paradigm));
    j["dataset"] = r.dataset;
    j["template"] = std::string(to_string(r.label_template));
    j["seed"] = r.seed;
    j["config"] = config_json(rec.config);
    j["config_digest"] = r.digest;
    j["wall_seconds"] = r.wall_seconds;
    if (rec.error) {
        j["error"] = *rec.error;
        return j;
    }
    j["metric"] = std::string(to_string(r.metric));
    j["dev"] = r.best_dev;
    j["best_epoch"] = r.best_epoch;
    if (r.test) j["test"] = *r.test;
    j["train_examples"] = r.train_examples;
    j["optimizer_steps"] = r.optimizer_steps;
    j["planned_steps"] = r.planned_steps;
    j["stopped_early"] = r.stopped_early;
    j["low_resource_guard_applied"] = r.guard_applied;
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev", e.dev_metric}});
    j["epochs"] = epochs;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : result_rows(r)) {
        rows.push_back({{"metric", row.metric}, {"value", row.value}});
    }
    j["results"] = rows;
    return j;
}

inline nlohmann::json table_json(const ComparisonTable& t) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : t.cells) {
        nlohmann::json cell{{"row", c.row}, {"dataset", c.dataset}, {"seeds", c.seeds}, {"values", c.values},
                            {"failures", c.failures}};
        if (!c.values.empty()) {
            cell["mean"] = c.mean;
            cell["spread"] = c.spread;
        }
        cells.push_back(cell);
    }
    nlohmann::json j{{"split", t.split}, {"rows", t.rows}, {"datasets", t.datasets}, {"cells", cells}};
    if (!t.default_row.empty()) j["default_row"] = t.default_row;
    return j;
}

// Accumulates runs and writes <stem>.csv plus <stem>.json side by side.
class ResultsWriter {
   public:
    explicit ResultsWriter(std::filesystem::path csv_path) : csv_(std::move(csv_path)) {}

    const std::filesystem::path& csv_path() const { return csv_; }
    std::filesystem::path json_path() const {
        auto p = csv_;
        return p.replace_extension(".json");
    }

    void add(const RunRecord& rec) {
        runs_.push_back(rec);
        if (!rec.error) {
            auto more = result_rows(rec.report);
            rows_.insert(rows_.end(), more.begin(), more.end());
        }
    }

    void set_table(const ComparisonTable& t) { table_ = table_json(t); }
    void set_extra(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

    const std::vector<ResultRow>& rows() const { return rows_; }

    void write() const {
        if (csv_.has_parent_path()) std::filesystem::create_directories(csv_.parent_path());
        std::ofstream csv(csv_);
        if (!csv) fail(ErrorKind::kData, "cannot write " + csv_.string());
        write_csv(csv, rows_);
        nlohmann::json j = extra_.is_null() ? nlohmann::json::object() : extra_;
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : runs_) runs.push_back(run_json(r));
        j["runs"] = runs;
        if (!table_.is_null()) j["table"] = table_;
        std::ofstream js(json_path());
        if (!js) fail(ErrorKind::kData, "cannot write " + json_path().string());
        js << j.dump(2) << '\n';
    }

   private:
    std::filesystem::path csv_;
    std::vector<RunRecord> runs_;
    std::vector<ResultRow> rows_;
    nlohmann::json table_;
    nlohmann::json extra_;
};

}  // namespace maskmatch

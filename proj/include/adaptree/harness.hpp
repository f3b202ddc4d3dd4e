#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptree/adaptive.hpp"
#include "adaptree/measure.hpp"
#include "adaptree/trainer.hpp"

namespace adaptree {

enum class SweepMode { train, approximate, compile };

std::string to_string(SweepMode m);
SweepMode parse_mode(const std::string& s);

struct ExperimentConfig {
    SweepMode mode = SweepMode::train;
    std::vector<std::string> targets{"onedisc"};
    int theta = 1;
    int max_level = 16;
    std::vector<double> grid;  // n_train, eta or eps depending on mode
    std::vector<double> sigmas{0.0};
    int trials = 1;
    std::size_t n_test = 10000;
    std::uint64_t seed = 0;
    std::string output_dir = "results";
    MlpArchitecture arch;
    TrainConfig train;
    std::size_t mc_points = 100000;
    int workers = 0;  // 0: ADAPTREE_WORKERS or hardware threads

    void validate() const;
    std::string x_name() const;       // n_train | eta | eps
    std::string metric_name() const;  // test_mse | err2 | K

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;
};

Dataset generate_dataset(const std::string& target, std::size_t n, double sigma, const Measure& m, std::uint64_t seed);

struct ResultRow {
    std::string mode, target;
    double x = 0, sigma = 0;
    int trial = 0;
    double metric = 0;  // NaN on a failed point
    double seconds = 0;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();  // per-point details, kept in records.jsonl

    bool failed() const { return !(metric == metric); }
    std::string key() const;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    void sort();  // mode, target, sigma, x, trial
    // later rows replace earlier ones with the same key, except that a failure never replaces a success
    void merge(const ResultTable& other);
    bool contains_success(const std::string& key) const;

    std::string to_csv() const;
    static ResultTable from_csv(const std::string& text);
    void save(const std::string& dir) const;  // results.csv + records.jsonl
    static ResultTable load(const std::string& csv_path);  // picks up records.jsonl beside it when present
};

extern const char* const kCsvHeader;
std::string csv_line(const ResultRow& r);

// largest eta on a 400-point geometric grid whose L2 error is within eps
PiecewisePolynomial approximant_for_accuracy(const RefinementField& field, double eps);

struct SweepProgress {
    std::size_t done = 0, total = 0, skipped = 0;
    const ResultRow* row = nullptr;
};

// resumes from cfg.output_dir/results.csv when it exists; completed rows are appended as they finish
ResultTable run_sweep(const ExperimentConfig& cfg, const std::function<void(const SweepProgress&)>& progress = {});
// in-memory variant: rows of `existing` with matching keys are not recomputed
ResultTable run_sweep(const ExperimentConfig& cfg, const ResultTable& existing, bool write_files,
                      const std::function<void(const SweepProgress&)>& progress = {});

struct SlopeFit {
    std::string group;  // "key=value,..." or "all"
    double slope = 0, intercept = 0, stderr_ = 0;
    std::vector<double> xs, mean_y, std_y;  // aggregated over trials, ascending x
    std::size_t rows = 0;
};

// value of a named column for a row: CSV columns, the mode's own names (n_train, test_mse, ...) or an extra key
std::optional<double> column_value(const ResultRow& r, const std::string& col);
std::string group_value(const ResultRow& r, const std::string& key);

// OLS of log(mean y) on log x per group; failed rows are ignored
std::vector<SlopeFit> fit_slope(const ResultTable& t, const std::string& x_col, const std::string& y_col,
                                const std::vector<std::string>& group_keys);

struct PlotSpec {
    std::string x, y;
    std::string panel = "sigma";   // one SVG per value
    std::string series = "target";  // one curve per value inside a panel
};

PlotSpec default_plot(const std::string& mode);

// CSV, records, one SVG per panel and summary.txt; returns the written paths
std::vector<std::string> emit_outputs(const ResultTable& t, const std::string& dir, const PlotSpec& plot);

std::string render_svg(const std::vector<SlopeFit>& series, const std::vector<std::string>& labels,
                       const std::string& title, const std::string& x_label, const std::string& y_label);

}  // namespace adaptree

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"
#include "adaptree/harness.hpp"
#include "adaptree/parallel.hpp"

using namespace adaptree;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("adaptree_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig approx_cfg() {
    ExperimentConfig c;
    c.mode = SweepMode::approximate;
    c.targets = {"onedisc", "threedisc"};
    c.theta = 1;
    c.max_level = 12;
    c.grid = geometric_grid(0.3, 3e-5, 12);
    c.sigmas = {0.0};
    c.workers = 1;
    return c;
}

ExperimentConfig tiny_train_cfg() {
    ExperimentConfig c;
    c.mode = SweepMode::train;
    c.targets = {"onedisc"};
    c.grid = {16, 32};
    c.sigmas = {0.1};
    c.trials = 2;
    c.n_test = 200;
    c.train.epochs = 20;
    c.arch.widths = {1, 8, 8, 1};
    c.workers = 1;
    c.seed = 5;
    return c;
}

// every column except wall time
std::string table_sans_time(const ResultTable& t) {
    std::string s;
    for (const auto& r : t.rows) {
        auto c = r;
        c.seconds = 0;
        s += csv_line(c) + "\n";
    }
    return s;
}

ResultRow row(double x, double y, int trial = 0, double sigma = 0) {
    ResultRow r;
    r.mode = "train";
    r.target = "onedisc";
    r.x = x;
    r.metric = y;
    r.trial = trial;
    r.sigma = sigma;
    return r;
}
}  // namespace

TEST_CASE("dataset generation") {
    const auto m = Measure::lebesgue(1);
    auto d0 = generate_dataset("threedisc", 500, 0.0, m, 3);
    for (std::size_t i = 0; i < d0.size(); ++i) CHECK(d0.y[i] == eval_target("threedisc", d0.x[i]));

    auto a = generate_dataset("onedisc", 1000, 0.2, m, 9), b = generate_dataset("onedisc", 1000, 0.2, m, 9);
    CHECK(a.x.coords == b.x.coords);
    CHECK(a.y == b.y);
    auto c = generate_dataset("onedisc", 1000, 0.2, m, 10);
    CHECK(c.y != a.y);

    const double sigma = 0.3;
    auto big = generate_dataset("onedisc", 100000, sigma, m, 4);
    double s1 = 0, s2 = 0;
    std::size_t tail = 0;
    for (std::size_t i = 0; i < big.size(); ++i) {
        const double xi = big.y[i] - eval_target("onedisc", big.x[i]);
        s1 += xi;
        s2 += xi * xi;
        tail += std::abs(xi) > 3 * sigma;
    }
    const double n = double(big.size());
    const double sd = std::sqrt((s2 - s1 * s1 / n) / (n - 1));
    CHECK(sd >= 0.295);
    CHECK(sd <= 0.305);
    CHECK(double(tail) / n <= 0.005);

    CHECK_THROWS_AS(generate_dataset("disk2d", 10, 0.1, m, 1), ConfigError);
    CHECK_THROWS_AS(generate_dataset("onedisc", 10, -1, m, 1), ConfigError);
    CHECK_THROWS_AS(generate_dataset("nosuch", 10, 0.1, m, 1), ConfigError);
}

TEST_CASE("config parsing") {
    auto c = ExperimentConfig::from_json(nlohmann::json::parse(R"({"target": "onedisc"})"));
    CHECK(c.mode == SweepMode::train);
    CHECK(c.grid == std::vector<double>{16, 32, 64, 128, 256, 512, 1024});
    CHECK(c.trials == 5);
    CHECK(c.sigmas == std::vector<double>{0.1});
    CHECK(c.n_test == 10000);
    CHECK(c.train.learning_rate == 1e-3);

    auto a = ExperimentConfig::from_json(
        nlohmann::json::parse(R"({"mode": "approximate", "targets": ["onedisc"], "eta": [0.1, 0.01], "theta": 0})"));
    CHECK(a.grid.size() == 2);
    CHECK(a.trials == 1);
    CHECK(a.theta == 0);
    const auto back = ExperimentConfig::from_json(a.to_json());
    CHECK(back.grid == a.grid);
    CHECK(back.mode == a.mode);

    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"targte": "onedisc"})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"mode": "approximate"})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"trials": 0})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"n_train": [10.5, 20, 40]})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"mode": "fit"})")), ConfigError);
}

TEST_CASE("worker count from the environment") {
    const char* old = std::getenv("ADAPTREE_WORKERS");
    const std::string saved = old ? old : "";
    setenv("ADAPTREE_WORKERS", "3", 1);
    CHECK(default_workers() == 3);
    setenv("ADAPTREE_WORKERS", "zero", 1);
    CHECK_THROWS_AS(default_workers(), ConfigError);
    setenv("ADAPTREE_WORKERS", "0", 1);
    CHECK_THROWS_AS(default_workers(), ConfigError);
    if (old)
        setenv("ADAPTREE_WORKERS", saved.c_str(), 1);
    else
        unsetenv("ADAPTREE_WORKERS");
    CHECK(default_workers() >= 1);
}

TEST_CASE("single point sweep") {
    auto c = tiny_train_cfg();
    c.grid = {16};
    c.trials = 1;
    const auto t = run_sweep(c, ResultTable{}, false);
    REQUIRE(t.rows.size() == 1);
    const auto& r = t.rows[0];
    CHECK(r.mode == "train");
    CHECK(r.x == 16);
    CHECK(r.sigma == 0.1);
    CHECK_FALSE(r.failed());
    CHECK(r.metric > 0);
    CHECK(r.extra.contains("train_mse"));
}

TEST_CASE("approximate sweep: error strictly decreases in tree size") {
    auto c = approx_cfg();
    c.targets = {"onedisc"};
    c.grid = geometric_grid(0.3, 1e-5, 30);
    const auto t = run_sweep(c, ResultTable{}, false);
    REQUIRE(t.rows.size() == 30);
    std::map<double, double> by_size;
    for (const auto& r : t.rows) {
        const double T = r.extra["tree_size"].get<double>();
        if (by_size.count(T)) CHECK(by_size[T] == r.metric);
        by_size[T] = r.metric;
    }
    CHECK(by_size.size() >= 8);
    double prev = INFINITY;
    for (const auto& [T, e] : by_size) {
        CHECK(e < prev);
        prev = e;
    }
}

TEST_CASE("failed points become error rows") {
    ExperimentConfig c;
    c.mode = SweepMode::compile;
    c.targets = {"onedisc"};
    c.theta = 1;
    c.max_level = 10;
    c.grid = {1e-30, 3e-2};
    c.mc_points = 0;
    c.workers = 1;
    const auto t = run_sweep(c, ResultTable{}, false);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].x == 1e-30);
    CHECK(t.rows[0].failed());
    CHECK(t.rows[0].extra.contains("error"));
    CHECK_FALSE(t.rows[1].failed());
    CHECK(t.rows[1].extra["L"].get<int>() >= 1);
    CHECK(t.rows[1].metric == t.rows[1].extra["K"].get<double>());
}

TEST_CASE("CSV is canonical and reload-stable") {
    ResultTable t;
    t.rows.push_back(row(16, 0.123456789012345678));
    CHECK(t.to_csv() == std::string(kCsvHeader) + "\n" + csv_line(t.rows[0]) + "\n");
    const auto one = t.to_csv();
    CHECK(std::count(one.begin(), one.end(), '\n') == 2);

    auto a = run_sweep(approx_cfg(), ResultTable{}, false);
    auto r1 = ResultTable::from_csv(a.to_csv());
    CHECK(r1.to_csv() == a.to_csv());
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(r1.rows[i].metric == a.rows[i].metric);
    CHECK(a.to_csv() == ResultTable(a).to_csv());

    CHECK_THROWS_AS(ResultTable::from_csv("mode,target\n"), ValidationError);
    CHECK_THROWS_AS(ResultTable::from_csv(std::string(kCsvHeader) + "\ntrain,onedisc,1,2\n"), ValidationError);
}

TEST_CASE("resumed sweep equals an uninterrupted one") {
    for (auto cfg : {approx_cfg(), tiny_train_cfg()}) {
        const auto full_dir = scratch("full"), part_dir = scratch("part");
        cfg.output_dir = full_dir.string();
        const auto full = run_sweep(cfg);

        // interrupted run: keep the header and the first third of the appended rows
        auto lines = full.to_csv();
        std::istringstream in(lines);
        std::string line, kept;
        std::size_t n = 0;
        while (std::getline(in, line) && n <= full.rows.size() / 3) {
            kept += line + "\n";
            ++n;
        }
        fs::create_directories(part_dir);
        std::ofstream(part_dir / "results.csv", std::ios::binary) << kept;
        cfg.output_dir = part_dir.string();
        std::size_t skipped = 0;
        const auto resumed = run_sweep(cfg, [&](const SweepProgress& p) { skipped = p.skipped; });
        CHECK(skipped == n - 1);
        CHECK(table_sans_time(resumed) == table_sans_time(full));
        CHECK(table_sans_time(ResultTable::load((part_dir / "results.csv").string())) == table_sans_time(full));

        // nothing left to do on a third run
        std::size_t ran = 0;
        run_sweep(cfg, [&](const SweepProgress&) { ++ran; });
        CHECK(ran == 0);
        fs::remove_all(full_dir);
        fs::remove_all(part_dir);
    }
}

TEST_CASE("worker count does not change values") {
    auto c = approx_cfg();
    const auto one = run_sweep(c, ResultTable{}, false);
    c.workers = 3;
    const auto three = run_sweep(c, ResultTable{}, false);
    CHECK(table_sans_time(one) == table_sans_time(three));
}

TEST_CASE("slope fitting") {
    ResultTable t;
    for (double x : {2.0, 4.0, 8.0, 16.0, 64.0}) t.rows.push_back(row(x, 1 / x));
    auto f = fit_slope(t, "n_train", "test_mse", {});
    REQUIRE(f.size() == 1);
    CHECK(std::abs(f[0].slope + 1) <= 1e-12);
    CHECK(f[0].group == "all");

    ResultTable q;
    for (double x : {1.0, 3.0, 10.0, 30.0}) q.rows.push_back(row(x, 5 * x * x));
    auto g = fit_slope(q, "x", "metric", {});
    CHECK(g[0].slope == doctest::Approx(2).epsilon(1e-12));
    CHECK(g[0].intercept == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    // mean over trials before the log, groups split by sigma
    ResultTable m;
    for (double s : {0.1, 0.3})
        for (double x : {10.0, 100.0, 1000.0}) {
            m.rows.push_back(row(x, 1 / x, 0, s));
            m.rows.push_back(row(x, 3 / x, 1, s));
        }
    auto h = fit_slope(m, "n_train", "test_mse", {"sigma"});
    REQUIRE(h.size() == 2);
    CHECK(h[0].group == "sigma=0.1");
    CHECK(h[0].mean_y[0] == doctest::Approx(0.2));
    CHECK(h[0].std_y[0] == doctest::Approx(std::sqrt(0.02)));
    CHECK(h[0].intercept == doctest::Approx(std::log(2.0)));

    // aggregation does not depend on completion order
    auto shuffled = m;
    std::mt19937_64 rng(3);
    std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), rng);
    auto h2 = fit_slope(shuffled, "n_train", "test_mse", {"sigma"});
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(h2[k].mean_y[i] - h[k].mean_y[i]) <= 1e-12);

    ResultTable bad = t;
    bad.rows.push_back(row(32, 0));
    CHECK_THROWS_AS(fit_slope(bad, "x", "metric", {}), ValidationError);
    ResultTable few;
    few.rows = {row(1, 1), row(2, 2), row(2, 3)};
    CHECK_THROWS_AS(fit_slope(few, "x", "metric", {}), InsufficientDataError);
    CHECK_THROWS_AS(fit_slope(t, "x", "nosuch", {}), ValidationError);

    auto failed = t;
    failed.rows.push_back(row(128, std::nan("")));
    CHECK(fit_slope(failed, "x", "metric", {})[0].slope == f[0].slope);
}

TEST_CASE("outputs: CSV, one SVG per sigma, summary") {
    ResultTable t;
    for (double s : {0.1, 0.5})
        for (const char* tg : {"onedisc", "threedisc"})
            for (double x : {16.0, 64.0, 256.0, 1024.0})
                for (int tr = 0; tr < 3; ++tr) {
                    auto r = row(x, (1 + tr) * s / x, tr, s);
                    r.target = tg;
                    t.rows.push_back(r);
                }
    const auto dir = scratch("emit");
    const auto files = emit_outputs(t, dir.string(), default_plot("train"));
    CHECK(files.size() == 5);
    std::size_t svgs = 0;
    for (const auto& f : files) {
        CHECK(fs::exists(f));
        if (f.size() > 4 && f.substr(f.size() - 4) == ".svg") {
            ++svgs;
            const auto s = slurp(f);
            CHECK(s.rfind("<svg", 0) == 0);
            CHECK(s.find("</svg>") != std::string::npos);
            CHECK(s.find("<polygon") != std::string::npos);
            CHECK(s.find("slope -1.00") != std::string::npos);
        }
    }
    CHECK(svgs == 2);
    const auto summary = slurp(dir / "summary.txt");
    CHECK(summary.find("sigma=0.1 target=onedisc slope -1.0000") != std::string::npos);

    // byte-stable
    const auto csv1 = slurp(dir / "results.csv");
    const auto svg1 = slurp(files[2]);
    auto reversed = t;
    std::reverse(reversed.rows.begin(), reversed.rows.end());
    emit_outputs(reversed, dir.string(), default_plot("train"));
    CHECK(slurp(dir / "results.csv") == csv1);
    CHECK(slurp(files[2]) == svg1);
    fs::remove_all(dir);

    CHECK_THROWS_AS(emit_outputs(ResultTable{}, dir.string(), default_plot("train")), ValidationError);
}

#include "adaptree/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"
#include "adaptree/parallel.hpp"
#include "adaptree/relu_gadgets.hpp"

namespace fs = std::filesystem;

namespace adaptree {

const char* const kCsvHeader = "mode,target,x,sigma,trial,metric,seconds,seed";

namespace {

// shortest round-trip text
std::string num(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_num(const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError("bad number in table: '" + s + "'");
    return v;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fixed(double v, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

std::string to_string(SweepMode m) {
    switch (m) {
        case SweepMode::train: return "train";
        case SweepMode::approximate: return "approximate";
        case SweepMode::compile: return "compile";
    }
    return "?";
}

SweepMode parse_mode(const std::string& s) {
    if (s == "train") return SweepMode::train;
    if (s == "approximate") return SweepMode::approximate;
    if (s == "compile") return SweepMode::compile;
    throw ConfigError("unknown mode '" + s + "' (train, approximate, compile)");
}

std::string ExperimentConfig::x_name() const {
    switch (mode) {
        case SweepMode::train: return "n_train";
        case SweepMode::approximate: return "eta";
        case SweepMode::compile: return "eps";
    }
    return "x";
}

std::string ExperimentConfig::metric_name() const {
    switch (mode) {
        case SweepMode::train: return "test_mse";
        case SweepMode::approximate: return "err2";
        case SweepMode::compile: return "K";
    }
    return "metric";
}

void ExperimentConfig::validate() const {
    if (targets.empty()) throw ConfigError("no targets");
    for (const auto& t : targets) find_target(t);
    if (grid.empty()) throw ConfigError("empty " + x_name() + " grid");
    for (double g : grid)
        if (!(g > 0) || !std::isfinite(g)) throw ConfigError(x_name() + " values must be positive");
    if (mode == SweepMode::train)
        for (double g : grid)
            if (g != std::floor(g)) throw ConfigError("n_train values must be integers");
    if (sigmas.empty()) throw ConfigError("empty sigma grid");
    for (double s : sigmas)
        if (!(s >= 0)) throw ConfigError("sigma must be >= 0");
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (n_test < 1) throw ConfigError("n_test must be >= 1");
    if (theta < 0) throw ConfigError("theta must be >= 0");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    arch.validate();
    train.validate();
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"mode",   "target",     "targets",   "theta",      "max_level",
                                             "grid",   "n_train",    "eta",       "eps",        "sigma",
                                             "sigmas", "trials",     "n_test",    "seed",       "output_dir",
                                             "epochs", "learning_rate", "batch_size", "widths", "mc_points",
                                             "workers"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    ExperimentConfig c;
    try {
        if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
        if (j.contains("target")) c.targets = {j["target"].get<std::string>()};
        if (j.contains("targets")) c.targets = j["targets"].get<std::vector<std::string>>();
        if (j.contains("theta")) c.theta = j["theta"].get<int>();
        if (j.contains("max_level")) c.max_level = j["max_level"].get<int>();
        for (const char* k : {"grid", "n_train", "eta", "eps"})
            if (j.contains(k)) c.grid = j[k].get<std::vector<double>>();
        if (j.contains("sigma")) c.sigmas = {j["sigma"].get<double>()};
        if (j.contains("sigmas")) c.sigmas = j["sigmas"].get<std::vector<double>>();
        else if (!j.contains("sigma") && c.mode == SweepMode::train) c.sigmas = {0.1};
        c.trials = j.value("trials", c.mode == SweepMode::train ? 5 : 1);
        if (c.grid.empty() && c.mode == SweepMode::train) c.grid = {16, 32, 64, 128, 256, 512, 1024};
        c.n_test = j.value("n_test", c.n_test);
        c.seed = j.value("seed", c.seed);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.train.epochs = j.value("epochs", c.train.epochs);
        c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
        c.train.batch_size = j.value("batch_size", c.train.batch_size);
        if (j.contains("widths")) c.arch.widths = j["widths"].get<std::vector<int>>();
        c.mc_points = j.value("mc_points", c.mc_points);
        c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"mode", to_string(mode)},
            {"targets", targets},
            {"theta", theta},
            {"max_level", max_level},
            {x_name(), grid},
            {"sigmas", sigmas},
            {"trials", trials},
            {"n_test", n_test},
            {"seed", seed},
            {"output_dir", output_dir},
            {"epochs", train.epochs},
            {"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"widths", arch.widths},
            {"mc_points", mc_points},
            {"workers", workers}};
}

Dataset generate_dataset(const std::string& target, std::size_t n, double sigma, const Measure& m,
                         std::uint64_t seed) {
    const auto& t = find_target(target);
    if (m.dim() != t.dim) throw ConfigError("measure dimension does not match target " + target);
    if (!(sigma >= 0)) throw ConfigError("sigma must be >= 0");
    Dataset d;
    d.x = sample(m, n, seed);
    d.y.resize(n);
    std::mt19937_64 rng(mix_seed(seed, 0x401));
    std::normal_distribution<double> N(0.0, sigma > 0 ? sigma : 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        d.y[i] = t.eval(d.x[i]);
        if (sigma > 0) d.y[i] += N(rng);
    }
    return d;
}

// ---- table

std::string ResultRow::key() const {
    return mode + "|" + target + "|" + num(x) + "|" + num(sigma) + "|" + std::to_string(trial);
}

void ResultTable::sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.mode, a.target, a.sigma, a.x, a.trial) < std::tie(b.mode, b.target, b.sigma, b.x, b.trial);
    });
}

void ResultTable::merge(const ResultTable& other) {
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < rows.size(); ++i) at[rows[i].key()] = i;
    for (const auto& r : other.rows) {
        auto it = at.find(r.key());
        if (it == at.end()) {
            at[r.key()] = rows.size();
            rows.push_back(r);
        } else if (!r.failed() || rows[it->second].failed()) {
            rows[it->second] = r;
        }
    }
}

bool ResultTable::contains_success(const std::string& key) const {
    return std::any_of(rows.begin(), rows.end(), [&](const ResultRow& r) { return !r.failed() && r.key() == key; });
}

std::string csv_line(const ResultRow& r) {
    return r.mode + "," + r.target + "," + num(r.x) + "," + num(r.sigma) + "," + std::to_string(r.trial) + "," +
           num(r.metric) + "," + fixed(r.seconds, 6) + "," + std::to_string(r.seed);
}

std::string ResultTable::to_csv() const {
    std::string s = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) s += csv_line(r) + "\n";
    return s;
}

ResultTable ResultTable::from_csv(const std::string& text) {
    ResultTable t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ValidationError("results table header must be: " + std::string(kCsvHeader));
    std::size_t ln = 1;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw ValidationError("results table line " + std::to_string(ln) + ": expected 8 fields");
        ResultRow r;
        r.mode = f[0];
        r.target = f[1];
        r.x = parse_num(f[2]);
        r.sigma = parse_num(f[3]);
        r.trial = std::stoi(f[4]);
        r.metric = parse_num(f[5]);
        r.seconds = parse_num(f[6]);
        r.seed = std::stoull(f[7]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

namespace {
std::string record_line(const ResultRow& r) {
    return nlohmann::json{{"key", r.key()}, {"extra", r.extra}}.dump();
}
}  // namespace

void ResultTable::save(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream csv(fs::path(dir) / "results.csv", std::ios::binary);
    std::ofstream rec(fs::path(dir) / "records.jsonl", std::ios::binary);
    if (!csv || !rec) throw ConfigError("cannot write results to " + dir);
    csv << to_csv();
    for (const auto& r : rows) rec << record_line(r) << "\n";
}

ResultTable ResultTable::load(const std::string& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read table " + csv_path);
    std::stringstream ss;
    ss << in.rdbuf();
    ResultTable t = from_csv(ss.str());
    const auto rec_path = fs::path(csv_path).parent_path() / "records.jsonl";
    std::ifstream rin(rec_path);
    if (rin) {
        std::map<std::string, nlohmann::json> extra;
        std::string line;
        while (std::getline(rin, line)) {
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                extra[j.at("key").get<std::string>()] = j.at("extra");
            } catch (const nlohmann::json::exception&) {
                // a torn last line from an interrupted run
            }
        }
        for (auto& r : t.rows)
            if (auto it = extra.find(r.key()); it != extra.end()) r.extra = it->second;
    }
    // an interrupted append log may hold a key twice
    ResultTable merged;
    merged.merge(t);
    return merged;
}

// ---- sweep

PiecewisePolynomial approximant_for_accuracy(const RefinementField& field, double eps) {
    if (!(eps > 0)) throw ConfigError("eps must be > 0");
    const auto grid = geometric_grid(field.delta_max(), field.delta_max() * 1e-6, 400);
    auto err = [&](std::size_t i) { return std::sqrt(field_error_sq(field, truncate_tree(field, grid[i]).tree)); };
    std::size_t lo = 0, hi = grid.size() - 1;
    if (err(hi) > eps) throw ConfigError("eps " + num(eps) + " is below what the depth cap resolves");
    if (err(lo) <= eps) hi = lo;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (err(mid) <= eps ? hi : lo) = mid;
    }
    auto pp = build_adaptive_approximant(field, truncate_tree(field, grid[hi]).tree);
    pp.source_eta = grid[hi];
    return pp;
}

namespace {

struct TargetContext {
    Dataset test;
    std::optional<RefinementField> field;
};

ResultRow run_point(const ExperimentConfig& cfg, const TargetContext& ctx, ResultRow row) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& spec = find_target(row.target);
    try {
        switch (cfg.mode) {
            case SweepMode::train: {
                auto data = generate_dataset(row.target, static_cast<std::size_t>(row.x), row.sigma,
                                             Measure::lebesgue(spec.dim), row.seed);
                MlpArchitecture arch = cfg.arch;
                arch.widths.front() = spec.dim;
                TrainConfig tc = cfg.train;
                tc.seed = row.seed;
                auto res = train(init_mlp(arch, mix_seed(row.seed, 1)), data, tc);
                row.metric = mse(res.net, ctx.test);
                row.extra = {{"train_mse", res.best_loss},
                             {"best_epoch", res.best_epoch},
                             {"epochs", tc.epochs},
                             {"train_seconds", res.seconds}};
                break;
            }
            case SweepMode::approximate: {
                const double eta = row.x;
                const auto sw = eta_sweep(*ctx.field, std::span<const double>(&eta, 1)).front();
                row.metric = sw.error_sq;
                row.extra = {{"tree_size", sw.tree_size}, {"leaves", sw.leaves}, {"capped", sw.capped}};
                break;
            }
            case SweepMode::compile: {
                auto pp = approximant_for_accuracy(*ctx.field, row.x);
                pp.s = known_rate(spec, cfg.theta);
                pp.target = row.target;
                CompileOptions o;
                o.eps = row.x;
                o.mc_points = cfg.mc_points;
                o.seed = row.seed;
                o.workers = 1;
                o.measure_error = cfg.mc_points > 0;
                const auto r = compile_adaptive_net(pp, o).report;
                row.metric = static_cast<double>(r.stats.K);
                row.extra = to_json(r);
                row.extra["eta"] = pp.source_eta;
                row.extra["inv_eps"] = 1.0 / row.x;
                break;
            }
        }
    } catch (const std::exception& e) {
        row.metric = std::numeric_limits<double>::quiet_NaN();
        row.extra = {{"error", e.what()}};
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

}  // namespace

ResultTable run_sweep(const ExperimentConfig& cfg, const ResultTable& existing, bool write_files,
                      const std::function<void(const SweepProgress&)>& progress) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int workers = cfg.workers > 0 ? cfg.workers : default_workers();

    std::vector<ResultRow> todo;
    std::size_t skipped = 0;
    const std::vector<double> sig = cfg.mode == SweepMode::train ? cfg.sigmas : std::vector<double>{0.0};
    std::set<std::string> pending_targets;
    for (const auto& tg : cfg.targets)
        for (double s : sig)
            for (double x : cfg.grid)
                for (int tr = 0; tr < cfg.trials; ++tr) {
                    ResultRow r;
                    r.mode = to_string(cfg.mode);
                    r.target = tg;
                    r.x = x;
                    r.sigma = s;
                    r.trial = tr;
                    r.seed = mix_seed(cfg.seed, fnv1a(r.key()));
                    if (existing.contains_success(r.key())) {
                        ++skipped;
                        continue;
                    }
                    pending_targets.insert(tg);
                    todo.push_back(std::move(r));
                }

    std::map<std::string, TargetContext> ctx;
    for (const auto& tg : pending_targets) {
        const auto& spec = find_target(tg);
        auto& c = ctx[tg];
        if (cfg.mode == SweepMode::train)
            c.test = generate_dataset(tg, cfg.n_test, 0.0, Measure::lebesgue(spec.dim),
                                      mix_seed(cfg.seed ^ fnv1a(tg), 0x7e57));
        else
            c.field = RefinementField::build(spec.eval, spec.dim, Measure::lebesgue(spec.dim),
                                             {cfg.theta, cfg.max_level, std::nullopt});
    }

    std::ofstream csv_log, rec_log;
    if (write_files) {
        std::error_code ec;
        fs::create_directories(cfg.output_dir, ec);
        const auto csv_path = fs::path(cfg.output_dir) / "results.csv";
        const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
        csv_log.open(csv_path, std::ios::app | std::ios::binary);
        rec_log.open(fs::path(cfg.output_dir) / "records.jsonl", std::ios::app | std::ios::binary);
        if (!csv_log || !rec_log) throw ConfigError("cannot write to " + cfg.output_dir);
        if (fresh) csv_log << kCsvHeader << "\n" << std::flush;
    }

    ResultTable fresh_rows;
    std::mutex mu;
    std::size_t done = 0;
    parallel_each(todo.size(), workers, [&](std::size_t i) {
        auto row = run_point(cfg, ctx.at(todo[i].target), todo[i]);
        std::lock_guard<std::mutex> lk(mu);
        if (write_files) {
            csv_log << csv_line(row) << "\n" << std::flush;
            rec_log << record_line(row) << "\n" << std::flush;
        }
        fresh_rows.rows.push_back(row);
        ++done;
        if (progress) progress({done, todo.size(), skipped, &fresh_rows.rows.back()});
    });

    ResultTable out = existing;
    out.merge(fresh_rows);
    out.sort();
    if (write_files) {
        csv_log.close();
        rec_log.close();
        out.save(cfg.output_dir);
        nlohmann::json run = {{"config", cfg.to_json()},
                              {"workers", workers},
                              {"rows_run", todo.size()},
                              {"rows_skipped", skipped},
                              {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
        if (cfg.mode == SweepMode::train) {
            run["trainer"] = to_json(cfg.train, cfg.arch);
            run["init_range"] = "uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]";
            run["noise"] = "gaussian";
            run["test_set"] = "uniform on [0,1]^d, noiseless, one fixed set per target";
        }
        std::ofstream(fs::path(cfg.output_dir) / "run.json") << run.dump(2) << "\n";
    }
    return out;
}

ResultTable run_sweep(const ExperimentConfig& cfg, const std::function<void(const SweepProgress&)>& progress) {
    ResultTable existing;
    const auto csv_path = fs::path(cfg.output_dir) / "results.csv";
    if (fs::exists(csv_path) && fs::file_size(csv_path) > 0) existing = ResultTable::load(csv_path.string());
    return run_sweep(cfg, existing, true, progress);
}

// ---- slopes

std::optional<double> column_value(const ResultRow& r, const std::string& col) {
    if (col == "x") return r.x;
    if (col == "metric") return r.metric;
    if (col == "sigma") return r.sigma;
    if (col == "trial") return r.trial;
    if (col == "seconds") return r.seconds;
    static const std::map<std::string, std::pair<std::string, std::string>> names{
        {"train", {"n_train", "test_mse"}}, {"approximate", {"eta", "err2"}}, {"compile", {"eps", "K"}}};
    if (auto it = names.find(r.mode); it != names.end()) {
        if (col == it->second.first) return r.x;
        if (col == it->second.second) return r.metric;
    }
    if (r.extra.is_object() && r.extra.contains(col) && r.extra[col].is_number()) return r.extra[col].get<double>();
    return std::nullopt;
}

std::string group_value(const ResultRow& r, const std::string& key) {
    if (key == "mode") return r.mode;
    if (key == "target") return r.target;
    if (key == "sigma") return num(r.sigma);
    if (key == "trial") return std::to_string(r.trial);
    if (key == "x") return num(r.x);
    if (r.extra.is_object() && r.extra.contains(key)) {
        const auto& v = r.extra[key];
        return v.is_string() ? v.get<std::string>() : v.dump();
    }
    throw ValidationError("unknown group key '" + key + "'");
}

std::vector<SlopeFit> fit_slope(const ResultTable& t, const std::string& x_col, const std::string& y_col,
                                const std::vector<std::string>& group_keys) {
    std::map<std::string, std::map<double, std::vector<double>>> groups;
    std::map<std::string, std::size_t> counts;
    for (const auto& r : t.rows) {
        if (r.failed()) continue;
        const auto x = column_value(r, x_col), y = column_value(r, y_col);
        if (!x) throw ValidationError("column '" + x_col + "' not found for " + r.key());
        if (!y) throw ValidationError("column '" + y_col + "' not found for " + r.key());
        if (!(*x > 0) || !(*y > 0)) throw ValidationError("log-log fit needs positive values (" + r.key() + ")");
        std::string g;
        for (const auto& k : group_keys) g += (g.empty() ? "" : ",") + k + "=" + group_value(r, k);
        if (g.empty()) g = "all";
        groups[g][*x].push_back(*y);
        ++counts[g];
    }
    if (groups.empty()) throw InsufficientDataError("no successful rows to fit");
    std::vector<SlopeFit> out;
    for (const auto& [g, byx] : groups) {
        if (byx.size() < 3) throw InsufficientDataError("group " + g + " has fewer than 3 distinct x values");
        SlopeFit f;
        f.group = g;
        f.rows = counts[g];
        std::vector<double> lx, ly;
        for (const auto& [x, ys] : byx) {
            const double n = static_cast<double>(ys.size());
            const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
            double ss = 0;
            for (double y : ys) ss += (y - mean) * (y - mean);
            f.xs.push_back(x);
            f.mean_y.push_back(mean);
            f.std_y.push_back(ys.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0);
            lx.push_back(std::log(x));
            ly.push_back(std::log(mean));
        }
        const auto lf = least_squares(lx, ly);
        f.slope = lf.slope;
        f.intercept = lf.intercept;
        f.stderr_ = lf.slope_stderr;
        out.push_back(std::move(f));
    }
    return out;
}

// ---- outputs

PlotSpec default_plot(const std::string& mode) {
    if (mode == "approximate") return {"tree_size", "err2", "mode", "target"};
    if (mode == "compile") return {"inv_eps", "K", "mode", "target"};
    return {"n_train", "test_mse", "sigma", "target"};
}

std::string render_svg(const std::vector<SlopeFit>& series, const std::vector<std::string>& labels,
                       const std::string& title, const std::string& x_label, const std::string& y_label) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    const double W = 640, H = 480, ml = 80, mr = 170, mt = 40, mb = 60;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    auto lower = [](double m, double s) { return std::max(m - s, m * 0.05); };
    for (const auto& f : series)
        for (std::size_t i = 0; i < f.xs.size(); ++i) {
            x0 = std::min(x0, std::log10(f.xs[i]));
            x1 = std::max(x1, std::log10(f.xs[i]));
            y0 = std::min(y0, std::log10(lower(f.mean_y[i], f.std_y[i])));
            y1 = std::max(y1, std::log10(f.mean_y[i] + f.std_y[i]));
        }
    if (series.empty()) x0 = y0 = 0, x1 = y1 = 1;
    x0 = std::floor(x0 * 4) / 4, x1 = std::ceil(x1 * 4) / 4;
    y0 = std::floor(y0 * 4) / 4, y1 = std::ceil(y1 * 4) / 4;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto px = [&](double lx) { return ml + (lx - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double ly) { return H - mb - (ly - y0) / (y1 - y0) * (H - mt - mb); };
    auto f2 = [](double v) { return fixed(v, 2); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << f2(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    s << "<rect x=\"" << f2(ml) << "\" y=\"" << f2(mt) << "\" width=\"" << f2(W - ml - mr) << "\" height=\""
      << f2(H - mt - mb) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double d = std::ceil(x0); d <= x1 + 1e-9; d += 1)
        s << "<line x1=\"" << f2(px(d)) << "\" y1=\"" << f2(H - mb) << "\" x2=\"" << f2(px(d)) << "\" y2=\""
          << f2(H - mb + 5) << "\" stroke=\"black\"/><text x=\"" << f2(px(d)) << "\" y=\"" << f2(H - mb + 18)
          << "\" text-anchor=\"middle\">1e" << static_cast<int>(d) << "</text>\n";
    for (double d = std::ceil(y0); d <= y1 + 1e-9; d += 1)
        s << "<line x1=\"" << f2(ml - 5) << "\" y1=\"" << f2(py(d)) << "\" x2=\"" << f2(ml) << "\" y2=\"" << f2(py(d))
          << "\" stroke=\"black\"/><text x=\"" << f2(ml - 8) << "\" y=\"" << f2(py(d) + 4)
          << "\" text-anchor=\"end\">1e" << static_cast<int>(d) << "</text>\n";
    s << "<text x=\"" << f2(ml + (W - ml - mr) / 2) << "\" y=\"" << f2(H - 15) << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
    s << "<text x=\"18\" y=\"" << f2(mt + (H - mt - mb) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << f2(mt + (H - mt - mb) / 2) << ")\">" << y_label << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& f = series[k];
        const char* c = colors[k % 7];
        s << "<polygon fill=\"" << c << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < f.xs.size(); ++i)
            s << f2(px(std::log10(f.xs[i]))) << "," << f2(py(std::log10(f.mean_y[i] + f.std_y[i]))) << " ";
        for (std::size_t i = f.xs.size(); i-- > 0;)
            s << f2(px(std::log10(f.xs[i]))) << "," << f2(py(std::log10(lower(f.mean_y[i], f.std_y[i])))) << " ";
        s << "\"/>\n";
        for (std::size_t i = 0; i < f.xs.size(); ++i)
            s << "<circle cx=\"" << f2(px(std::log10(f.xs[i]))) << "\" cy=\"" << f2(py(std::log10(f.mean_y[i])))
              << "\" r=\"3.5\" fill=\"" << c << "\"/>\n";
        const double a = std::log(f.xs.front()), b = std::log(f.xs.back());
        const double ya = (f.intercept + f.slope * a) / std::log(10.0), yb = (f.intercept + f.slope * b) / std::log(10.0);
        s << "<line x1=\"" << f2(px(a / std::log(10.0))) << "\" y1=\"" << f2(py(ya)) << "\" x2=\""
          << f2(px(b / std::log(10.0))) << "\" y2=\"" << f2(py(yb)) << "\" stroke=\"" << c
          << "\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>\n";
        const double ly = mt + 16 + 18 * static_cast<double>(k);
        s << "<rect x=\"" << f2(W - mr + 12) << "\" y=\"" << f2(ly - 9) << "\" width=\"10\" height=\"10\" fill=\"" << c
          << "\"/><text x=\"" << f2(W - mr + 28) << "\" y=\"" << f2(ly) << "\">" << labels[k] << " slope "
          << fixed(f.slope, 2) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::vector<std::string> emit_outputs(const ResultTable& t, const std::string& dir, const PlotSpec& plot) {
    if (t.rows.empty()) throw ValidationError("nothing to emit: empty table");
    ResultTable sorted = t;
    sorted.sort();
    sorted.save(dir);
    std::vector<std::string> files{(fs::path(dir) / "results.csv").string(), (fs::path(dir) / "records.jsonl").string()};

    std::map<std::string, ResultTable> panels;
    for (const auto& r : sorted.rows) panels[group_value(r, plot.panel)].rows.push_back(r);
    std::ostringstream summary;
    summary << "fit: log(" << plot.y << ") on log(" << plot.x << "), trials averaged before the log\n";
    for (const auto& [pv, pt] : panels) {
        std::vector<SlopeFit> fits;
        std::vector<std::string> labels;
        std::map<std::string, ResultTable> series;
        for (const auto& r : pt.rows) series[group_value(r, plot.series)].rows.push_back(r);
        for (const auto& [sv, st] : series) {
            try {
                auto f = fit_slope(st, plot.x, plot.y, {});
                fits.push_back(f.front());
                labels.push_back(sv);
                summary << plot.panel << "=" << pv << " " << plot.series << "=" << sv << " slope " << fixed(f[0].slope, 4)
                        << " intercept " << fixed(f[0].intercept, 4) << " stderr " << fixed(f[0].stderr_, 4) << " points "
                        << f[0].xs.size() << " rows " << f[0].rows << "\n";
            } catch (const Error& e) {
                summary << plot.panel << "=" << pv << " " << plot.series << "=" << sv << " no fit: " << e.what() << "\n";
            }
        }
        std::string name = "plot_" + plot.panel + "_" + pv + ".svg";
        std::replace_if(name.begin(), name.end(), [](char c) { return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-'); }, '_');
        const auto path = fs::path(dir) / name;
        std::ofstream(path, std::ios::binary) << render_svg(fits, labels, plot.panel + " = " + pv, plot.x, plot.y);
        files.push_back(path.string());
    }
    std::size_t failed = 0;
    for (const auto& r : sorted.rows) failed += r.failed();
    if (failed) summary << failed << " failed rows (see records.jsonl)\n";
    const auto sp = fs::path(dir) / "summary.txt";
    std::ofstream(sp, std::ios::binary) << summary.str();
    files.push_back(sp.string());
    return files;
}

}  // namespace adaptree

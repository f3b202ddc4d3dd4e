#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "adaptree/adaptive.hpp"
#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"
#include "adaptree/harness.hpp"
#include "adaptree/parallel.hpp"
#include "adaptree/relu_gadgets.hpp"
#include "adaptree/trainer.hpp"

using namespace adaptree;

namespace {

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

PointCloud read_points(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read points " + path);
    PointCloud pc(dim);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        try {
            row = parse_list(line);
        } catch (const std::exception&) {
            if (ln == 1) continue;  // header
            throw ValidationError("bad point on line " + std::to_string(ln));
        }
        if (static_cast<int>(row.size()) != dim)
            throw ValidationError("line " + std::to_string(ln) + ": expected " + std::to_string(dim) + " coordinates");
        pc.push_back(row);
    }
    return pc;
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

RefinementField field_for(const TargetSpec& t, int theta, int max_level) {
    return RefinementField::build(t.eval, t.dim, Measure::lebesgue(t.dim), {theta, max_level, std::nullopt});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive tree approximation and ReLU network experiments"};
    app.require_subcommand(1);

    auto* targets_cmd = app.add_subcommand("targets", "list the built-in target functions");
    bool list = false;
    targets_cmd->add_flag("--list", list, "print every target");

    auto* sem = app.add_subcommand("seminorm", "estimate the adaptive seminorm over an eta grid");
    std::string target = "onedisc";
    int theta = 1, max_level = -1, points = 40;
    std::optional<double> s_opt;
    sem->add_option("--target", target)->required();
    sem->add_option("--theta", theta);
    sem->add_option("--s", s_opt, "rate; default: the target's predicted s");
    sem->add_option("--max-level", max_level);
    sem->add_option("--points", points);

    auto* apx = app.add_subcommand("approximate", "adaptive approximation over an eta grid");
    std::string eta_grid, out_path;
    apx->add_option("--target", target)->required();
    apx->add_option("--theta", theta);
    apx->add_option("--max-level", max_level);
    apx->add_option("--eta-grid", eta_grid, "comma-separated thresholds; default 40 points over 4 decades");
    apx->add_option("--out", out_path, "partition JSON for the smallest eta");

    auto* cmp = app.add_subcommand("compile", "compile a partition into a ReLU network");
    std::string in_path, report_path;
    double eps = 1e-2;
    std::size_t mc_points = 100000;
    std::optional<double> R_opt;
    cmp->add_option("--in", in_path)->required();
    cmp->add_option("--eps", eps)->required();
    cmp->add_option("--out", out_path)->required();
    cmp->add_option("--s", s_opt);
    cmp->add_option("--R", R_opt, "output clamp");
    cmp->add_option("--mc-points", mc_points, "0 skips the error measurement");
    cmp->add_option("--report", report_path);

    auto* ev = app.add_subcommand("eval-net", "evaluate a network on points");
    std::string net_path, points_path;
    ev->add_option("--net", net_path)->required();
    ev->add_option("--points", points_path, "CSV, one point per line")->required();
    ev->add_option("--out", out_path);

    auto* tr = app.add_subcommand("train", "train the MLP on noisy samples of a target");
    std::size_t n_train = 256, n_test = 10000;
    double sigma = 0.1;
    TrainConfig tc;
    tr->add_option("--target", target)->required();
    tr->add_option("--n", n_train);
    tr->add_option("--sigma", sigma);
    tr->add_option("--epochs", tc.epochs);
    tr->add_option("--lr", tc.learning_rate);
    tr->add_option("--batch-size", tc.batch_size, "0: full batch");
    tr->add_option("--seed", tc.seed);
    tr->add_option("--n-test", n_test);
    tr->add_option("--out", out_path, "network JSON");

    auto* sw = app.add_subcommand("sweep", "run an experiment config (resumes from existing results)");
    std::string config_path, out_dir;
    sw->add_option("--config", config_path)->required();
    sw->add_option("--out", out_dir, "overrides output_dir");

    auto* rt = app.add_subcommand("rates", "fit log-log slopes in a results table");
    std::string table_path, x_col = "x", y_col = "metric", group;
    rt->add_option("--table", table_path)->required();
    rt->add_option("--x", x_col);
    rt->add_option("--y", y_col);
    rt->add_option("--group", group, "comma-separated keys");

    auto* bd = app.add_subcommand("boundary-dim", "box-counting dimension of a target's discontinuity set");
    int j_lo = 3, j_hi = 8;
    bd->add_option("--target", target)->required();
    bd->add_option("--jmin", j_lo);
    bd->add_option("--jmax", j_hi);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*targets_cmd) {
            std::printf("%-14s %3s %-13s %5s  %s\n", "name", "dim", "class", "jumps", "description");
            for (const auto& t : targets())
                std::printf("%-14s %3d %-13s %5d  %s\n", t.name.c_str(), t.dim, to_string(t.rate_class).c_str(),
                            t.discontinuities, t.description.c_str());
        } else if (*sem) {
            const auto& t = find_target(target);
            const double s = s_opt.value_or(known_rate(t, theta));
            const auto field = field_for(t, theta, max_level);
            const auto grid = default_eta_grid(field, points);
            const auto c = estimate_seminorm(field, s, grid);
            std::printf("target %s theta %d s %.4g m %.4g max_level %d\n", target.c_str(), theta, c.s, c.m, c.max_level);
            std::printf("%14s %10s %14s %s\n", "eta", "#T", "eta^m #T", "");
            for (const auto& r : c.rows)
                std::printf("%14.6e %10zu %14.6e %s\n", r.eta, r.tree_size, r.eta_m_T, r.capped ? "capped" : "");
            std::printf("seminorm %.6g (grid max %.6g, argmax eta %.4e)%s\n", c.seminorm_estimate, c.grid_estimate,
                        c.argmax_eta, c.not_converged ? " NOT CONVERGED" : "");
            std::printf("s_hat %.4g\n", c.s_hat);
        } else if (*apx) {
            const auto& t = find_target(target);
            const auto field = field_for(t, theta, max_level);
            const auto grid = eta_grid.empty() ? default_eta_grid(field) : parse_list(eta_grid);
            if (grid.empty()) throw ConfigError("empty eta grid");
            std::printf("%14s %8s %8s %14s %s\n", "eta", "#T", "leaves", "error^2", "");
            for (const auto& r : eta_sweep(field, grid))
                std::printf("%14.6e %8zu %8zu %14.6e %s\n", r.eta, r.tree_size, r.leaves, r.error_sq,
                            r.capped ? "capped" : "");
            const auto rate = estimate_rate_s(field, grid);
            std::printf("s_hat %.4g (predicted %.4g)\n", rate.s_hat, known_rate(t, theta));
            if (!out_path.empty()) {
                const double eta = *std::min_element(grid.begin(), grid.end());
                auto pp = build_adaptive_approximant(field, truncate_tree(field, eta).tree);
                pp.s = known_rate(t, theta);
                pp.target = target;
                write_json(to_json(pp), out_path);
            }
        } else if (*cmp) {
            std::ifstream in(in_path);
            if (!in) throw ConfigError("cannot read " + in_path);
            nlohmann::json j;
            in >> j;
            auto pp = piecewise_from_json(j);
            CompileOptions o;
            o.eps = eps;
            o.s = s_opt;
            o.R = R_opt;
            o.mc_points = mc_points;
            o.measure_error = mc_points > 0;
            o.workers = default_workers();
            const auto res = compile_adaptive_net(pp, o);
            save_network(res.net, out_path);
            const auto rj = to_json(res.report);
            if (!report_path.empty()) write_json(rj, report_path);
            std::cout << rj.dump(2) << "\n";
        } else if (*ev) {
            const auto net = load_network(net_path);
            const auto pts = read_points(points_path, net.input_dim);
            const auto y = relu_forward_batch(net, pts.coords, default_workers());
            std::ofstream file;
            if (!out_path.empty()) {
                file.open(out_path);
                if (!file) throw ConfigError("cannot write " + out_path);
            }
            std::ostream& os = out_path.empty() ? std::cout : file;
            char buf[64];
            for (std::size_t i = 0; i < pts.size(); ++i) {
                std::string line;
                for (int k = 0; k < net.output_dim; ++k) {
                    std::snprintf(buf, sizeof buf, "%.17g", y[i * net.output_dim + k]);
                    line += (k ? "," : "") + std::string(buf);
                }
                os << line << "\n";
            }
        } else if (*tr) {
            const auto& t = find_target(target);
            const auto m = Measure::lebesgue(t.dim);
            auto data = generate_dataset(target, n_train, sigma, m, tc.seed);
            const auto test = generate_dataset(target, n_test, 0.0, m, mix_seed(tc.seed, 0x7e57));
            MlpArchitecture arch;
            arch.widths.front() = t.dim;
            auto res = train(init_mlp(arch, mix_seed(tc.seed, 1)), data, tc);
            std::printf("train_mse %.6g (epoch %d of %d)\ntest_mse %.6g\nseconds %.2f\n", res.best_loss, res.best_epoch,
                        tc.epochs, mse(res.net, test), res.seconds);
            if (!out_path.empty()) save_network(to_relu_network(res.net), out_path);
        } else if (*sw) {
            auto cfg = ExperimentConfig::load(config_path);
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            const auto table = run_sweep(cfg, [](const SweepProgress& p) {
                std::fprintf(stderr, "[%zu/%zu] %s %s x=%g sigma=%g trial=%d metric=%.4g (%.1fs)\n", p.done, p.total,
                             p.row->mode.c_str(), p.row->target.c_str(), p.row->x, p.row->sigma, p.row->trial,
                             p.row->metric, p.row->seconds);
            });
            const auto files = emit_outputs(table, cfg.output_dir, default_plot(to_string(cfg.mode)));
            for (const auto& f : files) std::printf("%s\n", f.c_str());
            std::ifstream sum(cfg.output_dir + "/summary.txt");
            std::cout << sum.rdbuf();
        } else if (*rt) {
            const auto table = ResultTable::load(table_path);
            std::vector<std::string> keys;
            std::stringstream ss(group);
            for (std::string k; std::getline(ss, k, ',');)
                if (!k.empty()) keys.push_back(k);
            for (const auto& f : fit_slope(table, x_col, y_col, keys))
                std::printf("%s slope %.4f intercept %.4f stderr %.4f points %zu rows %zu\n", f.group.c_str(), f.slope,
                            f.intercept, f.stderr_, f.xs.size(), f.rows);
        } else if (*bd) {
            const auto& t = find_target(target);
            if (!t.discontinuity_set) throw ConfigError("target " + target + " has no discontinuity set");
            const auto est = estimate_minkowski_dim(t.discontinuity_set, t.dim, j_lo, j_hi);
            for (std::size_t i = 0; i < est.levels.size(); ++i)
                std::printf("j %2d cubes %zu\n", est.levels[i], est.counts[i]);
            std::printf("d_M %.4f (stderr %.4f) c_M %.4g\n", est.d_M, est.slope_stderr, est.c_M);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

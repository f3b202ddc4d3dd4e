#include "adaptree/relu_gadgets.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "adaptree/error.hpp"
#include "adaptree/parallel.hpp"

namespace adaptree {

double trapezoid_value(double a, double b, double delta, double x) {
    double lo = 1, hi = 1;
    if (a > 0) lo = std::clamp((x - (a - delta / 2)) / delta, 0.0, 1.0);
    if (b < 1) hi = std::clamp(((b + delta / 2) - x) / delta, 0.0, 1.0);
    return std::min(lo, hi);
}

ReluNetwork build_trapezoid_net(double a, double b, double delta, int input_dim, int axis) {
    if (!(a >= 0 && a < b && b <= 1)) throw ConfigError("trapezoid needs 0 <= a < b <= 1");
    if (!(delta > 0)) throw ConfigError("trapezoid ramp width must be positive");
    if (delta >= b - a) throw ConfigError("trapezoid ramp width must be smaller than b - a");
    if (axis < 0 || axis >= input_dim) throw ConfigError("trapezoid axis out of range");
    // hidden r_i = ReLU(x/delta - c_i/delta); with dyadic a, b and delta = 2^-p every r_i is exact,
    // so the output is exactly 0 off the support and exactly 1 on the plateau
    const double w = 1 / delta;
    std::vector<double> cuts, signs;
    if (a > 0) {
        cuts.insert(cuts.end(), {a - delta / 2, a + delta / 2});
        signs.insert(signs.end(), {1, -1});
    }
    if (b < 1) {
        cuts.insert(cuts.end(), {b - delta / 2, b + delta / 2});
        signs.insert(signs.end(), {-1, 1});
    }
    ReluNetwork net;
    net.input_dim = input_dim;
    net.output_dim = 1;
    const double out_bias = a > 0 ? 0.0 : 1.0;
    if (cuts.empty()) {
        net.layers.push_back(Layer::from_triplets(1, input_dim, {}));
        net.layers.push_back(Layer::from_triplets(1, 1, {}, {1.0}));
        return net;
    }
    const int n = static_cast<int>(cuts.size());
    std::vector<Triplet> t, o;
    std::vector<double> bias(n);
    for (int i = 0; i < n; ++i) {
        t.push_back({i, axis, w});
        bias[i] = -cuts[i] * w;
        o.push_back({0, i, signs[i]});
    }
    net.layers.push_back(Layer::from_triplets(n, input_dim, std::move(t), std::move(bias)));
    net.layers.push_back(Layer::from_triplets(1, n, std::move(o), {out_bias}));
    return net;
}

int sawtooth_depth(double scaled_eps) {
    if (!(scaled_eps > 0)) throw ConfigError("product accuracy must be positive");
    return std::max(1, static_cast<int>(std::ceil(std::log2(1 / scaled_eps) / 2)) + 2);
}

namespace {

struct CarrySet {
    std::vector<int> idx;
    std::vector<int> off;  // relative to the carry block
    int width = 0;

    int find(int i) const {
        for (std::size_t k = 0; k < idx.size(); ++k)
            if (idx[k] == i) return static_cast<int>(k);
        return -1;
    }
};

CarrySet carry_set(const std::vector<int>& f, int upto, const std::vector<char>& nonneg) {
    CarrySet c;
    for (int i = 0; i < upto; ++i)
        if (c.find(f[i]) < 0) {
            c.idx.push_back(f[i]);
            c.off.push_back(c.width);
            c.width += nonneg[f[i]] ? 1 : 2;
        }
    return c;
}

// running product read off a sawtooth layer [acc+, acc-, tu, tv, tu', tv']: acc - c (t^u - t^v), t = 2 t - 4 t'
void product_readout(std::vector<Triplet>& t, int row, double c, double scale) {
    const double g[6] = {1, -1, -2 * c, 2 * c, 4 * c, -4 * c};
    for (int k = 0; k < 6; ++k) t.push_back({row, k, scale * g[k]});
}

// carried value as +w h or +w (h+ - h-) from a block starting at column base
void read_carry(std::vector<Triplet>& t, int row, const CarrySet& src, int base, int which, double w,
                const std::vector<char>& nonneg) {
    const int k = src.find(which);
    if (k < 0) throw InvariantViolation("product plan lost a carried factor");
    const int col = base + src.off[k];
    t.push_back({row, col, w});
    if (!nonneg[which]) t.push_back({row, col + 1, -w});
}

void copy_carries(std::vector<Triplet>& t, const CarrySet& dst, int dst_base, const CarrySet& src, int src_base,
                  const std::vector<char>& nonneg) {
    for (std::size_t k = 0; k < dst.idx.size(); ++k) {
        const int s = src.find(dst.idx[k]);
        if (s < 0) throw InvariantViolation("product plan lost a carried factor");
        const int n = nonneg[dst.idx[k]] ? 1 : 2;
        for (int c = 0; c < n; ++c) t.push_back({dst_base + dst.off[k] + c, src_base + src.off[s] + c, 1.0});
    }
}

void carries_from_input(std::vector<Triplet>& t, const CarrySet& dst, int dst_base, const std::vector<char>& nonneg) {
    for (std::size_t k = 0; k < dst.idx.size(); ++k) {
        const int i = dst.idx[k];
        t.push_back({dst_base + dst.off[k], i, 1.0});
        if (!nonneg[i]) t.push_back({dst_base + dst.off[k] + 1, i, -1.0});
    }
}

}  // namespace

ReluNetwork build_multiproduct_net(int n_in, const std::vector<int>& f, const std::vector<char>& nonneg_in, double C,
                                   double eps) {
    const int N = static_cast<int>(f.size());
    if (N < 2) throw ConfigError("a product needs at least two factors");
    if (!(C > 0)) throw ConfigError("product input bound must be positive");
    if (!(eps > 0 && eps < 1)) throw ConfigError("product accuracy must lie in (0,1)");
    for (int i : f)
        if (i < 0 || i >= n_in) throw ConfigError("product factor index out of range");
    const std::vector<char> nonneg = nonneg_in.empty() ? std::vector<char>(n_in, 0) : nonneg_in;
    if (static_cast<int>(nonneg.size()) != n_in) throw ConfigError("sign mask length does not match inputs");

    // inputs are scaled into [-1,1]; the product is scaled back by S^N at the output
    const double S = std::max(C, 1.0), in = 1 / S;
    const int m = sawtooth_depth(eps / std::pow(S, N));
    const double c_out = std::pow(0.25, m);

    ReluNetwork net;
    net.input_dim = n_in;
    net.output_dim = 1;
    CarrySet prev;
    int prev_width = n_in;
    for (int s = 1; s < N; ++s) {
        const int xi = f[N - 1 - s];
        const CarrySet cur = carry_set(f, N - 1 - s, nonneg);
        // |.| layer: ReLU(x+y), ReLU(x-y), ReLU(-x-y), ReLU(-x+y); running product columns come first
        {
            std::vector<Triplet> t;
            const double sx[4] = {1, 1, -1, -1}, sy[4] = {1, -1, -1, 1};
            for (int r = 0; r < 4; ++r) {
                if (s == 1) {
                    t.push_back({r, xi, sx[r] * in});
                    t.push_back({r, f[N - 1], sy[r] * in});
                } else {
                    product_readout(t, r, c_out, sy[r]);
                    read_carry(t, r, prev, 6, xi, sx[r] * in, nonneg);
                }
            }
            if (s == 1)
                carries_from_input(t, cur, 4, nonneg);
            else
                copy_carries(t, cur, 4, prev, 6, nonneg);
            net.layers.push_back(Layer::from_triplets(4 + cur.width, prev_width, std::move(t)));
        }
        // sawtooth layers [acc+, acc-, tu, tv, tu', tv'] + carries
        for (int k = 0; k < m; ++k) {
            std::vector<Triplet> t;
            std::vector<double> bias(6 + cur.width, 0.0);
            if (k == 0) {
                const double acc[4] = {0.5, -0.5, 0.5, -0.5};
                for (int c = 0; c < 4; ++c) {
                    t.push_back({0, c, acc[c]});
                    t.push_back({1, c, -acc[c]});
                }
                for (int r : {2, 4}) t.insert(t.end(), {{r, 0, 0.5}, {r, 2, 0.5}});
                for (int r : {3, 5}) t.insert(t.end(), {{r, 1, 0.5}, {r, 3, 0.5}});
                copy_carries(t, cur, 6, cur, 4, nonneg);
            } else {
                const double ck = std::pow(0.25, k);
                product_readout(t, 0, ck, 1);
                product_readout(t, 1, ck, -1);
                for (int r : {2, 4}) t.insert(t.end(), {{r, 2, 2.0}, {r, 4, -4.0}});
                for (int r : {3, 5}) t.insert(t.end(), {{r, 3, 2.0}, {r, 5, -4.0}});
                copy_carries(t, cur, 6, cur, 6, nonneg);
            }
            bias[4] = bias[5] = -0.5;
            net.layers.push_back(Layer::from_triplets(6 + cur.width, net.layers.back().rows, std::move(t), std::move(bias)));
        }
        prev = cur;
        prev_width = net.layers.back().rows;
    }
    std::vector<Triplet> t;
    product_readout(t, 0, c_out, std::pow(S, N));
    net.layers.push_back(Layer::from_triplets(1, prev_width, std::move(t)));
    net.validate();
    return net;
}

ReluNetwork build_product_net(double C, double eps) {
    if (!(eps < 1)) throw ConfigError("product accuracy must be below 1");
    return build_multiproduct_net(2, {0, 1}, {0, 0}, C, eps);
}

ReluNetwork build_multiproduct_net(int N, double C, double eps) {
    if (N < 2) throw ConfigError("multi-product needs N >= 2");
    std::vector<int> f(N);
    for (int i = 0; i < N; ++i) f[i] = i;
    return build_multiproduct_net(N, f, std::vector<char>(N, 0), C, eps);
}

double bump_value(const CubeIndex& c, double delta, std::span<const double> x) {
    const auto cube = DyadicCube::of(c);
    double v = 1;
    for (int l = 0; l < c.dim; ++l) v *= trapezoid_value(cube.anchor[l], cube.anchor[l] + cube.side, delta, x[l]);
    return v;
}

ReluNetwork build_bump_net(const CubeIndex& c, double delta, double eps1) {
    if (!(delta > 0) || delta > std::ldexp(1.0, -(c.level + 2)))
        throw ConfigError("bump ramp width must lie in (0, 2^-(j+2)] for a scale-" + std::to_string(c.level) + " cube");
    const auto cube = DyadicCube::of(c);
    const int d = c.dim;
    std::vector<ReluNetwork> axes;
    for (int l = 0; l < d; ++l)
        axes.push_back(build_trapezoid_net(cube.anchor[l], cube.anchor[l] + cube.side, delta, d, l));
    if (d == 1) return axes[0];
    std::vector<int> f(d);
    for (int l = 0; l < d; ++l) f[l] = l;
    const std::vector<char> nn(d, 1);
    return compose(stack_parallel(axes), build_multiproduct_net(d, f, nn, 1.0, eps1), nn);
}

ReluNetwork build_patch_net(const PolynomialPatch& p, double eps1) {
    const int d = p.dim();
    const auto& monos = monomials(d, p.degree);
    if (p.coeffs.size() != monos.size()) throw ValidationError("patch coefficient count does not match its degree");
    const auto cube = DyadicCube::of(p.cube);
    const double scale = std::ldexp(1.0, p.cube.level);

    double a0 = 0;
    std::vector<ReluNetwork> terms;
    std::vector<std::vector<char>> masks;
    std::vector<double> weights;
    for (std::size_t i = 0; i < monos.size(); ++i) {
        const double a = p.coeffs[i];
        if (a == 0) continue;
        const auto& al = monos[i];
        const int ord = al.order();
        if (ord == 0) {
            a0 = a;
            continue;
        }
        std::vector<int> f;
        for (int l = 0; l < d; ++l)
            for (int e = 0; e < al.alpha[l]; ++e) f.push_back(l);
        if (ord == 1) {
            ReluNetwork sel;
            sel.input_dim = d;
            sel.layers.push_back(Layer::from_triplets(1, d, {{0, f[0], 1.0}}));
            sel.layers.push_back(Layer::from_triplets(1, 1, {{0, 0, 1.0}}));
            terms.push_back(std::move(sel));
            masks.push_back({1});
        } else {
            terms.push_back(build_multiproduct_net(d, f, std::vector<char>(d, 1), 1.0, eps1));
            masks.push_back({0});
        }
        weights.push_back(a);
    }
    if (terms.empty()) {
        ReluNetwork net;
        net.input_dim = d;
        net.layers.push_back(Layer::from_triplets(1, d, {}));
        net.layers.push_back(Layer::from_triplets(1, 1, {}, {a0}));
        return net;
    }
    // u_l = clip(2^j x_l - k_l, 0, 1) = ReLU(U) - ReLU(U - 1)
    ReluNetwork clip;
    clip.input_dim = d;
    clip.output_dim = d;
    {
        std::vector<Triplet> t, o;
        std::vector<double> b(2 * d);
        for (int l = 0; l < d; ++l) {
            const double k = cube.anchor[l] * scale;
            t.push_back({2 * l, l, scale});
            t.push_back({2 * l + 1, l, scale});
            b[2 * l] = -k;
            b[2 * l + 1] = -k - 1;
            o.push_back({l, 2 * l, 1.0});
            o.push_back({l, 2 * l + 1, -1.0});
        }
        clip.layers.push_back(Layer::from_triplets(2 * d, d, std::move(t), std::move(b)));
        clip.layers.push_back(Layer::from_triplets(d, 2 * d, std::move(o)));
    }
    auto body = compose(clip, stack_parallel(terms, masks), std::vector<char>(d, 1));
    std::vector<Triplet> A;
    for (std::size_t i = 0; i < weights.size(); ++i) A.push_back({0, static_cast<int>(i), weights[i]});
    return post_affine(body, 1, A, {a0});
}

double patch_net_error(const ReluNetwork& net, const PolynomialPatch& p, int n) {
    const int d = p.dim();
    const auto cube = DyadicCube::of(p.cube);
    std::size_t total = 1;
    for (int l = 0; l < d; ++l) total *= n;
    double worst = 0;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < total; ++i) {
        std::size_t r = i;
        for (int l = 0; l < d; ++l) {
            x[l] = cube.anchor[l] + cube.side * static_cast<double>(r % n) / (n - 1);
            r /= n;
        }
        worst = std::max(worst, std::abs(relu_forward_scalar(net, x) - eval_patch(p, x)));
    }
    return worst;
}

double net_l2_error_sq(const ReluNetwork& net, const PiecewisePolynomial& pp, std::size_t n, std::uint64_t seed,
                       int workers) {
    const int d = net.input_dim;
    std::vector<double> pts(n * d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0, 1);
    for (auto& v : pts) v = U(rng);
    const auto y = relu_forward_batch(net, pts, workers);
    std::vector<double> part(std::max(1, workers), 0.0);
    const std::size_t chunk = (n + part.size() - 1) / part.size();
    parallel_for(part.size(), workers, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t w = lo; w < hi; ++w)
            for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) {
                const double e = y[i] - pp(std::span<const double>(&pts[i * d], d));
                part[w] += e * e;
            }
    });
    double s = 0;
    for (double v : part) s += v;
    return s / static_cast<double>(n);
}

double compile_budget(const CompileReport& r) {
    const double d = r.dim, T = std::max<double>(1, r.tree_size);
    return 3 * (r.R * r.R * d * d + 1 + r.C3 * r.C3 * r.R_p * r.R_p * r.theta * r.theta) * r.eps1 * r.eps1 +
           std::pow(2.0, d + 3) * d * r.R * r.R * r.delta * std::pow(T, 1 / d);
}

CompileResult compile_adaptive_net(const PiecewisePolynomial& pp, const CompileOptions& opt) {
    if (pp.patches.empty()) throw ValidationError("approximant has no cells");
    if (!(opt.eps > 0 && opt.eps < 1)) throw ConfigError("target accuracy must lie in (0,1)");
    CompileReport r;
    r.dim = pp.dim();
    r.theta = pp.theta;
    r.tree_size = pp.source_tree_size;
    r.cells = pp.patches.size();
    r.finest_level = pp.partition.finest_level();
    r.eps = opt.eps;
    if (opt.s)
        r.s = *opt.s;
    else if (pp.s)
        r.s = *pp.s;
    else
        throw ConfigError("no rate s given and the approximant carries none");
    if (!(r.s > 0)) throw ConfigError("rate s must be positive");

    const double T = std::max<double>(1, r.tree_size), d = r.dim;
    r.eps1 = std::min(opt.eps, std::pow(T, -r.s));
    // ramp width rounded down to a power of two so every trapezoid is exact
    const double raw = std::min(std::pow(T, -2 * r.s - 1 / d), std::ldexp(1.0, -r.finest_level - 2));
    r.delta = std::ldexp(1.0, static_cast<int>(std::floor(std::log2(raw))));
    if (r.delta < std::ldexp(1.0, -50))
        throw ConfigError("ramp width 2^" + std::to_string(static_cast<int>(std::log2(r.delta))) +
                          " is below the 2^-50 floor; the partition or #T is too large for exact trapezoids");

    double sup = 0;
    for (const auto& p : pp.patches) {
        r.R_p = std::max(r.R_p, p.max_abs_coeff());
        sup = std::max(sup, p.abs_coeff_sum());
    }
    r.R = opt.R ? *opt.R : (sup > 0 ? sup : 1.0);
    if (!(r.R > 0)) throw ConfigError("clamp bound must be positive");

    const int grid = r.dim == 1 ? 257 : (r.dim == 2 ? 33 : 9);
    double c3 = 0;
    std::vector<ReluNetwork> cells;
    for (const auto& p : pp.patches) {
        auto patch = build_patch_net(p, r.eps1);
        if (r.theta >= 1 && r.R_p > 0)
            c3 = std::max(c3, patch_net_error(patch, p, grid) / (r.R_p * r.theta * r.eps1));
        auto bump = build_bump_net(p.cube, r.delta, r.eps1);
        const double C = std::max(1.0, p.abs_coeff_sum()) * (1 + (d + r.theta) * r.eps1);
        auto pair = stack_parallel({bump, patch}, {{1}, {0}});
        cells.push_back(compose(pair, build_product_net(C, r.eps1), {1, 0}));
    }
    r.C3 = c3;
    auto all = stack_parallel(cells);
    std::vector<Triplet> ones;
    for (int i = 0; i < all.output_dim; ++i) ones.push_back({0, i, 1.0});
    auto net = append_clamp(post_affine(all, 1, ones), r.R);

    r.stats = network_stats(net);
    r.budget = compile_budget(r);
    r.covering_log = covering_bound(r.stats, opt.cover_radius);
    r.kappa_budget = std::pow(opt.eps, -std::max(2.0, 1 / r.s));
    r.kappa_ratio = r.stats.kappa / r.kappa_budget;
    if (opt.measure_error && opt.mc_points > 0)
        r.l2_error_sq = net_l2_error_sq(net, pp, opt.mc_points, opt.seed, opt.workers);
    return {std::move(net), r};
}

nlohmann::json to_json(const CompileReport& r) {
    return {{"tree_size", r.tree_size},
            {"cells", r.cells},
            {"finest_level", r.finest_level},
            {"theta", r.theta},
            {"dim", r.dim},
            {"s", r.s},
            {"eps", r.eps},
            {"eps1", r.eps1},
            {"delta", r.delta},
            {"R", r.R},
            {"R_p", r.R_p},
            {"C3", r.C3},
            {"L", r.stats.L},
            {"w", r.stats.w},
            {"K", r.stats.K},
            {"kappa", r.stats.kappa},
            {"M", r.stats.M},
            {"l2_error_sq", std::isnan(r.l2_error_sq) ? nlohmann::json(nullptr) : nlohmann::json(r.l2_error_sq)},
            {"budget", r.budget},
            {"covering_log", r.covering_log},
            {"kappa_budget", r.kappa_budget},
            {"kappa_ratio", r.kappa_ratio}};
}

}  // namespace adaptree

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"
#include "adaptree/relu_gadgets.hpp"
#include "support.hpp"

using namespace adaptree;

namespace {
double run(const ReluNetwork& n, std::initializer_list<double> x) {
    std::vector<double> v(x);
    return relu_forward_scalar(n, v);
}
CubeIndex ci(int j, std::vector<std::uint32_t> k) { return CubeIndex::make(j, k); }
bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0 || (a == 0 && b == 0); }

// smallest threshold tree of onedisc with exactly `size` nodes, via the field's jump points
PiecewisePolynomial onedisc_with_tree_size(std::size_t size) {
    const auto& t = find_target("onedisc");
    auto field = RefinementField::build(t.eval, 1, Measure::lebesgue(1), {1, 14, std::nullopt});
    for (double v : field.jump_points()) {
        const double eta = v * (1 - 1e-12);
        if (field.tree_size(eta) == size) {
            auto pp = build_adaptive_approximant(field, truncate_tree(field, eta).tree);
            pp.s = 2;
            pp.source_eta = eta;
            return pp;
        }
    }
    throw std::runtime_error("size not attainable");
}
}  // namespace

TEST_CASE("forward pass on hand-built networks") {
    ReluNetwork id;
    id.layers.push_back(Layer::from_triplets(2, 1, {{0, 0, 1}, {1, 0, -1}}));
    id.layers.push_back(Layer::from_triplets(1, 2, {{0, 0, 1}, {0, 1, -1}}));
    CHECK(run(id, {-0.7}) == -0.7);
    CHECK(run(id, {0.3}) == 0.3);

    ReluNetwork one;
    one.layers.push_back(Layer::from_triplets(1, 1, {{0, 0, 2}}, {-1}));
    one.layers.push_back(Layer::from_triplets(1, 1, {{0, 0, 1}}));
    CHECK(run(one, {1.0}) == 1.0);
    CHECK(run(one, {0.2}) == 0.0);

    std::vector<double> bad = {1, 2};
    CHECK_THROWS_AS(relu_forward(one, bad), ValidationError);

    ReluNetwork zero;
    zero.layers.push_back(Layer::from_triplets(3, 1, {}));
    zero.layers.push_back(Layer::from_triplets(1, 3, {}));
    CHECK(network_stats(zero).K == 0);
}

TEST_CASE("trapezoid values and stats") {
    auto t = build_trapezoid_net(0.25, 0.5, 0.1);
    CHECK(run(t, {0.25}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(run(t, {0.375}) == 1.0);
    CHECK(run(t, {0.6}) == 0.0);
    auto s = network_stats(t);
    CHECK(s.L == 1);
    CHECK(s.w == 4);
    CHECK(s.K == 12);
    CHECK(s.kappa == doctest::Approx(10));

    auto left = build_trapezoid_net(0, 0.5, 0.125);
    CHECK(run(left, {0.0}) == 1.0);
    CHECK(run(left, {0.75}) == 0.0);
    CHECK(network_stats(left).w == 2);
    CHECK(run(build_trapezoid_net(0, 1, 0.1), {0.3}) == 1.0);
    CHECK_THROWS_AS(build_trapezoid_net(0.25, 0.5, 0.25), ConfigError);
    CHECK_THROWS_AS(build_trapezoid_net(0.5, 0.25, 0.01), ConfigError);
}

TEST_CASE("trapezoid matches the closed form") {
    for (auto [a, b, d] : {std::tuple{0.23, 0.61, 0.07}, {0.0, 0.37, 0.05}, {0.4, 1.0, 0.11}, {0.25, 0.5, 0.0625}}) {
        auto net = build_trapezoid_net(a, b, d);
        double worst = 0;
        for (int i = 0; i <= 10000; ++i) {
            const double x = i / 10000.0;
            worst = std::max(worst, std::abs(run(net, {x}) - trapezoid_value(a, b, d, x)));
        }
        CHECK(worst <= 1e-12);
    }
    // dyadic ends and a power-of-two ramp: exact everywhere
    auto net = build_trapezoid_net(0.25, 0.5, 0.0625);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(0, 1);
    for (int i = 0; i < 10000; ++i) {
        const double x = U(rng);
        REQUIRE(run(net, {x}) == trapezoid_value(0.25, 0.5, 0.0625, x));
    }
}

TEST_CASE("trapezoids over a partition sum to one") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0, 1);
    for (int rep = 0; rep < 5; ++rep) {
        auto p = outer_leaves(testsupport::random_subtree(1, 20, rng, 8));
        const double delta = std::ldexp(1.0, -p.finest_level() - 2);
        std::vector<ReluNetwork> nets;
        for (const auto& c : p.cells) {
            auto cube = DyadicCube::of(c);
            nets.push_back(build_trapezoid_net(cube.anchor[0], cube.anchor[0] + cube.side, delta));
        }
        for (int i = 0; i < 1000; ++i) {
            double s = 0;
            const double x = U(rng);
            for (const auto& n : nets) s += run(n, {x});
            REQUIRE(s == doctest::Approx(1).epsilon(1e-12));
        }
    }
}

TEST_CASE("parallel stacking") {
    auto a = build_trapezoid_net(0.25, 0.5, 0.1), b = build_trapezoid_net(0.1, 0.9, 0.05);
    auto one = stack_parallel({a});
    auto st = stack_parallel({a, b});
    auto sa = network_stats(a), sb = network_stats(b), ss = network_stats(st);
    CHECK(ss.K == sa.K + sb.K);
    CHECK(ss.w == sa.w + sb.w);
    CHECK(ss.L == 1);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(0, 1);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x = {U(rng)};
        auto y = relu_forward(st, x);
        REQUIRE(y[0] == relu_forward(a, x)[0]);
        REQUIRE(y[1] == relu_forward(b, x)[0]);
        REQUIRE(relu_forward(one, x)[0] == relu_forward(a, x)[0]);
    }
    // unequal depths are padded with exact identity channels
    auto p = build_product_net(1, 1e-2);
    auto tz = build_trapezoid_net(0.25, 0.5, 0.1, 2, 1);
    auto mixed = stack_parallel({p, tz});
    CHECK(mixed.depth() == p.depth());
    std::uniform_real_distribution<double> V(-1, 1);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x = {V(rng), U(rng)};
        auto y = relu_forward(mixed, x);
        REQUIRE(y[0] == relu_forward(p, x)[0]);
        REQUIRE(y[1] == relu_forward(tz, x)[0]);
    }
    CHECK_THROWS_AS(stack_parallel({}), ValidationError);
    CHECK_THROWS_AS(stack_parallel({a, p}), ValidationError);
}

TEST_CASE("product gadget contract") {
    std::mt19937_64 rng(3);
    for (double C : {1.0, 3.0}) {
        for (double eps : {1e-2, 1e-3}) {
            auto net = build_product_net(C, eps);
            std::uniform_real_distribution<double> U(-C, C);
            for (int i = 0; i < 100; ++i) {
                const double x = U(rng);
                REQUIRE(bit_equal(run(net, {x, 0.0}), 0.0));
                REQUIRE(bit_equal(run(net, {0.0, x}), 0.0));
            }
            double worst = 0, big = 0;
            for (int i = 0; i < 200; ++i)
                for (int j = 0; j < 200; ++j) {
                    const double x = -C + 2 * C * i / 199, y = -C + 2 * C * j / 199;
                    const double v = run(net, {x, y});
                    worst = std::max(worst, std::abs(v - x * y));
                    big = std::max(big, std::abs(v));
                }
            CHECK(worst <= eps);
            CHECK(big <= C * C * (1 + 1e-12));
            CHECK(network_stats(net).w <= 6);
        }
    }
    // depth linear in log(1/eps)
    std::vector<double> lx, ly;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
        lx.push_back(std::log(1 / eps));
        ly.push_back(network_stats(build_product_net(1, eps)).L);
    }
    auto fit = least_squares(lx, ly);
    for (std::size_t i = 0; i < lx.size(); ++i) CHECK(std::abs(ly[i] - fit.slope * lx[i] - fit.intercept) <= 1);
    CHECK(fit.slope > 0);
    CHECK_THROWS_AS(build_product_net(1, 1.0), ConfigError);
}

TEST_CASE("multi-product contract") {
    std::mt19937_64 rng(4);
    for (int N = 2; N <= 4; ++N) {
        for (double eps : {1e-2, 1e-3}) {
            for (double C : {1.0, 2.0}) {
                auto net = build_multiproduct_net(N, C, eps);
                const auto st = network_stats(net);
                CHECK(st.w <= N + 6);
                std::uniform_real_distribution<double> U(-C, C);
                double worst = 0;
                std::vector<double> a(N);
                for (int t = 0; t < 20000; ++t) {
                    double want = 1;
                    for (auto& v : a) want *= (v = U(rng));
                    worst = std::max(worst, std::abs(relu_forward_scalar(net, a) - want));
                    a[rng() % N] = 0;
                    REQUIRE(bit_equal(relu_forward_scalar(net, a), 0.0));
                }
                CHECK_MESSAGE(worst <= N * eps, "N=" << N << " eps=" << eps << " C=" << C);
            }
        }
    }
    auto three = build_multiproduct_net(3, 1, 1e-3);
    CHECK(std::abs(run(three, {0.5, 0.5, 0.5}) - 0.125) <= 3e-3);
    // signed inputs carry as pairs: width exactly 2N+2 here
    CHECK(network_stats(build_multiproduct_net(4, 1, 1e-3)).w == 10);
    // nonneg factors carry on one channel, repeated factors allowed
    auto sq = build_multiproduct_net(1, {0, 0, 0}, {1}, 1, 1e-3);
    CHECK(std::abs(run(sq, {0.7}) - 0.343) <= 3e-3);
    CHECK_THROWS_AS(build_multiproduct_net(1, 1, 1e-3), ConfigError);
}

TEST_CASE("bump networks") {
    auto b1 = build_bump_net(ci(2, {1}), 1.0 / 16, 1e-3);
    for (int i = 0; i <= 1000; ++i) {
        const double x = i / 1000.0;
        REQUIRE(run(b1, {x}) == doctest::Approx(bump_value(ci(2, {1}), 1.0 / 16, std::span<const double>(&x, 1))).epsilon(1e-13));
    }
    auto c = ci(1, {0, 0});
    const double delta = 1.0 / 16, eps1 = 1e-3;
    auto b2 = build_bump_net(c, delta, eps1);
    double worst = 0;
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            std::vector<double> x = {i / 100.0, j / 100.0};
            const double v = relu_forward_scalar(b2, x);
            worst = std::max(worst, std::abs(v - bump_value(c, delta, x)));
            if (x[0] >= 0.5 + delta / 2 || x[1] >= 0.5 + delta / 2) REQUIRE(bit_equal(v, 0.0));
        }
    CHECK(worst <= 2e-3);
    const double mid = run(b2, {0.25, 0.25});
    CHECK(mid >= 1 - 2 * eps1);
    CHECK(mid <= 1);
    CHECK_THROWS_AS(build_bump_net(c, 0.25, eps1), ConfigError);

    // 3D bump, exact zero outside
    auto b3 = build_bump_net(ci(1, {1, 0, 1}), 1.0 / 8, 1e-3);
    CHECK(bit_equal(run(b3, {0.2, 0.2, 0.8}), 0.0));
    CHECK(run(b3, {0.75, 0.25, 0.75}) == doctest::Approx(1).epsilon(3e-3));
}

TEST_CASE("patch networks") {
    auto cube = ci(3, {5});
    auto constant = PolynomialPatch::zero(cube, 0);
    constant.coeffs = {0.37};
    CHECK(patch_net_error(build_patch_net(constant, 1e-3), constant, 101) == 0);

    auto lin = PolynomialPatch::zero(cube, 1);
    lin.coeffs = {0, 2};
    CHECK(patch_net_error(build_patch_net(lin, 1e-3), lin, 1001) == 0);

    auto quad = PolynomialPatch::zero(cube, 2);
    quad.coeffs = {0, 0, 1};
    CHECK(patch_net_error(build_patch_net(quad, 1e-3), quad, 1001) <= 5e-3);

    // clipping: outside the cube the patch holds its boundary values
    auto net = build_patch_net(quad, 1e-3);
    CHECK(run(net, {0.0}) == 0.0);
    CHECK(run(net, {0.99}) == doctest::Approx(1).epsilon(2e-3));

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> U(-1, 1);
    auto p2 = PolynomialPatch::zero(ci(2, {1, 2}), 3);
    for (auto& a : p2.coeffs) a = U(rng);
    const double err = patch_net_error(build_patch_net(p2, 1e-4), p2, 41);
    CHECK(err <= p2.max_abs_coeff() * 3 * 1e-4 * p2.coeffs.size());
}

TEST_CASE("covering bound") {
    NetworkStats s;
    s.L = 1;
    s.w = 2;
    s.kappa = 1;
    s.K = 3;
    CHECK(covering_bound(s, 1) == doctest::Approx(3 * std::log(32.0)).epsilon(1e-14));
    CHECK(covering_bound(s, 0.5) - covering_bound(s, 1) == doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(covering_bound(s, 0), ConfigError);
}

TEST_CASE("clamp keeps outputs in range") {
    ReluNetwork lin;
    lin.layers.push_back(Layer::from_triplets(2, 1, {{0, 0, 1}, {1, 0, -1}}));
    lin.layers.push_back(Layer::from_triplets(1, 2, {{0, 0, 5}, {0, 1, -5}}));
    auto c = append_clamp(lin, 2);
    CHECK(run(c, {1.0}) == 2);
    CHECK(run(c, {-1.0}) == -2);
    CHECK(run(c, {0.2}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(network_stats(c).M == 2);
    CHECK(network_stats(c).L == 2);
}

TEST_CASE("compiling a single constant cell") {
    PiecewisePolynomial pp;
    pp.partition.dim = 1;
    pp.partition.cells = {CubeIndex::root(1)};
    auto p = PolynomialPatch::zero(CubeIndex::root(1), 0);
    p.coeffs = {0.8};
    pp.patches = {p};
    pp.reindex();
    CompileOptions opt;
    opt.eps = 1e-3;
    opt.s = 1;
    opt.mc_points = 1000;
    auto res = compile_adaptive_net(pp, opt);
    CHECK(res.report.eps1 == 1e-3);
    for (double x : {0.1, 0.5, 0.9}) CHECK(std::abs(run(res.net, {x}) - 0.8) <= 2e-3);
    CHECK(res.report.stats.M == doctest::Approx(0.8));
    opt.s.reset();
    CHECK_THROWS_AS(compile_adaptive_net(pp, opt), ConfigError);
}

TEST_CASE("bumps of a 2D partition form a partition of unity") {
    std::mt19937_64 rng(8);
    auto p = outer_leaves(testsupport::random_subtree(2, 8, rng, 4));
    const double delta = std::ldexp(1.0, -p.finest_level() - 2), eps1 = 1e-3;
    std::vector<ReluNetwork> nets;
    for (const auto& c : p.cells) nets.push_back(build_bump_net(c, delta, eps1));
    std::uniform_real_distribution<double> U(0, 1);
    const double tol = p.cells.size() * 2 * eps1;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x = {U(rng), U(rng)};
        double s = 0, exact = 0;
        for (std::size_t k = 0; k < nets.size(); ++k) {
            s += relu_forward_scalar(nets[k], x);
            exact += bump_value(p.cells[k], delta, x);
        }
        REQUIRE(exact == doctest::Approx(1).epsilon(1e-12));
        REQUIRE(std::abs(s - 1) <= tol);
    }
}

TEST_CASE("compiled onedisc network stays within the error budget") {
    auto pp = onedisc_with_tree_size(15);
    CompileOptions opt;
    opt.eps = 1e-2;
    opt.mc_points = 200000;
    auto res = compile_adaptive_net(pp, opt);
    const auto& r = res.report;
    CHECK(r.tree_size == 15);
    CHECK(r.eps1 == doctest::Approx(std::pow(15.0, -2)));
    CHECK(r.C3 >= 0);
    CHECK(r.l2_error_sq <= r.budget);
    CHECK(std::isfinite(r.covering_log));
    CHECK(r.stats.M == r.R);
    // deep inside a cell the network follows that cell's patch
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(0, 1);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x = {U(rng)};
        const double v = relu_forward_scalar(res.net, x);
        CHECK(std::abs(v) <= r.R);
        CHECK(std::abs(v - pp(x)) <= 0.05);
    }
}

TEST_CASE("network json round trip is bit faithful") {
    auto pp = onedisc_with_tree_size(7);
    CompileOptions opt;
    opt.eps = 1e-2;
    opt.measure_error = false;
    auto net = compile_adaptive_net(pp, opt).net;
    auto small = build_product_net(2, 1e-3);
    for (const auto* n : {&net, &small}) {
        const auto path = "net_roundtrip.json";
        save_network(*n, path);
        auto back = load_network(path);
        std::remove(path);
        CHECK(network_stats(back).K == network_stats(*n).K);
        CHECK(back.clamp_M == n->clamp_M);
        std::mt19937_64 rng(10);
        std::uniform_real_distribution<double> U(0, 1);
        for (int i = 0; i < 1000; ++i) {
            std::vector<double> x(n->input_dim);
            for (auto& v : x) v = U(rng);
            REQUIRE(bit_equal(relu_forward(back, x)[0], relu_forward(*n, x)[0]));
        }
    }
    auto j = to_json(small);
    CHECK(j["layers"][0]["weights"][0].is_string());
    CHECK_THROWS_AS(network_from_json(nlohmann::json::parse(R"({"meta":{}})")), ValidationError);
}

TEST_CASE("batch forward equals per-point evaluation") {
    auto net = build_multiproduct_net(3, 1, 1e-3);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1, 1);
    std::vector<double> pts(3 * 5000);
    for (auto& v : pts) v = U(rng);
    auto y = relu_forward_batch(net, pts, 4);
    for (std::size_t i = 0; i < 5000; ++i)
        REQUIRE(bit_equal(y[i], relu_forward_scalar(net, std::span<const double>(&pts[3 * i], 3))));
}

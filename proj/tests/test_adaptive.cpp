#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "adaptree/adaptive.hpp"
#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"

using namespace adaptree;

namespace {
const Measure& leb1() {
    static const Measure m = Measure::lebesgue(1);
    return m;
}
ScalarFn ramp() {
    return [](std::span<const double> x) { return x[0]; };
}
ScalarFn onedisc() { return find_target("onedisc").eval; }
ScalarFn sine() { return find_target("sin1d").eval; }

RefinementField field1d(const ScalarFn& f, int theta, int max_level = -1) {
    return RefinementField::build(f, 1, leb1(), {theta, max_level, std::nullopt});
}

bool subset(const TruncatedTree& a, const TruncatedTree& b) {
    for (const auto& c : a.nodes())
        if (!b.contains(c)) return false;
    return true;
}
}  // namespace

TEST_CASE("zero function truncates to the empty tree") {
    auto zero = [](std::span<const double>) { return 0.0; };
    auto field = field1d(zero, 1, 10);
    for (double eta : {1.0, 1e-3, 1e-9}) {
        auto r = truncate_tree(field, eta);
        CHECK(r.tree.size() == 0);
        CHECK(outer_leaves(r.tree).cells.size() == 1);
        CHECK_FALSE(r.depth_cap_reached);
    }
    std::vector<double> grid = geometric_grid(1, 1e-3, 10);
    auto c = estimate_seminorm(field, 1.0, grid);
    CHECK(c.seminorm_estimate == 0);
}

TEST_CASE("ramp at eta 0.2 keeps only the root") {
    auto field = field1d(ramp(), 0, 12);
    CHECK(field.delta(CubeIndex::root(1)) == doctest::Approx(0.25).epsilon(1e-12));
    auto r = truncate_tree(field, 0.2);
    REQUIRE(r.tree.size() == 1);
    CHECK(r.tree.contains(CubeIndex::root(1)));
    CHECK(outer_leaves(r.tree).cells.size() == 2);
}

TEST_CASE("tree size of the ramp follows the closed-form deltas") {
    // every scale-j cube has delta 2^{-1.5 j}/4, so #T(eta) = 2^{J+1}-1 with J the deepest scale above eta
    const int jmax = 12;
    auto field = field1d(ramp(), 0, jmax);
    for (double eta : geometric_grid(0.3, 1e-6, 30)) {
        std::size_t want = 0;
        for (int j = 0; j <= jmax; ++j)
            if (std::pow(2.0, -1.5 * j) / 4 > eta) want += std::size_t{1} << j;
        CHECK(field.tree_size(eta) == want);
        CHECK(truncate_tree(field, eta).tree.size() == want);
    }
    // s=1, m=2/3: sup of eta^m #T over eta is attained at a finite eta
    auto c = estimate_seminorm(field, 1.0, default_eta_grid(field));
    CHECK(c.m == doctest::Approx(2.0 / 3));
    CHECK(c.seminorm_estimate > 0);
    CHECK(std::isfinite(c.seminorm_estimate));
}

TEST_CASE("truncation is monotone in eta") {
    auto field = field1d(onedisc(), 1, 14);
    auto grid = default_eta_grid(field);
    std::sort(grid.begin(), grid.end());
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        auto lo = truncate_tree(field, grid[i]).tree, hi = truncate_tree(field, grid[i + 1]).tree;
        REQUIRE(subset(hi, lo));
        CHECK(hi.size() <= lo.size());
    }
}

TEST_CASE("empty tree approximant of the ramp is the mean") {
    TruncatedTree empty(1, {}, true);
    auto pp = build_adaptive_approximant(ramp(), empty, 0, leb1(), QuadratureSpec::for_degree(0));
    for (double x : {0.0, 0.3, 0.99, 1.0}) CHECK(pp(std::span<const double>(&x, 1)) == doctest::Approx(0.5));
}

TEST_CASE("polynomials are reproduced on any tree") {
    auto q = QuadratureSpec::for_degree(2);
    auto cubic = [](std::span<const double> x) { return 1 - 2 * x[0] + 3 * x[0] * x[0]; };
    auto field = field1d(sine(), 2, 10);
    auto tree = truncate_tree(field, 1e-3).tree;
    auto pp = build_adaptive_approximant(cubic, tree, 2, leb1(), q);
    CHECK(approx_error(cubic, pp, leb1(), q) <= 1e-9);

    auto m2 = Measure::with_density(2, [](std::span<const double> x) { return 0.5 + x[0]; }, 1.5);
    auto g = [](std::span<const double> x) { return x[0] * x[1] - x[1] + 0.25; };
    std::vector<std::uint32_t> k10 = {1, 0};
    auto t2 = TruncatedTree(2, std::set<CubeIndex>{CubeIndex::root(2), CubeIndex::make(1, k10)});
    auto q2 = QuadratureSpec::for_degree(2);
    CHECK(approx_error(g, build_adaptive_approximant(g, t2, 2, m2, q2), m2, q2) <= 1e-9);
}

TEST_CASE("an approximant reproduces itself") {
    auto field = field1d(onedisc(), 1, 10);
    auto pp = build_adaptive_approximant(field, truncate_tree(field, 0.01).tree);
    ScalarFn self = [&pp](std::span<const double> x) { return pp(x); };
    CHECK(approx_error(self, pp, leb1(), QuadratureSpec::for_degree(1)) <= 1e-10);
}

TEST_CASE("C_s constant") {
    CHECK(rate_exponent_m(0.5) == 1);
    CHECK(cs_constant(0.5) == doctest::Approx(4.0).epsilon(1e-15));
    // s=2: m=0.4, 2^0.4 / (1 - 2^{-1.6})
    CHECK(cs_constant(2) == doctest::Approx(std::pow(2, 0.4) / (1 - std::pow(2, -1.6))).epsilon(1e-15));
    double direct = 0;
    for (int l = 0; l < 200; ++l) direct += std::pow(2.0, l * (2.0 / 3 - 2));
    CHECK(cs_constant(1) == doctest::Approx(std::pow(2, 2.0 / 3) * direct).epsilon(1e-13));
}

TEST_CASE("error decomposes into discarded refinements plus tail") {
    for (int theta : {0, 1, 2}) {
        auto field = field1d(sine(), theta, 12);
        for (double eta : geometric_grid(field.delta_max(), field.delta_max() * 1e-4, 12)) {
            auto tree = truncate_tree(field, eta).tree;
            const double e_cell = field_error_sq(field, tree);
            const double e_id = field_identity_error_sq(field, tree);
            // independent: quadrature of the built approximant
            auto pp = build_adaptive_approximant(field, tree);
            const double e_q =
                approx_error_sq(sine(), pp, leb1(), QuadratureSpec::gauss(2 * theta + 4, field.fine_level()));
            CHECK(std::abs(e_cell - e_id) <= 1e-6 * std::max(1.0, e_cell));
            CHECK(std::abs(e_q - e_cell) <= 1e-10);
        }
    }
}

TEST_CASE("field agrees with per-cube fits") {
    auto m = Measure::with_density(2, [](std::span<const double> x) { return 0.5 + x[1]; }, 1.5);
    auto f = find_target("smoothjump2d").eval;
    const int jmax = 4;
    auto field = RefinementField::build(f, 2, m, {1, jmax, std::nullopt});
    auto q = QuadratureSpec::gauss(6, jmax + 1);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const int j = static_cast<int>(rng() % (jmax + 1));
        const std::uint32_t n = 1u << j;
        std::vector<std::uint32_t> k = {static_cast<std::uint32_t>(rng() % n), static_cast<std::uint32_t>(rng() % n)};
        auto c = CubeIndex::make(j, k);
        auto rec = refinement_quantity(f, c, 1, m, q);
        CHECK(field.delta(c) == doctest::Approx(rec.delta).epsilon(1e-8));
        auto fit = fit_local_polynomial(f, c, 1, m, q);
        auto a = field.coeffs(c);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(fit.coeffs[i]).epsilon(1e-8));
    }
}

TEST_CASE("adaptive against a uniform partition at equal cell count") {
    auto q = QuadratureSpec::for_degree(1);
    auto fine = QuadratureSpec::gauss(6, 15);
    {
        // the onedisc jump sits on a dyadic point: at eta=0.05 the tree is the uniform scale-1 tree, 4 leaves
        auto field = field1d(onedisc(), 1, 14);
        auto tree = truncate_tree(field, 0.05).tree;
        CHECK(tree.size() == 3);
        auto pp = build_adaptive_approximant(field, tree);
        auto uni = approximant_on_partition(onedisc(), uniform_partition(1, 2), 1, leb1(), q);
        CHECK(approx_error(onedisc(), pp, leb1(), fine) == doctest::Approx(approx_error(onedisc(), uni, leb1(), fine)));
    }
    // jumps at sixths are never dyadic
    auto f = find_target("fivedisc").eval;
    auto field = field1d(f, 1, 14);
    for (double eta : {0.05, 0.01, 1e-3}) {
        auto pp = build_adaptive_approximant(field, truncate_tree(field, eta).tree);
        const std::size_t n = pp.partition.cells.size();
        int j = 0;
        while ((std::size_t{1} << j) < n) ++j;
        auto uni = approximant_on_partition(f, uniform_partition(1, j), 1, leb1(), q);
        CHECK(approx_error(f, pp, leb1(), fine) < approx_error(f, uni, leb1(), fine));
    }
}

TEST_CASE("error is non-increasing as eta decreases") {
    auto field = field1d(onedisc(), 1, 14);
    auto rows = eta_sweep(field, default_eta_grid(field));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].eta < rows[i - 1].eta);
        CHECK(rows[i].error_sq <= rows[i - 1].error_sq + 1e-14);
        CHECK(rows[i].tree_size >= rows[i - 1].tree_size);
    }
}

TEST_CASE("onedisc seminorm is stable across grids") {
    auto field = field1d(onedisc(), 1, 14);
    auto g1 = default_eta_grid(field, 40, 4);
    auto g2 = geometric_grid(field.delta_max() * 1.3, field.delta_max() * 2e-5, 57);
    auto a = estimate_seminorm(field, 2, g1), b = estimate_seminorm(field, 2, g2);
    CHECK(a.max_level == 14);
    CHECK_FALSE(a.not_converged);
    CHECK_FALSE(b.not_converged);
    CHECK(std::isfinite(a.seminorm_estimate));
    CHECK(std::abs(a.seminorm_estimate - b.seminorm_estimate) <= 0.1 * a.seminorm_estimate);
    CHECK(a.seminorm_estimate >= a.grid_estimate);
    for (std::size_t i = 1; i < a.rows.size(); ++i) CHECK(a.rows[i].tree_size >= a.rows[i - 1].tree_size);
}

TEST_CASE("measured rates match the predicted classes") {
    {
        auto field = field1d(sine(), 1, 16);
        auto r = estimate_rate_s(field, default_eta_grid(field));
        CHECK(r.s_hat >= 1.5);
    }
    {
        auto field = field1d(onedisc(), 1, 16);
        auto r = estimate_rate_s(field, default_eta_grid(field));
        CHECK(std::abs(r.s_hat - 2) <= 0.5);
        CHECK(r.s_stderr > 0);
    }
    {
        const auto& t = find_target("disk2d");
        auto field = RefinementField::build(t.eval, 2, Measure::lebesgue(2), {0, 10, std::nullopt});
        auto r = estimate_rate_s(field, default_eta_grid(field, 40, 3));
        CHECK(std::abs(r.s_hat - 0.5) <= 0.125);
    }
}

TEST_CASE("error bound holds on the grid") {
    for (const char* name : {"onedisc", "sin1d", "threedisc"}) {
        const auto& t = find_target(name);
        auto field = field1d(t.eval, 1, 14);
        const double s = known_rate(t, 1);
        auto grid = default_eta_grid(field);
        auto curve = estimate_seminorm(field, s, grid);
        REQUIRE_FALSE(curve.not_converged);
        for (const auto& row : eta_sweep(field, grid)) {
            if (row.capped) continue;
            CHECK(row.error_sq <= error_bound_sq(s, curve.seminorm_estimate, row.eta));
        }
    }
}

TEST_CASE("rate fit needs five distinct tree sizes") {
    auto field = field1d(ramp(), 0, 12);
    std::vector<double> grid = {0.3, 0.2, 0.15, 0.1};
    CHECK_THROWS_AS(estimate_rate_s(field, grid), InsufficientDataError);
}

TEST_CASE("depth cap produces a warning") {
    auto field = field1d(onedisc(), 1, 4);
    auto r = truncate_tree(field, 1e-6);
    CHECK(r.depth_cap_reached);
    CHECK(r.warning.find("depth cap") != std::string::npos);
    CHECK(r.tree.depth() == 4);
    CHECK_FALSE(truncate_tree(field, 10).depth_cap_reached);
}

TEST_CASE("piecewise polynomial json round trip") {
    auto field = field1d(onedisc(), 1, 10);
    auto pp = build_adaptive_approximant(field, truncate_tree(field, 0.02).tree);
    pp.s = 2;
    pp.target = "onedisc";
    auto back = piecewise_from_json(to_json(pp));
    CHECK(back.partition.cells == pp.partition.cells);
    CHECK(back.s == pp.s);
    CHECK(back.target == "onedisc");
    for (double x : {0.0, 0.1234, 0.5, 0.77, 1.0}) CHECK(back(std::span<const double>(&x, 1)) == pp(std::span<const double>(&x, 1)));
}

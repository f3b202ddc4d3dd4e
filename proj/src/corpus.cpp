#include "adaptree/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "adaptree/error.hpp"

namespace adaptree {

std::string to_string(RateClass c) {
    switch (c) {
        case RateClass::holder: return "holder";
        case RateClass::piecewise_1d: return "piecewise-1d";
        case RateClass::piecewise_nd: return "piecewise-nd";
        case RateClass::null_set: return "null-set";
    }
    return "?";
}

namespace {

// sin(2 pi x) plus a constant offset on each of the equal-width pieces [i/n, (i+1)/n)
TargetSpec piecewise_sine(std::string name, std::vector<double> offsets, std::string desc) {
    TargetSpec t;
    t.name = std::move(name);
    t.dim = 1;
    const int n = static_cast<int>(offsets.size());
    auto piece = [n](double x) { return std::clamp(static_cast<int>(std::floor(x * n)), 0, n - 1); };
    t.eval = [offsets, piece](std::span<const double> x) { return std::sin(2 * M_PI * x[0]) + offsets[piece(x[0])]; };
    t.branch = [piece](std::span<const double> x) { return piece(x[0]); };
    t.branch_count = n;
    std::vector<double> jumps;
    for (int i = 1; i < n; ++i)
        if (offsets[i] != offsets[i - 1]) jumps.push_back(static_cast<double>(i) / n);
    t.discontinuities = static_cast<int>(jumps.size());
    t.discontinuity_set = point_oracle(jumps);
    t.rate_class = RateClass::piecewise_1d;
    t.sup_bound = 2;
    t.description = std::move(desc);
    return t;
}

std::vector<TargetSpec> build_registry() {
    std::vector<TargetSpec> v;
    v.push_back(piecewise_sine("onedisc", {1, -1}, "sin(2 pi x) +1 on [0,1/2), -1 on [1/2,1)"));
    v.push_back(piecewise_sine("threedisc", {-1, 1, -1, 1}, "sin(2 pi x) with offsets -1,+1,-1,+1 on quarters"));
    v.push_back(piecewise_sine("fivedisc", {-1, 0, 1, -1, 0, 1}, "sin(2 pi x) with offsets -1,0,+1,-1,0,+1 on sixths"));
    v.push_back(piecewise_sine("sevendisc", {-1, -1.0 / 3, 1.0 / 3, 1, -1, -1.0 / 3, 1.0 / 3, 1},
                               "sin(2 pi x) with offsets -1,-1/3,1/3,1 repeated on eighths"));
    {
        TargetSpec t;
        t.name = "sin1d";
        t.eval = [](std::span<const double> x) { return std::sin(2 * M_PI * x[0]); };
        t.description = "sin(2 pi x)";
        v.push_back(t);
    }
    {
        TargetSpec t;
        t.name = "ramp1d";
        t.eval = [](std::span<const double> x) { return x[0]; };
        t.description = "x";
        v.push_back(t);
    }
    {
        // only the single point x=1/3 is irregular; invisible to any absolutely continuous measure
        TargetSpec t;
        t.name = "nullspike1d";
        t.eval = [](std::span<const double> x) { return x[0] == 1.0 / 3 ? 2.0 : std::sin(2 * M_PI * x[0]); };
        t.branch = [](std::span<const double> x) { return x[0] == 1.0 / 3 ? 1 : 0; };
        t.branch_count = 2;
        t.discontinuity_set = point_oracle({1.0 / 3});
        t.rate_class = RateClass::null_set;
        t.sup_bound = 2;
        t.description = "sin(2 pi x) except the value 2 at x=1/3";
        v.push_back(t);
    }
    {
        TargetSpec t;
        t.name = "smooth2d";
        t.dim = 2;
        t.eval = [](std::span<const double> x) { return std::sin(2 * M_PI * x[0]) * std::cos(M_PI * x[1]); };
        t.description = "sin(2 pi x) cos(pi y)";
        v.push_back(t);
    }
    {
        TargetSpec t;
        t.name = "disk2d";
        t.dim = 2;
        auto inside = [](std::span<const double> x) {
            const double a = x[0] - 0.5, b = x[1] - 0.5;
            return a * a + b * b <= 0.0625;
        };
        t.eval = [inside](std::span<const double> x) { return inside(x) ? 1.0 : 0.0; };
        t.branch = [inside](std::span<const double> x) { return inside(x) ? 1 : 0; };
        t.branch_count = 2;
        t.discontinuity_set = circle_oracle(0.5, 0.5, 0.25);
        t.rate_class = RateClass::piecewise_nd;
        t.discontinuities = 1;
        t.description = "indicator of the disk centred (0.5,0.5), radius 0.25";
        v.push_back(t);
    }
    {
        TargetSpec t;
        t.name = "smoothjump2d";
        t.dim = 2;
        auto inside = [](std::span<const double> x) {
            const double a = x[0] - 0.45, b = x[1] - 0.55;
            return a * a + b * b <= 0.09;
        };
        t.eval = [inside](std::span<const double> x) {
            return inside(x) ? 1 + 0.5 * std::sin(2 * M_PI * x[0]) * x[1] : 0.5 * std::cos(M_PI * x[1]) - 0.5 * x[0];
        };
        t.branch = [inside](std::span<const double> x) { return inside(x) ? 1 : 0; };
        t.branch_count = 2;
        t.discontinuity_set = circle_oracle(0.45, 0.55, 0.3);
        t.rate_class = RateClass::piecewise_nd;
        t.sup_bound = 2;
        t.discontinuities = 1;
        t.description = "smooth inside/outside the circle centred (0.45,0.55), radius 0.3, jump across it";
        v.push_back(t);
    }
    return v;
}

}  // namespace

const std::vector<TargetSpec>& targets() {
    static const std::vector<TargetSpec> reg = build_registry();
    return reg;
}

const TargetSpec& find_target(const std::string& name) {
    for (const auto& t : targets())
        if (t.name == name) return t;
    throw ConfigError("unknown target '" + name + "'");
}

double eval_target(const std::string& name, std::span<const double> x) {
    const auto& t = find_target(name);
    if (static_cast<int>(x.size()) != t.dim) throw ConfigError("target " + name + " expects d=" + std::to_string(t.dim));
    return t.eval(x);
}

double known_rate(const TargetSpec& t, int theta) {
    const double r = std::min(t.r, static_cast<double>(theta + 1));
    const double d = t.dim;
    switch (t.rate_class) {
        case RateClass::holder:
        case RateClass::null_set: return r / d;
        case RateClass::piecewise_1d: return r;
        case RateClass::piecewise_nd: return std::min(r / d, 1 / (2 * (d - 1)));
    }
    throw ConfigError("unknown rate class");
}

double known_rate(const std::string& name, int theta) { return known_rate(find_target(name), theta); }

BoundaryOracle circle_oracle(double cx, double cy, double radius) {
    return [=](const DyadicCube& c) {
        const double x0 = c.anchor[0], x1 = x0 + c.side, y0 = c.anchor[1], y1 = y0 + c.side;
        const double nx = std::clamp(cx, x0, x1) - cx, ny = std::clamp(cy, y0, y1) - cy;
        const double fx = std::max(std::abs(x0 - cx), std::abs(x1 - cx));
        const double fy = std::max(std::abs(y0 - cy), std::abs(y1 - cy));
        const double r2 = radius * radius;
        return nx * nx + ny * ny <= r2 && r2 <= fx * fx + fy * fy;
    };
}

BoundaryOracle point_oracle(std::vector<double> points) {
    return [points = std::move(points)](const DyadicCube& c) {
        for (double p : points)
            if (p >= c.anchor[0] && p <= c.anchor[0] + c.side) return true;
        return false;
    };
}

BoundaryOracle square_boundary_oracle(int dim) {
    return [dim](const DyadicCube& c) {
        for (int l = 0; l < dim; ++l)
            if (c.anchor[l] == 0 || c.anchor[l] + c.side == 1) return true;
        return false;
    };
}

BoundaryOracle filled_cube_oracle() {
    return [](const DyadicCube&) { return true; };
}

std::size_t count_boundary_cubes(const BoundaryOracle& oracle, int level, int dim) {
    check_dim(dim);
    if (level < 0 || level * dim > 30) throw ConfigError("scale too deep for an exhaustive scan");
    std::size_t count = 0;
    const std::uint64_t n = std::uint64_t{1} << (level * dim);
    for (std::uint64_t i = 0; i < n; ++i)
        if (oracle(DyadicCube::of(CubeIndex::from_linear(dim, level, i)))) ++count;
    return count;
}

MinkowskiEstimate estimate_minkowski_dim(const BoundaryOracle& oracle, int dim, int j_lo, int j_hi) {
    if (j_hi - j_lo + 1 < 4) throw InsufficientDataError("Minkowski estimate needs at least 4 scales");
    MinkowskiEstimate e;
    std::vector<double> x, y;
    for (int j = j_lo; j <= j_hi; ++j) {
        const auto n = count_boundary_cubes(oracle, j, dim);
        if (n == 0) throw InsufficientDataError("set misses every cube at scale " + std::to_string(j));
        e.levels.push_back(j);
        e.counts.push_back(n);
        x.push_back(j * std::log(2.0));
        y.push_back(std::log(static_cast<double>(n)));
    }
    auto fit = least_squares(x, y);
    e.d_M = fit.slope;
    e.slope_stderr = fit.slope_stderr;
    for (std::size_t i = 0; i < e.levels.size(); ++i)
        e.c_M = std::max(e.c_M, static_cast<double>(e.counts[i]) * std::pow(2.0, -e.levels[i] * e.d_M));
    return e;
}

}  // namespace adaptree

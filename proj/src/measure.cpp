#include "adaptree/measure.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

namespace adaptree {

Measure Measure::lebesgue(int dim) {
    check_dim(dim);
    Measure m;
    m.kind_ = MeasureKind::lebesgue;
    m.dim_ = dim;
    return m;
}

Measure Measure::with_density(int dim, ScalarFn density, double c_rho) {
    check_dim(dim);
    if (!(c_rho > 0)) throw ConfigError("density bound C_rho must be positive");
    Measure m;
    m.kind_ = MeasureKind::density;
    m.dim_ = dim;
    m.density_ = std::move(density);
    m.c_rho_ = c_rho;
    // Assumption audit on a midpoint grid
    const int per_axis = dim == 1 ? 1024 : dim == 2 ? 64 : 16;
    int total = 1;
    for (int l = 0; l < dim; ++l) total *= per_axis;
    double x[kMaxDim] = {0, 0, 0};
    for (int i = 0; i < total; ++i) {
        int t = i;
        for (int l = 0; l < dim; ++l) {
            x[l] = (t % per_axis + 0.5) / per_axis;
            t /= per_axis;
        }
        const double v = m.density_(std::span<const double>(x, dim));
        if (!(v >= 0) || v > c_rho * (1 + 1e-12)) {
            std::ostringstream os;
            os << "density " << v << " violates 0 <= rho <= C_rho=" << c_rho << " at x0=" << x[0];
            throw InvariantViolation(os.str());
        }
    }
    return m;
}

Measure Measure::empirical(PointCloud points, std::vector<double> weights) {
    check_dim(points.dim);
    if (points.empty()) throw ConfigError("empirical measure needs at least one point");
    const std::size_t n = points.size();
    if (weights.empty()) weights.assign(n, 1.0 / static_cast<double>(n));
    if (weights.size() != n) throw ConfigError("weight count does not match point count");
    double s = 0;
    for (double w : weights) {
        if (!(w >= 0)) throw ValidationError("empirical weights must be non-negative");
        s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValidationError("empirical weights sum to " + std::to_string(s) + ", not 1");
    for (double v : points.coords)
        if (!(v >= 0 && v <= 1)) throw ValidationError("empirical point outside [0,1]^d");
    Measure m;
    m.kind_ = MeasureKind::empirical;
    m.dim_ = points.dim;
    m.points_ = std::move(points);
    m.weights_ = std::move(weights);
    return m;
}

Measure Measure::load_csv(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    PointCloud pts(dim);
    std::vector<double> w;
    bool weighted = false;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (pts.empty() && w.empty()) continue;  // header
            throw ValidationError(path + ":" + std::to_string(row) + ": non-numeric row");
        }
        if (static_cast<int>(vals.size()) != dim && static_cast<int>(vals.size()) != dim + 1)
            throw ValidationError(path + ":" + std::to_string(row) + ": expected " + std::to_string(dim) +
                                  " or " + std::to_string(dim + 1) + " columns");
        const bool has_w = static_cast<int>(vals.size()) == dim + 1;
        if (pts.size() > 0 && has_w != weighted) throw ValidationError(path + ": inconsistent weight column");
        weighted = has_w;
        pts.push_back(std::span<const double>(vals.data(), dim));
        if (has_w) w.push_back(vals[dim]);
    }
    if (weighted) {
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        if (!(s > 0)) throw ValidationError(path + ": weights sum to zero");
        for (double& v : w) v /= s;
    }
    return empirical(std::move(pts), std::move(w));
}

double Measure::density(std::span<const double> x) const {
    if (kind_ == MeasureKind::density) return density_(x);
    return 1.0;
}

std::string Measure::describe() const {
    switch (kind_) {
        case MeasureKind::lebesgue: return "lebesgue";
        case MeasureKind::density: return "density(C_rho=" + std::to_string(c_rho_) + ")";
        case MeasureKind::empirical: return "empirical(n=" + std::to_string(points_.size()) + ")";
    }
    return "?";
}

QuadratureSpec QuadratureSpec::gauss(int order, int min_level) {
    QuadratureSpec q;
    q.order = order;
    q.min_level = min_level;
    q.validate();
    return q;
}

QuadratureSpec QuadratureSpec::monte_carlo(std::size_t n, std::uint64_t seed) {
    QuadratureSpec q;
    q.kind = Kind::monte_carlo;
    q.n_points = n;
    q.seed = seed;
    q.validate();
    return q;
}

QuadratureSpec QuadratureSpec::for_degree(int theta, int min_level) { return gauss(2 * theta + 4, min_level); }

void QuadratureSpec::validate() const {
    if (kind == Kind::tensor_gauss && (order < 1 || order > 64)) throw ConfigError("Gauss order must be in 1..64");
    if (kind == Kind::monte_carlo && n_points < 1) throw ConfigError("monte-carlo quadrature needs n_points >= 1");
    if (min_level < 0 || min_level > kAbsoluteMaxLevel) throw ConfigError("bad quadrature min_level");
}

namespace {

// P_n(z) and P_{n-1}(z)
std::pair<double, double> legendre_pair(int n, double z) {
    double p0 = 1, p1 = z;
    for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    return {p1, p0};
}

GaussRule make_gauss(int n) {
    GaussRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    // Newton from Chebyshev-like guesses, mapped from [-1,1] to [0,1]
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            auto [pn, pm] = legendre_pair(n, z);
            const double dz = pn / (n * (z * pn - pm) / (z * z - 1));
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        auto [pn, pm] = legendre_pair(n, z);
        const double dp = n * (z * pn - pm) / (z * z - 1);
        const double w = 2 / ((1 - z * z) * dp * dp);
        r.nodes[i] = (1 - z) / 2;
        r.nodes[n - 1 - i] = (1 + z) / 2;
        r.weights[i] = r.weights[n - 1 - i] = w / 2;
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.5;
    return r;
}

}  // namespace

const GaussRule& gauss_legendre(int order) {
    static const std::vector<GaussRule> rules = [] {
        std::vector<GaussRule> v(65);
        for (int n = 1; n <= 64; ++n) v[n] = make_gauss(n);
        return v;
    }();
    if (order < 1 || order > 64) throw ConfigError("Gauss order must be in 1..64");
    return rules[order];
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

PointCloud sample(const Measure& m, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample size must be >= 1");
    const int d = m.dim();
    PointCloud out(d);
    out.coords.reserve(n * d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double x[kMaxDim] = {0, 0, 0};
    switch (m.kind()) {
        case MeasureKind::lebesgue:
            for (std::size_t i = 0; i < n * d; ++i) out.coords.push_back(U(rng));
            break;
        case MeasureKind::density:
            while (out.size() < n) {
                for (int l = 0; l < d; ++l) x[l] = U(rng);
                const double v = m.density(std::span<const double>(x, d));
                if (v > m.c_rho() * (1 + 1e-12) || !(v >= 0))
                    throw InvariantViolation("observed density " + std::to_string(v) + " exceeds C_rho=" +
                                             std::to_string(m.c_rho()));
                if (U(rng) * m.c_rho() < v) out.push_back(std::span<const double>(x, d));
            }
            break;
        case MeasureKind::empirical: {
            std::discrete_distribution<std::size_t> pick(m.weights().begin(), m.weights().end());
            for (std::size_t i = 0; i < n; ++i) out.push_back(m.points()[pick(rng)]);
            break;
        }
    }
    return out;
}

double cell_inner_product(const ScalarFn& g, const ScalarFn& h, const CubeIndex& cube, const Measure& m,
                          const QuadratureSpec& q) {
    q.validate();
    double s = 0;
    detail::visit_nodes(cube, m, q, [&](std::span<const double> x, std::span<const double>, double w) {
        s += w * g(x) * h(x);
    });
    return s;
}

double cell_integral(const ScalarFn& g, const CubeIndex& cube, const Measure& m, const QuadratureSpec& q) {
    q.validate();
    double s = 0;
    detail::visit_nodes(cube, m, q, [&](std::span<const double> x, std::span<const double>, double w) {
        s += w * g(x);
    });
    return s;
}

double cell_mass(const Measure& m, const CubeIndex& cube) {
    switch (m.kind()) {
        case MeasureKind::lebesgue: return DyadicCube::of(cube).volume();
        case MeasureKind::empirical: {
            const auto c = DyadicCube::of(cube);
            double s = 0;
            for (std::size_t i = 0; i < m.points().size(); ++i)
                if (c.contains(m.points()[i])) s += m.weights()[i];
            return s;
        }
        case MeasureKind::density: {
            double s = 0;
            const auto q = QuadratureSpec::gauss(8, std::min(cube.level + 2, kAbsoluteMaxLevel));
            detail::visit_nodes(cube, m, q, [&](std::span<const double>, std::span<const double>, double w) { s += w; });
            return s;
        }
    }
    return 0;
}

}  // namespace adaptree

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adaptree/dyadic.hpp"
#include "adaptree/error.hpp"

namespace adaptree {

using ScalarFn = std::function<double(std::span<const double>)>;

struct PointCloud {
    int dim = 1;
    std::vector<double> coords;  // row-major, size() * dim

    PointCloud() = default;
    explicit PointCloud(int d) : dim(d) {}
    std::size_t size() const { return coords.size() / dim; }
    bool empty() const { return coords.empty(); }
    std::span<const double> operator[](std::size_t i) const { return {coords.data() + i * dim, static_cast<std::size_t>(dim)}; }
    std::span<double> operator[](std::size_t i) { return {coords.data() + i * dim, static_cast<std::size_t>(dim)}; }
    void push_back(std::span<const double> x) { coords.insert(coords.end(), x.begin(), x.end()); }
};

enum class MeasureKind { lebesgue, density, empirical };

class Measure {
public:
    static Measure lebesgue(int dim);
    // density must satisfy 0 <= density <= c_rho; checked on a grid at construction
    static Measure with_density(int dim, ScalarFn density, double c_rho);
    // weights empty -> uniform
    static Measure empirical(PointCloud points, std::vector<double> weights = {});
    // one point per row, dim columns, optional trailing weight column (renormalised)
    static Measure load_csv(const std::string& path, int dim);

    MeasureKind kind() const { return kind_; }
    int dim() const { return dim_; }
    double c_rho() const { return c_rho_; }
    double density(std::span<const double> x) const;
    const PointCloud& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    std::string describe() const;

private:
    MeasureKind kind_ = MeasureKind::lebesgue;
    int dim_ = 1;
    ScalarFn density_;
    double c_rho_ = 1.0;
    PointCloud points_;
    std::vector<double> weights_;
};

struct QuadratureSpec {
    enum class Kind { tensor_gauss, monte_carlo };
    Kind kind = Kind::tensor_gauss;
    int order = 4;          // Gauss points per axis per (sub)cube
    int min_level = 0;      // composite rule: integrate on subcubes at scale max(j, min_level)
    std::size_t n_points = 0;
    std::uint64_t seed = 0;
    double target_tol = 0;  // informational only

    static QuadratureSpec gauss(int order, int min_level = 0);
    static QuadratureSpec monte_carlo(std::size_t n, std::uint64_t seed);
    // order 2*theta+4, exact for Gram products under Lebesgue
    static QuadratureSpec for_degree(int theta, int min_level = 0);
    void validate() const;
};

struct GaussRule {
    std::vector<double> nodes;    // on [0,1]
    std::vector<double> weights;  // sum to 1
};

const GaussRule& gauss_legendre(int order);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

PointCloud sample(const Measure& m, std::size_t n, std::uint64_t seed);

namespace detail {

// visit(x, u, w): x global point, u local coordinates in [0,1]^d, w weight under the measure
template <class Visit>
void visit_nodes(const CubeIndex& cube, const Measure& m, const QuadratureSpec& q, Visit&& visit) {
    const int d = cube.dim;
    const auto c = DyadicCube::of(cube);
    double x[kMaxDim] = {0, 0, 0}, u[kMaxDim] = {0, 0, 0};
    const std::span<const double> xs(x, d), us(u, d);
    if (m.kind() == MeasureKind::empirical) {
        const auto& pts = m.points();
        const auto& w = m.weights();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            auto p = pts[i];
            if (!c.contains(p)) continue;
            for (int l = 0; l < d; ++l) {
                x[l] = p[l];
                u[l] = (p[l] - c.anchor[l]) / c.side;
            }
            visit(xs, us, w[i]);
        }
        return;
    }
    const bool dens = m.kind() == MeasureKind::density;
    if (q.kind == QuadratureSpec::Kind::monte_carlo) {
        if (q.n_points == 0) throw ConfigError("monte-carlo quadrature needs n_points >= 1");
        std::mt19937_64 rng(mix_seed(q.seed, cube.linear() * 131 + static_cast<std::uint64_t>(cube.level)));
        std::uniform_real_distribution<double> U(0.0, 1.0);
        const double w0 = c.volume() / static_cast<double>(q.n_points);
        for (std::size_t i = 0; i < q.n_points; ++i) {
            for (int l = 0; l < d; ++l) {
                u[l] = U(rng);
                x[l] = c.anchor[l] + c.side * u[l];
            }
            visit(xs, us, dens ? w0 * m.density(xs) : w0);
        }
        return;
    }
    const GaussRule& g = gauss_legendre(q.order);
    const int n = q.order;
    const int sub = std::max(0, q.min_level - cube.level);
    const std::uint64_t per_axis = std::uint64_t{1} << sub;
    const double hs = 1.0 / static_cast<double>(per_axis);   // subcell side in local coordinates
    const double vol_sub = c.volume() * std::pow(hs, d);
    std::uint64_t total_sub = 1;
    for (int l = 0; l < d; ++l) total_sub *= per_axis;
    int npts = 1;
    for (int l = 0; l < d; ++l) npts *= n;
    for (std::uint64_t s = 0; s < total_sub; ++s) {
        std::uint64_t idx[kMaxDim] = {0, 0, 0};
        std::uint64_t t = s;
        for (int l = 0; l < d; ++l) {
            idx[l] = t % per_axis;
            t /= per_axis;
        }
        for (int p = 0; p < npts; ++p) {
            int r = p;
            double w = vol_sub;
            for (int l = 0; l < d; ++l) {
                const int a = r % n;
                r /= n;
                u[l] = (static_cast<double>(idx[l]) + g.nodes[a]) * hs;
                x[l] = c.anchor[l] + c.side * u[l];
                w *= g.weights[a];
            }
            visit(xs, us, dens ? w * m.density(xs) : w);
        }
    }
}

}  // namespace detail

double cell_inner_product(const ScalarFn& g, const ScalarFn& h, const CubeIndex& cube, const Measure& m,
                          const QuadratureSpec& q);
double cell_integral(const ScalarFn& g, const CubeIndex& cube, const Measure& m, const QuadratureSpec& q);
double cell_mass(const Measure& m, const CubeIndex& cube);

}  // namespace adaptree

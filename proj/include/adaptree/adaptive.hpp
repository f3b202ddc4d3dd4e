#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "adaptree/dyadic.hpp"
#include "adaptree/local_poly.hpp"
#include "adaptree/measure.hpp"

namespace adaptree {

struct FieldOptions {
    int theta = 0;
    int max_level = -1;  // -1: default cap for the dimension
    std::optional<QuadratureSpec> quad;  // default: Gauss of order 2 theta + 4 on the finest cells
};

// Every refinement quantity of f down to J_max, computed bottom-up from moments on the
// scale J_max+1 cells. Fits at all scales are exact projections under the same discrete measure,
// so the orthogonal decomposition identities hold to rounding.
class RefinementField {
public:
    static RefinementField build(const ScalarFn& f, int dim, const Measure& m, FieldOptions opt = {});

    int dim() const { return dim_; }
    int theta() const { return theta_; }
    int max_level() const { return max_level_; }
    int fine_level() const { return max_level_ + 1; }
    const QuadratureSpec& quadrature() const { return quad_; }

    double delta(const CubeIndex& c) const;
    double subtree_max(const CubeIndex& c) const;
    double subtree_sq(const CubeIndex& c) const;  // sum of delta^2 over the subtree rooted at c
    double residual(const CubeIndex& c) const;    // int_C (f - p_C)^2 dQ
    double mass(const CubeIndex& c) const;
    std::span<const double> coeffs(const CubeIndex& c) const;
    PolynomialPatch patch(const CubeIndex& c) const;

    double delta_max() const { return subtree_max(CubeIndex::root(dim_)); }
    double root_energy() const { return root_energy_; }  // ||p_root||^2
    double total_energy() const { return total_energy_; }  // ||f||^2
    double tail_energy() const { return tail_; }         // ||f - f_{J_max+1}||^2
    double max_delta_at_cap() const { return cap_delta_; }
    double uniform_error_sq(int level) const;

    // #T(eta): nodes whose subtree holds a delta above eta
    std::size_t tree_size(double eta) const;
    bool depth_capped(double eta) const { return cap_delta_ > eta; }
    // ascending positive subtree maxima; #T jumps at each of them
    std::span<const double> jump_points() const { return sorted_submax_; }

private:
    std::size_t slot(const CubeIndex& c) const;
    void check_level(const CubeIndex& c, int top) const;

    int dim_ = 1, theta_ = 0, max_level_ = 0;
    std::size_t n_p_ = 1;
    QuadratureSpec quad_;
    std::vector<std::vector<double>> delta_, submax_, subsq_, resid_, mass_, coef_;
    std::vector<double> sorted_submax_;
    double root_energy_ = 0, total_energy_ = 0, tail_ = 0, cap_delta_ = 0;

    friend struct FieldBuilder;
};

struct TruncationResult {
    TruncatedTree tree;
    bool depth_cap_reached = false;
    std::string warning;
};

TruncationResult truncate_tree(const RefinementField& field, double eta);
TruncationResult truncate_tree(const ScalarFn& f, int dim, double eta, int theta, const Measure& m,
                               const QuadratureSpec& q, int max_level);

struct PiecewisePolynomial {
    AdaptivePartition partition;
    std::vector<PolynomialPatch> patches;
    double source_eta = 0;
    std::size_t source_tree_size = 0;
    int theta = 0;
    std::optional<double> s;  // rate used when compiling, if known
    std::string target;

    int dim() const { return partition.dim; }
    void reindex();
    long find(std::span<const double> x) const;
    double operator()(std::span<const double> x) const;

private:
    std::vector<int> levels_;
    std::unordered_map<CubeIndex, std::size_t, CubeIndexHash> where_;
};

PiecewisePolynomial build_adaptive_approximant(const RefinementField& field, const TruncatedTree& tree);
PiecewisePolynomial build_adaptive_approximant(const ScalarFn& f, const TruncatedTree& tree, int theta,
                                               const Measure& m, const QuadratureSpec& q);
PiecewisePolynomial approximant_on_partition(const ScalarFn& f, const AdaptivePartition& p, int theta,
                                             const Measure& m, const QuadratureSpec& q);

// squared L2 error; sqrt gives the norm
double approx_error_sq(const ScalarFn& f, const PiecewisePolynomial& pp, const Measure& m, const QuadratureSpec& q);
double approx_error(const ScalarFn& f, const PiecewisePolynomial& pp, const Measure& m, const QuadratureSpec& q);
// error^2 from per-cell residuals of the field, and the same from the orthogonal decomposition
double field_error_sq(const RefinementField& field, const TruncatedTree& tree);
double field_identity_error_sq(const RefinementField& field, const TruncatedTree& tree);

double rate_exponent_m(double s);
double cs_constant(double s);
double error_bound_sq(double s, double seminorm, double eta);

std::vector<double> default_eta_grid(const RefinementField& field, int points = 40, double decades = 4);
std::vector<double> geometric_grid(double hi, double lo, int points);

struct SeminormRow {
    double eta = 0;
    std::size_t tree_size = 0;
    double eta_m_T = 0;
    bool capped = false;
};

struct SeminormCurve {
    double s = 0, m = 0;
    int max_level = 0;
    std::vector<SeminormRow> rows;
    double seminorm_estimate = 0;  // sup over the span of the grid, jumps of #T included
    double grid_estimate = 0;      // max over the grid points only
    double argmax_eta = 0;
    bool not_converged = false;
    double s_hat = std::numeric_limits<double>::quiet_NaN();
};

SeminormCurve estimate_seminorm(const RefinementField& field, double s, std::span<const double> grid);
SeminormCurve estimate_seminorm(const ScalarFn& f, int dim, double s, int theta, const Measure& m,
                                const QuadratureSpec& q, std::span<const double> grid, int max_level = -1);

struct RateEstimate {
    double s_hat = 0;
    double slope = 0;  // d log #T / d log(1/eta)
    double slope_stderr = 0;
    double s_stderr = 0;
    std::size_t points_used = 0;
    std::size_t distinct_sizes = 0;
};

RateEstimate estimate_rate_s(const RefinementField& field, std::span<const double> grid);
RateEstimate estimate_rate_s(const ScalarFn& f, int dim, int theta, const Measure& m, const QuadratureSpec& q,
                             std::span<const double> grid, int max_level = -1);

struct SweepRow {
    double eta = 0;
    std::size_t tree_size = 0;
    std::size_t leaves = 0;
    double error_sq = 0;
    double identity_error_sq = 0;
    bool capped = false;
};

std::vector<SweepRow> eta_sweep(const RefinementField& field, std::span<const double> grid);

struct LineFit {
    double slope = 0, intercept = 0, slope_stderr = 0, r = 0;
    std::size_t n = 0;
};
LineFit least_squares(std::span<const double> x, std::span<const double> y);

nlohmann::json to_json(const PiecewisePolynomial& pp);
PiecewisePolynomial piecewise_from_json(const nlohmann::json& j);

}  // namespace adaptree

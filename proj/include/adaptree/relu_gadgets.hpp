#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "adaptree/adaptive.hpp"
#include "adaptree/dyadic.hpp"
#include "adaptree/local_poly.hpp"
#include "adaptree/relu_net.hpp"

namespace adaptree {

// closed-form trapezoid: 1 on [a+delta/2, b-delta/2], 0 off [a-delta/2, b+delta/2];
// a=0 (b=1) drops the left (right) ramp
double trapezoid_value(double a, double b, double delta, double x);

// single hidden layer of width <= 4 reading input `axis`
ReluNetwork build_trapezoid_net(double a, double b, double delta, int input_dim = 1, int axis = 0);

// sawtooth depth giving |x^2 - f_m(x)| <= 2^{-2m-2} at the requested accuracy (inputs scaled to [-1,1])
int sawtooth_depth(double scaled_eps);

// x*y for |x|,|y| <= C to accuracy eps; exactly 0 whenever either input is 0
ReluNetwork build_product_net(double C, double eps);
// right-nested product of N inputs, each |a_i| <= C
ReluNetwork build_multiproduct_net(int N, double C, double eps);
// general form: product of inputs factors[0..] of an n_in-vector; nonneg inputs use one carry channel
ReluNetwork build_multiproduct_net(int n_in, const std::vector<int>& factors, const std::vector<char>& nonneg,
                                   double C, double eps);

// product of the axis trapezoids of a cube, ramps of width delta
double bump_value(const CubeIndex& c, double delta, std::span<const double> x);
ReluNetwork build_bump_net(const CubeIndex& c, double delta, double eps1);

// polynomial patch with local coordinates clipped to [0,1]
ReluNetwork build_patch_net(const PolynomialPatch& p, double eps1);

struct CompileOptions {
    double eps = 1e-2;
    std::optional<double> s;  // default: the approximant's own s
    std::optional<double> R;  // output clamp; default: max over cells of sum |a_alpha|
    std::size_t mc_points = 100000;
    std::uint64_t seed = 1;
    double cover_radius = 1e-3;
    int workers = 1;
    bool measure_error = true;
};

struct CompileReport {
    std::size_t tree_size = 0, cells = 0;
    int finest_level = 0, theta = 0, dim = 1;
    double s = 0, eps = 0, eps1 = 0, delta = 0;
    double R = 0, R_p = 0, C3 = 0;
    NetworkStats stats;
    double l2_error_sq = std::numeric_limits<double>::quiet_NaN();  // Monte Carlo, Lebesgue
    double budget = 0;
    double covering_log = 0;
    double kappa_budget = 0;  // eps^{-max(2, 1/s)}
    double kappa_ratio = 0;
};

struct CompileResult {
    ReluNetwork net;
    CompileReport report;
};

CompileResult compile_adaptive_net(const PiecewisePolynomial& pp, const CompileOptions& opt);

// 3(R^2 d^2 + 1 + C3^2 Rp^2 theta^2) eps1^2 + 2^{d+3} d R^2 delta #T^{1/d}
double compile_budget(const CompileReport& r);

// sup |p~ - p| over a grid on the cube
double patch_net_error(const ReluNetwork& net, const PolynomialPatch& p, int points_per_axis);

// Monte Carlo squared L2 (Lebesgue) distance between the network and an approximant
double net_l2_error_sq(const ReluNetwork& net, const PiecewisePolynomial& pp, std::size_t n, std::uint64_t seed,
                       int workers);

nlohmann::json to_json(const CompileReport& r);

}  // namespace adaptree

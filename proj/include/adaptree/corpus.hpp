#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "adaptree/adaptive.hpp"
#include "adaptree/dyadic.hpp"
#include "adaptree/measure.hpp"

namespace adaptree {

// decides whether a set meets a closed dyadic cube
using BoundaryOracle = std::function<bool(const DyadicCube&)>;

enum class RateClass {
    holder,        // smooth in the interior of [0,1]^d: s = r/d
    piecewise_1d,  // finitely many jumps on the line: s = r
    piecewise_nd,  // jumps across a (d-1)-dimensional boundary: s = min(r/d, 1/(2(d-1)))
    null_set,      // irregular only on a null set: s = r/d
};

std::string to_string(RateClass c);

struct TargetSpec {
    std::string name;
    int dim = 1;
    ScalarFn eval;
    BoundaryOracle discontinuity_set;  // may be empty
    std::function<int(std::span<const double>)> branch;  // formula branch taken at x
    int branch_count = 1;
    RateClass rate_class = RateClass::holder;
    double r = std::numeric_limits<double>::infinity();  // smoothness of the pieces
    double sup_bound = 1;
    int discontinuities = 0;
    std::string description;
};

const std::vector<TargetSpec>& targets();
const TargetSpec& find_target(const std::string& name);
double eval_target(const std::string& name, std::span<const double> x);

// predicted s with r capped at theta+1
double known_rate(const TargetSpec& t, int theta);
double known_rate(const std::string& name, int theta);

BoundaryOracle circle_oracle(double cx, double cy, double radius);
BoundaryOracle point_oracle(std::vector<double> points);
BoundaryOracle square_boundary_oracle(int dim);
BoundaryOracle filled_cube_oracle();

std::size_t count_boundary_cubes(const BoundaryOracle& oracle, int level, int dim);

struct MinkowskiEstimate {
    double d_M = 0;
    double c_M = 0;
    double slope_stderr = 0;
    std::vector<int> levels;
    std::vector<std::size_t> counts;
};

MinkowskiEstimate estimate_minkowski_dim(const BoundaryOracle& oracle, int dim, int j_lo, int j_hi);

}  // namespace adaptree

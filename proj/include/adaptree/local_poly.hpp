#pragma once

#include <array>
#include <compare>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "adaptree/dyadic.hpp"
#include "adaptree/measure.hpp"

namespace adaptree {

inline constexpr double kMassFloor = 1e-12;
inline constexpr double kPivotTol = 1e-12;
inline constexpr int kMaxDegree = 4;

struct MultiIndex {
    std::array<int, kMaxDim> alpha{};
    int dim = 1;
    int order() const;
    auto operator<=>(const MultiIndex&) const = default;
};

// graded: non-decreasing |alpha|, then lexicographically descending (1, x, y, x^2, xy, y^2, ...)
const std::vector<MultiIndex>& monomials(int dim, int degree);
std::size_t monomial_count(int dim, int degree);
std::size_t monomial_position(const MultiIndex& a);

// u^alpha for every monomial of the given degree; u are local coordinates
void monomial_values(int dim, int degree, std::span<const double> u, double* out);
void local_coords(const CubeIndex& c, std::span<const double> x, double* u);

struct PolynomialPatch {
    CubeIndex cube;
    int degree = 0;
    std::vector<double> coeffs;  // aligned with monomials(dim, degree)
    std::optional<double> coeff_bound;
    bool degenerate = false;
    int rank = 0;

    static PolynomialPatch zero(const CubeIndex& c, int degree);
    int dim() const { return cube.dim; }
    double coeff(const MultiIndex& a) const;
    double max_abs_coeff() const;
    double abs_coeff_sum() const;
    // throws InvariantViolation when coeff_bound is set and exceeded
    void check_bound() const;
};

double eval_patch(const PolynomialPatch& p, std::span<const double> x);
double eval_local(int dim, int degree, std::span<const double> coeffs, std::span<const double> u);

// shared index tables for a (dim, theta) pair: Gram moments go up to 2*theta
struct MomentLayout {
    int dim = 1;
    int theta = 0;
    std::size_t n_p = 0;              // monomials with |a| <= theta
    std::size_t n_m = 0;              // monomials with |a| <= 2 theta
    std::vector<std::size_t> sum_idx;  // n_p x n_p -> index of a+b among the n_m
    // per child position c: n_m x n_m lower-triangular map T[b][g], u_parent^b = sum_g T[b][g] u_child^g
    std::vector<std::vector<double>> shift;

    double shift_at(int child, std::size_t b, std::size_t g) const { return shift[child][b * n_m + g]; }
};

const MomentLayout& moment_layout(int dim, int theta);

struct CellMoments {
    std::vector<double> mu;  // int u^b dQ, |b| <= 2 theta
    std::vector<double> nu;  // int f u^a dQ, |a| <= theta
    double f2 = 0;
    double mass = 0;

    void reset(const MomentLayout& L);
    // add a child's moments expressed in the parent's local coordinates
    void add_child(const MomentLayout& L, int child, const CellMoments& c);
};

CellMoments accumulate_moments(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                               const QuadratureSpec& q);

struct LocalFit {
    std::vector<double> basis;  // n_p x n_p, row l = coefficients of phi_l over monomials
    std::vector<char> active;   // pivot accepted
    std::vector<double> coeffs;
    double energy = 0;    // int p^2 dQ
    double residual = 0;  // int (f-p)^2 dQ
    int rank = 0;
    bool degenerate = false;
};

LocalFit fit_from_moments(const MomentLayout& L, const CellMoments& mom);
// sum_g (a_child - T_c^T a_parent)^T G_child (...)
double child_refinement_sq(const MomentLayout& L, int child, std::span<const double> parent_coeffs,
                           std::span<const double> child_coeffs, std::span<const double> child_mu);
// parent polynomial rewritten in a child's local coordinates
std::vector<double> reexpand_to_child(const MomentLayout& L, int child, std::span<const double> parent_coeffs);

struct OrthonormalBasis {
    CubeIndex cube;
    int degree = 0;
    std::vector<std::vector<double>> basis_coeffs;  // lower triangular
    double mass = 0;

    std::size_t size() const { return basis_coeffs.size(); }
    double eval(std::size_t l, std::span<const double> x) const;
};

OrthonormalBasis orthonormal_basis(const CubeIndex& cube, int theta, const Measure& m, const QuadratureSpec& q);
PolynomialPatch fit_local_polynomial(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                                     const QuadratureSpec& q);

struct RefinementRecord {
    CubeIndex cube;
    double delta = 0;
    PolynomialPatch parent_patch;
    std::vector<PolynomialPatch> child_patches;
};

RefinementRecord refinement_quantity(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                                     const QuadratureSpec& q);

nlohmann::json to_json(const PolynomialPatch& p);
PolynomialPatch patch_from_json(const nlohmann::json& j);

}  // namespace adaptree

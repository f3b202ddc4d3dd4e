#include "adaptree/local_poly.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "adaptree/error.hpp"

namespace adaptree {

int MultiIndex::order() const {
    int s = 0;
    for (int l = 0; l < dim; ++l) s += alpha[l];
    return s;
}

namespace {

constexpr int kMaxMomentDegree = 2 * kMaxDegree;

std::vector<MultiIndex> build_monomials(int dim, int degree) {
    std::vector<MultiIndex> out;
    for (int o = 0; o <= degree; ++o) {
        std::vector<MultiIndex> level;
        MultiIndex a;
        a.dim = dim;
        // all alpha with |alpha| = o
        std::function<void(int, int)> rec = [&](int l, int rem) {
            if (l == dim - 1) {
                a.alpha[l] = rem;
                level.push_back(a);
                return;
            }
            for (int v = rem; v >= 0; --v) {
                a.alpha[l] = v;
                rec(l + 1, rem - v);
            }
        };
        rec(0, o);
        std::sort(level.begin(), level.end(), [](const MultiIndex& x, const MultiIndex& y) { return x.alpha > y.alpha; });
        out.insert(out.end(), level.begin(), level.end());
    }
    return out;
}

double binom(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

const std::vector<MultiIndex>& monomials(int dim, int degree) {
    static const auto table = [] {
        std::vector<std::vector<std::vector<MultiIndex>>> t(kMaxDim + 1);
        for (int d = 1; d <= kMaxDim; ++d)
            for (int g = 0; g <= kMaxMomentDegree; ++g) t[d].push_back(build_monomials(d, g));
        return t;
    }();
    check_dim(dim);
    if (degree < 0 || degree > kMaxMomentDegree) throw ConfigError("polynomial degree out of range");
    return table[dim][degree];
}

std::size_t monomial_count(int dim, int degree) { return monomials(dim, degree).size(); }

std::size_t monomial_position(const MultiIndex& a) {
    const auto& all = monomials(a.dim, std::max(a.order(), 0));
    auto it = std::find(all.begin(), all.end(), a);
    if (it == all.end()) throw ValidationError("bad multi-index");
    return static_cast<std::size_t>(it - all.begin());
}

void monomial_values(int dim, int degree, std::span<const double> u, double* out) {
    double pw[kMaxDim][kMaxMomentDegree + 1];
    for (int l = 0; l < dim; ++l) {
        pw[l][0] = 1;
        for (int e = 1; e <= degree; ++e) pw[l][e] = pw[l][e - 1] * u[l];
    }
    const auto& mons = monomials(dim, degree);
    for (std::size_t i = 0; i < mons.size(); ++i) {
        double v = 1;
        for (int l = 0; l < dim; ++l) v *= pw[l][mons[i].alpha[l]];
        out[i] = v;
    }
}

void local_coords(const CubeIndex& c, std::span<const double> x, double* u) {
    const double scale = std::ldexp(1.0, c.level);
    for (int l = 0; l < c.dim; ++l) u[l] = (x[l] - c.k[l] * std::ldexp(1.0, -c.level)) * scale;
}

PolynomialPatch PolynomialPatch::zero(const CubeIndex& c, int degree) {
    PolynomialPatch p;
    p.cube = c;
    p.degree = degree;
    p.coeffs.assign(monomial_count(c.dim, degree), 0.0);
    return p;
}

double PolynomialPatch::coeff(const MultiIndex& a) const {
    if (a.order() > degree) return 0;
    return coeffs.at(monomial_position(a));
}

double PolynomialPatch::max_abs_coeff() const {
    double m = 0;
    for (double v : coeffs) m = std::max(m, std::abs(v));
    return m;
}

double PolynomialPatch::abs_coeff_sum() const {
    double m = 0;
    for (double v : coeffs) m += std::abs(v);
    return m;
}

void PolynomialPatch::check_bound() const {
    if (coeff_bound && max_abs_coeff() > *coeff_bound)
        throw InvariantViolation("patch on " + to_string(cube) + " exceeds coefficient bound R_p=" +
                                 std::to_string(*coeff_bound));
}

double eval_local(int dim, int degree, std::span<const double> coeffs, std::span<const double> u) {
    double mv[512];
    monomial_values(dim, degree, u, mv);
    double s = 0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * mv[i];
    return s;
}

double eval_patch(const PolynomialPatch& p, std::span<const double> x) {
    double u[kMaxDim];
    local_coords(p.cube, x, u);
    return eval_local(p.dim(), p.degree, p.coeffs, std::span<const double>(u, p.dim()));
}

const MomentLayout& moment_layout(int dim, int theta) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<MomentLayout>> cache;
    check_dim(dim);
    if (theta < 0 || theta > kMaxDegree) throw ConfigError("degree theta must be in 0.." + std::to_string(kMaxDegree));
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{dim, theta}];
    if (slot) return *slot;
    auto L = std::make_unique<MomentLayout>();
    L->dim = dim;
    L->theta = theta;
    const auto& mp = monomials(dim, theta);
    const auto& mm = monomials(dim, 2 * theta);
    L->n_p = mp.size();
    L->n_m = mm.size();
    L->sum_idx.resize(L->n_p * L->n_p);
    std::map<std::array<int, kMaxDim>, std::size_t> pos;
    for (std::size_t i = 0; i < mm.size(); ++i) pos[mm[i].alpha] = i;
    for (std::size_t i = 0; i < L->n_p; ++i)
        for (std::size_t j = 0; j < L->n_p; ++j) {
            std::array<int, kMaxDim> s{};
            for (int l = 0; l < dim; ++l) s[l] = mp[i].alpha[l] + mp[j].alpha[l];
            L->sum_idx[i * L->n_p + j] = pos.at(s);
        }
    const int nc = 1 << dim;
    L->shift.assign(nc, std::vector<double>(L->n_m * L->n_m, 0.0));
    for (int c = 0; c < nc; ++c)
        for (std::size_t b = 0; b < L->n_m; ++b)
            for (std::size_t g = 0; g < L->n_m; ++g) {
                double v = 1;
                for (int l = 0; l < dim && v != 0; ++l) {
                    const int bl = mm[b].alpha[l], gl = mm[g].alpha[l];
                    if (gl > bl) {
                        v = 0;
                        break;
                    }
                    const double o = ((c >> l) & 1) ? 0.5 : 0.0;
                    v *= binom(bl, gl) * std::pow(o, bl - gl) * std::ldexp(1.0, -gl);
                }
                L->shift[c][b * L->n_m + g] = v;
            }
    slot = std::move(L);
    return *slot;
}

void CellMoments::reset(const MomentLayout& L) {
    mu.assign(L.n_m, 0.0);
    nu.assign(L.n_p, 0.0);
    f2 = 0;
    mass = 0;
}

void CellMoments::add_child(const MomentLayout& L, int child, const CellMoments& c) {
    const auto& T = L.shift[child];
    for (std::size_t b = 0; b < L.n_m; ++b) {
        double s = 0;
        for (std::size_t g = 0; g <= b; ++g) s += T[b * L.n_m + g] * c.mu[g];
        mu[b] += s;
    }
    for (std::size_t a = 0; a < L.n_p; ++a) {
        double s = 0;
        for (std::size_t g = 0; g <= a; ++g) s += T[a * L.n_m + g] * c.nu[g];
        nu[a] += s;
    }
    f2 += c.f2;
    mass += c.mass;
}

CellMoments accumulate_moments(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                               const QuadratureSpec& q) {
    q.validate();
    const auto& L = moment_layout(cube.dim, theta);
    CellMoments mom;
    mom.reset(L);
    std::vector<double> mv(L.n_m);
    detail::visit_nodes(cube, m, q, [&](std::span<const double> x, std::span<const double> u, double w) {
        monomial_values(cube.dim, 2 * theta, u, mv.data());
        for (std::size_t b = 0; b < L.n_m; ++b) mom.mu[b] += w * mv[b];
        mom.mass += w;
        if (f) {
            const double fx = f(x);
            for (std::size_t a = 0; a < L.n_p; ++a) mom.nu[a] += w * fx * mv[a];
            mom.f2 += w * fx * fx;
        }
    });
    return mom;
}

LocalFit fit_from_moments(const MomentLayout& L, const CellMoments& mom) {
    const std::size_t n = L.n_p;
    LocalFit fit;
    fit.basis.assign(n * n, 0.0);
    fit.active.assign(n, 0);
    fit.coeffs.assign(n, 0.0);
    if (!(mom.mass >= kMassFloor)) {
        fit.degenerate = true;
        fit.residual = std::max(mom.f2, 0.0);
        return fit;
    }
    auto G = [&](std::size_t i, std::size_t j) { return mom.mu[L.sum_idx[i * n + j]]; };
    std::vector<double> gphi(n * n, 0.0);  // G * phi_k
    std::vector<double> v(n), gv(n);
    for (std::size_t l = 0; l < n; ++l) {
        std::fill(v.begin(), v.end(), 0.0);
        v[l] = 1;
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t k = 0; k < l; ++k) {
                if (!fit.active[k]) continue;
                double proj = 0;
                for (std::size_t i = 0; i <= l; ++i) proj += v[i] * gphi[k * n + i];
                for (std::size_t i = 0; i <= k; ++i) v[i] -= proj * fit.basis[k * n + i];
            }
        double nrm2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j <= l; ++j) s += G(i, j) * v[j];
            gv[i] = s;
        }
        for (std::size_t i = 0; i <= l; ++i) nrm2 += v[i] * gv[i];
        if (!(nrm2 > kPivotTol * G(l, l))) continue;
        const double inv = 1 / std::sqrt(nrm2);
        fit.active[l] = 1;
        ++fit.rank;
        for (std::size_t i = 0; i < n; ++i) {
            fit.basis[l * n + i] = v[i] * inv;
            gphi[l * n + i] = gv[i] * inv;
        }
    }
    for (std::size_t l = 0; l < n; ++l) {
        if (!fit.active[l]) continue;
        double c = 0;
        for (std::size_t i = 0; i <= l; ++i) c += fit.basis[l * n + i] * mom.nu[i];
        fit.energy += c * c;
        for (std::size_t i = 0; i <= l; ++i) fit.coeffs[i] += c * fit.basis[l * n + i];
    }
    fit.residual = std::max(mom.f2 - fit.energy, 0.0);
    return fit;
}

std::vector<double> reexpand_to_child(const MomentLayout& L, int child, std::span<const double> a) {
    std::vector<double> b(L.n_p, 0.0);
    const auto& T = L.shift[child];
    for (std::size_t beta = 0; beta < L.n_p; ++beta) {
        if (a[beta] == 0) continue;
        for (std::size_t g = 0; g <= beta; ++g) b[g] += T[beta * L.n_m + g] * a[beta];
    }
    return b;
}

double child_refinement_sq(const MomentLayout& L, int child, std::span<const double> parent_coeffs,
                           std::span<const double> child_coeffs, std::span<const double> child_mu) {
    auto v = reexpand_to_child(L, child, parent_coeffs);
    for (std::size_t i = 0; i < L.n_p; ++i) v[i] = child_coeffs[i] - v[i];
    double s = 0;
    for (std::size_t i = 0; i < L.n_p; ++i) {
        if (v[i] == 0) continue;
        double t = 0;
        for (std::size_t j = 0; j < L.n_p; ++j) t += child_mu[L.sum_idx[i * L.n_p + j]] * v[j];
        s += v[i] * t;
    }
    return std::max(s, 0.0);
}

double OrthonormalBasis::eval(std::size_t l, std::span<const double> x) const {
    double u[kMaxDim];
    local_coords(cube, x, u);
    return eval_local(cube.dim, degree, basis_coeffs.at(l), std::span<const double>(u, cube.dim));
}

OrthonormalBasis orthonormal_basis(const CubeIndex& cube, int theta, const Measure& m, const QuadratureSpec& q) {
    const auto& L = moment_layout(cube.dim, theta);
    auto mom = accumulate_moments(ScalarFn{}, cube, theta, m, q);
    if (!(mom.mass >= kMassFloor))
        throw DegenerateCellError("cell " + to_string(cube) + " has mass " + std::to_string(mom.mass) +
                                  " below the floor");
    auto fit = fit_from_moments(L, mom);
    if (fit.rank < static_cast<int>(L.n_p))
        throw RankDeficientError("Gram-Schmidt pivot below tolerance on " + to_string(cube) + ": rank " +
                                 std::to_string(fit.rank) + " of " + std::to_string(L.n_p));
    OrthonormalBasis B;
    B.cube = cube;
    B.degree = theta;
    B.mass = mom.mass;
    for (std::size_t l = 0; l < L.n_p; ++l)
        B.basis_coeffs.emplace_back(fit.basis.begin() + l * L.n_p, fit.basis.begin() + (l + 1) * L.n_p);
    return B;
}

namespace {

PolynomialPatch patch_from_fit(const CubeIndex& cube, int theta, const LocalFit& fit) {
    PolynomialPatch p;
    p.cube = cube;
    p.degree = theta;
    p.coeffs = fit.coeffs;
    p.degenerate = fit.degenerate;
    p.rank = fit.rank;
    return p;
}

}  // namespace

PolynomialPatch fit_local_polynomial(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                                     const QuadratureSpec& q) {
    const auto& L = moment_layout(cube.dim, theta);
    auto mom = accumulate_moments(f, cube, theta, m, q);
    return patch_from_fit(cube, theta, fit_from_moments(L, mom));
}

RefinementRecord refinement_quantity(const ScalarFn& f, const CubeIndex& cube, int theta, const Measure& m,
                                     const QuadratureSpec& q) {
    const auto& L = moment_layout(cube.dim, theta);
    const auto kids = children(cube);
    std::vector<CellMoments> km;
    CellMoments pm;
    pm.reset(L);
    for (std::size_t c = 0; c < kids.size(); ++c) {
        km.push_back(accumulate_moments(f, kids[c], theta, m, q));
        pm.add_child(L, static_cast<int>(c), km.back());
    }
    RefinementRecord r;
    r.cube = cube;
    auto pf = fit_from_moments(L, pm);
    r.parent_patch = patch_from_fit(cube, theta, pf);
    double d2 = 0;
    for (std::size_t c = 0; c < kids.size(); ++c) {
        auto cf = fit_from_moments(L, km[c]);
        r.child_patches.push_back(patch_from_fit(kids[c], theta, cf));
        if (cf.degenerate) continue;
        d2 += child_refinement_sq(L, static_cast<int>(c), pf.coeffs, cf.coeffs, km[c].mu);
    }
    r.delta = std::sqrt(d2);
    return r;
}

nlohmann::json to_json(const PolynomialPatch& p) {
    nlohmann::json j;
    j["cube"] = cube_to_json(p.cube);
    j["degree"] = p.degree;
    auto cs = nlohmann::json::array();
    const auto& mons = monomials(p.dim(), p.degree);
    for (std::size_t i = 0; i < mons.size(); ++i) {
        auto a = nlohmann::json::array();
        for (int l = 0; l < p.dim(); ++l) a.push_back(mons[i].alpha[l]);
        cs.push_back(nlohmann::json::array({a, p.coeffs[i]}));
    }
    j["coeffs"] = cs;
    if (p.degenerate) j["degenerate"] = true;
    return j;
}

PolynomialPatch patch_from_json(const nlohmann::json& j) {
    const int dim = static_cast<int>(j.at("cube").size()) - 1;
    auto p = PolynomialPatch::zero(cube_from_json(j.at("cube"), dim), j.at("degree").get<int>());
    for (const auto& e : j.at("coeffs")) {
        MultiIndex a;
        a.dim = dim;
        for (int l = 0; l < dim; ++l) a.alpha[l] = e.at(0).at(l).get<int>();
        if (a.order() > p.degree) throw ValidationError("coefficient degree exceeds patch degree");
        p.coeffs[monomial_position(a)] = e.at(1).get<double>();
    }
    p.degenerate = j.value("degenerate", false);
    p.rank = static_cast<int>(p.coeffs.size());
    return p;
}

}  // namespace adaptree

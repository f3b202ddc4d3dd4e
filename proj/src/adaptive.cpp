#include "adaptree/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "adaptree/error.hpp"

namespace adaptree {

namespace {

constexpr int kMaxFieldBits = 25;  // at most 2^25 cells on the finest scale

std::uint64_t morton_key(const CubeIndex& c) {
    std::uint64_t key = 0;
    for (int t = c.level - 1; t >= 0; --t) {
        std::uint64_t digit = 0;
        for (int l = 0; l < c.dim; ++l) digit |= static_cast<std::uint64_t>((c.k[l] >> t) & 1u) << l;
        key = (key << c.dim) | digit;
    }
    return key;
}

}  // namespace

struct FieldBuilder {
    const ScalarFn& f;
    const Measure& m;
    RefinementField& F;
    const MomentLayout& L;
    QuadratureSpec leafq;
    bool use_points = false;
    PointCloud pts;
    std::vector<double> w;
    std::vector<std::uint64_t> keys;
    std::vector<std::size_t> order;
    std::vector<std::vector<CellMoments>> scratch;
    std::vector<double> mv;

    void leaf(const CubeIndex& c, CellMoments& out, std::size_t lo, std::size_t hi) {
        out.reset(L);
        auto add = [&](std::span<const double> x, std::span<const double> u, double wt) {
            monomial_values(c.dim, 2 * L.theta, u, mv.data());
            const double fx = f(x);
            for (std::size_t b = 0; b < L.n_m; ++b) out.mu[b] += wt * mv[b];
            for (std::size_t a = 0; a < L.n_p; ++a) out.nu[a] += wt * fx * mv[a];
            out.f2 += wt * fx * fx;
            out.mass += wt;
        };
        if (!use_points) {
            detail::visit_nodes(c, m, leafq, add);
            return;
        }
        double u[kMaxDim];
        for (std::size_t i = lo; i < hi; ++i) {
            const auto x = pts[order[i]];
            local_coords(c, x, u);
            add(x, std::span<const double>(u, c.dim), w[order[i]]);
        }
    }

    void visit(const CubeIndex& c, CellMoments& out, std::uint64_t base, std::size_t lo, std::size_t hi) {
        const int j = c.level;
        const int fine = F.fine_level();
        if (j == fine) {
            leaf(c, out, lo, hi);
        } else {
            out.reset(L);
            const int nc = 1 << c.dim;
            const std::uint64_t span = std::uint64_t{1} << (c.dim * (fine - j - 1));
            std::size_t cur = lo;
            for (int b = 0; b < nc; ++b) {
                CubeIndex ch = c;
                ch.level = j + 1;
                for (int l = 0; l < c.dim; ++l) ch.k[l] = 2 * c.k[l] + ((b >> l) & 1);
                const std::uint64_t cb = base + static_cast<std::uint64_t>(b) * span;
                std::size_t end = cur;
                if (use_points)
                    end = static_cast<std::size_t>(std::lower_bound(keys.begin() + cur, keys.begin() + hi, cb + span) -
                                                   keys.begin());
                visit(ch, scratch[j + 1][b], cb, cur, end);
                cur = end;
                out.add_child(L, b, scratch[j + 1][b]);
            }
        }
        const std::size_t s = c.linear();
        auto fit = fit_from_moments(L, out);
        std::copy(fit.coeffs.begin(), fit.coeffs.end(), F.coef_[j].begin() + s * L.n_p);
        F.resid_[j][s] = fit.residual;
        F.mass_[j][s] = out.mass;
        if (j == 0) {
            F.root_energy_ = fit.energy;
            F.total_energy_ = out.f2;
        }
        if (j > F.max_level_) return;
        double d2 = 0, smax = 0, ssq = 0;
        const int nc = 1 << c.dim;
        for (int b = 0; b < nc; ++b) {
            CubeIndex ch = c;
            ch.level = j + 1;
            for (int l = 0; l < c.dim; ++l) ch.k[l] = 2 * c.k[l] + ((b >> l) & 1);
            const std::size_t cs = ch.linear();
            const auto& cm = scratch[j + 1][b];
            if (cm.mass >= kMassFloor) {
                d2 += child_refinement_sq(L, b, std::span<const double>(F.coef_[j].data() + s * L.n_p, L.n_p),
                                          std::span<const double>(F.coef_[j + 1].data() + cs * L.n_p, L.n_p), cm.mu);
            }
            if (j + 1 <= F.max_level_) {
                smax = std::max(smax, F.submax_[j + 1][cs]);
                ssq += F.subsq_[j + 1][cs];
            }
        }
        const double delta = std::sqrt(d2);
        F.delta_[j][s] = delta;
        F.submax_[j][s] = std::max(smax, delta);
        F.subsq_[j][s] = ssq + d2;
    }
};

RefinementField RefinementField::build(const ScalarFn& f, int dim, const Measure& m, FieldOptions opt) {
    check_dim(dim);
    if (m.dim() != dim) throw ConfigError("measure dimension does not match target dimension");
    RefinementField F;
    F.dim_ = dim;
    F.theta_ = opt.theta;
    F.max_level_ = opt.max_level < 0 ? default_max_level(dim) : opt.max_level;
    if (dim * (F.max_level_ + 1) > kMaxFieldBits)
        throw ConfigError("J_max=" + std::to_string(F.max_level_) + " too deep for d=" + std::to_string(dim) +
                          " (finest scale would hold more than 2^" + std::to_string(kMaxFieldBits) + " cells)");
    const auto& L = moment_layout(dim, opt.theta);
    F.n_p_ = L.n_p;
    F.quad_ = opt.quad ? *opt.quad : QuadratureSpec::for_degree(opt.theta);
    F.quad_.validate();
    const int fine = F.fine_level();
    for (int j = 0; j <= fine; ++j) {
        const std::size_t n = std::size_t{1} << (dim * j);
        F.coef_.emplace_back(n * L.n_p, 0.0);
        F.resid_.emplace_back(n, 0.0);
        F.mass_.emplace_back(n, 0.0);
        if (j <= F.max_level_) {
            F.delta_.emplace_back(n, 0.0);
            F.submax_.emplace_back(n, 0.0);
            F.subsq_.emplace_back(n, 0.0);
        }
    }
    FieldBuilder B{f, m, F, L, F.quad_, false, {}, {}, {}, {}, {}, {}};
    B.leafq.min_level = 0;
    B.mv.resize(L.n_m);
    B.scratch.assign(fine + 1, std::vector<CellMoments>(std::size_t{1} << dim));
    if (m.kind() == MeasureKind::empirical) {
        B.use_points = true;
        B.pts = m.points();
        B.w = m.weights();
    } else if (F.quad_.kind == QuadratureSpec::Kind::monte_carlo) {
        B.use_points = true;
        B.pts = sample(m, F.quad_.n_points, F.quad_.seed);
        B.w.assign(B.pts.size(), 1.0 / static_cast<double>(B.pts.size()));
    }
    if (B.use_points) {
        const std::size_t n = B.pts.size();
        std::vector<std::uint64_t> raw(n);
        for (std::size_t i = 0; i < n; ++i) raw[i] = morton_key(locate(B.pts[i], dim, fine));
        B.order.resize(n);
        std::iota(B.order.begin(), B.order.end(), std::size_t{0});
        std::stable_sort(B.order.begin(), B.order.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
        B.keys.resize(n);
        for (std::size_t i = 0; i < n; ++i) B.keys[i] = raw[B.order[i]];
    }
    CellMoments root;
    B.visit(CubeIndex::root(dim), root, 0, 0, B.use_points ? B.pts.size() : 0);
    F.tail_ = std::accumulate(F.resid_[fine].begin(), F.resid_[fine].end(), 0.0);
    F.cap_delta_ = *std::max_element(F.delta_[F.max_level_].begin(), F.delta_[F.max_level_].end());
    for (const auto& lv : F.submax_)
        for (double v : lv)
            if (v > 0) F.sorted_submax_.push_back(v);
    std::sort(F.sorted_submax_.begin(), F.sorted_submax_.end());
    return F;
}

void RefinementField::check_level(const CubeIndex& c, int top) const {
    if (c.dim != dim_) throw ConfigError("cube dimension does not match field");
    if (c.level > top)
        throw ConfigError("cube " + to_string(c) + " is below the field's finest scale (J_max=" +
                          std::to_string(max_level_) + ")");
}

std::size_t RefinementField::slot(const CubeIndex& c) const { return c.linear(); }

double RefinementField::delta(const CubeIndex& c) const {
    check_level(c, max_level_);
    return delta_[c.level][slot(c)];
}
double RefinementField::subtree_max(const CubeIndex& c) const {
    check_level(c, max_level_);
    return submax_[c.level][slot(c)];
}
double RefinementField::subtree_sq(const CubeIndex& c) const {
    check_level(c, fine_level());
    if (c.level > max_level_) return 0;
    return subsq_[c.level][slot(c)];
}
double RefinementField::residual(const CubeIndex& c) const {
    check_level(c, fine_level());
    return resid_[c.level][slot(c)];
}
double RefinementField::mass(const CubeIndex& c) const {
    check_level(c, fine_level());
    return mass_[c.level][slot(c)];
}
std::span<const double> RefinementField::coeffs(const CubeIndex& c) const {
    check_level(c, fine_level());
    return {coef_[c.level].data() + slot(c) * n_p_, n_p_};
}
PolynomialPatch RefinementField::patch(const CubeIndex& c) const {
    auto p = PolynomialPatch::zero(c, theta_);
    auto cs = coeffs(c);
    std::copy(cs.begin(), cs.end(), p.coeffs.begin());
    p.degenerate = mass(c) < kMassFloor;
    p.rank = static_cast<int>(n_p_);
    return p;
}

double RefinementField::uniform_error_sq(int level) const {
    if (level < 0 || level > fine_level()) throw ConfigError("level outside the field");
    return std::accumulate(resid_[level].begin(), resid_[level].end(), 0.0);
}

std::size_t RefinementField::tree_size(double eta) const {
    return static_cast<std::size_t>(sorted_submax_.end() -
                                    std::upper_bound(sorted_submax_.begin(), sorted_submax_.end(), eta));
}

TruncationResult truncate_tree(const RefinementField& field, double eta) {
    if (!(eta > 0)) throw ConfigError("threshold eta must be positive");
    std::set<CubeIndex> nodes;
    std::deque<CubeIndex> q;
    const auto root = CubeIndex::root(field.dim());
    if (field.subtree_max(root) > eta) q.push_back(root);
    while (!q.empty()) {
        auto c = q.front();
        q.pop_front();
        nodes.insert(c);
        if (c.level + 1 > field.max_level()) continue;
        for (const auto& ch : children(c))
            if (field.subtree_max(ch) > eta) q.push_back(ch);
    }
    TruncationResult r{TruncatedTree(field.dim(), std::move(nodes)), field.depth_capped(eta), {}};
    if (r.depth_cap_reached)
        r.warning = "depth cap reached: a node at J_max=" + std::to_string(field.max_level()) +
                    " has delta above eta";
    return r;
}

TruncationResult truncate_tree(const ScalarFn& f, int dim, double eta, int theta, const Measure& m,
                               const QuadratureSpec& q, int max_level) {
    auto field = RefinementField::build(f, dim, m, {theta, max_level, q});
    return truncate_tree(field, eta);
}

void PiecewisePolynomial::reindex() {
    where_.clear();
    levels_.clear();
    for (std::size_t i = 0; i < partition.cells.size(); ++i) {
        where_[partition.cells[i]] = i;
        levels_.push_back(partition.cells[i].level);
    }
    std::sort(levels_.begin(), levels_.end());
    levels_.erase(std::unique(levels_.begin(), levels_.end()), levels_.end());
}

long PiecewisePolynomial::find(std::span<const double> x) const {
    for (int j : levels_) {
        auto it = where_.find(locate(x, partition.dim, j));
        if (it != where_.end()) return static_cast<long>(it->second);
    }
    return -1;
}

double PiecewisePolynomial::operator()(std::span<const double> x) const {
    const long i = find(x);
    if (i < 0) throw ValidationError("point not covered by the partition");
    return eval_patch(patches[static_cast<std::size_t>(i)], x);
}

PiecewisePolynomial build_adaptive_approximant(const RefinementField& field, const TruncatedTree& tree) {
    PiecewisePolynomial pp;
    pp.partition = outer_leaves(tree);
    pp.theta = field.theta();
    pp.source_tree_size = tree.size();
    for (const auto& c : pp.partition.cells) pp.patches.push_back(field.patch(c));
    pp.reindex();
    return pp;
}

PiecewisePolynomial approximant_on_partition(const ScalarFn& f, const AdaptivePartition& p, int theta,
                                             const Measure& m, const QuadratureSpec& q) {
    PiecewisePolynomial pp;
    pp.partition = p;
    pp.theta = theta;
    for (const auto& c : p.cells) pp.patches.push_back(fit_local_polynomial(f, c, theta, m, q));
    pp.reindex();
    return pp;
}

PiecewisePolynomial build_adaptive_approximant(const ScalarFn& f, const TruncatedTree& tree, int theta,
                                               const Measure& m, const QuadratureSpec& q) {
    auto pp = approximant_on_partition(f, outer_leaves(tree), theta, m, q);
    pp.source_tree_size = tree.size();
    return pp;
}

double approx_error_sq(const ScalarFn& f, const PiecewisePolynomial& pp, const Measure& m, const QuadratureSpec& q) {
    q.validate();
    double s = 0;
    for (const auto& patch : pp.patches) {
        detail::visit_nodes(patch.cube, m, q, [&](std::span<const double> x, std::span<const double> u, double w) {
            const double e = f(x) - eval_local(patch.dim(), patch.degree, patch.coeffs, u);
            s += w * e * e;
        });
    }
    return s;
}

double approx_error(const ScalarFn& f, const PiecewisePolynomial& pp, const Measure& m, const QuadratureSpec& q) {
    return std::sqrt(approx_error_sq(f, pp, m, q));
}

double field_error_sq(const RefinementField& field, const TruncatedTree& tree) {
    double s = 0;
    for (const auto& c : outer_leaves(tree).cells) s += field.residual(c);
    return s;
}

double field_identity_error_sq(const RefinementField& field, const TruncatedTree& tree) {
    double s = 0;
    for (const auto& c : outer_leaves(tree).cells) s += field.subtree_sq(c);
    return s + field.tail_energy();
}

double rate_exponent_m(double s) {
    if (!(s > 0)) throw ConfigError("rate s must be positive");
    return 2 / (2 * s + 1);
}

double cs_constant(double s) {
    const double m = rate_exponent_m(s);
    return std::pow(2.0, m) / (1 - std::pow(2.0, m - 2));
}

double error_bound_sq(double s, double seminorm, double eta) {
    const double m = rate_exponent_m(s);
    return cs_constant(s) * std::pow(seminorm, m) * std::pow(eta, 2 - m);
}

std::vector<double> geometric_grid(double hi, double lo, int points) {
    if (!(hi > 0 && lo > 0) || points < 2) throw ConfigError("geometric grid needs positive ends and >= 2 points");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = hi * std::pow(lo / hi, static_cast<double>(i) / (points - 1));
    return g;
}

std::vector<double> default_eta_grid(const RefinementField& field, int points, double decades) {
    const double hi = field.delta_max();
    if (!(hi > 0)) return {1.0};
    return geometric_grid(hi, hi * std::pow(10.0, -decades), points);
}

SeminormCurve estimate_seminorm(const RefinementField& field, double s, std::span<const double> grid) {
    SeminormCurve c;
    c.s = s;
    c.m = rate_exponent_m(s);
    c.max_level = field.max_level();
    double best = -1, eta_min_ok = std::numeric_limits<double>::infinity();
    for (double eta : grid) {
        SeminormRow r;
        r.eta = eta;
        r.tree_size = field.tree_size(eta);
        r.eta_m_T = std::pow(eta, c.m) * static_cast<double>(r.tree_size);
        r.capped = field.depth_capped(eta);
        c.rows.push_back(r);
        if (r.capped) continue;
        eta_min_ok = std::min(eta_min_ok, eta);
        if (r.eta_m_T > best) {
            best = r.eta_m_T;
            c.argmax_eta = eta;
        }
    }
    c.grid_estimate = best > 0 ? std::pow(best, 1 / c.m) : 0;
    // eta^m #T(eta) is a sawtooth; its sup over an interval sits just below a jump
    double hi = 0, second = std::numeric_limits<double>::infinity();
    for (const auto& r : c.rows) {
        if (r.capped) continue;
        hi = std::max(hi, r.eta);
        if (r.eta > eta_min_ok) second = std::min(second, r.eta);
    }
    const auto jumps = field.jump_points();
    auto it = std::upper_bound(jumps.begin(), jumps.end(), eta_min_ok);
    for (; it != jumps.end() && *it <= hi; ++it) {
        const auto n = static_cast<std::size_t>(jumps.end() - std::lower_bound(jumps.begin(), jumps.end(), *it));
        const double v = std::pow(*it, c.m) * static_cast<double>(n);
        if (v > best) {
            best = v;
            c.argmax_eta = *it;
        }
    }
    c.seminorm_estimate = best > 0 ? std::pow(best, 1 / c.m) : 0;
    c.not_converged = best > 0 && c.argmax_eta < second;
    try {
        c.s_hat = estimate_rate_s(field, grid).s_hat;
    } catch (const InsufficientDataError&) {
    }
    return c;
}

SeminormCurve estimate_seminorm(const ScalarFn& f, int dim, double s, int theta, const Measure& m,
                                const QuadratureSpec& q, std::span<const double> grid, int max_level) {
    auto field = RefinementField::build(f, dim, m, {theta, max_level, q});
    return estimate_seminorm(field, s, grid);
}

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
    LineFit f;
    f.n = x.size();
    if (x.size() != y.size() || x.size() < 2) throw InsufficientDataError("least squares needs >= 2 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0)) throw InsufficientDataError("least squares needs distinct x values");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        sse += e * e;
    }
    f.slope_stderr = x.size() > 2 ? std::sqrt(sse / (n - 2) / sxx) : 0;
    f.r = syy > 0 ? sxy / std::sqrt(sxx * syy) : 0;
    return f;
}

RateEstimate estimate_rate_s(const RefinementField& field, std::span<const double> grid) {
    std::vector<double> x, y;
    std::set<std::size_t> sizes;
    for (double eta : grid) {
        if (field.depth_capped(eta)) continue;
        const auto t = field.tree_size(eta);
        if (t == 0) continue;
        x.push_back(std::log(1 / eta));
        y.push_back(std::log(static_cast<double>(t)));
        sizes.insert(t);
    }
    if (sizes.size() < 5)
        throw InsufficientDataError("rate fit needs >= 5 distinct tree sizes, got " + std::to_string(sizes.size()));
    auto fit = least_squares(x, y);
    RateEstimate r;
    r.slope = fit.slope;
    r.slope_stderr = fit.slope_stderr;
    r.s_hat = (2 / fit.slope - 1) / 2;
    r.s_stderr = fit.slope_stderr / (fit.slope * fit.slope);
    r.points_used = x.size();
    r.distinct_sizes = sizes.size();
    return r;
}

RateEstimate estimate_rate_s(const ScalarFn& f, int dim, int theta, const Measure& m, const QuadratureSpec& q,
                             std::span<const double> grid, int max_level) {
    auto field = RefinementField::build(f, dim, m, {theta, max_level, q});
    return estimate_rate_s(field, grid);
}

std::vector<SweepRow> eta_sweep(const RefinementField& field, std::span<const double> grid) {
    std::vector<SweepRow> rows;
    for (double eta : grid) {
        auto tr = truncate_tree(field, eta);
        SweepRow r;
        r.eta = eta;
        r.tree_size = tr.tree.size();
        r.leaves = outer_leaves(tr.tree).size();
        r.error_sq = field_error_sq(field, tr.tree);
        r.identity_error_sq = field_identity_error_sq(field, tr.tree);
        r.capped = tr.depth_cap_reached;
        rows.push_back(r);
    }
    return rows;
}

nlohmann::json to_json(const PiecewisePolynomial& pp) {
    nlohmann::json j;
    j["dim"] = pp.dim();
    j["theta"] = pp.theta;
    j["source_eta"] = pp.source_eta;
    j["source_tree_size"] = pp.source_tree_size;
    if (!pp.target.empty()) j["target"] = pp.target;
    if (pp.s) j["s"] = *pp.s;
    j["cells"] = to_json(pp.partition);
    auto ps = nlohmann::json::array();
    for (const auto& p : pp.patches) ps.push_back(to_json(p));
    j["patches"] = ps;
    return j;
}

PiecewisePolynomial piecewise_from_json(const nlohmann::json& j) {
    PiecewisePolynomial pp;
    const int dim = j.at("dim").get<int>();
    pp.partition = partition_from_json(j.at("cells"), dim);
    pp.theta = j.at("theta").get<int>();
    pp.source_eta = j.value("source_eta", 0.0);
    pp.source_tree_size = j.value("source_tree_size", std::size_t{0});
    pp.target = j.value("target", std::string{});
    if (j.contains("s")) pp.s = j.at("s").get<double>();
    std::unordered_map<CubeIndex, PolynomialPatch, CubeIndexHash> by_cube;
    for (const auto& e : j.at("patches")) {
        auto p = patch_from_json(e);
        by_cube[p.cube] = p;
    }
    for (const auto& c : pp.partition.cells) {
        auto it = by_cube.find(c);
        if (it == by_cube.end()) throw ValidationError("no patch for cell " + to_string(c));
        pp.patches.push_back(it->second);
    }
    if (by_cube.size() != pp.partition.cells.size()) throw ValidationError("patches do not match cells");
    pp.reindex();
    return pp;
}

}  // namespace adaptree

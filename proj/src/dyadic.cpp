#include "adaptree/dyadic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adaptree/error.hpp"

namespace adaptree {

int default_max_level(int dim) {
    check_dim(dim);
    static constexpr int caps[] = {16, 10, 7};
    return caps[dim - 1];
}

void check_dim(int dim) {
    if (dim < 1 || dim > kMaxDim)
        throw ConfigError("dimension must be in 1.." + std::to_string(kMaxDim) + ", got " + std::to_string(dim));
}

CubeIndex CubeIndex::root(int dim) {
    check_dim(dim);
    CubeIndex c;
    c.dim = dim;
    return c;
}

CubeIndex CubeIndex::make(int level, std::span<const std::uint32_t> k) {
    CubeIndex c = root(static_cast<int>(k.size()));
    c.level = level;
    std::copy(k.begin(), k.end(), c.k.begin());
    validate(c);
    return c;
}

std::uint64_t CubeIndex::linear() const {
    std::uint64_t lin = 0;
    for (int l = dim - 1; l >= 0; --l) lin = (lin << level) | k[l];
    return lin;
}

CubeIndex CubeIndex::from_linear(int dim, int level, std::uint64_t lin) {
    CubeIndex c = root(dim);
    c.level = level;
    const std::uint64_t mask = (std::uint64_t{1} << level) - 1;
    for (int l = 0; l < dim; ++l) {
        c.k[l] = static_cast<std::uint32_t>(lin & mask);
        lin >>= level;
    }
    return c;
}

std::size_t CubeIndexHash::operator()(const CubeIndex& c) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(c.level + 1) + c.dim;
    for (int l = 0; l < kMaxDim; ++l) {
        h ^= c.k[l] + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
}

std::string to_string(const CubeIndex& c) {
    std::ostringstream os;
    os << "(" << c.level << ",[";
    for (int l = 0; l < c.dim; ++l) os << (l ? "," : "") << c.k[l];
    os << "])";
    return os.str();
}

void validate(const CubeIndex& c) {
    check_dim(c.dim);
    if (c.level < 0 || c.level > kAbsoluteMaxLevel)
        throw ValidationError("scale out of range in " + to_string(c));
    const std::uint64_t n = std::uint64_t{1} << c.level;
    for (int l = 0; l < kMaxDim; ++l) {
        if (l < c.dim ? c.k[l] >= n : c.k[l] != 0)
            throw ValidationError("location out of range in " + to_string(c));
    }
}

DyadicCube DyadicCube::of(const CubeIndex& c) {
    DyadicCube q;
    q.index = c;
    q.side = std::ldexp(1.0, -c.level);
    for (int l = 0; l < c.dim; ++l) q.anchor[l] = c.k[l] * q.side;
    return q;
}

double DyadicCube::volume() const { return std::ldexp(1.0, -index.level * index.dim); }

bool DyadicCube::contains(std::span<const double> x) const {
    for (int l = 0; l < index.dim; ++l) {
        const double lo = anchor[l], hi = anchor[l] + side;
        if (x[l] < lo) return false;
        if (hi >= 1.0 ? x[l] > 1.0 : x[l] >= hi) return false;
    }
    return true;
}

bool DyadicCube::contains_closed(std::span<const double> x) const {
    for (int l = 0; l < index.dim; ++l)
        if (x[l] < anchor[l] || x[l] > anchor[l] + side) return false;
    return true;
}

CubeIndex locate(std::span<const double> x, int dim, int level) {
    CubeIndex c = CubeIndex::root(dim);
    c.level = level;
    const double n = std::ldexp(1.0, level);
    const auto top = static_cast<std::uint32_t>((std::uint64_t{1} << level) - 1);
    for (int l = 0; l < dim; ++l) {
        double v = std::floor(x[l] * n);
        if (v < 0) v = 0;
        c.k[l] = v >= top ? top : static_cast<std::uint32_t>(v);
    }
    return c;
}

std::vector<CubeIndex> children(const CubeIndex& c, int max_level) {
    if (c.level + 1 > max_level)
        throw ConfigError("scale overflow: children of " + to_string(c) + " exceed J_max=" +
                          std::to_string(max_level));
    std::vector<CubeIndex> out;
    const int n = 1 << c.dim;
    out.reserve(n);
    // child bit l selects the upper half along axis l; axis 0 varies fastest
    for (int b = 0; b < n; ++b) {
        CubeIndex ch = c;
        ch.level = c.level + 1;
        for (int l = 0; l < c.dim; ++l) ch.k[l] = 2 * c.k[l] + ((b >> l) & 1);
        out.push_back(ch);
    }
    return out;
}

CubeIndex parent(const CubeIndex& c) {
    if (c.level == 0) throw ValidationError("root has no parent");
    CubeIndex p = c;
    p.level = c.level - 1;
    for (int l = 0; l < c.dim; ++l) p.k[l] = c.k[l] >> 1;
    return p;
}

CubeIndex ancestor(const CubeIndex& c, int level) {
    if (level > c.level || level < 0) throw ValidationError("bad ancestor level");
    CubeIndex p = c;
    const int shift = c.level - level;
    p.level = level;
    for (int l = 0; l < c.dim; ++l) p.k[l] = c.k[l] >> shift;
    return p;
}

bool is_ancestor_or_self(const CubeIndex& a, const CubeIndex& c) {
    if (a.dim != c.dim || a.level > c.level) return false;
    return ancestor(c, a.level) == a;
}

SubtreeReport validate_proper_subtree(const std::set<CubeIndex>& nodes) {
    SubtreeReport r;
    if (nodes.empty()) {
        r.empty = true;
        r.message = "empty tree";
        return r;
    }
    const int dim = nodes.begin()->dim;
    r.has_root = nodes.count(CubeIndex::root(dim)) != 0;
    for (const auto& c : nodes) {
        if (c.dim != dim) {
            r.valid = false;
            r.message = "mixed dimensions";
            return r;
        }
        if (!c.is_root() && !nodes.count(parent(c))) r.orphans.push_back(c);
    }
    std::ostringstream os;
    if (!r.has_root) os << "missing root";
    for (const auto& o : r.orphans) {
        if (os.tellp() > 0) os << "; ";
        os << "parent " << to_string(parent(o)) << " of " << to_string(o) << " missing";
    }
    r.valid = r.has_root && r.orphans.empty();
    r.message = r.valid ? "ok" : os.str();
    return r;
}

TruncatedTree::TruncatedTree(int dim, std::set<CubeIndex> nodes, bool empty_allowed)
    : dim_(dim), nodes_(std::move(nodes)), empty_allowed_(empty_allowed) {
    check_dim(dim);
    for (const auto& c : nodes_) {
        if (c.dim != dim) throw ValidationError("tree node dimension mismatch");
        validate(c);
    }
    auto rep = validate_proper_subtree(nodes_);
    if (rep.empty && !empty_allowed_) throw ValidationError("empty tree not allowed");
    if (!rep.valid) throw ValidationError("not a proper subtree: " + rep.message);
}

int TruncatedTree::depth() const {
    int d = -1;
    for (const auto& c : nodes_) d = std::max(d, c.level);
    return d;
}

int AdaptivePartition::finest_level() const {
    int j = 0;
    for (const auto& c : cells) j = std::max(j, c.level);
    return j;
}

AdaptivePartition outer_leaves(const TruncatedTree& tree) {
    AdaptivePartition p;
    p.dim = tree.dim();
    if (tree.empty()) {
        p.cells.push_back(CubeIndex::root(tree.dim()));
        return p;
    }
    for (const auto& c : tree.nodes())
        for (const auto& ch : children(c))
            if (!tree.contains(ch)) p.cells.push_back(ch);
    std::sort(p.cells.begin(), p.cells.end());
    return p;
}

AdaptivePartition uniform_partition(int dim, int level) {
    AdaptivePartition p;
    p.dim = dim;
    const std::uint64_t n = std::uint64_t{1} << (level * dim);
    p.cells.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) p.cells.push_back(CubeIndex::from_linear(dim, level, i));
    std::sort(p.cells.begin(), p.cells.end());
    return p;
}

void validate_partition(const AdaptivePartition& p) {
    if (p.cells.empty()) throw ValidationError("empty partition");
    std::set<CubeIndex> cells;
    double vol = 0;
    for (const auto& c : p.cells) {
        if (c.dim != p.dim) throw ValidationError("partition cell dimension mismatch");
        validate(c);
        if (!cells.insert(c).second) throw ValidationError("duplicate cell " + to_string(c));
        vol += DyadicCube::of(c).volume();
    }
    for (const auto& c : p.cells)
        for (int j = 0; j < c.level; ++j)
            if (cells.count(ancestor(c, j)))
                throw ValidationError("cells overlap: " + to_string(ancestor(c, j)) + " contains " + to_string(c));
    if (std::abs(vol - 1.0) > 1e-12) throw ValidationError("cell volumes sum to " + std::to_string(vol));
}

long find_cell(const AdaptivePartition& p, std::span<const double> x) {
    std::vector<int> levels;
    for (const auto& c : p.cells) levels.push_back(c.level);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    for (int j : levels) {
        auto c = locate(x, p.dim, j);
        auto it = std::lower_bound(p.cells.begin(), p.cells.end(), c);
        if (it != p.cells.end() && *it == c) return it - p.cells.begin();
    }
    return -1;
}

double boundary_area(const AdaptivePartition& p) {
    // every interior face is shared by exactly two cells up to a null set, so
    // half the total interior face measure is the common boundary
    double total = 0;
    for (const auto& c : p.cells) {
        const auto q = DyadicCube::of(c);
        const double face = std::ldexp(1.0, -c.level * (c.dim - 1));
        for (int l = 0; l < c.dim; ++l) {
            if (q.anchor[l] > 0) total += face;
            if (q.anchor[l] + q.side < 1) total += face;
        }
    }
    return total / 2;
}

double boundary_area_bound(int dim, std::size_t tree_size) {
    return std::ldexp(1.0, dim + 1) * dim * std::pow(static_cast<double>(tree_size), 1.0 / dim);
}

nlohmann::json cube_to_json(const CubeIndex& c) {
    auto a = nlohmann::json::array({c.level});
    for (int l = 0; l < c.dim; ++l) a.push_back(c.k[l]);
    return a;
}

CubeIndex cube_from_json(const nlohmann::json& j, int dim) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim + 1)
        throw ValidationError("cube must be [j, k...] with " + std::to_string(dim) + " locations");
    CubeIndex c = CubeIndex::root(dim);
    c.level = j[0].get<int>();
    for (int l = 0; l < dim; ++l) c.k[l] = j[l + 1].get<std::uint32_t>();
    validate(c);
    return c;
}

nlohmann::json to_json(const AdaptivePartition& p) {
    auto cells = p.cells;
    std::sort(cells.begin(), cells.end());
    auto a = nlohmann::json::array();
    for (const auto& c : cells) a.push_back(cube_to_json(c));
    return a;
}

AdaptivePartition partition_from_json(const nlohmann::json& j, int dim) {
    AdaptivePartition p;
    p.dim = dim;
    for (const auto& e : j) p.cells.push_back(cube_from_json(e, dim));
    std::sort(p.cells.begin(), p.cells.end());
    validate_partition(p);
    return p;
}

nlohmann::json to_json(const TruncatedTree& t) {
    auto a = nlohmann::json::array();
    for (const auto& c : t.nodes()) a.push_back(cube_to_json(c));
    return a;
}

TruncatedTree tree_from_json(const nlohmann::json& j, int dim) {
    std::set<CubeIndex> nodes;
    for (const auto& e : j) nodes.insert(cube_from_json(e, dim));
    return TruncatedTree(dim, std::move(nodes));
}

}  // namespace adaptree

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace adaptree {

inline constexpr int kMaxDim = 3;
// hard ceiling on scales; 2^30 cells per axis is already far past double resolution of the anchors
inline constexpr int kAbsoluteMaxLevel = 30;

int default_max_level(int dim);
void check_dim(int dim);

struct CubeIndex {
    int level = 0;
    std::array<std::uint32_t, kMaxDim> k{};
    int dim = 1;

    static CubeIndex root(int dim);
    static CubeIndex make(int level, std::span<const std::uint32_t> k);

    bool is_root() const { return level == 0; }
    // k0 + 2^j k1 + 4^j k2
    std::uint64_t linear() const;
    static CubeIndex from_linear(int dim, int level, std::uint64_t lin);

    auto operator<=>(const CubeIndex&) const = default;
    bool operator==(const CubeIndex&) const = default;
};

struct CubeIndexHash {
    std::size_t operator()(const CubeIndex& c) const noexcept;
};

std::string to_string(const CubeIndex& c);
void validate(const CubeIndex& c);

struct DyadicCube {
    CubeIndex index;
    std::array<double, kMaxDim> anchor{};
    double side = 1.0;

    static DyadicCube of(const CubeIndex& c);
    int dim() const { return index.dim; }
    double volume() const;
    // half-open [r, r+h) per axis, closed at the outer face x=1
    bool contains(std::span<const double> x) const;
    // closed cube
    bool contains_closed(std::span<const double> x) const;
};

// unique scale-j cube containing x under the half-open convention
CubeIndex locate(std::span<const double> x, int dim, int level);

std::vector<CubeIndex> children(const CubeIndex& c, int max_level = kAbsoluteMaxLevel);
CubeIndex parent(const CubeIndex& c);
CubeIndex ancestor(const CubeIndex& c, int level);
bool is_ancestor_or_self(const CubeIndex& a, const CubeIndex& c);

struct SubtreeReport {
    bool valid = true;
    bool empty = false;
    bool has_root = false;
    std::vector<CubeIndex> orphans;  // nodes whose parent is missing
    std::string message;
};

SubtreeReport validate_proper_subtree(const std::set<CubeIndex>& nodes);

class TruncatedTree {
public:
    TruncatedTree() = default;
    explicit TruncatedTree(int dim) : dim_(dim) {}
    // throws ValidationError if not a proper subtree
    TruncatedTree(int dim, std::set<CubeIndex> nodes, bool empty_allowed = true);

    int dim() const { return dim_; }
    bool empty_allowed() const { return empty_allowed_; }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    bool contains(const CubeIndex& c) const { return nodes_.count(c) != 0; }
    const std::set<CubeIndex>& nodes() const { return nodes_; }
    int depth() const;

private:
    int dim_ = 1;
    std::set<CubeIndex> nodes_;
    bool empty_allowed_ = true;
};

struct AdaptivePartition {
    int dim = 1;
    std::vector<CubeIndex> cells;  // sorted by (j,k)

    std::size_t size() const { return cells.size(); }
    int finest_level() const;
};

AdaptivePartition outer_leaves(const TruncatedTree& tree);
AdaptivePartition uniform_partition(int dim, int level);

// volumes sum to 1 and no cell contains another; throws ValidationError otherwise
void validate_partition(const AdaptivePartition& p);
// index into p.cells of the cell containing x, or -1
long find_cell(const AdaptivePartition& p, std::span<const double> x);

double boundary_area(const AdaptivePartition& p);
double boundary_area_bound(int dim, std::size_t tree_size);

nlohmann::json cube_to_json(const CubeIndex& c);
CubeIndex cube_from_json(const nlohmann::json& j, int dim);
nlohmann::json to_json(const AdaptivePartition& p);
AdaptivePartition partition_from_json(const nlohmann::json& j, int dim);
nlohmann::json to_json(const TruncatedTree& t);
TruncatedTree tree_from_json(const nlohmann::json& j, int dim);

}  // namespace adaptree

#pragma once

#include <random>
#include <set>
#include <vector>

#include "adaptree/dyadic.hpp"

namespace testsupport {

// grows a proper subtree by attaching random children of existing nodes
inline adaptree::TruncatedTree random_subtree(int dim, std::size_t size, std::mt19937_64& rng, int max_level = 12) {
    using namespace adaptree;
    std::set<CubeIndex> nodes{CubeIndex::root(dim)};
    std::vector<CubeIndex> list(nodes.begin(), nodes.end());
    while (nodes.size() < size) {
        const auto& p = list[std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng)];
        if (p.level >= max_level) continue;
        auto ch = children(p);
        const auto& c = ch[std::uniform_int_distribution<std::size_t>(0, ch.size() - 1)(rng)];
        if (nodes.insert(c).second) list.push_back(c);
    }
    return TruncatedTree(dim, nodes);
}

}  // namespace testsupport

#pragma once

#include <vector>

#include "bsreg/bspline.hpp"

namespace bsreg::detail {

/// Multi-indices of total order k, in descending lexicographic order.
inline std::vector<MultiIndex> multi_indices(int k)
{
    std::vector<MultiIndex> out;
    for (int a = k; a >= 0; --a)
        for (int b = k - a; b >= 0; --b) out.push_back({a, b, k - a - b});
    return out;
}

/// Every ordered sequence of `order` axes, as multi-indices (with repeats):
/// order 2 yields the 9 pairs (j,k), order 3 the 27 triples (j,k,q).
inline std::vector<MultiIndex> ordered_axis_tuples(int order)
{
    std::vector<MultiIndex> out{MultiIndex{0, 0, 0}};
    for (int step = 0; step < order; ++step) {
        std::vector<MultiIndex> next;
        for (const auto& m : out)
            for (int axis = 0; axis < 3; ++axis) {
                MultiIndex n = m;
                ++n[axis];
                next.push_back(n);
            }
        out = std::move(next);
    }
    return out;
}

inline int multi_index_key(const MultiIndex& m) { return 16 * m[0] + 4 * m[1] + m[2]; }

}  // namespace bsreg::detail

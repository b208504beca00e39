#include "core/rng.hpp"

#include <cmath>
#include <numeric>

namespace morphsdf {

std::vector<int> Rng::permutation(int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        int j = uniform_int(i + 1);
        std::swap(p[i], p[j]);
    }
    return p;
}

}  // namespace morphsdf

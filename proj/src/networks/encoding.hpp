#pragma once

#include <vector>

#include "autodiff/dual.hpp"
#include "autodiff/ops.hpp"

namespace morphsdf {

// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{K-1} pi x), cos(2^{K-1} pi x)]
// per coordinate: [N,D] -> [N, D*(1+2K)]. Works on plain tensors and on duals
// (the encoding of a traced point keeps its tangents).
template <class T>
T positional_encode(const T& x, int num_freqs) {
    if (num_freqs <= 0) return x;
    std::vector<T> parts{x};
    float base = 3.14159265358979323846f;
    for (int k = 0; k < num_freqs; ++k) {
        T scaled = mul_scalar(x, base * float(1 << k));
        parts.push_back(sin(scaled));
        parts.push_back(cos(scaled));
    }
    return concat_cols(parts);
}

inline int encoded_dim(int point_dim, int num_freqs) { return point_dim * (1 + 2 * num_freqs); }

}  // namespace morphsdf

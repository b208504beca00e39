#pragma once

#include <vector>

#include "autodiff/tape.hpp"
#include "autodiff/tensor.hpp"

namespace morphsdf::ad {

// Elementwise, same shape. Inputs may be constants or tensors on one tape;
// shape mismatches are rejected with both shapes in the message.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
// softplus with sharpness beta: log(1 + exp(beta x)) / beta
Tensor softplus(const Tensor& a, float beta);
Tensor sigmoid(const Tensor& a);
// sigmoid(beta * x); the derivative of softplus. A primitive so that
// forward-mode tangents of softplus remain differentiable on the tape.
Tensor scaled_sigmoid(const Tensor& a, float beta);

// [N,K] @ [K,M] -> [N,M]. float accumulation (Eigen kernel).
Tensor matmul(const Tensor& a, const Tensor& b);

// m: [N,D], r: [1,D] broadcast-added to every row.
Tensor add_row(const Tensor& m, const Tensor& r);
// m: [N,D], c: [N,1] broadcast-multiplied across columns.
Tensor mul_col(const Tensor& m, const Tensor& c);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int start, int len);

// Reductions accumulate in double.
Tensor sum_all(const Tensor& a);           // -> [1]
Tensor mean_all(const Tensor& a);          // -> [1]
Tensor row_sum(const Tensor& a);           // [N,D] -> [N,1]

// rows: [M,C] scattered into an [H,W,C] image at flat pixel indices
// (y*W + x); untouched pixels are zero.
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& pixel_indices, int height,
                    int width);

// [H,W,C] -> [H/2,W/2,C], 2x2 box average; H and W must be even.
Tensor avgpool2(const Tensor& a);
// [H,W,C] -> [2H,2W,C], nearest neighbor.
Tensor upsample2(const Tensor& a);

}  // namespace morphsdf::ad

#pragma once

#include <array>
#include <functional>
#include <vector>

#include "autodiff/ops.hpp"

namespace morphsdf::ad {

// Forward-mode value carrying up to three tangent directions alongside the
// primal. Tangent slots left undefined are structural zeros and cost nothing.
// Tangent expressions are built with the same recorded primitives as the
// primal, so when the primal involves tape tensors (network weights) the
// propagated tangents stay differentiable in reverse mode
// (forward-over-reverse).
struct Dual {
    Tensor primal;
    std::array<Tensor, 3> tangent;

    static Dual constant(Tensor t) { return Dual{std::move(t), {}}; }
    bool has_tangent(int i) const { return tangent[size_t(i)].defined(); }
};

Dual add(const Dual& a, const Dual& b);
Dual sub(const Dual& a, const Dual& b);
Dual mul(const Dual& a, const Dual& b);
Dual add_scalar(const Dual& a, float c);
Dual mul_scalar(const Dual& a, float c);
Dual sin(const Dual& a);
Dual cos(const Dual& a);
Dual sqrt(const Dual& a);
Dual square(const Dual& a);
Dual relu(const Dual& a);
Dual softplus(const Dual& a, float beta);
Dual sigmoid(const Dual& a);

Dual matmul(const Dual& a, const Tensor& w);
// Row broadcast with no dependence on the dual input: tangents pass through.
Dual add_row(const Dual& m, const Tensor& r);
Dual concat_cols(const std::vector<Dual>& parts);
Dual slice_cols(const Dual& a, int start, int len);
Dual row_sum(const Dual& a);

using FieldFn = std::function<Dual(const Dual&)>;

struct ValueAndGrad {
    Tensor value;  // [N,1]
    Tensor grad;   // [N,3]
};

// Scalar field and its gradient at each input point from one pass: seeds the
// three canonical tangents e1,e2,e3 through points [N,3]. field must map to
// one scalar per row ([N,1]); anything else is rejected. Both results are
// tape tensors whenever the field touches tape tensors, so losses built from
// them differentiate through to the parameters.
ValueAndGrad value_and_input_gradient(const Tensor& points, const FieldFn& field);
Tensor input_gradient(const Tensor& points, const FieldFn& field);

}  // namespace morphsdf::ad

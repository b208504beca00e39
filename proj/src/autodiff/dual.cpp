#include "autodiff/dual.hpp"

#include <stdexcept>

namespace morphsdf::ad {

namespace {

// Applies op to every defined tangent slot of a.
template <class F>
std::array<Tensor, 3> map_tangents(const Dual& a, F op) {
    std::array<Tensor, 3> out;
    for (int i = 0; i < 3; ++i)
        if (a.has_tangent(i)) out[size_t(i)] = op(a.tangent[size_t(i)]);
    return out;
}

std::array<Tensor, 3> zip_tangents(const Dual& a, const Dual& b,
                                   const std::function<Tensor(const Tensor&, const Tensor&)>& both,
                                   const std::function<Tensor(const Tensor&)>& only_a,
                                   const std::function<Tensor(const Tensor&)>& only_b) {
    std::array<Tensor, 3> out;
    for (int i = 0; i < 3; ++i) {
        bool ha = a.has_tangent(i), hb = b.has_tangent(i);
        if (ha && hb)
            out[size_t(i)] = both(a.tangent[size_t(i)], b.tangent[size_t(i)]);
        else if (ha)
            out[size_t(i)] = only_a(a.tangent[size_t(i)]);
        else if (hb)
            out[size_t(i)] = only_b(b.tangent[size_t(i)]);
    }
    return out;
}

}  // namespace

Dual add(const Dual& a, const Dual& b) {
    return {add(a.primal, b.primal),
            zip_tangents(
                a, b, [](const Tensor& ta, const Tensor& tb) { return add(ta, tb); },
                [](const Tensor& t) { return t; }, [](const Tensor& t) { return t; })};
}

Dual sub(const Dual& a, const Dual& b) {
    return {sub(a.primal, b.primal),
            zip_tangents(
                a, b, [](const Tensor& ta, const Tensor& tb) { return sub(ta, tb); },
                [](const Tensor& t) { return t; }, [](const Tensor& t) { return neg(t); })};
}

Dual mul(const Dual& a, const Dual& b) {
    return {mul(a.primal, b.primal),
            zip_tangents(
                a, b,
                [&](const Tensor& ta, const Tensor& tb) {
                    return add(mul(ta, b.primal), mul(a.primal, tb));
                },
                [&](const Tensor& ta) { return mul(ta, b.primal); },
                [&](const Tensor& tb) { return mul(a.primal, tb); })};
}

Dual add_scalar(const Dual& a, float c) { return {add_scalar(a.primal, c), a.tangent}; }

Dual mul_scalar(const Dual& a, float c) {
    return {mul_scalar(a.primal, c), map_tangents(a, [c](const Tensor& t) { return mul_scalar(t, c); })};
}

Dual sin(const Dual& a) {
    Tensor deriv;
    Dual out{sin(a.primal), {}};
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!deriv.defined()) deriv = cos(a.primal);
        return mul(deriv, t);
    });
    return out;
}

Dual cos(const Dual& a) {
    Tensor deriv;
    Dual out{cos(a.primal), {}};
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!deriv.defined()) deriv = neg(sin(a.primal));
        return mul(deriv, t);
    });
    return out;
}

Dual sqrt(const Dual& a) {
    Dual out{sqrt(a.primal), {}};
    Tensor deriv;
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!deriv.defined()) deriv = div(Tensor::full(a.primal.shape(), 0.5f), out.primal);
        return mul(deriv, t);
    });
    return out;
}

Dual square(const Dual& a) {
    return {square(a.primal), map_tangents(a, [&](const Tensor& t) {
                return mul_scalar(mul(a.primal, t), 2.f);
            })};
}

Dual relu(const Dual& a) {
    // Piecewise-constant derivative: the mask is a plain constant.
    Dual out{relu(a.primal), {}};
    Tensor mask;
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!mask.defined()) {
            auto x = a.primal.data();
            std::vector<float> m(x.size());
            for (size_t i = 0; i < m.size(); ++i) m[i] = x[i] > 0.f ? 1.f : 0.f;
            mask = Tensor(a.primal.shape(), std::move(m));
        }
        return mul(mask, t);
    });
    return out;
}

Dual softplus(const Dual& a, float beta) {
    Dual out{softplus(a.primal, beta), {}};
    Tensor deriv;
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!deriv.defined()) deriv = scaled_sigmoid(a.primal, beta);
        return mul(deriv, t);
    });
    return out;
}

Dual sigmoid(const Dual& a) {
    Dual out{sigmoid(a.primal), {}};
    Tensor deriv;
    out.tangent = map_tangents(a, [&](const Tensor& t) {
        if (!deriv.defined()) deriv = mul(out.primal, add_scalar(neg(out.primal), 1.f));
        return mul(deriv, t);
    });
    return out;
}

Dual matmul(const Dual& a, const Tensor& w) {
    return {matmul(a.primal, w), map_tangents(a, [&](const Tensor& t) { return matmul(t, w); })};
}

Dual add_row(const Dual& m, const Tensor& r) { return {add_row(m.primal, r), m.tangent}; }

Dual concat_cols(const std::vector<Dual>& parts) {
    std::vector<Tensor> primals;
    primals.reserve(parts.size());
    for (const Dual& p : parts) primals.push_back(p.primal);
    Dual out{concat_cols(primals), {}};

    for (int i = 0; i < 3; ++i) {
        bool any = false;
        for (const Dual& p : parts) any = any || p.has_tangent(i);
        if (!any) continue;
        std::vector<Tensor> ts;
        ts.reserve(parts.size());
        for (const Dual& p : parts)
            ts.push_back(p.has_tangent(i) ? p.tangent[size_t(i)]
                                          : Tensor::zeros(p.primal.shape()));
        out.tangent[size_t(i)] = concat_cols(ts);
    }
    return out;
}

Dual slice_cols(const Dual& a, int start, int len) {
    return {slice_cols(a.primal, start, len),
            map_tangents(a, [&](const Tensor& t) { return slice_cols(t, start, len); })};
}

Dual row_sum(const Dual& a) {
    return {row_sum(a.primal), map_tangents(a, [](const Tensor& t) { return row_sum(t); })};
}

ValueAndGrad value_and_input_gradient(const Tensor& points, const FieldFn& field) {
    if (points.ndim() != 2 || points.dim(1) != 3)
        throw std::invalid_argument("input_gradient: points must be [N,3], got " +
                                    points.shape_str());
    int n = points.dim(0);

    Dual x{points, {}};
    for (int i = 0; i < 3; ++i) {
        std::vector<float> seed(size_t(n) * 3, 0.f);
        for (int r = 0; r < n; ++r) seed[size_t(r) * 3 + i] = 1.f;
        x.tangent[size_t(i)] = Tensor({n, 3}, std::move(seed));
    }

    Dual y = field(x);
    if (y.primal.ndim() != 2 || y.primal.dim(0) != n || y.primal.dim(1) != 1)
        throw std::invalid_argument("input_gradient: field output must be [N,1], got " +
                                    y.primal.shape_str());

    std::vector<Tensor> cols;
    for (int i = 0; i < 3; ++i)
        cols.push_back(y.has_tangent(i) ? y.tangent[size_t(i)]
                                        : Tensor::zeros(y.primal.shape()));
    return {y.primal, concat_cols(cols)};
}

Tensor input_gradient(const Tensor& points, const FieldFn& field) {
    return value_and_input_gradient(points, field).grad;
}

}  // namespace morphsdf::ad

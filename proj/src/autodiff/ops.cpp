#include "autodiff/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace morphsdf::ad {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapCM = Eigen::Map<const EMat>;

Tape* result_tape(std::initializer_list<const Tensor*> ts) {
    if (recording_paused()) return nullptr;
    Tape* tape = nullptr;
    for (const Tensor* p : ts) {
        if (!p->on_tape()) continue;
        if (tape && p->tape() != tape)
            throw std::invalid_argument("ops: inputs live on different tapes");
        tape = p->tape();
    }
    return tape;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a, b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
}

void require_2d(const Tensor& a, const char* op) {
    if (a.ndim() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + a.shape_str());
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    auto x = a.data();
    std::vector<float> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
    Tape* tape = result_tape({&a});
    if (!tape) return Tensor(a.shape(), std::move(out));
    return tape->record(a.shape(), std::move(out), {&a}, [a, deriv](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        auto up = ctx.upstream();
        auto x = a.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] += up[i] * deriv(x[i]);
    });
}

float softplus_fwd(float x, float beta) {
    float z = beta * x;
    if (z > 25.f) return x;
    if (z < -25.f) return std::exp(z) / beta;
    return std::log1p(std::exp(z)) / beta;
}

float sigmoid_fwd(float x) {
    if (x >= 0.f) {
        float e = std::exp(-x);
        return 1.f / (1.f + e);
    }
    float e = std::exp(x);
    return e / (1.f + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    auto xa = a.data(), xb = b.data();
    std::vector<float> out(xa.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
    Tape* tape = result_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));
    return tape->record(a.shape(), std::move(out), {&a, &b}, [](const BackCtx& ctx) {
        auto up = ctx.upstream();
        for (int p : {0, 1}) {
            auto g = ctx.grad(p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += up[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    auto xa = a.data(), xb = b.data();
    std::vector<float> out(xa.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
    Tape* tape = result_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));
    return tape->record(a.shape(), std::move(out), {&a, &b}, [](const BackCtx& ctx) {
        auto up = ctx.upstream();
        auto ga = ctx.grad(0);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += up[i];
        auto gb = ctx.grad(1);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= up[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    auto xa = a.data(), xb = b.data();
    std::vector<float> out(xa.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
    Tape* tape = result_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));
    return tape->record(a.shape(), std::move(out), {&a, &b}, [a, b](const BackCtx& ctx) {
        auto up = ctx.upstream();
        auto xa = a.data(), xb = b.data();
        auto ga = ctx.grad(0);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += up[i] * xb[i];
        auto gb = ctx.grad(1);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += up[i] * xa[i];
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same(a, b, "div");
    auto xa = a.data(), xb = b.data();
    std::vector<float> out(xa.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] / xb[i];
    Tape* tape = result_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));
    return tape->record(a.shape(), std::move(out), {&a, &b}, [a, b](const BackCtx& ctx) {
        auto up = ctx.upstream();
        auto xa = a.data(), xb = b.data();
        auto ga = ctx.grad(0);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += up[i] / xb[i];
        auto gb = ctx.grad(1);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= up[i] * xa[i] / (xb[i] * xb[i]);
    });
}

Tensor add_scalar(const Tensor& a, float c) {
    return unary(a, [c](float x) { return x + c; }, [](float) { return 1.f; });
}

Tensor mul_scalar(const Tensor& a, float c) {
    return unary(a, [c](float x) { return x * c; }, [c](float) { return c; });
}

Tensor neg(const Tensor& a) {
    return unary(a, [](float x) { return -x; }, [](float) { return -1.f; });
}

Tensor abs(const Tensor& a) {
    return unary(a, [](float x) { return std::fabs(x); },
                 [](float x) { return x > 0.f ? 1.f : (x < 0.f ? -1.f : 0.f); });
}

Tensor sin(const Tensor& a) {
    return unary(a, [](float x) { return std::sin(x); }, [](float x) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
    return unary(a, [](float x) { return std::cos(x); }, [](float x) { return -std::sin(x); });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](float x) { return std::exp(x); }, [](float x) { return std::exp(x); });
}

Tensor sqrt(const Tensor& a) {
    return unary(a, [](float x) { return std::sqrt(x); },
                 [](float x) { return 0.5f / std::sqrt(x); });
}

Tensor square(const Tensor& a) {
    return unary(a, [](float x) { return x * x; }, [](float x) { return 2.f * x; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](float x) { return x > 0.f ? x : 0.f; },
                 [](float x) { return x > 0.f ? 1.f : 0.f; });
}

Tensor softplus(const Tensor& a, float beta) {
    return unary(a, [beta](float x) { return softplus_fwd(x, beta); },
                 [beta](float x) { return sigmoid_fwd(beta * x); });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, [](float x) { return sigmoid_fwd(x); },
                 [](float x) {
                     float s = sigmoid_fwd(x);
                     return s * (1.f - s);
                 });
}

Tensor scaled_sigmoid(const Tensor& a, float beta) {
    return unary(a, [beta](float x) { return sigmoid_fwd(beta * x); },
                 [beta](float x) {
                     float s = sigmoid_fwd(beta * x);
                     return beta * s * (1.f - s);
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                                    b.shape_str());
    int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<float> out(size_t(n) * m);
    {
        MapCM ma(a.data().data(), n, k), mb(b.data().data(), k, m);
        MapM mo(out.data(), n, m);
        mo.noalias() = ma * mb;
    }
    Tape* tape = result_tape({&a, &b});
    if (!tape) return Tensor({n, m}, std::move(out));
    return tape->record({n, m}, std::move(out), {&a, &b}, [a, b, n, k, m](const BackCtx& ctx) {
        MapCM up(ctx.upstream().data(), n, m);
        if (auto g = ctx.grad(0); !g.empty()) {
            MapM ga(g.data(), n, k);
            MapCM mb(b.data().data(), k, m);
            ga.noalias() += up * mb.transpose();
        }
        if (auto g = ctx.grad(1); !g.empty()) {
            MapM gb(g.data(), k, m);
            MapCM ma(a.data().data(), n, k);
            gb.noalias() += ma.transpose() * up;
        }
    });
}

Tensor add_row(const Tensor& m, const Tensor& r) {
    require_2d(m, "add_row");
    if (r.ndim() != 2 || r.dim(0) != 1 || r.dim(1) != m.dim(1))
        throw std::invalid_argument("add_row: row must be [1," + std::to_string(m.dim(1)) +
                                    "], got " + r.shape_str());
    int n = m.dim(0), d = m.dim(1);
    auto xm = m.data();
    auto xr = r.data();
    std::vector<float> out(xm.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[size_t(i) * d + j] = xm[size_t(i) * d + j] + xr[size_t(j)];
    Tape* tape = result_tape({&m, &r});
    if (!tape) return Tensor(m.shape(), std::move(out));
    return tape->record(m.shape(), std::move(out), {&m, &r}, [n, d](const BackCtx& ctx) {
        auto up = ctx.upstream();
        if (auto g = ctx.grad(0); !g.empty())
            for (size_t i = 0; i < g.size(); ++i) g[i] += up[i];
        if (auto g = ctx.grad(1); !g.empty())
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) g[size_t(j)] += up[size_t(i) * d + j];
    });
}

Tensor mul_col(const Tensor& m, const Tensor& c) {
    require_2d(m, "mul_col");
    if (c.ndim() != 2 || c.dim(1) != 1 || c.dim(0) != m.dim(0))
        throw std::invalid_argument("mul_col: column must be [" + std::to_string(m.dim(0)) +
                                    ",1], got " + c.shape_str());
    int n = m.dim(0), d = m.dim(1);
    auto xm = m.data();
    auto xc = c.data();
    std::vector<float> out(xm.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[size_t(i) * d + j] = xm[size_t(i) * d + j] * xc[size_t(i)];
    Tape* tape = result_tape({&m, &c});
    if (!tape) return Tensor(m.shape(), std::move(out));
    return tape->record(m.shape(), std::move(out), {&m, &c}, [m, c, n, d](const BackCtx& ctx) {
        auto up = ctx.upstream();
        auto xm = m.data();
        auto xc = c.data();
        if (auto g = ctx.grad(0); !g.empty())
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) g[size_t(i) * d + j] += up[size_t(i) * d + j] * xc[size_t(i)];
        if (auto g = ctx.grad(1); !g.empty())
            for (int i = 0; i < n; ++i) {
                float acc = 0.f;
                for (int j = 0; j < d; ++j) acc += up[size_t(i) * d + j] * xm[size_t(i) * d + j];
                g[size_t(i)] += acc;
            }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int n = parts[0].dim(0);
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n)
            throw std::invalid_argument("concat_cols: row count mismatch, " + parts[0].shape_str() +
                                        " vs " + p.shape_str());
        total += p.dim(1);
    }
    std::vector<float> out(size_t(n) * total);
    int off = 0;
    for (const Tensor& p : parts) {
        int d = p.dim(1);
        auto x = p.data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out[size_t(i) * total + off + j] = x[size_t(i) * d + j];
        off += d;
    }
    Tape* tape = nullptr;
    for (const Tensor& p : parts)
        if (p.on_tape()) {
            if (tape && p.tape() != tape)
                throw std::invalid_argument("concat_cols: inputs on different tapes");
            tape = p.tape();
        }
    if (!tape) return Tensor({n, total}, std::move(out));

    std::vector<const Tensor*> ptrs;
    // record() takes an initializer_list; concat is variadic, so record
    // manually through a fixed-capacity dispatch.
    std::vector<int> widths;
    for (const Tensor& p : parts) widths.push_back(p.dim(1));
    // Build parent list via successive pairing: instead, use the generic path.
    // Tape::record only accepts initializer_list, so wrap up to 8 parents.
    auto backward = [n, total, widths](const BackCtx& ctx) {
        auto up = ctx.upstream();
        int off = 0;
        for (size_t k = 0; k < widths.size(); ++k) {
            int d = widths[k];
            if (auto g = ctx.grad(int(k)); !g.empty())
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) g[size_t(i) * d + j] += up[size_t(i) * total + off + j];
            off += d;
        }
    };
    switch (parts.size()) {
        case 1:
            return tape->record({n, total}, std::move(out), {&parts[0]}, backward);
        case 2:
            return tape->record({n, total}, std::move(out), {&parts[0], &parts[1]}, backward);
        case 3:
            return tape->record({n, total}, std::move(out), {&parts[0], &parts[1], &parts[2]},
                                backward);
        case 4:
            return tape->record({n, total}, std::move(out),
                                {&parts[0], &parts[1], &parts[2], &parts[3]}, backward);
        default: {
            // fold longer lists pairwise
            std::vector<Tensor> head(parts.begin(), parts.begin() + 4);
            std::vector<Tensor> rest;
            rest.push_back(concat_cols(head));
            rest.insert(rest.end(), parts.begin() + 4, parts.end());
            return concat_cols(rest);
        }
    }
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    require_2d(a, "slice_cols");
    if (start < 0 || len <= 0 || start + len > a.dim(1))
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of " + a.shape_str());
    int n = a.dim(0), d = a.dim(1);
    std::vector<float> out(size_t(n) * len);
    auto x = a.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j) out[size_t(i) * len + j] = x[size_t(i) * d + start + j];
    Tape* tape = result_tape({&a});
    if (!tape) return Tensor({n, len}, std::move(out));
    return tape->record({n, len}, std::move(out), {&a}, [n, d, start, len](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        auto up = ctx.upstream();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < len; ++j) g[size_t(i) * d + start + j] += up[size_t(i) * len + j];
    });
}

Tensor sum_all(const Tensor& a) {
    auto x = a.data();
    double acc = 0.0;
    for (float v : x) acc += v;
    Tape* tape = result_tape({&a});
    std::vector<float> out{float(acc)};
    if (!tape) return Tensor({1}, std::move(out));
    return tape->record({1}, std::move(out), {&a}, [](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        float u = ctx.upstream()[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += u;
    });
}

Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), 1.0f / float(a.size()));
}

Tensor row_sum(const Tensor& a) {
    require_2d(a, "row_sum");
    int n = a.dim(0), d = a.dim(1);
    auto x = a.data();
    std::vector<float> out(size_t(n), 0.f);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += x[size_t(i) * d + j];
        out[size_t(i)] = float(acc);
    }
    Tape* tape = result_tape({&a});
    if (!tape) return Tensor({n, 1}, std::move(out));
    return tape->record({n, 1}, std::move(out), {&a}, [n, d](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        auto up = ctx.upstream();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) g[size_t(i) * d + j] += up[size_t(i)];
    });
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& pixel_indices, int height,
                    int width) {
    require_2d(rows, "scatter_rows");
    int m = rows.dim(0), c = rows.dim(1);
    if (int(pixel_indices.size()) != m)
        throw std::invalid_argument("scatter_rows: index count " +
                                    std::to_string(pixel_indices.size()) + " != rows " +
                                    std::to_string(m));
    std::vector<float> out(size_t(height) * width * c, 0.f);
    auto x = rows.data();
    for (int i = 0; i < m; ++i) {
        int p = pixel_indices[size_t(i)];
        if (p < 0 || p >= height * width)
            throw std::invalid_argument("scatter_rows: pixel index out of range");
        for (int j = 0; j < c; ++j) out[size_t(p) * c + j] += x[size_t(i) * c + j];
    }
    Tape* tape = result_tape({&rows});
    if (!tape) return Tensor({height, width, c}, std::move(out));
    auto idx = pixel_indices;
    return tape->record({height, width, c}, std::move(out), {&rows},
                        [idx = std::move(idx), m, c](const BackCtx& ctx) {
                            auto g = ctx.grad(0);
                            if (g.empty()) return;
                            auto up = ctx.upstream();
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < c; ++j)
                                    g[size_t(i) * c + j] += up[size_t(idx[size_t(i)]) * c + j];
                        });
}

Tensor avgpool2(const Tensor& a) {
    if (a.ndim() != 3 || a.dim(0) % 2 || a.dim(1) % 2)
        throw std::invalid_argument("avgpool2: need [H,W,C] with even H,W, got " + a.shape_str());
    int h = a.dim(0), w = a.dim(1), c = a.dim(2);
    int oh = h / 2, ow = w / 2;
    std::vector<float> out(size_t(oh) * ow * c);
    auto x = a.data();
    auto in_at = [&](int y, int xx, int ch) { return x[(size_t(y) * w + xx) * c + ch]; };
    for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
            for (int ch = 0; ch < c; ++ch)
                out[(size_t(y) * ow + xx) * c + ch] =
                    0.25f * (in_at(2 * y, 2 * xx, ch) + in_at(2 * y, 2 * xx + 1, ch) +
                             in_at(2 * y + 1, 2 * xx, ch) + in_at(2 * y + 1, 2 * xx + 1, ch));
    Tape* tape = result_tape({&a});
    if (!tape) return Tensor({oh, ow, c}, std::move(out));
    return tape->record({oh, ow, c}, std::move(out), {&a}, [h, w, c](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        auto up = ctx.upstream();
        int ow = w / 2;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ch = 0; ch < c; ++ch)
                    g[(size_t(y) * w + xx) * c + ch] +=
                        0.25f * up[(size_t(y / 2) * ow + xx / 2) * c + ch];
    });
}

Tensor upsample2(const Tensor& a) {
    if (a.ndim() != 3) throw std::invalid_argument("upsample2: need [H,W,C], got " + a.shape_str());
    int h = a.dim(0), w = a.dim(1), c = a.dim(2);
    int oh = h * 2, ow = w * 2;
    std::vector<float> out(size_t(oh) * ow * c);
    auto x = a.data();
    for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
            for (int ch = 0; ch < c; ++ch)
                out[(size_t(y) * ow + xx) * c + ch] = x[(size_t(y / 2) * w + xx / 2) * c + ch];
    Tape* tape = result_tape({&a});
    if (!tape) return Tensor({oh, ow, c}, std::move(out));
    return tape->record({oh, ow, c}, std::move(out), {&a}, [h, w, c](const BackCtx& ctx) {
        auto g = ctx.grad(0);
        if (g.empty()) return;
        auto up = ctx.upstream();
        int ow = w * 2;
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                for (int ch = 0; ch < c; ++ch)
                    g[(size_t(y / 2) * w + xx / 2) * c + ch] += up[(size_t(y) * ow + xx) * c + ch];
    });
}

}  // namespace morphsdf::ad

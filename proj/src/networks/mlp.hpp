#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autodiff/dual.hpp"
#include "autodiff/ops.hpp"
#include "core/rng.hpp"

namespace morphsdf {

// Which latent code a network input slot is wired to. The color network never
// sees Geom: attribute disentanglement is structural, not learned.
enum class CodeKind { geom, color, expr };

struct MlpSpec {
    int point_dim = 3;  // raw coordinate count before encoding (3 = xyz, 2 = uv)
    int pe_freqs = 6;
    std::vector<CodeKind> code_inputs;
    int code_dim = 512;
    int hidden = 256;
    int layers = 8;  // linear layers in total (layers-1 activations)
    int out_dim = 1;

    enum class Act { softplus, relu } act = Act::relu;
    float softplus_beta = 100.f;
    enum class Squash { none, sigmoid } squash = Squash::none;

    bool geometric_init = false;
    float geom_radius = 0.7f;
    // Damping on the geometric-init output layer: the initial field is
    // approximately scale*(|p| - geom_radius/scale)... kept at 1 unless
    // measurement says otherwise.
    float geom_scale = 1.f;

    int encoded_dim() const { return point_dim * (1 + 2 * pe_freqs); }
    int64_t param_count() const;
};

// MLP whose first layer is split into blocks: one weight matrix for the
// encoded point and one per latent code. Codes enter as [1,code_dim] rows, so
// their contribution is a single row broadcast instead of a per-point concat,
// and input tangents flow only through the point block.
struct Mlp {
    MlpSpec spec;
    ad::Tensor w_pe;                  // [encoded_dim, hidden]
    std::vector<ad::Tensor> w_code;   // [code_dim, hidden] per code input
    std::vector<ad::Tensor> w;        // hidden/out layers, [in, out]
    std::vector<ad::Tensor> b;        // [1, out] per linear layer (b[0] pairs with layer 0)

    static Mlp make(MlpSpec spec, Rng& rng);

    // Same structure, every parameter registered on the tape (storage shared,
    // so the trainer's updates go through the original tensors).
    Mlp bind(ad::Tape& tape) const;

    // name -> parameter, stable order; prefix is prepended to each name.
    std::vector<std::pair<std::string, ad::Tensor*>> params(const std::string& prefix);

    // encoded: PE of the raw input, [N, encoded_dim]; codes: one [1,code_dim]
    // row per declared code input.
    template <class T>
    T eval_encoded(const T& encoded, const std::vector<ad::Tensor>& codes) const;
};

template <class T>
T Mlp::eval_encoded(const T& encoded, const std::vector<ad::Tensor>& codes) const {
    using namespace ad;
    if (codes.size() != w_code.size())
        throw std::invalid_argument("Mlp: expected " + std::to_string(w_code.size()) +
                                    " codes, got " + std::to_string(codes.size()));
    T z = matmul(encoded, w_pe);
    for (size_t i = 0; i < codes.size(); ++i) z = add_row(z, matmul(codes[i], w_code[i]));
    z = add_row(z, b[0]);
    for (size_t l = 1; l < w.size() + 1; ++l) {
        z = spec.act == MlpSpec::Act::softplus ? softplus(z, spec.softplus_beta) : relu(z);
        z = add_row(matmul(z, w[l - 1]), b[l]);
    }
    if (spec.squash == MlpSpec::Squash::sigmoid) z = sigmoid(z);
    return z;
}

}  // namespace morphsdf

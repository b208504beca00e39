#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "networks/mlp.hpp"

namespace morphsdf {

struct ModelConfig {
    int latent_dim = 512;
    int pe_freqs_geom = 6;  // f and g encode xyz
    int pe_freqs_uv = 6;    // g-inverse and h encode uv
    int f_hidden = 256, f_layers = 8;
    int g_hidden = 256, g_layers = 6;
    int ginv_hidden = 256, ginv_layers = 6;
    int h_hidden = 256, h_layers = 6;
    float softplus_beta = 100.f;
    float geom_radius = 0.7f;
    float geom_scale = 0.7f;

    MlpSpec spec_f() const;
    MlpSpec spec_g() const;
    MlpSpec spec_ginv() const;
    MlpSpec spec_h() const;
};

// One avatar's conditioning: geometry identity, color identity, expression.
struct AvatarCodes {
    ad::Tensor geom;   // [1, latent_dim]
    ad::Tensor color;  // [1, latent_dim]
    ad::Tensor expr;   // [1, latent_dim]
};

// Autodecoder code tables. Every expression of a subject shares that
// subject's geometry and color codes; expression codes are per sample.
struct LatentTables {
    std::vector<ad::Tensor> geom;   // per subject
    std::vector<ad::Tensor> color;  // per subject
    std::vector<ad::Tensor> expr;   // per training sample
    std::vector<int> expr_subject;  // sample -> subject

    static LatentTables make(int num_subjects, std::vector<int> expr_subject, int latent_dim,
                             uint64_t seed);
    AvatarCodes codes_for_sample(int sample) const;
    ad::Tensor mean_geom() const;
    ad::Tensor mean_color() const;
    ad::Tensor mean_expr() const;
};

// The four latent-conditioned networks. f: signed distance; g: surface->uv;
// ginv: uv->surface; h: uv->rgb. h is wired to (color, expr) only, so
// geometry identity cannot leak into appearance.
struct Model {
    ModelConfig cfg;
    Mlp f, g, ginv, h;

    static Model make(const ModelConfig& cfg, uint64_t seed);

    // Tape-bound view for a training step; parameters share storage.
    Model bind(ad::Tape& tape) const;
    std::vector<std::pair<std::string, ad::Tensor*>> params();

    // points [N,3] -> [N,1]; rejects non-finite input.
    ad::Tensor sdf(const ad::Tensor& points, const AvatarCodes& codes) const;
    // points [N,3] -> value [N,1] and spatial gradient [N,3], one dual pass.
    ad::ValueAndGrad sdf_with_grad(const ad::Tensor& points, const AvatarCodes& codes) const;
    // points [N,3] -> uv [N,2] in [0,1]^2.
    ad::Tensor uv(const ad::Tensor& points, const AvatarCodes& codes) const;
    // uv [N,2] -> points [N,3], unbounded.
    ad::Tensor inverse_uv(const ad::Tensor& uv, const AvatarCodes& codes) const;
    // uv [N,2] -> rgb [N,3] in [0,1]^3.
    ad::Tensor color(const ad::Tensor& uv, const AvatarCodes& codes) const;
};

ad::Tensor mean_code(const std::vector<ad::Tensor>& rows);

}  // namespace morphsdf

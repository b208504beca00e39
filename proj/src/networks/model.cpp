#include "networks/model.hpp"

#include <cmath>
#include <stdexcept>

#include "networks/encoding.hpp"

namespace morphsdf {

using ad::Dual;
using ad::Tensor;

namespace {

void require_points(const Tensor& t, int dim, const char* who) {
    if (t.ndim() != 2 || t.dim(1) != dim)
        throw std::invalid_argument(std::string(who) + ": expected [N," + std::to_string(dim) +
                                    "], got " + t.shape_str());
}

void require_finite(const Tensor& t, const char* who) {
    for (float v : t.data())
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(who) + ": non-finite input");
}

}  // namespace

MlpSpec ModelConfig::spec_f() const {
    MlpSpec s;
    s.point_dim = 3;
    s.pe_freqs = pe_freqs_geom;
    s.code_inputs = {CodeKind::geom, CodeKind::expr};
    s.code_dim = latent_dim;
    s.hidden = f_hidden;
    s.layers = f_layers;
    s.out_dim = 1;
    s.act = MlpSpec::Act::softplus;
    s.softplus_beta = softplus_beta;
    s.geometric_init = true;
    s.geom_radius = geom_radius;
    s.geom_scale = geom_scale;
    return s;
}

MlpSpec ModelConfig::spec_g() const {
    MlpSpec s;
    s.point_dim = 3;
    s.pe_freqs = pe_freqs_geom;
    s.code_inputs = {CodeKind::geom, CodeKind::expr};
    s.code_dim = latent_dim;
    s.hidden = g_hidden;
    s.layers = g_layers;
    s.out_dim = 2;
    s.squash = MlpSpec::Squash::sigmoid;
    return s;
}

MlpSpec ModelConfig::spec_ginv() const {
    MlpSpec s;
    s.point_dim = 2;
    s.pe_freqs = pe_freqs_uv;
    s.code_inputs = {CodeKind::geom, CodeKind::expr};
    s.code_dim = latent_dim;
    s.hidden = ginv_hidden;
    s.layers = ginv_layers;
    s.out_dim = 3;
    return s;
}

MlpSpec ModelConfig::spec_h() const {
    MlpSpec s;
    s.point_dim = 2;
    s.pe_freqs = pe_freqs_uv;
    s.code_inputs = {CodeKind::color, CodeKind::expr};
    s.code_dim = latent_dim;
    s.hidden = h_hidden;
    s.layers = h_layers;
    s.out_dim = 3;
    s.squash = MlpSpec::Squash::sigmoid;
    return s;
}

Tensor mean_code(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("mean_code: empty table");
    int d = rows[0].dim(1);
    std::vector<double> acc(static_cast<size_t>(d), 0.0);
    for (const Tensor& r : rows) {
        auto x = r.data();
        for (int j = 0; j < d; ++j) acc[size_t(j)] += double(x[size_t(j)]);
    }
    std::vector<float> out(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) out[size_t(j)] = float(acc[size_t(j)] / double(rows.size()));
    return Tensor({1, d}, std::move(out));
}

LatentTables LatentTables::make(int num_subjects, std::vector<int> expr_subject, int latent_dim,
                                uint64_t seed) {
    LatentTables t;
    t.expr_subject = std::move(expr_subject);
    for (int s = 0; s < num_subjects; ++s) {
        Rng rg = Rng::fork(seed, {0x1a, uint64_t(s)});
        std::vector<float> g(static_cast<size_t>(latent_dim)), c(static_cast<size_t>(latent_dim));
        for (float& v : g) v = rg.normal(0.f, 0.01f);
        for (float& v : c) v = rg.normal(0.f, 0.01f);
        t.geom.push_back(Tensor({1, latent_dim}, std::move(g)));
        t.color.push_back(Tensor({1, latent_dim}, std::move(c)));
    }
    for (size_t i = 0; i < t.expr_subject.size(); ++i) {
        if (t.expr_subject[i] < 0 || t.expr_subject[i] >= num_subjects)
            throw std::invalid_argument("LatentTables: sample maps to unknown subject");
        Rng rg = Rng::fork(seed, {0x1b, uint64_t(i)});
        std::vector<float> e(static_cast<size_t>(latent_dim));
        for (float& v : e) v = rg.normal(0.f, 0.01f);
        t.expr.push_back(Tensor({1, latent_dim}, std::move(e)));
    }
    return t;
}

AvatarCodes LatentTables::codes_for_sample(int sample) const {
    int subj = expr_subject.at(size_t(sample));
    return {geom[size_t(subj)], color[size_t(subj)], expr[size_t(sample)]};
}

Tensor LatentTables::mean_geom() const { return mean_code(geom); }
Tensor LatentTables::mean_color() const { return mean_code(color); }
Tensor LatentTables::mean_expr() const { return mean_code(expr); }

Model Model::make(const ModelConfig& cfg, uint64_t seed) {
    Model m;
    m.cfg = cfg;
    Rng rf = Rng::fork(seed, {0xf});
    m.f = Mlp::make(cfg.spec_f(), rf);
    Rng rg = Rng::fork(seed, {0x9});
    m.g = Mlp::make(cfg.spec_g(), rg);
    Rng ri = Rng::fork(seed, {0x91});
    m.ginv = Mlp::make(cfg.spec_ginv(), ri);
    Rng rh = Rng::fork(seed, {0x4});
    m.h = Mlp::make(cfg.spec_h(), rh);
    return m;
}

Model Model::bind(ad::Tape& tape) const {
    Model m;
    m.cfg = cfg;
    m.f = f.bind(tape);
    m.g = g.bind(tape);
    m.ginv = ginv.bind(tape);
    m.h = h.bind(tape);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : f.params("f")) out.push_back(p);
    for (auto& p : g.params("g")) out.push_back(p);
    for (auto& p : ginv.params("ginv")) out.push_back(p);
    for (auto& p : h.params("h")) out.push_back(p);
    return out;
}

Tensor Model::sdf(const Tensor& points, const AvatarCodes& codes) const {
    require_points(points, 3, "sdf");
    if (!points.on_tape()) require_finite(points, "sdf");
    Tensor enc = positional_encode(points, cfg.pe_freqs_geom);
    return f.eval_encoded(enc, {codes.geom, codes.expr});
}

ad::ValueAndGrad Model::sdf_with_grad(const Tensor& points, const AvatarCodes& codes) const {
    require_points(points, 3, "sdf");
    require_finite(points, "sdf");
    return ad::value_and_input_gradient(points, [&](const Dual& x) {
        Dual enc = positional_encode(x, cfg.pe_freqs_geom);
        return f.eval_encoded(enc, {codes.geom, codes.expr});
    });
}

Tensor Model::uv(const Tensor& points, const AvatarCodes& codes) const {
    require_points(points, 3, "uv");
    Tensor enc = positional_encode(points, cfg.pe_freqs_geom);
    return g.eval_encoded(enc, {codes.geom, codes.expr});
}

Tensor Model::inverse_uv(const Tensor& uv, const AvatarCodes& codes) const {
    require_points(uv, 2, "inverse_uv");
    Tensor enc = positional_encode(uv, cfg.pe_freqs_uv);
    return ginv.eval_encoded(enc, {codes.geom, codes.expr});
}

Tensor Model::color(const Tensor& uv, const AvatarCodes& codes) const {
    require_points(uv, 2, "color");
    Tensor enc = positional_encode(uv, cfg.pe_freqs_uv);
    return h.eval_encoded(enc, {codes.color, codes.expr});
}

}  // namespace morphsdf

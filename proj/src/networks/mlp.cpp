#include "networks/mlp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "networks/encoding.hpp"

namespace morphsdf {

using ad::Tensor;

namespace {

Tensor normal_tensor(std::vector<int> shape, Rng& rng, float mean, float sigma) {
    std::vector<float> data(size_t(ad::shape_numel(shape)));
    for (float& v : data) v = rng.normal(mean, sigma);
    return Tensor(std::move(shape), std::move(data));
}

// At width 256 the raw geometric draw leaves the zero level and slope
// wandering by seed, so the output layer is re-solved in closed form: ridge
// regression of the last hidden features onto the target field
// scale*(|p| - radius) over a fixed ball point set. Hidden layers keep the
// random draw; only the final linear layer and bias move.
void calibrate_geometric_output(Mlp& m) {
    const MlpSpec& spec = m.spec;
    const int n = 2048;
    Rng rng(0x6e0c5u);
    std::vector<float> pts(size_t(n) * 3);
    std::vector<double> target(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        float x, y, z, r;
        do {
            x = rng.normal();
            y = rng.normal();
            z = rng.normal();
            r = std::sqrt(x * x + y * y + z * z);
        } while (r < 1e-3f);
        float radius = 1.5f * std::cbrt(rng.uniform());
        pts[size_t(i) * 3] = radius * x / r;
        pts[size_t(i) * 3 + 1] = radius * y / r;
        pts[size_t(i) * 3 + 2] = radius * z / r;
        target[size_t(i)] = double(spec.geom_scale) * (double(radius) - double(spec.geom_radius));
    }

    // hidden features: the forward pass up to (and including) the last
    // activation, with zero codes
    Tensor enc = positional_encode(Tensor({n, 3}, std::move(pts)), spec.pe_freqs);
    Tensor z = ad::matmul(enc, m.w_pe);
    z = ad::add_row(z, m.b[0]);
    for (size_t l = 1; l + 1 < m.w.size() + 1; ++l) {
        z = spec.act == MlpSpec::Act::softplus ? ad::softplus(z, spec.softplus_beta) : ad::relu(z);
        z = ad::add_row(ad::matmul(z, m.w[l - 1]), m.b[l]);
    }
    z = spec.act == MlpSpec::Act::softplus ? ad::softplus(z, spec.softplus_beta) : ad::relu(z);

    int hid = spec.hidden;
    Eigen::MatrixXd H(n, hid + 1);
    auto zd = z.data();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < hid; ++j) H(i, j) = double(zd[size_t(i) * hid + j]);
        H(i, hid) = 1.0;
    }
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(target.data(), n);
    Eigen::MatrixXd A = H.transpose() * H;
    A.diagonal().array() += 1e-3 * double(n) / double(hid);
    Eigen::VectorXd sol = A.ldlt().solve(H.transpose() * y);

    auto wlast = m.w.back().mutable_data();
    for (int j = 0; j < hid; ++j) wlast[size_t(j)] = float(sol(j));
    m.b.back().mutable_data()[0] = float(sol(hid));
}

}  // namespace

int64_t MlpSpec::param_count() const {
    int64_t n = int64_t(encoded_dim()) * hidden;
    n += int64_t(code_inputs.size()) * code_dim * hidden;
    n += hidden;  // b0
    int in = hidden;
    for (int l = 1; l < layers; ++l) {
        int out = (l == layers - 1) ? out_dim : hidden;
        n += int64_t(in) * out + out;
        in = out;
    }
    return n;
}

Mlp Mlp::make(MlpSpec spec, Rng& rng) {
    if (spec.layers < 2) throw std::invalid_argument("Mlp: need at least 2 layers");
    Mlp m;
    m.spec = spec;
    int enc = spec.encoded_dim();
    int total_in = enc + int(spec.code_inputs.size()) * spec.code_dim;

    if (spec.geometric_init) {
        // Initial field approximates scale*(|p| - radius): raw-coordinate rows
        // carry the field, encoding harmonics and code rows start near zero.
        float hidden_std = std::sqrt(2.f) / std::sqrt(float(spec.hidden));
        m.w_pe = normal_tensor({enc, spec.hidden}, rng, 0.f, 1e-4f);
        {
            auto wp = m.w_pe.mutable_data();
            for (int i = 0; i < spec.point_dim; ++i)
                for (int j = 0; j < spec.hidden; ++j)
                    wp[size_t(i) * spec.hidden + j] = rng.normal(0.f, hidden_std);
        }
        for (size_t c = 0; c < spec.code_inputs.size(); ++c)
            m.w_code.push_back(normal_tensor({spec.code_dim, spec.hidden}, rng, 0.f, 1e-4f));
        m.b.push_back(Tensor::zeros({1, spec.hidden}));
        for (int l = 1; l < spec.layers; ++l) {
            bool last = l == spec.layers - 1;
            int in = spec.hidden, out = last ? spec.out_dim : spec.hidden;
            if (last) {
                float mean = spec.geom_scale * std::sqrt(3.14159265f) / std::sqrt(float(in));
                m.w.push_back(normal_tensor({in, out}, rng, mean, 1e-5f));
                m.b.push_back(Tensor::zeros({1, out}));
            } else {
                m.w.push_back(normal_tensor({in, out}, rng, 0.f, std::sqrt(2.f / float(out))));
                m.b.push_back(Tensor::zeros({1, out}));
            }
        }
        calibrate_geometric_output(m);
        return m;
    }

    float std0 = std::sqrt(2.f / float(total_in));
    m.w_pe = normal_tensor({enc, spec.hidden}, rng, 0.f, std0);
    for (size_t c = 0; c < spec.code_inputs.size(); ++c)
        m.w_code.push_back(normal_tensor({spec.code_dim, spec.hidden}, rng, 0.f, std0));
    m.b.push_back(Tensor::zeros({1, spec.hidden}));
    for (int l = 1; l < spec.layers; ++l) {
        bool last = l == spec.layers - 1;
        int in = spec.hidden, out = last ? spec.out_dim : spec.hidden;
        float s = last ? std::sqrt(1.f / float(in)) : std::sqrt(2.f / float(in));
        m.w.push_back(normal_tensor({in, out}, rng, 0.f, s));
        m.b.push_back(Tensor::zeros({1, out}));
    }
    return m;
}

Mlp Mlp::bind(ad::Tape& tape) const {
    Mlp m;
    m.spec = spec;
    m.w_pe = tape.leaf(w_pe);
    for (const Tensor& t : w_code) m.w_code.push_back(tape.leaf(t));
    for (const Tensor& t : w) m.w.push_back(tape.leaf(t));
    for (const Tensor& t : b) m.b.push_back(tape.leaf(t));
    return m;
}

std::vector<std::pair<std::string, Tensor*>> Mlp::params(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back(prefix + ".w_pe", &w_pe);
    for (size_t i = 0; i < w_code.size(); ++i)
        out.emplace_back(prefix + ".w_code" + std::to_string(i), &w_code[i]);
    for (size_t i = 0; i < w.size(); ++i)
        out.emplace_back(prefix + ".w" + std::to_string(i + 1), &w[i]);
    for (size_t i = 0; i < b.size(); ++i)
        out.emplace_back(prefix + ".b" + std::to_string(i), &b[i]);
    return out;
}

}  // namespace morphsdf

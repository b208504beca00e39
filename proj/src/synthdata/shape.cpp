#include "synthdata/shape.hpp"

#include <cmath>
#include <stdexcept>

#include "autodiff/tensor.hpp"

namespace morphsdf {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Real spherical harmonics up to degree 2 on a unit direction.
void sh_basis(double x, double y, double z, double out[9]) {
    out[0] = 0.28209479177387814;
    out[1] = 0.4886025119029199 * y;
    out[2] = 0.4886025119029199 * z;
    out[3] = 0.4886025119029199 * x;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3.0 * z * z - 1.0);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (x * x - y * y);
}

}  // namespace

const std::array<Vec2, kNumLandmarks> kLandmarkAnchors = {{
    {0.25f, 0.20f}, {0.25f, 0.40f}, {0.25f, 0.60f}, {0.25f, 0.80f},
    {0.42f, 0.20f}, {0.42f, 0.40f}, {0.42f, 0.60f}, {0.42f, 0.80f},
    {0.58f, 0.20f}, {0.58f, 0.40f}, {0.58f, 0.60f}, {0.58f, 0.80f},
    {0.75f, 0.20f}, {0.75f, 0.40f}, {0.75f, 0.60f}, {0.75f, 0.80f},
}};
const std::array<int, 4> kFiducialAnchors = {1, 6, 11, 12};

double radial(const SubjectSpec& s, const ExpressionSpec& e, double dx, double dy, double dz) {
    double basis[9];
    sh_basis(dx, dy, dz, basis);
    double r = s.r0;
    for (int i = 0; i < 9; ++i) r += double(s.sh[size_t(i)]) * basis[i];
    for (const RadialBump& b : e.bumps) {
        double c = dx * b.center.x + dy * b.center.y + dz * b.center.z;
        c = std::min(1.0, std::max(-1.0, c));
        double psi = std::acos(c);
        double w = double(b.width);
        r += double(b.amp) * std::exp(-psi * psi / (2.0 * w * w));
    }
    return r;
}

float radial(const Shape& shape, const Vec3& dir) {
    return float(radial(shape.subject, shape.expr, dir.x, dir.y, dir.z));
}

float analytic_field(const Shape& shape, const Vec3& p) {
    double rho = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
    if (rho < 1e-12) return float(-double(shape.subject.r0) / double(shape.lipschitz));
    double r = radial(shape.subject, shape.expr, p.x / rho, p.y / rho, p.z / rho);
    return float((rho - r) / double(shape.lipschitz));
}

FieldBatch analytic_field_batch(const Shape& shape) {
    return [shape](const ad::Tensor& pts) {
        int n = pts.dim(0);
        auto d = pts.data();
        std::vector<float> out(static_cast<size_t>(n), 0.f);
        for (int i = 0; i < n; ++i)
            out[size_t(i)] = analytic_field(
                shape, {d[size_t(i) * 3], d[size_t(i) * 3 + 1], d[size_t(i) * 3 + 2]});
        return ad::Tensor({n, 1}, std::move(out));
    };
}

Vec3 surface_normal(const Shape& shape, const Vec3& p) {
    const float h = 1e-4f;
    auto f = [&](float x, float y, float z) { return double(analytic_field(shape, {x, y, z})); };
    Vec3 g{float(f(p.x + h, p.y, p.z) - f(p.x - h, p.y, p.z)),
           float(f(p.x, p.y + h, p.z) - f(p.x, p.y - h, p.z)),
           float(f(p.x, p.y, p.z + h) - f(p.x, p.y, p.z - h))};
    return normalized(g);
}

float max_radial_slope(const SubjectSpec& s, const ExpressionSpec& e) {
    // dense lat-long grid; tangential finite differences in double
    const int nu = 96, nv = 192;
    const double h = 1e-4;
    double worst = 0.0;
    for (int i = 0; i <= nu; ++i) {
        double theta = kPi * double(i) / nu;
        double st = std::sin(theta), ct = std::cos(theta);
        for (int j = 0; j < nv; ++j) {
            double phi = 2.0 * kPi * double(j) / nv;
            double cp = std::cos(phi), sp = std::sin(phi);
            double dx = st * cp, dy = st * sp, dz = ct;
            // orthonormal tangent frame
            double t1x = ct * cp, t1y = ct * sp, t1z = -st;
            double t2x = -sp, t2y = cp, t2z = 0.0;
            auto rdir = [&](double ax, double ay, double az) {
                double n = std::sqrt(ax * ax + ay * ay + az * az);
                return radial(s, e, ax / n, ay / n, az / n);
            };
            double g1 = (rdir(dx + h * t1x, dy + h * t1y, dz + h * t1z) -
                         rdir(dx - h * t1x, dy - h * t1y, dz - h * t1z)) /
                        (2 * h);
            double g2 = (rdir(dx + h * t2x, dy + h * t2y, dz + h * t2z) -
                         rdir(dx - h * t2x, dy - h * t2y, dz - h * t2z)) /
                        (2 * h);
            worst = std::max(worst, std::sqrt(g1 * g1 + g2 * g2));
        }
    }
    return float(worst);
}

float lipschitz_bound(float max_slope) {
    double g = 1.05 * double(max_slope) / 0.3;
    return float(std::sqrt(1.0 + g * g));
}

Shape make_shape(const SubjectSpec& s, const ExpressionSpec& e) {
    Shape shape{s, e, 1.f};
    shape.lipschitz = lipschitz_bound(max_radial_slope(s, e));
    return shape;
}

namespace {

// radial range over the direction grid
void radial_range(const SubjectSpec& s, const ExpressionSpec& e, float* lo, float* hi) {
    const int nu = 64, nv = 128;
    double mn = 1e9, mx = -1e9;
    for (int i = 0; i <= nu; ++i) {
        double theta = kPi * double(i) / nu;
        for (int j = 0; j < nv; ++j) {
            double phi = 2.0 * kPi * double(j) / nv;
            double st = std::sin(theta);
            double r = radial(s, e, st * std::cos(phi), st * std::sin(phi), std::cos(theta));
            mn = std::min(mn, r);
            mx = std::max(mx, r);
        }
    }
    *lo = float(mn);
    *hi = float(mx);
}

}  // namespace

SubjectSpec draw_subject(Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        SubjectSpec s;
        s.r0 = rng.uniform(0.80f, 0.92f);
        s.sh[0] = rng.normal(0.f, 0.02f);
        for (int i = 1; i < 9; ++i) s.sh[size_t(i)] = rng.normal(0.f, 0.05f);
        float lo, hi;
        radial_range(s, {}, &lo, &hi);
        if (lo < 0.6f || hi > 1.1f) continue;
        if (max_radial_slope(s, {}) > 0.33f) continue;  // leave room for bumps
        return s;
    }
    throw std::runtime_error("draw_subject: no admissible shape in 64 attempts");
}

ExpressionSpec draw_expression(const SubjectSpec& s, Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        ExpressionSpec e;
        int count = 1 + rng.uniform_int(4);
        for (int b = 0; b < count; ++b) {
            RadialBump bump;
            float zc = rng.uniform(-1.f, 1.f);
            float az = rng.uniform(0.f, float(2 * kPi));
            float sc = std::sqrt(std::max(0.f, 1.f - zc * zc));
            bump.center = {sc * std::cos(az), sc * std::sin(az), zc};
            bump.amp = (rng.uniform() < 0.5f ? -1.f : 1.f) * rng.uniform(0.04f, 0.12f);
            bump.width = rng.uniform(0.35f, 0.8f);
            e.bumps.push_back(bump);
        }
        float lo, hi;
        radial_range(s, e, &lo, &hi);
        if (lo < 0.5f || hi > 1.25f) continue;
        if (max_radial_slope(s, e) > 0.45f) continue;
        return e;
    }
    throw std::runtime_error("draw_expression: no admissible deformation in 64 attempts");
}

Vec2 gt_uv(const Vec3& p) {
    double rho = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
    if (rho < 1e-12) throw std::invalid_argument("gt_uv: zero point");
    double ct = std::min(1.0, std::max(-1.0, double(p.z) / rho));
    float u = float(std::acos(ct) / kPi);
    double rxy = std::sqrt(double(p.x) * p.x + double(p.y) * p.y);
    if (rxy < 1e-9 * rho) return {u, 0.5f};  // poles: azimuth undefined
    float v = float(std::atan2(double(p.y), double(p.x)) / (2.0 * kPi) + 0.5);
    return {u, v};
}

Vec3 gt_uv_inverse(const Shape& shape, const Vec2& uv) {
    double theta = double(uv.x) * kPi;
    double phi = (double(uv.y) - 0.5) * 2.0 * kPi;
    double st = std::sin(theta);
    double dx = st * std::cos(phi), dy = st * std::sin(phi), dz = std::cos(theta);
    double r = radial(shape.subject, shape.expr, dx, dy, dz);
    return {float(r * dx), float(r * dy), float(r * dz)};
}

std::vector<Landmark> landmarks(const Shape& shape) {
    std::vector<Landmark> out;
    out.reserve(kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i)
        out.push_back({i, gt_uv_inverse(shape, kLandmarkAnchors[size_t(i)]),
                       kLandmarkAnchors[size_t(i)]});
    return out;
}

}  // namespace morphsdf

#include "renderer/camera.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace morphsdf {

Vec3 Camera::axis(int row) const { return {R[size_t(row) * 3], R[size_t(row) * 3 + 1], R[size_t(row) * 3 + 2]}; }

Vec3 Camera::center() const {
    // x_cam = R x + t = 0  =>  x = -R^T t
    Vec3 c{};
    c.x = -(R[0] * t.x + R[3] * t.y + R[6] * t.z);
    c.y = -(R[1] * t.x + R[4] * t.y + R[7] * t.z);
    c.z = -(R[2] * t.x + R[5] * t.y + R[8] * t.z);
    return c;
}

Vec3 Camera::to_camera(const Vec3& p) const {
    return {R[0] * p.x + R[1] * p.y + R[2] * p.z + t.x,
            R[3] * p.x + R[4] * p.y + R[5] * p.z + t.y,
            R[6] * p.x + R[7] * p.y + R[8] * p.z + t.z};
}

Vec3 Camera::to_world_dir(const Vec3& d) const {
    return {R[0] * d.x + R[3] * d.y + R[6] * d.z, R[1] * d.x + R[4] * d.y + R[7] * d.z,
            R[2] * d.x + R[5] * d.y + R[8] * d.z};
}

void validate_camera(const Camera& cam) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            float dotij = 0.f;
            for (int k = 0; k < 3; ++k) dotij += cam.R[size_t(i) * 3 + k] * cam.R[size_t(j) * 3 + k];
            float want = (i == j) ? 1.f : 0.f;
            if (std::fabs(dotij - want) > 1e-6f)
                throw std::invalid_argument("camera: rotation is not orthonormal");
        }
    if (cam.width <= 0 || cam.height <= 0 || !(cam.focal > 0.f))
        throw std::invalid_argument("camera: bad extents or focal length");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, float focal_px, int width,
               int height) {
    Vec3 fwd = normalized(target - eye);
    if (norm(fwd) == 0.f) throw std::invalid_argument("look_at: eye equals target");
    Vec3 right = normalized(cross(fwd, up));
    if (norm(right) == 0.f) throw std::invalid_argument("look_at: up parallel to view direction");
    Vec3 down = cross(fwd, right);

    Camera cam;
    cam.R = {right.x, right.y, right.z, down.x, down.y, down.z, fwd.x, fwd.y, fwd.z};
    // t = -R * eye
    cam.t = {-dot(right, eye), -dot(down, eye), -dot(fwd, eye)};
    cam.focal = focal_px;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5f * float(width);
    cam.cy = 0.5f * float(height);
    validate_camera(cam);
    return cam;
}

bool project(const Camera& cam, const Vec3& p, Vec2* pixel) {
    Vec3 q = cam.to_camera(p);
    if (!(q.z > 1e-6f)) return false;
    pixel->x = cam.focal * q.x / q.z + cam.cx;
    pixel->y = cam.focal * q.y / q.z + cam.cy;
    return true;
}

void save_camera(const std::string& path, const Camera& cam) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("camera: cannot open for write: " + path);
    f.precision(9);
    f << "R";
    for (float v : cam.R) f << ' ' << v;
    f << "\nt " << cam.t.x << ' ' << cam.t.y << ' ' << cam.t.z << "\nfocal " << cam.focal
      << "\nprincipal " << cam.cx << ' ' << cam.cy << "\nextents " << cam.width << ' '
      << cam.height << "\n";
    if (!f) throw std::runtime_error("camera: write failed: " + path);
}

Camera load_camera(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("camera: cannot open: " + path);
    Camera cam;
    std::string line;
    bool got_r = false, got_t = false, got_f = false, got_p = false, got_e = false;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key) || key.empty() || key[0] == '#') continue;
        if (key == "R") {
            for (float& v : cam.R)
                if (!(ss >> v)) throw std::runtime_error("camera: malformed R: " + path);
            got_r = true;
        } else if (key == "t") {
            got_t = bool(ss >> cam.t.x >> cam.t.y >> cam.t.z);
        } else if (key == "focal") {
            got_f = bool(ss >> cam.focal);
        } else if (key == "principal") {
            got_p = bool(ss >> cam.cx >> cam.cy);
        } else if (key == "extents") {
            got_e = bool(ss >> cam.width >> cam.height);
        } else {
            throw std::runtime_error("camera: unknown key '" + key + "' in " + path);
        }
    }
    if (!(got_r && got_t && got_f && got_p && got_e))
        throw std::runtime_error("camera: missing fields in " + path);
    validate_camera(cam);
    return cam;
}

}  // namespace morphsdf

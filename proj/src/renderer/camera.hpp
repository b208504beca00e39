#pragma once

#include <array>
#include <string>

#include "core/vec.hpp"

namespace morphsdf {

// Pinhole camera. World-to-camera map x_cam = R x + t with the camera frame
// x right, y down, z forward (so the optical axis in world space is the third
// row of R). Pixel (ix, iy) has its center at (ix + 0.5, iy + 0.5).
struct Camera {
    std::array<float, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, world->camera
    Vec3 t{};
    float focal = 1.f;  // pixels
    float cx = 0.f, cy = 0.f;
    int width = 0, height = 0;

    Vec3 center() const;                    // camera position in world space
    Vec3 axis(int row) const;               // camera axis `row` expressed in world space
    Vec3 to_camera(const Vec3& p) const;    // R p + t
    Vec3 to_world_dir(const Vec3& d) const; // R^T d
};

// Orthonormality of R to 1e-6 (throws std::invalid_argument otherwise).
void validate_camera(const Camera& cam);

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, float focal_px, int width,
               int height);

// Projects a world point; returns false when the point is at or behind the
// pinhole plane.
bool project(const Camera& cam, const Vec3& p, Vec2* pixel);

// Plain-text serialization: R, t, focal, principal, extents. load validates.
void save_camera(const std::string& path, const Camera& cam);
Camera load_camera(const std::string& path);

}  // namespace morphsdf

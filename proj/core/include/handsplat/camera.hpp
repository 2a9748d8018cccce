#pragma once

#include "handsplat/types.hpp"

#include <string>

namespace handsplat {

// Pinhole camera. Camera frame: x right, y down, z forward. Pixel (i, j)
// covers [i, i + 1) x [j, j + 1); its center is (i + 0.5, j + 0.5).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    Mat3d rotation = Mat3d::Identity();  // world -> camera
    Vec3d translation = Vec3d::Zero();

    Vec3d to_camera(const Vec3d& world) const { return rotation * world + translation; }
    Vec3d center() const { return -rotation.transpose() * translation; }

    // Throws ValidationError on non-positive focal lengths, empty resolution or
    // a rotation that is not orthonormal within 1e-8.
    void validate() const;

    static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, double focal, int width,
                          int height);
};

std::string camera_to_json(const Camera& camera);
Camera camera_from_json(const std::string& text);

}  // namespace handsplat

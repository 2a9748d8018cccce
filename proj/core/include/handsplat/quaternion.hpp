#pragma once

#include "handsplat/types.hpp"

// Quaternion helpers on plain 4-vectors stored (w, x, y, z), with the
// reverse-mode partials the deformation pipeline needs.
namespace handsplat::quat {

template <typename T>
Vec4<T> identity() {
    return Vec4<T>(T(1), T(0), T(0), T(0));
}

template <typename T>
Vec4<T> multiply(const Vec4<T>& a, const Vec4<T>& b) {
    return Vec4<T>(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                   a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                   a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                   a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

// a * x == left_matrix(a) * x
template <typename T>
Mat4<T> left_matrix(const Vec4<T>& a) {
    Mat4<T> m;
    m << a[0], -a[1], -a[2], -a[3],
         a[1],  a[0], -a[3],  a[2],
         a[2],  a[3],  a[0], -a[1],
         a[3], -a[2],  a[1],  a[0];
    return m;
}

// x * b == right_matrix(b) * x
template <typename T>
Mat4<T> right_matrix(const Vec4<T>& b) {
    Mat4<T> m;
    m << b[0], -b[1], -b[2], -b[3],
         b[1],  b[0],  b[3], -b[2],
         b[2], -b[3],  b[0],  b[1],
         b[3],  b[2], -b[1],  b[0];
    return m;
}

template <typename T>
Vec4<T> normalize_backward(const Vec4<T>& raw, const Vec4<T>& d_unit) {
    const T n = raw.norm();
    const Vec4<T> u = raw / n;
    return (d_unit - u * u.dot(d_unit)) / n;
}

// Rotation matrix of a unit quaternion.
template <typename T>
Mat3<T> to_rotation(const Vec4<T>& q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
         T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
         T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

// Gradient of to_rotation's polynomial entries with respect to (w, x, y, z).
template <typename T>
Vec4<T> to_rotation_backward(const Vec4<T>& q, const Mat3<T>& g) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4<T> d;
    d[0] = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                   w * g(2, 1) - T(2) * x * g(2, 2));
    d[2] = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                   z * g(2, 1) - T(2) * y * g(2, 2));
    d[3] = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - T(2) * z * g(1, 1) +
                   y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

template <typename T>
Vec4<T> from_axis_angle(const Vec3<T>& axis_angle) {
    const T angle = axis_angle.norm();
    if (angle < T(1e-12)) return identity<T>();
    const Vec3<T> axis = axis_angle / angle;
    const T s = std::sin(angle / T(2));
    return Vec4<T>(std::cos(angle / T(2)), axis[0] * s, axis[1] * s, axis[2] * s);
}

}  // namespace handsplat::quat

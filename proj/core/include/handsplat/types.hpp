#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace handsplat {

template <typename T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T>
using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Mat34 = Eigen::Matrix<T, 3, 4>;
template <typename T>
using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVecX = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Row-major batch storage: one sample (Gaussian, joint, ...) per row.
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using Mat34d = Mat34<double>;
using Mat4d = Mat4<double>;

// Input that fails validation (malformed files, bad config keys, broken
// skeleton topology). The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A non-finite value surfaced during training or evaluation. Exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (shape mismatch, backward without
// forward, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool condition, const char* message) {
    if (!condition) throw ContractViolation(message);
}

}  // namespace handsplat

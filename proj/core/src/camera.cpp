#include "handsplat/camera.hpp"

#include <json.hpp>

#include <cmath>

namespace handsplat {

using nlohmann::json;

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ValidationError("camera resolution must be positive");
    if (!rotation.allFinite() || !translation.allFinite()) throw ValidationError("camera extrinsics are not finite");
    if ((rotation * rotation.transpose() - Mat3d::Identity()).cwiseAbs().maxCoeff() > 1e-8 ||
        rotation.determinant() < 0.0) {
        throw ValidationError("camera rotation is not orthonormal");
    }
}

Camera Camera::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, double focal, int width, int height) {
    const Vec3d z = (target - eye).normalized();
    const Vec3d y = -(up - up.dot(z) * z).normalized();
    const Vec3d x = y.cross(z);
    Camera cam;
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

std::string camera_to_json(const Camera& camera) {
    json doc;
    doc["fx"] = camera.fx;
    doc["fy"] = camera.fy;
    doc["cx"] = camera.cx;
    doc["cy"] = camera.cy;
    doc["width"] = camera.width;
    doc["height"] = camera.height;
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back({camera.rotation(i, 0), camera.rotation(i, 1), camera.rotation(i, 2)});
    doc["rotation"] = r;
    doc["translation"] = {camera.translation.x(), camera.translation.y(), camera.translation.z()};
    return doc.dump(2);
}

Camera camera_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        Camera cam;
        cam.fx = doc.at("fx").get<double>();
        cam.fy = doc.at("fy").get<double>();
        cam.cx = doc.at("cx").get<double>();
        cam.cy = doc.at("cy").get<double>();
        cam.width = doc.at("width").get<int>();
        cam.height = doc.at("height").get<int>();
        const auto& r = doc.at("rotation");
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) cam.rotation(i, j) = r.at(i).at(j).get<double>();
        }
        const auto t = doc.at("translation").get<std::vector<double>>();
        if (t.size() != 3) throw ValidationError("camera translation must have 3 entries");
        cam.translation = Vec3d(t[0], t[1], t[2]);
        cam.validate();
        return cam;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("camera JSON: ") + e.what());
    }
}

}  // namespace handsplat

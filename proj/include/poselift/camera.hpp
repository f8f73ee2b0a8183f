#pragma once

#include <json.hpp>

#include <array>
#include <string>

#include "poselift/common.hpp"
#include "poselift/skeleton.hpp"

namespace poselift {

/// Pinhole intrinsics in pixel units plus the image resolution they refer to.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    double res_w = 0.0;
    double res_h = 0.0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera: focal lengths must be positive");
        if (!(res_w > 0.0) || !(res_h > 0.0)) throw ValidationError("camera: resolution must be positive");
        if (cx < 0.0 || cx > res_w || cy < 0.0 || cy > res_h)
            throw ValidationError("camera: principal point outside the image");
    }
};

/// Dimensionless network inputs derived from the intrinsics:
/// [cx_n, cy_n, fx_n, fy_n]. The principal point is mapped so that the
/// horizontal range [0, w] lands on [-1, 1] and the vertical range keeps the
/// aspect ratio (both axes are divided by the width). Focal lengths are
/// scaled by 2/w, so f = w/2 maps to exactly 1.
struct CameraFeatures {
    double cx_n = 0.0;
    double cy_n = 0.0;
    double fx_n = 0.0;
    double fy_n = 0.0;

    std::array<double, 4> values() const { return {cx_n, cy_n, fx_n, fy_n}; }
};

inline std::pair<double, double> normalize_focus(const CameraIntrinsics& cam) {
    require(cam.res_w != 0.0, "normalize_focus: zero resolution width");
    const double cx_n = 2.0 * cam.cx / cam.res_w - 1.0;
    const double cy_n = 2.0 * cam.cy / cam.res_w - cam.res_h / cam.res_w;
    return {cx_n, cy_n};
}

inline std::pair<double, double> normalize_focal(const CameraIntrinsics& cam) {
    require(cam.res_w != 0.0, "normalize_focal: zero resolution width");
    return {2.0 * cam.fx / cam.res_w, 2.0 * cam.fy / cam.res_w};
}

inline CameraFeatures camera_features(const CameraIntrinsics& cam) {
    CameraFeatures f;
    std::tie(f.cx_n, f.cy_n) = normalize_focus(cam);
    std::tie(f.fx_n, f.fy_n) = normalize_focal(cam);
    return f;
}

/// Perspective projection of one camera-frame point, z > 0 required.
inline Vec2 project_point(const Vec3& p, const CameraIntrinsics& cam) {
    if (!(p.z() > 0.0)) throw BehindCameraError("project: point at z = " + std::to_string(p.z()) + " is not in front of the camera");
    return Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
}

inline Pose2D project(const Pose3D& pose, const CameraIntrinsics& cam) {
    Pose2D out;
    out.joints.reserve(pose.joints.size());
    for (std::size_t j = 0; j < pose.joints.size(); ++j) {
        if (!(pose.joints[j].z() > 0.0))
            throw BehindCameraError("project: joint " + std::to_string(j) + " at z = " +
                                    std::to_string(pose.joints[j].z()) + " is behind the camera");
        out.joints.push_back(project_point(pose.joints[j], cam));
    }
    return out;
}

/// Ray from the camera center, unit direction.
struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
};

/// The viewing ray of a pixel: origin at the camera center, direction
/// proportional to ((u-cx)/fx, (v-cy)/fy, 1). Every point o + t*d with t > 0
/// projects back onto the pixel.
inline Ray pixel_ray(const Vec2& pixel, const CameraIntrinsics& cam) {
    Vec3 d((pixel.x() - cam.cx) / cam.fx, (pixel.y() - cam.cy) / cam.fy, 1.0);
    Ray r;
    r.direction = d.normalized();
    return r;
}

inline nlohmann::ordered_json camera_to_json(const CameraIntrinsics& cam) {
    nlohmann::ordered_json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["res_w"] = cam.res_w;
    j["res_h"] = cam.res_h;
    return j;
}

inline CameraIntrinsics camera_from_json(const nlohmann::json& j) {
    CameraIntrinsics cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.res_w = j.at("res_w").get<double>();
    cam.res_h = j.at("res_h").get<double>();
    cam.validate();
    return cam;
}

}  // namespace poselift
